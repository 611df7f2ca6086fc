import warnings

import numpy as np
import pytest

from relaxprof.chapman_enskog import build_ce
from relaxprof.discretization import Grid, GridProfile, NormSpec, weighted_norm
from relaxprof.linear import (
    PreconditionWarning,
    assemble,
    energy_diagnostics,
    forcing_norm,
    jacobian_matrix,
    second_derivative,
    solve,
)
from relaxprof.solver import _stack, nonlinear_residual, random_profile

from conftest import BUILTINS


@pytest.fixture(scope="module")
def ces(models, reduced):
    return {k: build_ce(models[k], 0.1, 0, Grid(0.1, 12.0, 0.02), reduced[k]) for k in BUILTINS}


def _taylor(m, ce, seed):
    g = ce.grid
    eps = g.epsilon
    U0 = 0.1 * eps * random_profile(g, m.d, seed=seed)
    V = eps * random_profile(g, m.d, seed=seed + 1)
    W = ce.U.values + U0
    JV = (jacobian_matrix(m, g, W) @ V.ravel()).reshape(g.M, -1)
    H = second_derivative(m, g, W, V, V)
    P0 = _stack(nonlinear_residual(m, ce, U0))
    first, second = [], []
    for t in (1e-2, 1e-3, 1e-4):
        P = _stack(nonlinear_residual(m, ce, U0 + t * V))
        first.append(np.abs(P - P0 - t * JV).max())
    for t in (1e-1, 1e-2, 1e-3):
        P = _stack(nonlinear_residual(m, ce, U0 + t * V))
        second.append(np.abs(P - P0 - t * JV - 0.5 * t * t * H).max())
    return np.log10(np.array(first[:-1]) / first[1:]), np.log10(np.array(second[:-1]) / second[1:])


@pytest.mark.parametrize("kind", BUILTINS)
def test_jacobian_and_second_derivative_taylor(models, ces, kind):
    o1, o2 = _taylor(models[kind], ces[kind], seed=3)
    assert o1.min() >= 1.9
    assert o2.min() >= 2.9


def test_second_derivative_symmetric(models, ces):
    m, ce = models["broadwell"], ces["broadwell"]
    g = ce.grid
    V1 = random_profile(g, m.d, seed=1)
    V2 = random_profile(g, m.d, seed=2)
    W = ce.U.values
    np.testing.assert_allclose(second_derivative(m, g, W, V1, V2), second_derivative(m, g, W, V2, V1), atol=1e-10)


@pytest.mark.parametrize("kind", BUILTINS)
def test_solve_satisfies_equations_and_phase(models, ces, kind):
    m, ce = models[kind], ces[kind]
    ls = assemble(m, ce)
    F = random_profile(ce.grid, m.d, seed=0)
    rep = solve(ls, F)
    assert rep.ls_residual < 1e-10
    assert abs(rep.phase_value) < 1e-12
    np.testing.assert_allclose(ls.apply(rep.U.values), F, atol=1e-9 * np.abs(F).max())
    assert rep.rho > 0


def test_solve_zero_and_bad_forcing(models, ces):
    ls = assemble(models["jin_xin"], ces["jin_xin"])
    rep = solve(ls, np.zeros((ls.grid.M, 2)))
    assert rep.norm_U == 0 and rep.rho == 0
    F = np.zeros((ls.grid.M, 2))
    F[3, 0] = np.inf
    with pytest.raises(ValueError):
        solve(ls, F)


def test_factor_reused_across_rhs(models, ces):
    ls = assemble(models["jin_xin"], ces["jin_xin"])
    lu = ls.factor()
    solve(ls, random_profile(ls.grid, 2, seed=1))
    solve(ls, random_profile(ls.grid, 2, seed=2))
    assert ls.factor() is lu


def test_precondition_warning(models, ces):
    m, ce = models["jin_xin"], ces["jin_xin"]
    big = 0.2 * random_profile(ce.grid, 2, seed=0)
    with pytest.warns(PreconditionWarning):
        ls = assemble(m, ce, big, C=0.01)
    assert not ls.precondition_ok
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert assemble(m, ce).precondition_ok


def test_dimensions(models, ces):
    ls = assemble(models["synthetic"], ces["synthetic"])
    M = ls.grid.M
    assert ls.matrix.shape == (M * 3 + 1, M * 3)
    assert ls.dims["phase_rows"] == 1


def test_forcing_norm_definition():
    g = Grid(0.1, 8.0, 0.02)
    F = random_profile(g, 3, seed=4)
    expect = weighted_norm(GridProfile(g, F[:, :1]), NormSpec(3, 0.1)) + weighted_norm(
        GridProfile(g, F[:, 1:]), NormSpec(2, 0.1)
    )
    assert forcing_norm(F, g, 2, 1) == pytest.approx(expect, rel=1e-14)


@pytest.mark.parametrize("kind", BUILTINS)
def test_energy_diagnostics_bounded(models, ces, kind):
    m, ce = models[kind], ces[kind]
    ls = assemble(m, ce)
    F = random_profile(ce.grid, m.d, seed=5)
    rep = solve(ls, F)
    d = energy_diagnostics(ls, rep.U.values, F, delta=0.05)
    assert 0 < d["C_L2"] < 10
    assert 0 < d["C_H2"] < 10
    assert set(d["rhs_L2_parts"]) == {"f", "f'", "f''", "g", "g'"}
