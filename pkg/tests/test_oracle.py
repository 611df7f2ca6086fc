import dataclasses

import numpy as np
import pytest

from relaxprof.chapman_enskog import ShockPair, build_ce, hugoniot_pair, solve_reduced_profile
from relaxprof.discretization import Grid
from relaxprof.oracle import MarchConfig, OracleError, march_to_steady, phase_crossing, quadrature_profile, recenter
from relaxprof.solver import iterate

from conftest import BUILTINS


def _jx_x_of_u(u, c):
    # implicit reduced Jin-Xin profile centred at u = 0
    return -2 * u + (1 - c**2) / c * np.log((c - u) / (c + u))


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.2])
def test_quadrature_matches_implicit_formula(reduced, eps):
    rs = reduced["jin_xin"]
    pair = hugoniot_pair(rs, rs.u0, eps)
    g = Grid(eps, 8.0, 0.02)
    u = quadrature_profile(rs, pair, g).values[:, 0]
    c = eps / 2
    inner = np.abs(g.x_tilde) < 6
    err = np.abs(_jx_x_of_u(u[inner], c) - g.x[inner])
    # compare in u through the local slope
    slope = np.abs((u[inner] ** 2 - c**2) / (2 * (1 - u[inner] ** 2)))
    assert np.max(err * slope) < 1e-10


@pytest.mark.parametrize("kind", ["jin_xin", "synthetic"])
def test_quadrature_matches_reduced_ode(reduced, kind):
    rs = reduced[kind]
    if rs.n != 1:
        pytest.skip("scalar reduced system only")
    pair = hugoniot_pair(rs, rs.u0, 0.1)
    g = Grid(0.1, 12.0, 0.01)
    q = quadrature_profile(rs, pair, g).values
    r = solve_reduced_profile(rs, pair, g).values
    assert np.abs(q - r).max() < 1e-8


def test_quadrature_centre_slope_and_decay(reduced):
    rs = reduced["jin_xin"]
    eps = 0.1
    c = eps / 2
    pair = hugoniot_pair(rs, rs.u0, eps)
    g = Grid(eps, 12.0, 0.01)
    u = quadrature_profile(rs, pair, g).values[:, 0]
    i, h = g.center, g.h
    slope = (u[i - 2] - 8 * u[i - 1] + 8 * u[i + 1] - u[i + 2]) / (12 * h)
    assert abs(abs(slope) - eps**2 / 8) < 1e-6 * eps**2
    # exponential approach to the end state at rate c / (1 - c^2)
    end = np.asarray(pair.u_plus).ravel()[0]
    tail = (g.x_tilde > 8) & (g.x_tilde < 11)
    rate = -np.polyfit(g.x[tail], np.log(np.abs(u[tail] - end)), 1)[0]
    assert rate == pytest.approx(c / (1 - c**2), rel=1e-2)


def test_quadrature_flipped_pair_is_mirror(reduced):
    rs = reduced["jin_xin"]
    pair = hugoniot_pair(rs, rs.u0, 0.1)
    flipped = dataclasses.replace(pair, u_minus=pair.u_plus, u_plus=pair.u_minus, direction=-pair.direction)
    g = Grid(0.1, 6.0, 0.02)
    a = quadrature_profile(rs, pair, g).values[:, 0]
    b = quadrature_profile(rs, flipped, g).values[:, 0]
    assert np.allclose(a, b[::-1], atol=1e-12)


def test_quadrature_rejects_systems(reduced):
    rs = reduced["broadwell"]
    if rs.n == 1:
        pytest.skip("broadwell reduces to a scalar here")
    pair = hugoniot_pair(rs, rs.u0, 0.1)
    with pytest.raises(ValueError):
        quadrature_profile(rs, pair, Grid(0.1, 4.0, 0.05))


def test_march_zero_amplitude_is_constant(models, reduced):
    m = models["jin_xin"]
    pair = hugoniot_pair(reduced["jin_xin"], reduced["jin_xin"].u0, 0.1)
    flat = ShockPair(pair.u_minus, pair.u_minus, 0.0, pair.direction)
    out = march_to_steady(m, flat, Grid(0.1, 4.0, 0.05))
    assert np.ptp(out.values, axis=0).max() == 0.0


def test_phase_crossing_and_recenter(reduced):
    rs = reduced["jin_xin"]
    pair = hugoniot_pair(rs, rs.u0, 0.1)
    g = Grid(0.1, 8.0, 0.02)
    u = solve_reduced_profile(rs, pair, g).values
    shifted = recenter(g.x, u, -3.3)
    assert phase_crossing(g.x, shifted, pair) == pytest.approx(3.3, abs=1e-6)
    with pytest.raises(OracleError):
        phase_crossing(g.x, np.tile(pair.u_minus, (g.M, 1)), pair)


@pytest.mark.parametrize(
    "bad", [dict(cfl=0.6), dict(cfl=0.0), dict(levels=0), dict(levels=5), dict(domain_factor=0.5), dict(scheme="weno")]
)
def test_march_config_validation(bad):
    with pytest.raises(ValueError):
        MarchConfig(**bad)


@pytest.fixture(scope="module")
def march_runs(models, reduced):
    eps = 0.1
    g = Grid(eps, 12.0, 0.04)
    out = {}
    for k in BUILTINS:
        ce = build_ce(models[k], eps, 0, g, reduced[k])
        U, _ = iterate(models[k], ce)
        ref = ce.U.values + U.values
        runs = {lv: march_to_steady(models[k], ce.pair, g, MarchConfig(levels=lv)) for lv in (1, 2)}
        out[k] = (ref, runs)
    return out


@pytest.mark.slow
@pytest.mark.parametrize("kind", BUILTINS)
def test_march_flux_balance_and_steadiness(march_runs, kind):
    _, runs = march_runs[kind]
    meta = runs[1].meta
    assert meta["flux_balance"] < 1e-10
    assert meta["steady_residual"] < 1e-9


@pytest.mark.slow
@pytest.mark.parametrize("kind", BUILTINS)
def test_march_richardson_improves(march_runs, kind):
    ref, runs = march_runs[kind]
    e1 = np.abs(runs[1].values - ref).max()
    e2 = np.abs(runs[2].values - ref).max()
    assert e2 < 0.5 * e1


def test_march_agrees_with_quadrature(models, reduced):
    # the full relaxation profile differs from the reduced one at O(eps^2)
    eps = 0.1
    m, rs = models["jin_xin"], reduced["jin_xin"]
    pair = hugoniot_pair(rs, rs.u0, eps)
    g = Grid(eps, 10.0, 0.04)
    U = march_to_steady(m, pair, g, MarchConfig(levels=2)).values[:, 0]
    q = quadrature_profile(rs, pair, g).values[:, 0]
    assert np.abs(U - q).max() < 5e-3 * eps


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["jin_xin", "synthetic"])
def test_march_refinement_order(models, reduced, kind):
    # single-level march against the iterated profile on nested grids
    eps = 0.1
    m, rs = models[kind], reduced[kind]
    errs = []
    for h in (0.04, 0.02):
        g = Grid(eps, 10.0, h)
        ce = build_ce(m, eps, 0, g, rs)
        U, _ = iterate(m, ce)
        ref = ce.U.values + U.values
        errs.append(np.abs(march_to_steady(m, ce.pair, g, MarchConfig(levels=1)).values - ref).max())
    assert np.log2(errs[0] / errs[1]) >= 0.8
