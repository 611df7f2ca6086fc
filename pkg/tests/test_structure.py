import numpy as np
import pytest

from relaxprof.model import FunctionModel, make_builtin
from relaxprof.structure import (
    AssumptionError,
    check_genuine_coupling,
    check_reduced,
    check_symmetric_dissipative,
    construct_kawashima,
    reduce,
    sample_states,
    structure_report,
)

from conftest import BUILTINS


@pytest.mark.parametrize("kind", BUILTINS)
def test_symmetric_dissipative(models, kind):
    m = models[kind]
    rep = check_symmetric_dissipative(m, sample_states(m, count=40, seed=0))
    assert rep.sd_ok
    assert rep.min_eig_S > 0
    assert rep.max_asymmetry_SA < 1e-10
    assert rep.max_eig_Re_SdQ_complement < 0


@pytest.mark.parametrize("kind", BUILTINS)
def test_genuine_coupling(models, kind):
    ok, margin, method = check_genuine_coupling(models[kind], models[kind].base_state)
    assert ok and margin > 0
    assert method in ("eigenvectors", "observability")


def test_kawashima_jin_xin_optimum(models):
    m = models["jin_xin"]
    K, theta, hist = construct_kawashima(m, m.equilibrium(m.base_state))
    assert 0.45 <= theta <= 0.5 + 1e-9
    np.testing.assert_allclose(K, -K.T, atol=1e-14)


@pytest.mark.parametrize("kind", BUILTINS)
def test_kawashima_positive(models, kind):
    m = models[kind]
    _, theta, _ = construct_kawashima(m, m.equilibrium(m.base_state), starts=4, iters=300)
    assert theta > 0


def test_kawashima_fails_without_coupling():
    # v is decoupled from u: the compensator cannot exist
    def A(U):
        return np.broadcast_to(np.diag([1.0, -1.0]), U.shape[:-1] + (2, 2)).copy()

    m = FunctionModel(
        1, 1,
        flux=lambda U: U[..., :1].copy(),
        matrix_A=A,
        source=lambda U: -U[..., 1:2],
        symmetrizer=lambda U: np.broadcast_to(np.eye(2), U.shape[:-1] + (2, 2)).copy(),
        base_state=[0.0],
    )
    ok, _, _ = check_genuine_coupling(m, m.base_state)
    assert not ok
    with pytest.raises(AssumptionError):
        construct_kawashima(m, m.equilibrium(m.base_state), starts=2, iters=100)


def test_reduced_jin_xin_closed_forms(reduced):
    rs = reduced["jin_xin"]
    u = np.array([[0.1], [-0.05]])
    np.testing.assert_allclose(rs.f_star(u)[:, 0], 0.5 * u[:, 0] ** 2)
    np.testing.assert_allclose(rs.b_star(u)[:, 0, 0], 1.0 - u[:, 0] ** 2, atol=1e-14)
    assert rs.left_kernel.shape[0] == 0
    assert rs.gnl < 0


def test_reduced_broadwell_degenerate(reduced):
    rs = reduced["broadwell"]
    assert rs.left_kernel.shape == (1, 2)
    b = rs.b_star(rs.u0)
    np.testing.assert_allclose(rs.left_kernel @ b, 0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.eigvalsh(0.5 * (b + b.T)).min(), 0, atol=1e-12)


@pytest.mark.parametrize("kind", BUILTINS)
def test_reduced_checks(models, reduced, kind):
    m = models[kind]
    rep = check_reduced(reduced[kind], sample_states(m, count=20, seed=5, equilibrium=True))
    assert rep.reduced_ok


def test_simple_eigenvalue_violation():
    # two uncoupled Burgers fields: df_* has a double zero eigenvalue at the origin
    def flux(U):
        return U[..., 2:4] + 0.5 * U[..., 0:2] ** 2

    def A(U):
        out = np.zeros(U.shape[:-1] + (4, 4))
        for i in range(2):
            u = U[..., i]
            out[..., i, i] = u
            out[..., i, 2 + i] = 1.0
            out[..., 2 + i, i] = 1.0 - u**2
            out[..., 2 + i, 2 + i] = -u
        return out

    def S(U):
        out = np.zeros(U.shape[:-1] + (4, 4))
        for i in range(2):
            out[..., i, i] = 1.0 - U[..., i] ** 2
            out[..., 2 + i, 2 + i] = 1.0
        return out

    m = FunctionModel(2, 2, flux, A, lambda U: -U[..., 2:4], S, [0.0, 0.0])
    with pytest.raises(AssumptionError, match="simple-eigenvalue"):
        reduce(m)


def test_structure_report_serializes(models):
    rep = structure_report(models["jin_xin"], count=20)
    d = rep.to_dict()
    assert d["sd_ok"] and d["gc_ok"] and d["reduced_ok"]
    assert abs(d["theta_K"] - 0.5) < 0.05
