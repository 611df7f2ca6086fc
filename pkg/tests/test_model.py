import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relaxprof.model import BuiltinModelId, evaluate_blocks, make_builtin
from relaxprof.structure import sample_states

from conftest import BUILTINS, jin_xin_function_model


def _fd(fun, U, h=1e-6):
    cols = []
    for k in range(U.shape[-1]):
        e = np.zeros_like(U)
        e[..., k] = h
        cols.append((fun(U + e) - fun(U - e)) / (2 * h))
    return np.stack(cols, axis=-1)


@pytest.mark.parametrize("kind", BUILTINS)
def test_flux_jacobian_is_top_of_A(models, kind):
    m = models[kind]
    U = sample_states(m, count=20, seed=1)
    np.testing.assert_allclose(_fd(m.flux, U), m.matrix_A(U)[:, : m.n, :], atol=1e-8)


@pytest.mark.parametrize("kind", BUILTINS)
def test_closed_form_derivatives_match_differences(models, kind):
    m = models[kind]
    U = sample_states(m, count=10, seed=2)
    np.testing.assert_allclose(m.d_source(U), _fd(m.source, U), atol=1e-8)
    np.testing.assert_allclose(m.d_matrix_A(U), _fd(m.matrix_A, U), atol=1e-7)
    np.testing.assert_allclose(m.d2_matrix_A(U), _fd(m.d_matrix_A, U), atol=1e-6)
    np.testing.assert_allclose(m.d2_source(U), _fd(m.d_source, U), atol=1e-6)


@pytest.mark.parametrize("kind", BUILTINS)
def test_equilibrium_is_source_free(models, kind):
    m = models[kind]
    u = m.base_state + 0.05
    q = m.source(m.equilibrium(u))
    assert np.abs(q).max() < 1e-14


@pytest.mark.parametrize("kind", BUILTINS)
def test_symmetrizer_is_positive(models, kind):
    m = models[kind]
    S = m.symmetrizer(sample_states(m, count=30, seed=3))
    np.testing.assert_allclose(S, np.swapaxes(S, -1, -2), atol=1e-12)
    assert np.linalg.eigvalsh(S).min() > 0


def test_callable_model_matches_builtin():
    fm = jin_xin_function_model()
    jx = make_builtin("jin_xin")
    U = sample_states(jx, count=15, seed=4)
    for name in ("flux", "matrix_A", "source", "symmetrizer", "d_matrix_A", "d_source"):
        np.testing.assert_allclose(getattr(fm, name)(U), getattr(jx, name)(U), atol=1e-8, err_msg=name)


def test_builtin_selection_and_validation():
    m = make_builtin(BuiltinModelId("jin_xin", {"a": 2.0}))
    assert m.a == 2.0
    with pytest.raises(ValueError):
        make_builtin("euler")
    with pytest.raises(ValueError):
        make_builtin("jin_xin", a=0.5)
    with pytest.raises(ValueError):
        make_builtin("synthetic", mu=0.5)


def test_neighborhood_mask(models):
    m = models["jin_xin"]
    U = np.array([[0.1, 0.0], [0.9, 0.0]])
    assert m.in_neighborhood(U).tolist() == [True, False]


def test_blocks_partition(models):
    m = models["broadwell"]
    U = m.equilibrium(m.base_state)
    b = evaluate_blocks(m, U)
    A = m.matrix_A(U)
    np.testing.assert_array_equal(np.block([[b.A11, b.A12], [b.A21, b.A22]]), A)
    assert b.spectral_ok and b.in_neighborhood


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.2, 0.2), st.floats(-0.05, 0.05))
def test_jin_xin_quasilinear_form(u, w):
    # A U' must equal the x-derivative of (flux, second row) along any path
    m = make_builtin("jin_xin")
    U = np.array([u, w])
    dU = np.array([0.3, -0.7])
    lhs = m.matrix_A(U) @ dU
    h = 1e-6
    top = (m.flux(U + h * dU) - m.flux(U - h * dU)) / (2 * h)
    assert abs(lhs[0] - top[0]) < 1e-8
