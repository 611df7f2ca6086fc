import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relaxprof.discretization import (
    Grid,
    GridProfile,
    LeastSquares,
    NormSpec,
    derivative_matrix,
    edge_window,
    fornberg_weights,
    interpolation_ratio,
    nodal_derivative_operator,
    pointwise_operator,
    smooth,
    smoothing_ratios,
    smoothstep_cutoff,
    weighted_norm,
)
from relaxprof.solver import random_profile


def test_grid_geometry():
    g = Grid(0.1, 12.0, 0.01)
    assert g.M == 2401 and g.center == 1200
    assert g.x_tilde[g.center] == 0.0
    np.testing.assert_allclose(g.x, g.x_tilde / 0.1)
    with pytest.raises(ValueError):
        Grid(0.0)
    with pytest.raises(ValueError):
        Grid(0.1, h_tilde=-1)


def test_fornberg_classic_weights():
    np.testing.assert_allclose(fornberg_weights(0.0, [-1, 0, 1], 2), [1, -2, 1], atol=1e-14)
    np.testing.assert_allclose(fornberg_weights(0.0, [-2, -1, 0, 1, 2], 1), [1 / 12, -2 / 3, 0, 2 / 3, -1 / 12], atol=1e-14)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_stencil_order(k):
    errs = []
    for h in (0.08, 0.04, 0.02):
        g = Grid(1.0, 3.0, h)
        x = g.x
        f = np.sin(2 * x) * np.exp(-0.3 * x)
        exact = np.imag((2j - 0.3) ** k * np.exp((2j - 0.3) * x))
        e = derivative_matrix(g, k) @ f - exact
        errs.append(np.sqrt(h * np.sum(e**2)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders.min() >= 3.8


def test_derivative_order_bounds():
    g = Grid(1.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        derivative_matrix(g, 7)


def test_norm_scaling_identity():
    # a fixed shape in x_tilde has an eps-independent H^s_eps norm
    vals = []
    for eps in (0.2, 0.05):
        g = Grid(eps, 12.0, 0.01)
        p = GridProfile(g, np.exp(-g.x_tilde**2))
        vals.append(weighted_norm(p, NormSpec(3, eps)))
    assert abs(vals[0] / vals[1] - 1) < 1e-10


def test_norm_gaussian_value():
    g = Grid(1.0, 12.0, 0.005)
    p = GridProfile(g, np.exp(-g.x_tilde**2 / 2))
    # ||e^{-x^2/2}||_{L^2} = pi^{1/4}
    assert abs(weighted_norm(p, NormSpec(0, 1.0)) - np.pi**0.25) < 1e-12


def test_weighted_norm_monotone_in_delta():
    g = Grid(0.1)
    p = GridProfile(g, np.exp(-np.abs(g.x_tilde)))
    a = weighted_norm(p, NormSpec(1, 0.1, 0.0))
    b = weighted_norm(p, NormSpec(1, 0.1, 0.1))
    assert b > a


def test_normspec_validation():
    with pytest.raises(ValueError):
        NormSpec(7, 0.1)
    with pytest.raises(ValueError):
        NormSpec(1, 0.1, 0.5)
    g = Grid(0.1)
    with pytest.raises(ValueError):
        weighted_norm(GridProfile(g, np.zeros(g.M)), NormSpec(0, 0.2))


def test_profile_validation():
    g = Grid(0.1, 1.0, 0.1)
    with pytest.raises(ValueError):
        GridProfile(g, np.zeros(3))
    bad = np.zeros(g.M)
    bad[0] = np.nan
    with pytest.raises(ValueError):
        GridProfile(g, bad)


def test_smooth_high_cutoff_is_identity():
    g = Grid(0.1)
    p = GridProfile(g, random_profile(g, 2, seed=1))
    np.testing.assert_array_equal(smooth(p, 10 * np.pi / g.h_tilde).values, p.values)


def test_smooth_rejects_nondecaying_without_window():
    g = Grid(0.1)
    p = GridProfile(g, np.tanh(g.x_tilde))
    with pytest.raises(ValueError):
        smooth(p, 4.0)
    out = smooth(p, 4.0, allow_window=True)
    assert out.meta["windowed"]
    # the tails are carried by the unfiltered part of the split
    np.testing.assert_allclose(out.values[:10], p.values[:10], atol=1e-3)


def test_smooth_removes_high_modes():
    g = Grid(0.1)
    xt = g.x_tilde
    env = np.exp(-xt**2 / 4)
    low, high = env * np.cos(1.0 * xt), env * np.cos(40.0 * xt)
    out = smooth(GridProfile(g, low + high), 8.0)
    assert np.abs(out.values[:, 0] - low).max() < 1e-6


def test_edge_window_shape():
    g = Grid(0.1)
    w = edge_window(g)
    assert w[g.center] == 1.0 and w[0] == 0.0 and w[-1] == 0.0
    assert np.all((w >= 0) & (w <= 1))


def test_cutoff_profile():
    t = np.array([0.0, 1.0, 1.5, 2.0, 3.0])
    c = smoothstep_cutoff(t)
    assert c[0] == 1 and c[1] == 1 and c[3] == 0 and c[4] == 0 and 0 < c[2] < 1


@pytest.mark.parametrize("seed", range(3))
def test_smoothing_axioms_and_interpolation(seed):
    g = Grid(0.1)
    p = GridProfile(g, random_profile(g, 2, seed=seed, freq_max=20))
    for s, s_hi in ((0, 2), (1, 3)):
        for theta in (2, 4, 8):
            loss, gain = smoothing_ratios(p, theta, s, s_hi)
            assert loss <= 2 and gain <= 2
    assert interpolation_ratio(p, 0, 1, 2) <= 1.5
    with pytest.raises(ValueError):
        interpolation_ratio(p, 2, 1, 3)


def test_pointwise_and_nodal_operators():
    g = Grid(1.0, 1.0, 0.1)
    M = g.M
    blocks = np.arange(M * 6, dtype=float).reshape(M, 2, 3)
    P = pointwise_operator(blocks)
    x = np.random.default_rng(0).normal(size=(M, 3))
    np.testing.assert_allclose((P @ x.ravel()).reshape(M, 2), np.einsum("mij,mj->mi", blocks, x))
    D = nodal_derivative_operator(g, 1, 3)
    np.testing.assert_allclose((D @ x.ravel()).reshape(M, 3), derivative_matrix(g, 1) @ x)


def test_least_squares_matches_dense():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(30, 12))
    b = rng.normal(size=30)
    x = LeastSquares(A).solve(b)
    np.testing.assert_allclose(x, np.linalg.lstsq(A, b, rcond=None)[0], atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.floats(1.0, 30.0), st.floats(-3.0, 3.0), st.integers(0, 50))
def test_smooth_linear_and_contractive(theta, c, seed):
    g = Grid(0.2, 8.0, 0.02)
    a = random_profile(g, 1, seed=seed)
    b = random_profile(g, 1, seed=seed + 1)
    sa, sb = smooth(GridProfile(g, a), theta), smooth(GridProfile(g, b), theta)
    sab = smooth(GridProfile(g, a + c * b), theta)
    np.testing.assert_allclose(sab.values, sa.values + c * sb.values, atol=1e-12)
    ns = NormSpec(0, 0.2)
    assert weighted_norm(sa, ns) <= weighted_norm(GridProfile(g, a), ns) * (1 + 1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(-5.0, 5.0).filter(lambda c: abs(c) > 1e-3), st.integers(0, 4))
def test_norm_homogeneous(c, s):
    g = Grid(0.1, 6.0, 0.02)
    p = GridProfile(g, random_profile(g, 1, seed=7))
    ns = NormSpec(s, 0.1, 0.05)
    assert abs(weighted_norm(p * c, ns) - abs(c) * weighted_norm(p, ns)) <= 1e-10 * weighted_norm(p * c, ns)
