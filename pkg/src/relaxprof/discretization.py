"""Uniform grids in the slow variable, derivative stencils, scaled norms, smoothing.

Grids are uniform in ``x_tilde = eps * x``; all derivatives and norms are taken
in the physical variable ``x`` with spacing ``h = h_tilde / eps``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "Grid",
    "GridProfile",
    "NormSpec",
    "DELTA0",
    "S_MAX",
    "fornberg_weights",
    "derivative_matrix",
    "derivative",
    "weighted_norm",
    "smooth",
    "smoothstep_cutoff",
    "edge_window",
    "pointwise_operator",
    "nodal_derivative_operator",
    "LeastSquares",
    "smoothing_ratios",
    "interpolation_ratio",
]

DELTA0 = 0.1
S_MAX = 6
MAX_DERIV = 6
ORDER = 4


@dataclass(frozen=True)
class Grid:
    epsilon: float
    L_tilde: float = 12.0
    h_tilde: float = 0.01

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.h_tilde <= 0 or self.L_tilde <= 0:
            raise ValueError("grid sizes must be positive")

    @property
    def M(self) -> int:
        return 2 * int(round(self.L_tilde / self.h_tilde)) + 1

    @property
    def center(self) -> int:
        return self.M // 2

    @property
    def x_tilde(self) -> np.ndarray:
        half = self.M // 2
        return np.arange(-half, half + 1) * self.h_tilde

    @property
    def x(self) -> np.ndarray:
        return self.x_tilde / self.epsilon

    @property
    def h(self) -> float:
        return self.h_tilde / self.epsilon

    def with_epsilon(self, epsilon):
        return Grid(epsilon, self.L_tilde, self.h_tilde)


@dataclass
class GridProfile:
    """Vector-valued samples ``values[i, c]`` on ``grid`` nodes."""

    grid: Grid
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.M:
            raise ValueError(f"profile has {v.shape[0]} nodes, grid has {self.grid.M}")
        if not np.all(np.isfinite(v)):
            raise ValueError("profile contains non-finite entries")
        self.values = v

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __add__(self, other):
        return GridProfile(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return GridProfile(self.grid, self.values - _vals(other))

    def __mul__(self, c):
        return GridProfile(self.grid, self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return GridProfile(self.grid, -self.values)


def _vals(p):
    return p.values if isinstance(p, GridProfile) else np.asarray(p, dtype=float)


@dataclass(frozen=True)
class NormSpec:
    s: int
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not (0 <= self.s <= S_MAX):
            raise ValueError(f"Sobolev index must lie in [0, {S_MAX}]")
        if not (0.0 <= self.delta <= DELTA0):
            raise ValueError(f"weight rate must lie in [0, {DELTA0}]")


def fornberg_weights(z: float, xs, k: int) -> np.ndarray:
    """Weights of the ``k``-th derivative at ``z`` from nodes ``xs`` (Fornberg 1988)."""
    xs = np.asarray(xs, dtype=float)
    n = len(xs)
    c = np.zeros((n, k + 1))
    c1, c4 = 1.0, xs[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, k)
        c2, c5, c4 = 1.0, c4, xs[i] - z
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for m in range(mn, 0, -1):
                    c[i, m] = c1 * (m * c[i - 1, m - 1] - c5 * c[i - 1, m]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for m in range(mn, 0, -1):
                c[j, m] = (c4 * c[j, m] - m * c[j, m - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, k]


@lru_cache(maxsize=64)
def _unit_derivative_matrix(M: int, k: int) -> sp.csr_matrix:
    # unit spacing; central interior, one-sided windows near the ends
    if k == 0:
        return sp.identity(M, format="csr")
    p = (k + 3) // 2
    width = max(2 * p + 1, k + ORDER)
    if M < max(2 * k + 5, width):
        raise ValueError(f"grid with {M} nodes is too small for derivative order {k}")
    rows, cols, data = [], [], []
    central = fornberg_weights(0.0, np.arange(-p, p + 1), k)
    for i in range(M):
        if p <= i < M - p:
            idx = np.arange(i - p, i + p + 1)
            w = central
        else:
            start = 0 if i < p else M - width
            idx = np.arange(start, start + width)
            w = fornberg_weights(float(i), idx, k)
        rows.extend([i] * len(idx))
        cols.extend(idx.tolist())
        data.extend(w.tolist())
    return sp.csr_matrix((data, (rows, cols)), shape=(M, M))


def derivative_matrix(grid: Grid, k: int) -> sp.csr_matrix:
    """Sparse matrix of the 4th-order ``d^k/dx^k`` on ``grid`` (physical ``x``)."""
    if not 0 <= k <= MAX_DERIV:
        raise ValueError(f"derivative order must be in [0, {MAX_DERIV}], got {k}")
    return _unit_derivative_matrix(grid.M, k) * (grid.h ** (-k))


def derivative(p: GridProfile, k: int = 1) -> GridProfile:
    return GridProfile(p.grid, derivative_matrix(p.grid, k) @ p.values)


def pointwise_operator(blocks) -> sp.csr_matrix:
    """Block-diagonal sparse matrix from per-node blocks of shape ``(M, p, q)``.

    Unknowns and equations are ordered node-major (``i * width + component``).
    """
    blocks = np.asarray(blocks, dtype=float)
    M, p, q = blocks.shape
    rows = (np.arange(M)[:, None, None] * p + np.arange(p)[None, :, None]) + np.zeros((1, 1, q), dtype=int)
    cols = (np.arange(M)[:, None, None] * q + np.arange(q)[None, None, :]) + np.zeros((1, p, 1), dtype=int)
    return sp.csr_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(M * p, M * q))


def nodal_derivative_operator(grid: Grid, k: int, width: int) -> sp.csr_matrix:
    """``d^k/dx^k`` acting on node-major vectors with ``width`` components per node."""
    return sp.kron(derivative_matrix(grid, k), sp.identity(width), format="csr")


class LeastSquares:
    """Sparse least squares ``min |A x - b|`` via the augmented system.

    ``[[I, A], [A^T, 0]] [r; x] = [b; 0]`` is factorized once with a sparse LU,
    which keeps the conditioning of ``A`` instead of squaring it as the normal
    equations would.  Reusable for several right-hand sides.
    """

    def __init__(self, A):
        A = sp.csr_matrix(A)
        self.shape = A.shape
        m, n = A.shape
        K = sp.bmat([[sp.identity(m), A], [A.T, None]], format="csc")
        self._lu = spla.splu(K)
        self.A = A

    def solve(self, b):
        m, n = self.shape
        b = np.asarray(b, dtype=float)
        z = self._lu.solve(np.concatenate([b, np.zeros(n)]))
        return z[m:]

    def residual(self, x, b):
        return self.A @ x - b


def _trapz_l2(values, h):
    sq = np.sum(values**2, axis=-1) if values.ndim > 1 else values**2
    return float(np.sqrt(h * (np.sum(sq) - 0.5 * (sq[0] + sq[-1]))))


def weighted_norm(p: GridProfile, ns: NormSpec) -> float:
    """``eps^{1/2} sum_{k<=s} eps^{-k} || e^{delta eps <x>} d^k p ||_{L^2}``."""
    g = p.grid
    if not np.isclose(g.epsilon, ns.epsilon, rtol=1e-12):
        raise ValueError("profile grid and norm spec disagree on epsilon")
    eps = g.epsilon
    expo = ns.delta * eps * np.sqrt(g.x**2 + 1.0)
    if np.max(expo) > 700.0:
        raise OverflowError("exponential weight overflows")
    wgt = np.exp(expo)[:, None]
    total = 0.0
    for k in range(ns.s + 1):
        dk = derivative_matrix(g, k) @ p.values
        total += eps ** (-k) * _trapz_l2(wgt * dk, g.h)
    return float(np.sqrt(eps) * total)


def smoothstep_cutoff(t):
    """1 on [0, 1], 0 on [2, inf), septic transition with three flat derivatives."""
    s = np.clip(np.asarray(t, dtype=float) - 1.0, 0.0, 1.0)
    return 1.0 - s**4 * (35.0 - 84.0 * s + 70.0 * s**2 - 20.0 * s**3)


def edge_window(grid: Grid, margin: float = 4.0, edge: float = 0.5) -> np.ndarray:
    """C-infinity window: 1 for ``|x_tilde| <= L - margin``, 0 beyond ``L - edge``."""
    a = grid.L_tilde - margin
    b = grid.L_tilde - edge
    t = np.clip((np.abs(grid.x_tilde) - a) / (b - a), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        p = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        q = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return 1.0 - p / (p + q)


def smooth(p: GridProfile, theta: float, allow_window: bool = False, pad: int = 2) -> GridProfile:
    """Fourier cutoff ``chi(|xi_tilde| / theta)`` in the slow frequency.

    Inputs are zero-padded to ``pad * M`` points before the transform.  A
    profile whose end values are not negligible is rejected unless
    ``allow_window``: then it is split with the smooth window ``w`` of
    :func:`edge_window` as ``w p + (1 - w) p``, only ``w p`` is filtered and the
    tail part passes unchanged (``meta['windowed'] = True``).
    """
    if theta <= 0:
        raise ValueError("cutoff must be positive")
    g = p.grid
    vals = p.values
    interior = float(np.max(np.abs(vals))) if vals.size else 0.0
    edge = float(max(np.max(np.abs(vals[0])), np.max(np.abs(vals[-1]))))
    windowed = interior > 0 and edge > 1e-6 * interior
    meta = dict(p.meta)
    meta["windowed"] = windowed
    if windowed and not allow_window:
        raise ValueError(
            f"profile does not decay at the ends (edge/max = {edge / interior:.2e}); "
            "pass allow_window=True to window the tails"
        )
    nfft = pad * g.M
    xi = 2.0 * np.pi * np.fft.rfftfreq(nfft, d=g.h_tilde)
    mult = smoothstep_cutoff(xi / theta)
    if np.all(mult == 1.0):
        return GridProfile(g, vals.copy(), meta)
    if windowed:
        w = edge_window(g)[:, None]
        core, tail = w * vals, (1.0 - w) * vals
    else:
        core, tail = vals, 0.0
    spec = np.fft.rfft(core, n=nfft, axis=0)
    out = np.fft.irfft(spec * mult[:, None], n=nfft, axis=0)[: g.M]
    return GridProfile(g, out + tail, meta)


def smoothing_ratios(p: GridProfile, theta: float, s: int, s_hi: int, delta: float = 0.0):
    """Implied constants of the smoothing axioms for one profile.

    Returns ``(loss, gain)`` with ``loss = |S_theta p - p|_s / (theta^{s - s_hi} |p|_{s_hi})``
    and ``gain = |S_theta p|_{s_hi} / (theta^{s_hi - s} |p|_s)``.
    """
    eps = p.grid.epsilon
    sp_ = smooth(p, theta, allow_window=True)
    lo = NormSpec(s, eps, delta)
    hi = NormSpec(s_hi, eps, delta)
    loss = weighted_norm(sp_ - p, lo) / (theta ** (s - s_hi) * weighted_norm(p, hi))
    gain = weighted_norm(sp_, hi) / (theta ** (s_hi - s) * weighted_norm(p, lo))
    return float(loss), float(gain)


def interpolation_ratio(p: GridProfile, s_lo: int, s: int, s_hi: int, delta: float = 0.0) -> float:
    """``|p|_s / (|p|_{s_lo}^{1 - lam} |p|_{s_hi}^{lam})`` with ``s = (1 - lam) s_lo + lam s_hi``."""
    if not s_lo <= s <= s_hi or s_lo == s_hi:
        raise ValueError("need s_lo <= s <= s_hi with s_lo < s_hi")
    lam = (s - s_lo) / (s_hi - s_lo)
    eps = p.grid.epsilon
    a = weighted_norm(p, NormSpec(s_lo, eps, delta))
    b = weighted_norm(p, NormSpec(s_hi, eps, delta))
    return float(weighted_norm(p, NormSpec(s, eps, delta)) / (a ** (1 - lam) * b**lam))
