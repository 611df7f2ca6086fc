"""Independent reference profiles.

``march_to_steady`` integrates ``U_t + A(U) U_x = Q(U)`` in the shock frame
with a first-order Rusanov discretization until the time derivative vanishes.
``quadrature_profile`` inverts ``x(u) = int b_*(w) / (f_*(w) - f_*(u-)) dw``
for scalar reduced systems.  Neither shares code with the Nash-Moser path
beyond the model callbacks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .chapman_enskog import ShockPair
from .discretization import Grid, GridProfile
from .model import ModelSpec
from .structure import ReducedSystem

__all__ = ["MarchConfig", "OracleError", "march_to_steady", "quadrature_profile", "recenter", "phase_crossing"]


class OracleError(RuntimeError):
    pass


@dataclass
class MarchConfig:
    """Pseudo-time marching controls.

    The first step uses ``dt = cfl * h / alpha``; later steps grow by
    ``growth`` (switched evolution relaxation) up to ``dt_max``.  The march is
    repeated on ``levels`` nested grids with spacings ``h, h/2, h/4, ...``
    and the re-centered profiles are combined by Richardson extrapolation,
    removing the ``O(h)``, ``O(h^2)``, ... terms of the first-order scheme.
    Marching runs on a domain ``domain_factor`` times wider than the target
    grid, so the Dirichlet end states do not pollute the sampled window.
    """

    cfl: float = 0.45
    t_final: float = 1e9
    tol: float = 1e-9
    scheme: str = "rusanov"
    max_steps: int = 400
    growth: float = 2.0
    dt_max: float = 1e5
    levels: int = 3
    domain_factor: float = 2.0

    def __post_init__(self):
        if not 0 < self.cfl < 0.5:
            raise ValueError("cfl must lie in (0, 0.5)")
        if self.scheme != "rusanov":
            raise ValueError(f"unknown spatial scheme {self.scheme!r}")
        if not 1 <= self.levels <= 4:
            raise ValueError("levels must lie in [1, 4]")
        if self.domain_factor < 1:
            raise ValueError("domain_factor must be at least 1")
        if self.tol <= 0 or self.max_steps < 1 or self.growth < 1:
            raise ValueError("invalid marching budget")


def _max_speed(m, states):
    A = m.matrix_A(states)
    return float(np.max(np.abs(np.linalg.eigvals(A))))


class _Rusanov:
    """Semi-discrete right-hand side ``U_t = R(U)`` and its sparse Jacobian.

    Conservative Rusanov fluxes for the ``u`` rows; central differences plus
    the same numerical viscosity for the (nonconservative) ``v`` rows.  Ghost
    nodes carry the equilibrium end states.
    """

    def __init__(self, m: ModelSpec, h: float, left, right, alpha):
        self.m, self.h, self.alpha = m, h, alpha
        self.left, self.right = np.asarray(left, float), np.asarray(right, float)
        self.n, self.d = m.n, m.d

    def _ext(self, U):
        return np.vstack([self.left, U, self.right])

    def interface_flux(self, U):
        E = self._ext(U)
        f = self.m.flux(E)
        n = self.n
        return 0.5 * (f[:-1] + f[1:]) - 0.5 * self.alpha * (E[1:, :n] - E[:-1, :n])

    def rhs(self, U):
        m, n, h, a = self.m, self.n, self.h, self.alpha
        E = self._ext(U)
        F = self.interface_flux(U)
        out = np.empty_like(U)
        out[:, :n] = -(F[1:] - F[:-1]) / h
        A = m.matrix_A(U)[:, n:, :]
        dU = (E[2:] - E[:-2]) / (2 * h)
        lap = (E[2:, n:] - 2 * E[1:-1, n:] + E[:-2, n:]) / (2 * h)
        out[:, n:] = -np.einsum("mij,mj->mi", A, dU) + a * lap + m.source(U)[..., :]
        return out

    def jacobian(self, U):
        m, n, d, h, a = self.m, self.n, self.d, self.h, self.alpha
        M = U.shape[0]
        E = self._ext(U)
        df = m.d_flux(U)
        Pu = np.zeros((n, d))
        Pu[:, :n] = np.eye(n)
        Pv = np.zeros((d - n, d))
        Pv[:, n:] = np.eye(d - n)
        diag = np.zeros((M, d, d))
        lower = np.zeros((M, d, d))  # coupling of node i to node i-1
        upper = np.zeros((M, d, d))  # coupling of node i to node i+1
        # u rows: -(F_{i+1/2} - F_{i-1/2}) / h
        diag[:, :n, :] = -(a * Pu) / h
        upper[:, :n, :] = -(0.5 * df - 0.5 * a * Pu) / h
        lower[:, :n, :] = (0.5 * df + 0.5 * a * Pu) / h
        # v rows
        A = m.matrix_A(U)[:, n:, :]
        dA = m.d_matrix_A(U)[:, n:]
        dU = (E[2:] - E[:-2]) / (2 * h)
        diag[:, n:, :] = -np.einsum("mijk,mj->mik", dA, dU) + m.d_source(U) - (a / h) * Pv
        upper[:, n:, :] = -A / (2 * h) + (a / (2 * h)) * Pv
        lower[:, n:, :] = A / (2 * h) + (a / (2 * h)) * Pv
        idx = np.arange(M * d).reshape(M, d)
        rows, cols, vals = [], [], []
        for blk, off in ((diag, 0), (lower, -1), (upper, 1)):
            lo, hi = max(0, -off), M - max(0, off)
            r = np.repeat(idx[lo:hi, :, None], d, axis=2)
            c = np.repeat(idx[lo + off : hi + off, None, :], d, axis=1)
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(blk[lo:hi].ravel())
        return sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(M * d, M * d)
        )


def _initial_state(m, pair, x, epsilon):
    um, up = np.asarray(pair.u_minus, float), np.asarray(pair.u_plus, float)
    s = 0.5 * (1.0 + np.tanh(0.5 * epsilon * x))[:, None]
    u = (1 - s) * um + s * up
    return np.concatenate([u, np.zeros((x.size, m.r))], axis=1)


def phase_crossing(x, u, pair: ShockPair, ell=None) -> float:
    """Location where ``ell . (u - mid)`` changes sign (cubic interpolation)."""
    ell = _unit(pair, ell)
    g = (np.asarray(u) - pair.midpoint) @ ell
    s = np.flatnonzero(np.sign(g[:-1]) != np.sign(g[1:]))
    if s.size == 0:
        raise OracleError("profile does not cross the phase level")
    i = int(s[np.argmin(np.abs(x[s]))])
    sp_ = CubicSpline(x, g)
    return float(brentq(sp_, x[i], x[i + 1], xtol=1e-14))


def _unit(pair, ell):
    if ell is None:
        ell = np.asarray(pair.u_plus, float) - np.asarray(pair.u_minus, float)
    ell = np.asarray(ell, float)
    return ell / np.linalg.norm(ell)


def recenter(x, values, shift):
    """Values of the profile translated so that ``x = shift`` moves to ``x = 0``."""
    sp_ = CubicSpline(x, values, axis=0)
    xs = np.clip(x + shift, x[0], x[-1])
    return sp_(xs)


def _restrict(src: Grid, values, dst: Grid):
    # nested uniform grids share the node at x = 0
    ratio = int(round(dst.h_tilde / src.h_tilde))
    half = dst.M // 2
    idx = src.center + ratio * np.arange(-half, half + 1)
    return values[idx]


def _march(m, pair, grid: Grid, cfg: MarchConfig, ell):
    x = grid.x
    h = grid.h
    um = np.asarray(pair.u_minus, float)
    up = np.asarray(pair.u_plus, float)
    left = np.concatenate([um, np.zeros(m.r)])
    right = np.concatenate([up, np.zeros(m.r)])
    U = _initial_state(m, pair, x, max(pair.epsilon, 1e-3))
    alpha = 1.05 * _max_speed(m, np.vstack([left, right, U]))
    ops = _Rusanov(m, h, left, right, alpha)
    R = ops.rhs(U)
    res = float(np.abs(R).max())
    dt = cfg.cfl * h / alpha
    t = 0.0
    steps = 0
    n_dof = U.size
    history = [res]
    while res >= cfg.tol:
        if steps >= cfg.max_steps or t >= cfg.t_final:
            raise OracleError(f"no steady state within {steps} steps (|U_t| = {res:.3e})")
        Jm = sp.identity(n_dof, format="csc") / dt - ops.jacobian(U)
        dU = spla.spsolve(Jm, R.ravel()).reshape(U.shape)
        trial = U + dU
        Rt = ops.rhs(trial)
        rt = float(np.abs(Rt).max())
        if not np.all(np.isfinite(trial)) or rt > 10 * res + 1e-12:
            dt *= 0.25
            steps += 1
            continue
        U, R = trial, Rt
        t += dt
        dt = min(cfg.dt_max, dt * cfg.growth * max(1.0, min(4.0, res / max(rt, 1e-300))))
        res = rt
        steps += 1
        history.append(res)
    F = ops.interface_flux(U)
    balance = float(np.abs(np.sum(F[1:] - F[:-1], axis=0) - (F[-1] - F[0])).max())
    x0 = phase_crossing(x, U[:, : m.n], pair, ell) if pair.epsilon > 0 else 0.0
    return U, {"steps": steps, "pseudo_time": t, "steady_residual": res, "drift": x0, "flux_balance": balance,
               "alpha": alpha, "history": history}


def march_to_steady(m: ModelSpec, pair: ShockPair, grid: Grid, cfg: MarchConfig | None = None, ell=None) -> GridProfile:
    """Steady profile of the time-dependent relaxation system.

    Returns the full state on ``grid`` re-centered so that the crossing of
    ``ell . (u - mid)`` (default ``ell`` along ``u+ - u-``) sits at ``x = 0``.
    ``meta['drift']`` is the crossing location before re-centering and
    ``meta['flux_balance']`` the telescoping error of the conservative rows.
    """
    cfg = cfg or MarchConfig()
    if pair.epsilon == 0:
        state = np.concatenate([np.asarray(pair.u_minus, float), np.zeros(m.r)])
        vals = np.tile(state, (grid.M, 1))
        return GridProfile(grid, vals, {"kind": "march", "steps": 0, "drift": 0.0, "flux_balance": 0.0})
    runs, infos = [], []
    for k in range(cfg.levels):
        wide = Grid(grid.epsilon, grid.L_tilde * cfg.domain_factor, grid.h_tilde / 2**k)
        U, info = _march(m, pair, wide, cfg, ell)
        runs.append(_restrict(wide, recenter(wide.x, U, info["drift"]), grid))
        infos.append({k_: v for k_, v in info.items() if k_ != "history"})
    # Richardson table for an expansion in powers of h
    table = runs
    for j in range(1, cfg.levels):
        table = [table[i] + (table[i] - table[i - 1]) / (2**j - 1) for i in range(1, len(table))]
    Uc = table[-1]
    meta = {
        "kind": "march",
        "levels": cfg.levels,
        **infos[0],
        "refinements": infos[1:],
        "extrapolation_gap": float(np.abs(Uc - runs[-1]).max()),
    }
    return GridProfile(grid, Uc, meta)


def quadrature_profile(rs: ReducedSystem, pair: ShockPair, grid: Grid, panel: float = 0.05) -> GridProfile:
    """Scalar reduced profile by quadrature of ``dx/du = b_*(u) / (f_*(u) - f_*(u-))``.

    Centered at the midpoint (``x(mid) = 0``).  On each side the substitution
    ``u = u_end - (u_end - mid) e^{-s}`` turns the logarithmic end singularity
    into a smooth bounded integrand, so ``x(s)`` is tabulated with composite
    16-point Gauss-Legendre panels and inverted node by node with Newton
    steps (all nodes at once).
    """
    if rs.n != 1:
        raise ValueError("quadrature profile requires a scalar reduced system")
    um = float(np.asarray(pair.u_minus).ravel()[0])
    up = float(np.asarray(pair.u_plus).ravel()[0])
    mid = 0.5 * (um + up)
    x = grid.x
    if pair.epsilon == 0 or um == up:
        return GridProfile(grid, np.full((grid.M, 1), um), {"kind": "quadrature"})
    fref = float(rs.f_star(np.array([um]))[0])
    b_mid = float(rs.b_star(np.array([[mid]]))[0, 0, 0])
    if b_mid / (float(rs.f_star(np.array([mid]))[0]) - fref) * (up - um) < 0:
        # the connection runs from u+ to u-: mirror image of the admissible profile
        flipped = replace(pair, u_minus=pair.u_plus, u_plus=pair.u_minus)
        out = quadrature_profile(rs, flipped, grid, panel)
        return GridProfile(grid, out.values[::-1].copy(), {"kind": "quadrature", "mirrored": True})
    gl_x, gl_w = np.polynomial.legendre.leggauss(16)

    def integrand(s, end):
        # dx/ds along u(s) = end - (end - mid) e^{-s}
        gap = (end - mid) * np.exp(-s)
        w = (end - gap).reshape(-1, 1)
        b = rs.b_star(w)[:, 0, 0]
        if np.any(b <= 0):
            raise OracleError("b_* vanishes on the connection")
        return (b * gap.ravel() / (rs.f_star(w)[:, 0] - fref)).reshape(np.shape(s))

    def gl(a, b, end):
        a, b = np.asarray(a, float), np.asarray(b, float)
        c, r = 0.5 * (a + b), 0.5 * (b - a)
        pts = c[..., None] + r[..., None] * gl_x
        return r * (integrand(pts, end) @ gl_w)

    vals = np.empty(grid.M)
    c = grid.center
    vals[c] = mid
    for end, sel in ((up, x > 0), (um, x < 0)):
        targets = x[sel]
        reach = np.abs(targets).max()
        edges = np.array([0.0])
        table = np.array([0.0])
        while abs(table[-1]) < reach:
            new = edges[-1] + panel * np.arange(1, 201)
            inc = gl(np.concatenate([[edges[-1]], new[:-1]]), new, end)
            table = np.concatenate([table, table[-1] + np.cumsum(inc)])
            edges = np.concatenate([edges, new])
            if edges[-1] > 60.0:
                raise OracleError("profile does not reach the grid ends")
        mag = np.abs(table)
        k = np.clip(np.searchsorted(mag, np.abs(targets)) - 1, 0, edges.size - 2)
        s0, x0 = edges[k], table[k]
        # linear guess inside the panel, then Newton on x(s) - target
        s = s0 + panel * (targets - x0) / (table[k + 1] - x0)
        for _ in range(30):
            resid = x0 + gl(s0, s, end) - targets
            step = resid / integrand(s, end)
            s = np.clip(s - step, s0, s0 + panel)
            if np.abs(step).max() < 1e-15 * max(1.0, s.max()):
                break
        vals[sel] = end - (end - mid) * np.exp(-s)
    return GridProfile(grid, vals[:, None], {"kind": "quadrature"})
