"""Chapman-Enskog approximate shock profiles and their residuals.

The reduced profile solves ``b_*(u) u' = f_*(u) - f_*(u_-)`` and is lifted to
the relaxation variables through ``v = c_*(u) u'``.  Up to two correctors can
be added: the next term of the ``v`` expansion and the ``u`` correction it
induces through the flux equation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .discretization import (
    Grid,
    GridProfile,
    LeastSquares,
    derivative_matrix,
    nodal_derivative_operator,
    pointwise_operator,
)
from .model import ModelSpec
from .structure import ReducedSystem

__all__ = [
    "ShockPair",
    "CEApproximation",
    "HugoniotError",
    "ProfileError",
    "hugoniot_pair",
    "solve_reduced_profile",
    "correctors",
    "residual",
    "relaxation_residual",
    "build_ce",
]

MAX_ORDER = 2


class HugoniotError(RuntimeError):
    pass


class ProfileError(RuntimeError):
    pass


@dataclass(frozen=True)
class ShockPair:
    u_minus: np.ndarray
    u_plus: np.ndarray
    epsilon: float
    direction: np.ndarray
    rh_residual: float = 0.0
    lax_ok: bool = True

    @property
    def midpoint(self):
        return 0.5 * (self.u_minus + self.u_plus)

    def flipped(self):
        return ShockPair(self.u_plus, self.u_minus, self.epsilon, -self.direction, self.rh_residual, self.lax_ok)


def _lax_count(rs: ReducedSystem, um, up):
    wm = np.linalg.eigvals(rs.df_star(um)).real
    wp = np.linalg.eigvals(rs.df_star(up)).real
    return int(np.sum(wm > 0) + np.sum(wp < 0))


def hugoniot_pair(rs: ReducedSystem, u0=None, epsilon=0.1, tol=1e-13, max_iter=50) -> ShockPair:
    """Zero-speed Rankine-Hugoniot pair of amplitude ``epsilon`` near ``u0``.

    Newton on ``f_*(u+) = f_*(u-)``, ``|u+ - u-| = epsilon`` with the midpoint
    displaced from ``u0`` only along ``r``; started from ``u0 -+ epsilon r / 2``.
    """
    if epsilon < 0:
        raise ValueError("amplitude must be nonnegative")
    if epsilon > 0.2:
        raise ValueError("amplitude above 0.2 is outside the small-shock regime")
    n = rs.n
    u0 = np.asarray(rs.u0 if u0 is None else u0, dtype=float)
    r = rs.r_vec / np.linalg.norm(rs.r_vec)
    if epsilon == 0:
        return ShockPair(u0.copy(), u0.copy(), 0.0, r.copy())
    # orthonormal complement of r
    Q = np.linalg.svd(r[None, :])[2][1:].T
    z = np.concatenate([u0 - 0.5 * epsilon * r, u0 + 0.5 * epsilon * r])
    scale = max(1.0, float(np.abs(rs.f_star(u0)).max()))

    def F(z):
        um, up = z[:n], z[n:]
        dz = up - um
        return np.concatenate(
            [rs.f_star(up) - rs.f_star(um), [np.linalg.norm(dz) - epsilon], Q.T @ (0.5 * (um + up) - u0)]
        )

    def J(z):
        um, up = z[:n], z[n:]
        dz = up - um
        e = dz / np.linalg.norm(dz)
        top = np.hstack([-rs.df_star(um), rs.df_star(up)])
        mid = np.concatenate([-e, e])[None, :]
        bot = 0.5 * np.hstack([Q.T, Q.T])
        return np.vstack([top, mid, bot])

    res = F(z)
    for _ in range(max_iter):
        if np.abs(res).max() <= tol * max(scale, epsilon):
            break
        z = z - np.linalg.solve(J(z), res)
        res = F(z)
    rh = float(np.abs(res).max())
    if not rh <= 1e-10 * scale:
        raise HugoniotError(f"Newton on the Hugoniot curve did not converge (residual {rh:.3e})")
    um, up = z[:n], z[n:]
    d = (up - um) / np.linalg.norm(up - um)
    angle = float(np.arccos(np.clip(abs(d @ r), -1.0, 1.0)))
    if angle > 0.2:
        raise HugoniotError(f"shock direction is {angle:.3f} rad away from r(u0)")
    lax = _lax_count(rs, um, up) == n + 1
    return ShockPair(um, up, float(epsilon), d, rh, lax)


def _phase_state(rs: ReducedSystem, pair: ShockPair, fref, ell):
    """State on the connecting orbit where ``ell . (u - mid) = 0``."""
    L = rs.left_kernel
    mid = pair.midpoint
    if L.shape[0] == 0:
        return mid.copy()
    c = mid.copy()
    for _ in range(50):
        G = np.concatenate([L @ (rs.f_star(c) - fref), [ell @ (c - mid)]])
        if np.abs(G).max() < 1e-15 * max(1.0, np.abs(fref).max()):
            break
        JG = np.vstack([L @ rs.df_star(c), ell[None, :]])
        c = c - np.linalg.solve(JG, G)
    return c


def solve_reduced_profile(
    rs: ReducedSystem, pair: ShockPair, grid: Grid, shift: float = 0.0, rtol: float = 1e-13
) -> GridProfile:
    """Reduced profile on ``grid``, centered by ``l . (u(shift) - mid) = 0``.

    Integrates the profile ODE from the centering point outwards with a
    high-order adaptive Runge-Kutta method, which is the stable direction on
    both sides of a Lax profile.  When ``b_*`` is singular the constraint rows
    ``L (f_*(u) - f_*(u-)) = 0`` are differentiated, giving a nondegenerate
    ODE on the constraint curve.  ``meta['u_prime']`` holds ``u'`` from the
    vector field itself.
    """
    n = rs.n
    L = rs.left_kernel
    if n - L.shape[0] != 1:
        raise ProfileError(
            "profile ODE with more than one differential direction is not supported "
            f"(n = {n}, dim ker b_* = {L.shape[0]})"
        )
    x = grid.x
    meta = {
        "u_minus": pair.u_minus.tolist(),
        "u_plus": pair.u_plus.tolist(),
        "epsilon": pair.epsilon,
        "shift": shift,
    }
    if pair.epsilon == 0:
        vals = np.tile(pair.u_minus, (grid.M, 1))
        meta["u_prime"] = np.zeros_like(vals)
        return GridProfile(grid, vals, meta)

    fref = rs.f_star(pair.u_minus)
    P = L.T @ L
    Pc = np.eye(n) - P
    ell = rs.l_vec / np.linalg.norm(rs.l_vec)

    def rhs(_, u):
        return np.linalg.solve(rs.ode_matrix(u), Pc @ (rs.f_star(u) - fref))

    c = _phase_state(rs, pair, fref, ell)
    atol = 1e-16 * max(1.0, float(np.abs(c).max()))
    vals = np.empty((grid.M, n))
    right = x >= shift
    left = ~right
    for mask, end in ((right, x[-1]), (left, x[0])):
        if not mask.any():
            continue
        pts = x[mask]
        if end == shift:
            vals[mask] = c
            continue
        order = np.argsort(np.abs(pts - shift))
        sol = solve_ivp(rhs, (shift, end), c, method="DOP853", rtol=rtol, atol=atol, t_eval=pts[order])
        if sol.status != 0:
            raise ProfileError(f"profile integration failed: {sol.message}")
        block = np.empty((pts.size, n))
        block[order] = sol.y.T
        vals[mask] = block
    du = np.array([rhs(0.0, u) for u in vals])
    meta["u_prime"] = du
    meta["center_state"] = c.tolist()
    meta["end_error"] = float(
        max(np.abs(vals[0] - pair.u_minus).max(), np.abs(vals[-1] - pair.u_plus).max()) / pair.epsilon
    )
    return GridProfile(grid, vals, meta)


@dataclass
class CEApproximation:
    """Order-``N`` Chapman-Enskog approximant ``U^N = (u^N, v^N)`` on a grid."""

    order: int
    grid: Grid
    pair: ShockPair
    u_bar: GridProfile
    v_bar: GridProfile
    U: GridProfile
    correctors: dict = field(default_factory=dict)
    R_u: GridProfile | None = None
    R_v: GridProfile | None = None

    @property
    def epsilon(self):
        return self.pair.epsilon

    def state(self):
        return self.U.values


def _c_star_apply(rs, u, du):
    return np.einsum("...ij,...j->...i", rs.c_star(u), du)


def _induced_u_corrector(m: ModelSpec, rs: ReducedSystem, u_bar, du, forcing, grid, center):
    """Solve ``b_* w' + (db_*[w]) u' - df_* w = forcing`` with ``l . w(center) = 0``.

    Collocation with the grid stencils (constraint rows ``-L df_* w = L forcing``
    where ``b_*`` is singular) plus the phase row, solved in least squares.
    Returns ``w`` and the relative least-squares residual.
    """
    n = rs.n
    M = grid.M
    L = rs.left_kernel
    P = L.T @ L
    Pc = np.eye(n) - P
    B = rs.b_star(u_bar)
    dF = rs.df_star(u_bar)
    step = 1e-6
    dB = np.empty((M, n, n))
    for b in range(n):
        e = np.zeros(n)
        e[b] = step
        dBb = (rs.b_star(u_bar + e) - rs.b_star(u_bar - e)) / (2 * step)
        dB[:, :, b] = np.einsum("mij,mj->mi", dBb, du)
    diff_blocks = np.einsum("ij,mjk->mik", Pc, B)
    point_blocks = np.einsum("ij,mjk->mik", Pc, dB - dF) - np.einsum("ij,mjk->mik", P, dF)
    J = pointwise_operator(diff_blocks) @ nodal_derivative_operator(grid, 1, n) + pointwise_operator(point_blocks)
    ell = rs.l_vec / np.linalg.norm(rs.l_vec)
    row = np.zeros((1, M * n))
    row[0, center * n : (center + 1) * n] = ell
    K = sp.vstack([J, sp.csr_matrix(row)], format="csr")
    rhs = np.concatenate([forcing.ravel(), [0.0]])
    w = LeastSquares(K).solve(rhs)
    res = float(np.linalg.norm(K @ w - rhs) / max(np.linalg.norm(rhs), 1e-300))
    return w.reshape(M, n), res


def correctors(m: ModelSpec, rs: ReducedSystem, u_bar: GridProfile, order: int = 0, pair: ShockPair = None):
    """Assemble ``U^N`` from the reduced profile for ``N`` in {0, 1, 2}."""
    if order not in (0, 1, 2):
        raise ValueError(f"corrector order {order} unsupported (0, 1 or 2)")
    grid = u_bar.grid
    n = m.n
    u = u_bar.values
    du = u_bar.meta.get("u_prime")
    if du is None:
        du = derivative_matrix(grid, 1) @ u
    D1 = derivative_matrix(grid, 1)
    v = _c_star_apply(rs, u, du)
    corr = {"v_CE": v.copy()}
    if order >= 1:
        Ueq = m.equilibrium(u)
        A22 = m.matrix_A(Ueq)[:, n:, n:]
        dq_v = m.d_source(Ueq)[:, :, n:]
        dv = np.linalg.solve(dq_v, np.einsum("mij,mj->mi", A22, D1 @ v)[..., None])[..., 0]
        corr["v_CE_2"] = dv
        v = v + dv
    if order >= 2:
        A12 = m.matrix_A(m.equilibrium(u))[:, :n, n:]
        forcing = np.einsum("mij,mj->mi", A12, corr["v_CE_2"])
        shift = float(u_bar.meta.get("shift", 0.0))
        center = int(np.argmin(np.abs(grid.x - shift)))
        w, lsres = _induced_u_corrector(m, rs, u, du, forcing, grid, center)
        corr["u_CE_2"] = w
        corr["u_CE_2_ls_residual"] = lsres
        u = u + w
        v = _c_star_apply(rs, u, D1 @ u) + corr["v_CE_2"]
    meta = {"order": order, "epsilon": u_bar.meta.get("epsilon")}
    U = GridProfile(grid, np.concatenate([u, v], axis=1), meta)
    if pair is None:
        pair = ShockPair(u[0].copy(), u[-1].copy(), float(np.linalg.norm(u[-1] - u[0])), rs.r_vec)
    ce = CEApproximation(
        order=order,
        grid=grid,
        pair=pair,
        u_bar=u_bar,
        v_bar=GridProfile(grid, corr["v_CE"]),
        U=U,
        correctors=corr,
    )
    ce.R_u, ce.R_v = residual(m, ce)
    return ce


def relaxation_residual(m: ModelSpec, grid: Grid, W, fref):
    """``(f(W) - fref, A21 u' + A22 v' - q(W))`` at every node of ``grid``."""
    W = np.asarray(W, dtype=float)
    n = m.n
    D1 = derivative_matrix(grid, 1)
    dW = D1 @ W
    A = m.matrix_A(W)
    Ru = m.flux(W) - fref
    Rv = np.einsum("mij,mj->mi", A[:, n:, :], dW) - m.source(W)
    return Ru, Rv


def residual(m: ModelSpec, ce: CEApproximation):
    """CE residuals ``R_u = f(U^N) - f_*(u-)`` and ``R_v = A21 u' + A22 v' - q``."""
    fref = m.flux(m.equilibrium(ce.pair.u_minus))
    Ru, Rv = relaxation_residual(m, ce.grid, ce.U.values, fref)
    return GridProfile(ce.grid, Ru), GridProfile(ce.grid, Rv)


def build_ce(m: ModelSpec, epsilon: float, order: int = 0, grid: Grid | None = None, rs=None, shift=0.0):
    """Convenience pipeline: reduce, Hugoniot pair, reduced profile, correctors."""
    from .structure import reduce

    rs = reduce(m) if rs is None else rs
    grid = Grid(epsilon) if grid is None else grid
    pair = hugoniot_pair(rs, rs.u0, epsilon)
    ub = solve_reduced_profile(rs, pair, grid, shift=shift)
    return correctors(m, rs, ub, order, pair)
