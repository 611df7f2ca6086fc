"""Linearized profile equations: assembly, phase-constrained solve, estimates.

The unknown ``U = (u, v)`` lives on the nodes of a grid (node-major order).
Rows are the ``n`` algebraic flux equations and the ``r`` relaxation ODEs at
every node, discretized with the 4th-order stencils, plus one phase row
``l_eps . u(0) = 0``.  The resulting system has one more row than unknowns and
is solved in the least-squares sense.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .chapman_enskog import CEApproximation
from .discretization import (
    Grid,
    GridProfile,
    LeastSquares,
    NormSpec,
    derivative_matrix,
    nodal_derivative_operator,
    pointwise_operator,
    weighted_norm,
)
from .model import ModelSpec

__all__ = [
    "LinearizedSystem",
    "SolveReport",
    "LinearSolveError",
    "PreconditionWarning",
    "S0",
    "jacobian_blocks",
    "jacobian_matrix",
    "second_derivative",
    "assemble",
    "solve",
    "forcing_norm",
    "energy_diagnostics",
]

S0 = 3
LS_TOL = 1e-6


class LinearSolveError(RuntimeError):
    pass


class PreconditionWarning(RuntimeWarning):
    pass


def jacobian_blocks(m: ModelSpec, grid: Grid, W):
    """Per-node blocks of the linearization at the full state ``W``.

    Returns ``(A, b, dq)`` with ``A`` of shape (M, d, d), the coefficient
    ``b[i] = d(A21, A22)(W_i)[.] W'_i`` of shape (M, r, d) and ``dq`` (M, r, d).
    """
    n = m.n
    W = np.asarray(W, dtype=float)
    A = m.matrix_A(W)
    dA = m.d_matrix_A(W)
    dW = derivative_matrix(grid, 1) @ W
    b = np.einsum("mijk,mj->mik", dA[:, n:, :, :], dW)
    dq = m.d_source(W)
    return A, b, dq


def jacobian_matrix(m: ModelSpec, grid: Grid, W) -> sp.csr_matrix:
    """Sparse ``Phi'`` at ``W`` (without the phase row)."""
    n, d, M = m.n, m.d, grid.M
    A, b, dq = jacobian_blocks(m, grid, W)
    der = np.zeros((M, d, d))
    der[:, n:, :] = A[:, n:, :]
    pt = np.concatenate([A[:, :n, :], b - dq], axis=1)
    return pointwise_operator(der) @ nodal_derivative_operator(grid, 1, d) + pointwise_operator(pt)


def second_derivative(m: ModelSpec, grid: Grid, W, V1, V2):
    """``Phi''(W)[V1, V2]`` on the grid, shape (M, d)."""
    n = m.n
    D = derivative_matrix(grid, 1)
    W, V1, V2 = (np.asarray(a, dtype=float) for a in (W, V1, V2))
    d2f = m.d2_flux(W)
    top = np.einsum("mijk,mj,mk->mi", d2f, V1, V2)
    dA = m.d_matrix_A(W)[:, n:]
    d2A = m.d2_matrix_A(W)[:, n:]
    d2q = m.d2_source(W)
    bot = (
        np.einsum("mijk,mj,mk->mi", dA, D @ V2, V1)
        + np.einsum("mijk,mj,mk->mi", dA, D @ V1, V2)
        + np.einsum("mijkl,mj,mk,ml->mi", d2A, D @ W, V1, V2)
        - np.einsum("mijk,mj,mk->mi", d2q, V1, V2)
    )
    return np.concatenate([top, bot], axis=1)


@dataclass
class LinearizedSystem:
    model: ModelSpec
    grid: Grid
    base: np.ndarray
    U_tilde: np.ndarray
    ell: np.ndarray
    center: int
    A: np.ndarray
    b: np.ndarray
    Q22: np.ndarray
    J: sp.csr_matrix
    matrix: sp.csr_matrix
    dims: dict
    precondition_ok: bool = True
    _ls: LeastSquares | None = field(default=None, repr=False)

    @property
    def epsilon(self):
        return self.grid.epsilon

    def apply(self, U):
        """``Phi'(U_tilde) U`` as an (M, d) array."""
        U = np.asarray(U, dtype=float).reshape(self.grid.M, -1)
        return (self.J @ U.ravel()).reshape(self.grid.M, -1)

    def phase(self, U):
        U = np.asarray(U, dtype=float).reshape(self.grid.M, -1)
        return float(self.ell @ U[self.center, : self.model.n])

    def factor(self):
        if self._ls is None:
            self._ls = LeastSquares(self.matrix)
        return self._ls


def phase_vector(ce: CEApproximation):
    """Unit vector along ``u_bar'(0)`` (any unit vector for a flat profile)."""
    g = ce.grid
    du = ce.u_bar.meta.get("u_prime")
    if du is None:
        du = derivative_matrix(g, 1) @ ce.u_bar.values
    d0 = np.asarray(du[g.center], dtype=float)
    nrm = np.linalg.norm(d0)
    if nrm == 0:
        e = np.zeros_like(d0)
        e[0] = 1.0
        return e
    return d0 / nrm


def assemble(m: ModelSpec, ce: CEApproximation, U_tilde=None, C=1.0) -> LinearizedSystem:
    """Linearize the profile equations at ``U_CE + U_tilde``.

    Warns (``PreconditionWarning``) when ``|U_tilde|_{H^{s0+2}} > C eps``.
    """
    g = ce.grid
    M, n, d = g.M, m.n, m.d
    base = ce.U.values
    Ut = np.zeros_like(base) if U_tilde is None else np.asarray(getattr(U_tilde, "values", U_tilde), float)
    W = base + Ut
    ok = True
    if np.any(Ut):
        size = weighted_norm(GridProfile(g, Ut), NormSpec(S0 + 2, g.epsilon))
        if size > C * g.epsilon:
            ok = False
            warnings.warn(
                f"|U_tilde|_{{H^{S0 + 2}}} = {size:.3e} exceeds {C}*eps; outside the regime of the estimates",
                PreconditionWarning,
                stacklevel=2,
            )
    A, b, dq = jacobian_blocks(m, g, W)
    J = jacobian_matrix(m, g, W)
    ell = phase_vector(ce)
    row = np.zeros((1, M * d))
    row[0, g.center * d : g.center * d + n] = ell
    matrix = sp.vstack([J, sp.csr_matrix(row)], format="csr")
    dims = {"unknowns": M * d, "algebraic_rows": M * n, "ode_rows": M * m.r, "phase_rows": 1}
    return LinearizedSystem(
        model=m,
        grid=g,
        base=base,
        U_tilde=Ut,
        ell=ell,
        center=g.center,
        A=A,
        b=b,
        Q22=dq[:, :, n:],
        J=J,
        matrix=matrix,
        dims=dims,
        precondition_ok=ok,
    )


def forcing_norm(F, grid: Grid, s: int, n: int, delta: float = 0.0) -> float:
    """``|(f, g)|_s = |f|_{H^{s+1}} + |g|_{H^s}`` for ``F`` of shape (M, d)."""
    F = np.asarray(getattr(F, "values", F), dtype=float)
    f = GridProfile(grid, F[:, :n])
    gg = GridProfile(grid, F[:, n:])
    eps = grid.epsilon
    return weighted_norm(f, NormSpec(s + 1, eps, delta)) + weighted_norm(gg, NormSpec(s, eps, delta))


@dataclass
class SolveReport:
    U: GridProfile
    ls_residual: float
    phase_value: float
    norm_U: float
    norm_F: float
    norm_U_tilde: float
    rho: float
    s: int

    def to_dict(self):
        return {
            "ls_residual": self.ls_residual,
            "phase_value": self.phase_value,
            "norm_U": self.norm_U,
            "norm_F": self.norm_F,
            "norm_U_tilde": self.norm_U_tilde,
            "rho": self.rho,
            "s": self.s,
        }


def solve(ls: LinearizedSystem, F, s: int = 4, check: bool = True, phase_target: float = 0.0) -> SolveReport:
    """Least-squares solution of ``Phi'(U_tilde) U = F``, ``l_eps . u(0) = phase_target``.

    ``rho = eps |U|_s / (|U_tilde|_{s+1} |F|_{s0+2} + |F|_{s+1})`` is the
    implied constant of the tame estimate.
    """
    g = ls.grid
    Fv = np.asarray(getattr(F, "values", F), dtype=float).reshape(g.M, -1)
    if not np.all(np.isfinite(Fv)):
        raise ValueError("forcing contains non-finite entries")
    rhs = np.concatenate([Fv.ravel(), [float(phase_target)]])
    fn = np.linalg.norm(rhs)
    if fn == 0:
        U = np.zeros_like(Fv)
        res = 0.0
    else:
        x = ls.factor().solve(rhs)
        res = float(np.linalg.norm(ls.matrix @ x - rhs) / fn)
        U = x.reshape(g.M, -1)
        if check and res > LS_TOL:
            raise LinearSolveError(
                f"linearized solve failed: least-squares residual {res:.3e} relative "
                "(spurious kernel or insufficient resolution)"
            )
    eps = g.epsilon
    n = ls.model.n
    nU = weighted_norm(GridProfile(g, U), NormSpec(s, eps))
    nF = forcing_norm(Fv, g, s + 1, n)
    nF0 = forcing_norm(Fv, g, S0 + 2, n)
    nUt = weighted_norm(GridProfile(g, ls.U_tilde), NormSpec(s + 1, eps))
    denom = nUt * nF0 + nF
    rho = eps * nU / denom if denom > 0 else 0.0
    return SolveReport(
        U=GridProfile(g, U, {"kind": "linear_solution"}),
        ls_residual=res,
        phase_value=ls.phase(U),
        norm_U=nU,
        norm_F=nF,
        norm_U_tilde=nUt,
        rho=float(rho),
        s=s,
    )


def _l2w(values, grid, delta):
    return weighted_norm(GridProfile(grid, values), NormSpec(0, grid.epsilon, delta))


def energy_diagnostics(ls: LinearizedSystem, U, F, delta: float = 0.0) -> dict:
    """Both sides of the basic L2 energy estimate and of the H2 estimate.

    ``C_L2 = (|U'| + |v|) / (|(f, f', f'', g, g')| + eps |u|)`` and
    ``C_H2 = eps |U|_{H^2} / (|f|_{H^3} + |g|_{H^2})``, all norms
    ``L^2_{eps, delta}`` / ``H^s_{eps, delta}``.
    """
    g = ls.grid
    n = ls.model.n
    eps = g.epsilon
    U = np.asarray(getattr(U, "values", U), dtype=float).reshape(g.M, -1)
    F = np.asarray(getattr(F, "values", F), dtype=float).reshape(g.M, -1)
    D1 = derivative_matrix(g, 1)
    D2 = derivative_matrix(g, 2)
    f, gg = F[:, :n], F[:, n:]
    lhs = _l2w(D1 @ U, g, delta) + _l2w(U[:, n:], g, delta)
    parts = {
        "f": _l2w(f, g, delta),
        "f'": _l2w(D1 @ f, g, delta),
        "f''": _l2w(D2 @ f, g, delta),
        "g": _l2w(gg, g, delta),
        "g'": _l2w(D1 @ gg, g, delta),
    }
    eu = eps * _l2w(U[:, :n], g, delta)
    rhs = float(np.sqrt(sum(v**2 for v in parts.values()))) + eu
    h2 = weighted_norm(GridProfile(g, U), NormSpec(2, eps, delta))
    h2rhs = weighted_norm(GridProfile(g, f), NormSpec(3, eps, delta)) + weighted_norm(
        GridProfile(g, gg), NormSpec(2, eps, delta)
    )
    return {
        "epsilon": eps,
        "delta": delta,
        "lhs_L2": lhs,
        "rhs_L2_parts": parts,
        "eps_u_L2": eu,
        "rhs_L2": rhs,
        "C_L2": lhs / rhs if rhs > 0 else 0.0,
        "U_H2": h2,
        "rhs_H2": h2rhs,
        "C_H2": eps * h2 / h2rhs if h2rhs > 0 else 0.0,
        "v_over_u": _l2w(U[:, n:], g, delta) / max(_l2w(U[:, :n], g, delta), 1e-300),
    }
