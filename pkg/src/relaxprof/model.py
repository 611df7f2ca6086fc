"""Relaxation systems ``A(U) U' = Q(U)`` in normalized block form.

States are arrays whose last axis holds ``U = (u, v)`` with ``u`` in R^n and
``v`` in R^r.  Every evaluator is vectorized over leading axes, so a whole grid
profile of shape ``(M, n + r)`` can be passed at once.

The normalization ``v_*(u) = 0`` is assumed throughout: ``q(u, 0) = 0``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "ModelSpec",
    "KineticModel",
    "FunctionModel",
    "BuiltinModelId",
    "JinXinBurgers",
    "Broadwell",
    "SyntheticQuasilinearDegenerate",
    "make_builtin",
    "evaluate_blocks",
    "Blocks",
    "NEIGHBORHOOD_RADIUS",
]

NEIGHBORHOOD_RADIUS = 0.5

# 4th-order central difference for first derivatives
_FD_OFFSETS = (-2, -1, 1, 2)
_FD_WEIGHTS = (1.0 / 12.0, -8.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0)


def _fd_jacobian(fun, U, scale=1e-5):
    """Derivative of ``fun`` along each state direction, appended as last axis."""
    U = np.asarray(U, dtype=float)
    d = U.shape[-1]
    h = scale * max(1.0, float(np.max(np.abs(U))) if U.size else 1.0)
    cols = []
    for k in range(d):
        acc = 0.0
        for off, wgt in zip(_FD_OFFSETS, _FD_WEIGHTS):
            Up = U.copy()
            Up[..., k] += off * h
            acc = acc + wgt * np.asarray(fun(Up))
        cols.append(acc / h)
    return np.stack(cols, axis=-1)


class ModelSpec:
    """A quasilinear relaxation system in the frame ``v_* = 0``.

    Subclasses implement ``flux``, ``matrix_A``, ``source`` and ``symmetrizer``.
    Derivative evaluators default to 4th-order central finite differences; a
    model that provides closed forms overrides them and sets
    ``fd_derivatives = False``.
    """

    name: str = "model"
    n: int
    r: int
    base_state: np.ndarray
    fd_derivatives: bool = True

    @property
    def d(self) -> int:
        return self.n + self.r

    # -- primary evaluators -------------------------------------------------
    def flux(self, U):
        raise NotImplementedError

    def matrix_A(self, U):
        raise NotImplementedError

    def source(self, U):
        raise NotImplementedError

    def symmetrizer(self, U):
        raise NotImplementedError

    # -- derivatives ----------------------------------------------------------
    def d_flux(self, U):
        """Jacobian of the flux, shape (..., n, d).  Equals the top rows of A."""
        return self.matrix_A(U)[..., : self.n, :]

    def d_source(self, U):
        """Jacobian of q, shape (..., r, d)."""
        return _fd_jacobian(self.source, U)

    def d_matrix_A(self, U):
        """dA[..., i, j, k] = dA_ij / dU_k."""
        return _fd_jacobian(self.matrix_A, U)

    def d2_flux(self, U):
        return self.d_matrix_A(U)[..., : self.n, :, :]

    def d2_source(self, U):
        return _fd_jacobian(self.d_source, U)

    def d2_matrix_A(self, U):
        return _fd_jacobian(self.d_matrix_A, U)

    # -- convenience ---------------------------------------------------------
    def equilibrium(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return np.concatenate([u, np.zeros(u.shape[:-1] + (self.r,))], axis=-1)

    def in_neighborhood(self, U, radius: float = NEIGHBORHOOD_RADIUS):
        """Boolean mask of states inside the working box around ``(u0, 0)``."""
        U = np.asarray(U, dtype=float)
        du = np.abs(U[..., : self.n] - self.base_state)
        dv = np.abs(U[..., self.n :])
        return np.all(du <= radius, axis=-1) & np.all(dv <= radius, axis=-1)

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, r={self.r})"


class FunctionModel(ModelSpec):
    """User-defined model from plain callables; derivatives by finite differences."""

    def __init__(self, n, r, flux, matrix_A, source, symmetrizer, base_state, name="user"):
        self.n, self.r = int(n), int(r)
        self.name = name
        self._flux, self._A, self._q, self._S = flux, matrix_A, source, symmetrizer
        self.base_state = np.atleast_1d(np.asarray(base_state, dtype=float))
        self.fd_derivatives = True

    def flux(self, U):
        return self._flux(np.asarray(U, dtype=float))

    def matrix_A(self, U):
        return self._A(np.asarray(U, dtype=float))

    def source(self, U):
        return self._q(np.asarray(U, dtype=float))

    def symmetrizer(self, U):
        return self._S(np.asarray(U, dtype=float))


class KineticModel(ModelSpec):
    """Models written through a kinetic change of variables ``F = Phi(U)``.

    In kinetic variables the system reads ``F_t + C(U) F_x = (source)``, so in
    normalized variables ``A = DPhi^{-1} C DPhi``.  Subclasses supply ``Phi``
    through its first three derivatives (``dphi``, ``d2phi``, ``d3phi``), the
    kinetic advection ``C`` with two derivatives, the flux and the source in
    closed form.  All derivatives of ``A`` then follow exactly.
    """

    fd_derivatives = False

    # subclass hooks: shapes (..., d, d), (..., d, d, d), (..., d, d, d, d)
    def dphi(self, U):
        raise NotImplementedError

    def d2phi(self, U):
        raise NotImplementedError

    def d3phi(self, U):
        return np.zeros(np.shape(U)[:-1] + (self.d,) * 4)

    def kinetic_C(self, U):
        raise NotImplementedError

    def d_kinetic_C(self, U):
        return np.zeros(np.shape(U)[:-1] + (self.d,) * 3)

    def d2_kinetic_C(self, U):
        return np.zeros(np.shape(U)[:-1] + (self.d,) * 4)

    def kinetic_metric(self, U):
        """Diagonal entropy-type metric in kinetic variables, shape (..., d)."""
        raise NotImplementedError

    def matrix_A(self, U):
        U = np.asarray(U, dtype=float)
        J = self.dphi(U)
        return np.linalg.solve(J, self.kinetic_C(U) @ J)

    def d_matrix_A(self, U):
        U = np.asarray(U, dtype=float)
        J = self.dphi(U)
        dJ = self.d2phi(U)  # dJ[..., i, j, k] = d J_ij / dU_k
        C = self.kinetic_C(U)
        dC = self.d_kinetic_C(U)
        A = np.linalg.solve(J, C @ J)
        inner = (
            np.einsum("...ijk,...jl->...ilk", dC, J)
            + np.einsum("...ij,...jlk->...ilk", C, dJ)
            - np.einsum("...ijk,...jl->...ilk", dJ, A)
        )
        return self._left_solve(J, inner)

    def d2_matrix_A(self, U):
        U = np.asarray(U, dtype=float)
        J = self.dphi(U)
        dJ = self.d2phi(U)
        d2J = self.d3phi(U)
        C = self.kinetic_C(U)
        dC = self.d_kinetic_C(U)
        d2C = self.d2_kinetic_C(U)
        A = np.linalg.solve(J, C @ J)
        dA = self.d_matrix_A(U)
        inner = (
            np.einsum("...ijkl,...jm->...imkl", d2C, J)
            + np.einsum("...ijk,...jml->...imkl", dC, dJ)
            + np.einsum("...ijl,...jmk->...imkl", dC, dJ)
            + np.einsum("...ij,...jmkl->...imkl", C, d2J)
            - np.einsum("...ijkl,...jm->...imkl", d2J, A)
            - np.einsum("...ijk,...jml->...imkl", dJ, dA)
            - np.einsum("...ijl,...jmk->...imkl", dJ, dA)
        )
        return self._left_solve(J, inner)

    @staticmethod
    def _left_solve(J, T):
        # apply J^{-1} to the first matrix index of a tensor T[..., i, j, *rest]
        shp = T.shape
        lead = J.shape[:-2]
        d = J.shape[-1]
        flat = T.reshape(lead + (d, -1))
        return np.linalg.solve(J, flat).reshape(shp)

    def symmetrizer(self, U):
        U = np.asarray(U, dtype=float)
        J = self.dphi(U)
        g = self.kinetic_metric(U)
        return np.einsum("...ki,...k,...kj->...ij", J, g, J)


class JinXinBurgers(KineticModel):
    """Jin-Xin relaxation of Burgers' equation.

    ``u_t + V_x = 0``, ``V_t + a^2 u_x = u^2/2 - V``, shifted to ``w = V - u^2/2``:

        A = [[u, 1], [a^2 - u^2, -u]],   q = -w,   S = diag(a^2 - u^2, 1).
    """

    name = "jin_xin"

    def __init__(self, a: float = 1.0):
        if not a >= 1.0:
            raise ValueError(f"JinXinBurgers requires a >= 1, got {a}")
        self.a = float(a)
        self.n, self.r = 1, 1
        self.base_state = np.zeros(1)
        self.params = {"a": self.a}

    def flux(self, U):
        U = np.asarray(U, dtype=float)
        u, w = U[..., 0], U[..., 1]
        return (w + 0.5 * u**2)[..., None]

    def source(self, U):
        U = np.asarray(U, dtype=float)
        return -U[..., 1:2]

    def d_source(self, U):
        shp = np.shape(U)[:-1]
        out = np.zeros(shp + (1, 2))
        out[..., 0, 1] = -1.0
        return out

    def d2_source(self, U):
        return np.zeros(np.shape(U)[:-1] + (1, 2, 2))

    def dphi(self, U):
        U = np.asarray(U, dtype=float)
        J = np.zeros(U.shape[:-1] + (2, 2))
        J[..., 0, 0] = 1.0
        J[..., 1, 0] = U[..., 0]
        J[..., 1, 1] = 1.0
        return J

    def d2phi(self, U):
        out = np.zeros(np.shape(U)[:-1] + (2, 2, 2))
        out[..., 1, 0, 0] = 1.0
        return out

    def kinetic_C(self, U):
        C = np.zeros(np.shape(U)[:-1] + (2, 2))
        C[..., 0, 1] = 1.0
        C[..., 1, 0] = self.a**2
        return C

    def symmetrizer(self, U):
        U = np.asarray(U, dtype=float)
        S = np.zeros(U.shape[:-1] + (2, 2))
        S[..., 0, 0] = self.a**2 - U[..., 0] ** 2
        S[..., 1, 1] = 1.0
        return S


class Broadwell(KineticModel):
    """The 1-D Broadwell model observed in the frame of its fast shock family.

    Kinetic densities ``(f, G, h)`` with ``G = 2 g`` move with lab speeds
    ``(1, 0, -1)``; in the frame moving with speed ``s`` the advection matrix is
    ``diag(1 - s, -s, -1 - s)``.  Collisions ``Q = (G^2/4 - f h)/tau`` enter
    with weights ``(1, -2, 1)``.  Macroscopic ``u = (rho, m)`` with
    ``rho = f + G + h``, ``m = f - h``; microscopic ``w = z - z_*(rho, m)`` where
    ``z = f + h`` and ``z_* = (rho^2 + m^2) / (2 rho)``.  Then ``q = -rho w / tau``.

    ``s`` defaults to the fast sound speed at the base Maxwellian, so that the
    reduced flux has a zero eigenvalue there.  The symmetrizer is the kinetic
    entropy Hessian ``diag(1/f, 1/G, 1/h)`` frozen at the local Maxwellian and
    pulled back by ``DPhi``, which keeps it block diagonal off equilibrium.
    """

    name = "broadwell"
    lab_speeds = np.array([1.0, 0.0, -1.0])

    def __init__(self, rho0: float = 1.0, m0: float = 0.0, tau: float = 1.0, frame_speed=None):
        if rho0 <= 0 or abs(m0) >= rho0:
            raise ValueError("Broadwell base state needs rho0 > |m0|")
        self.n, self.r = 2, 1
        self.tau = float(tau)
        self.base_state = np.array([rho0, m0], dtype=float)
        if frame_speed is None:
            mu = m0 / rho0
            frame_speed = 0.5 * (mu + math.sqrt(2.0 - mu * mu))
        self.s = float(frame_speed)
        self.params = {"rho0": rho0, "m0": m0, "tau": self.tau, "frame_speed": self.s}

    # z_* and its derivatives in (rho, m)
    @staticmethod
    def _zstar(rho, m):
        return (rho**2 + m**2) / (2.0 * rho)

    @staticmethod
    def _zstar_derivs(rho, m):
        z_r = 0.5 - m**2 / (2.0 * rho**2)
        z_m = m / rho
        z_rr = m**2 / rho**3
        z_rm = -m / rho**2
        z_mm = 1.0 / rho
        z_rrr = -3.0 * m**2 / rho**4
        z_rrm = 2.0 * m / rho**3
        z_rmm = -1.0 / rho**2
        z_mmm = np.zeros_like(rho)
        return (z_r, z_m), (z_rr, z_rm, z_mm), (z_rrr, z_rrm, z_rmm, z_mmm)

    def kinetic_state(self, U):
        U = np.asarray(U, dtype=float)
        rho, m, w = U[..., 0], U[..., 1], U[..., 2]
        z = w + self._zstar(rho, m)
        return np.stack([0.5 * (z + m), rho - z, 0.5 * (z - m)], axis=-1)

    def flux(self, U):
        U = np.asarray(U, dtype=float)
        rho, m, w = U[..., 0], U[..., 1], U[..., 2]
        z = w + self._zstar(rho, m)
        return np.stack([m - self.s * rho, z - self.s * m], axis=-1)

    def source(self, U):
        U = np.asarray(U, dtype=float)
        return (-U[..., 0] * U[..., 2] / self.tau)[..., None]

    def d_source(self, U):
        U = np.asarray(U, dtype=float)
        out = np.zeros(U.shape[:-1] + (1, 3))
        out[..., 0, 0] = -U[..., 2] / self.tau
        out[..., 0, 2] = -U[..., 0] / self.tau
        return out

    def d2_source(self, U):
        out = np.zeros(np.shape(U)[:-1] + (1, 3, 3))
        out[..., 0, 0, 2] = out[..., 0, 2, 0] = -1.0 / self.tau
        return out

    def dphi(self, U):
        U = np.asarray(U, dtype=float)
        (z_r, z_m), _, _ = self._zstar_derivs(U[..., 0], U[..., 1])
        J = np.zeros(U.shape[:-1] + (3, 3))
        # rows: f = (z + m)/2, G = rho - z, h = (z - m)/2 ; dz = z_r drho + z_m dm + dw
        J[..., 0, 0], J[..., 0, 1], J[..., 0, 2] = 0.5 * z_r, 0.5 * (z_m + 1.0), 0.5
        J[..., 1, 0], J[..., 1, 1], J[..., 1, 2] = 1.0 - z_r, -z_m, -1.0
        J[..., 2, 0], J[..., 2, 1], J[..., 2, 2] = 0.5 * z_r, 0.5 * (z_m - 1.0), 0.5
        return J

    _ROW_Z = np.array([0.5, -1.0, 0.5])  # dF/dz

    def d2phi(self, U):
        U = np.asarray(U, dtype=float)
        _, (z_rr, z_rm, z_mm), _ = self._zstar_derivs(U[..., 0], U[..., 1])
        H = np.zeros(U.shape[:-1] + (3, 3))
        H[..., 0, 0], H[..., 0, 1], H[..., 1, 0], H[..., 1, 1] = z_rr, z_rm, z_rm, z_mm
        return np.einsum("i,...jk->...ijk", self._ROW_Z, H)

    def d3phi(self, U):
        U = np.asarray(U, dtype=float)
        _, _, (a, b, c, e) = self._zstar_derivs(U[..., 0], U[..., 1])
        T = np.zeros(U.shape[:-1] + (3, 3, 3))
        T[..., 0, 0, 0] = a
        T[..., 0, 0, 1] = T[..., 0, 1, 0] = T[..., 1, 0, 0] = b
        T[..., 0, 1, 1] = T[..., 1, 0, 1] = T[..., 1, 1, 0] = c
        T[..., 1, 1, 1] = e
        return np.einsum("i,...jkl->...ijkl", self._ROW_Z, T)

    def kinetic_C(self, U):
        C = np.zeros(np.shape(U)[:-1] + (3, 3))
        for i in range(3):
            C[..., i, i] = self.lab_speeds[i] - self.s
        return C

    def lab_advection(self):
        """Constant kinetic advection matrix in the lab frame (speeds 1, 0, -1)."""
        return np.diag(self.lab_speeds)

    def kinetic_metric(self, U):
        U = np.asarray(U, dtype=float)
        eq = U.copy()
        eq[..., 2] = 0.0
        return 1.0 / self.kinetic_state(eq)


class SyntheticQuasilinearDegenerate(KineticModel):
    """Three-speed BGK relaxation of Burgers' equation with a quasilinear coupling.

    Kinetic densities ``F = (f1, f2, f3)`` with speeds ``(1, 0, -1)`` relax to
    Maxwellians ``M1 = k u/2 + u^2/4``, ``M2 = (1 - k) u``, ``M3 = k u/2 - u^2/4``
    (``k = 2/3``) with ``u = f1 + f2 + f3``, so the equilibrium flux is
    ``u^2/2``.  The advection matrix is

        C(u) = diag(1, 0, -1) + mu * u * D(u) y y^T,
        D = diag(M1', M2', M3'),   y = (M3', 0, -M1'),

    The perturbation has zero column sums (``M' . y = 0``) so ``u`` stays
    conserved, kills the zero-speed column (``det A = 0`` everywhere), and
    ``D^{-1} C`` stays symmetric.  Normalized variables are ``w1 = f1 - M1``,
    ``w3 = f3 - M3``; the source is ``q = -(w1, w3)``.
    """

    name = "synthetic"
    kappa = 2.0 / 3.0
    speeds = np.array([1.0, 0.0, -1.0])

    def __init__(self, mu: float = 0.1):
        if not 0.0 <= mu <= 0.2:
            raise ValueError(f"SyntheticQuasilinearDegenerate requires 0 <= mu <= 0.2, got {mu}")
        self.mu = float(mu)
        self.n, self.r = 1, 2
        self.base_state = np.zeros(1)
        self.params = {"mu": self.mu}

    def _mprime(self, u):
        k = self.kappa
        return np.stack([0.5 * k + 0.5 * u, (1.0 - k) * np.ones_like(u), 0.5 * k - 0.5 * u], axis=-1)

    _MPP = np.array([0.5, 0.0, -0.5])  # second derivatives of the Maxwellians

    def flux(self, U):
        U = np.asarray(U, dtype=float)
        return (U[..., 1] - U[..., 2] + 0.5 * U[..., 0] ** 2)[..., None]

    def source(self, U):
        return -np.asarray(U, dtype=float)[..., 1:]

    def d_source(self, U):
        out = np.zeros(np.shape(U)[:-1] + (2, 3))
        out[..., 0, 1] = out[..., 1, 2] = -1.0
        return out

    def d2_source(self, U):
        return np.zeros(np.shape(U)[:-1] + (2, 3, 3))

    def dphi(self, U):
        U = np.asarray(U, dtype=float)
        J = np.zeros(U.shape[:-1] + (3, 3))
        J[..., :, 0] = self._mprime(U[..., 0])
        J[..., 0, 1] = 1.0
        J[..., 1, 1] = J[..., 1, 2] = -1.0
        J[..., 2, 2] = 1.0
        return J

    def d2phi(self, U):
        out = np.zeros(np.shape(U)[:-1] + (3, 3, 3))
        out[..., :, 0, 0] = self._MPP
        return out

    def _pert_parts(self, u):
        mp = self._mprime(u)
        y = np.stack([mp[..., 2], np.zeros_like(u), -mp[..., 0]], axis=-1)
        dy = np.broadcast_to(np.array([-0.5, 0.0, -0.5]), y.shape)
        return mp, y, dy

    def kinetic_C(self, U):
        u = np.asarray(U, dtype=float)[..., 0]
        mp, y, _ = self._pert_parts(u)
        P = np.einsum("...i,...i,...j->...ij", mp, y, y)
        C = np.zeros(u.shape + (3, 3))
        for i in range(3):
            C[..., i, i] = self.speeds[i]
        return C + self.mu * u[..., None, None] * P

    def d_kinetic_C(self, U):
        # g(u) = u * D y y^T ; g' = D y y^T + u (D' y y^T + D y' y^T + D y y'^T)
        u = np.asarray(U, dtype=float)[..., 0]
        mp, y, dy = self._pert_parts(u)
        dmp = np.broadcast_to(self._MPP, mp.shape)
        P = np.einsum("...i,...i,...j->...ij", mp, y, y)
        dP = (
            np.einsum("...i,...i,...j->...ij", dmp, y, y)
            + np.einsum("...i,...i,...j->...ij", mp, dy, y)
            + np.einsum("...i,...i,...j->...ij", mp, y, dy)
        )
        out = np.zeros(u.shape + (3, 3, 3))
        out[..., 0] = self.mu * (P + u[..., None, None] * dP)
        return out

    def d2_kinetic_C(self, U):
        # second derivative of u * P(u): 2 P' + u P''; P is cubic in u
        u = np.asarray(U, dtype=float)[..., 0]
        mp, y, dy = self._pert_parts(u)
        dmp = np.broadcast_to(self._MPP, mp.shape)

        def outer3(a, b, c):
            return np.einsum("...i,...i,...j->...ij", a, b, c)

        dP = outer3(dmp, y, y) + outer3(mp, dy, y) + outer3(mp, y, dy)
        d2P = 2.0 * (outer3(dmp, dy, y) + outer3(dmp, y, dy) + outer3(mp, dy, dy))
        out = np.zeros(u.shape + (3, 3, 3, 3))
        out[..., 0, 0] = self.mu * (2.0 * dP + u[..., None, None] * d2P)
        return out

    def kinetic_metric(self, U):
        return 1.0 / self._mprime(np.asarray(U, dtype=float)[..., 0])


@dataclass(frozen=True)
class BuiltinModelId:
    """Selector for a shipped model: ``kind`` in {jin_xin, broadwell, synthetic}."""

    kind: str
    params: dict = field(default_factory=dict)


_BUILTINS: dict[str, Callable[..., ModelSpec]] = {
    "jin_xin": JinXinBurgers,
    "broadwell": Broadwell,
    "synthetic": SyntheticQuasilinearDegenerate,
}


def make_builtin(model_id, **params) -> ModelSpec:
    """Instantiate a shipped model from a ``BuiltinModelId`` or a kind string."""
    if isinstance(model_id, BuiltinModelId):
        params = {**model_id.params, **params}
        model_id = model_id.kind
    try:
        ctor = _BUILTINS[model_id]
    except KeyError:
        raise ValueError(f"unknown model {model_id!r}; choose from {sorted(_BUILTINS)}") from None
    return ctor(**params)


@dataclass
class Blocks:
    A11: np.ndarray
    A12: np.ndarray
    A21: np.ndarray
    A22: np.ndarray
    dq_v: np.ndarray
    S11: np.ndarray
    S22: np.ndarray
    spectral_ok: bool
    spectral_abscissa: float
    in_neighborhood: bool


def evaluate_blocks(m: ModelSpec, U, theta: float = 0.0) -> Blocks:
    """Partition ``A``, ``dq/dv`` and ``S`` at a single state.

    ``spectral_ok`` reports whether ``Re spec(dq/dv) <= -theta`` holds (only
    meaningful on the equilibrium manifold).  Violations are flagged with a
    warning rather than raised.
    """
    U = np.asarray(U, dtype=float)
    n = m.n
    A = m.matrix_A(U)
    S = m.symmetrizer(U)
    dq_v = m.d_source(U)[..., :, n:]
    absc = float(np.max(np.linalg.eigvals(dq_v).real))
    ok = absc <= -theta + 1e-14
    inside = bool(m.in_neighborhood(U))
    if not ok or not inside:
        warnings.warn(
            f"state {U} outside the working neighborhood or spectral bound violated "
            f"(max Re spec dq_v = {absc:.3g})",
            RuntimeWarning,
            stacklevel=2,
        )
    return Blocks(
        A11=A[:n, :n], A12=A[:n, n:], A21=A[n:, :n], A22=A[n:, n:],
        dq_v=dq_v, S11=S[:n, :n], S22=S[n:, n:],
        spectral_ok=bool(ok), spectral_abscissa=absc, in_neighborhood=inside,
    )
