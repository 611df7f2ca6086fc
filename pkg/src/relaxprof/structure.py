"""Structural checks on a relaxation model and its Navier-Stokes type reduction.

Covers symmetric dissipativity, genuine coupling (with a numerically built
Kawashima compensator), the reduced flux/viscosity ``f_*, b_*`` and the
conditions on the reduced system: constant left kernel of ``b_*``, invertible
``a_*`` and a genuinely nonlinear characteristic field through the base state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .model import ModelSpec

__all__ = [
    "ReducedSystem",
    "StructureReport",
    "AssumptionError",
    "reduce",
    "check_symmetric_dissipative",
    "check_genuine_coupling",
    "construct_kawashima",
    "check_reduced",
    "structure_report",
    "sample_states",
]

EIG_GAP_REL = 1e-6


class AssumptionError(RuntimeError):
    """A structural hypothesis on the model fails numerically."""


def _sym(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def _null_space(M, rtol=1e-10):
    M = np.atleast_2d(M)
    _, sv, vt = np.linalg.svd(M)
    scale = sv[0] if sv.size and sv[0] > 0 else 1.0
    rank = int(np.sum(sv > rtol * scale))
    return vt[rank:].T.conj()


def sample_states(m: ModelSpec, count=100, radius=0.3, v_radius=0.1, seed=0, equilibrium=False):
    """Random states near ``(u0, 0)`` (deterministic for a given seed)."""
    rng = np.random.default_rng(seed)
    u = m.base_state + radius * rng.uniform(-1.0, 1.0, size=(count, m.n))
    if equilibrium:
        v = np.zeros((count, m.r))
    else:
        v = v_radius * rng.uniform(-1.0, 1.0, size=(count, m.r))
    return np.concatenate([u, v], axis=1)


@dataclass
class ReducedSystem:
    """Chapman-Enskog reduction ``f_*(u)' = (b_*(u) u')'`` of a model.

    ``left_kernel`` holds a constant orthonormal basis (rows) of the left
    kernel of ``b_*``; ``r_vec`` is oriented so that ``grad alpha . r < 0``.
    """

    model: ModelSpec
    u0: np.ndarray
    left_kernel: np.ndarray
    alpha0: float
    r_vec: np.ndarray
    l_vec: np.ndarray
    gnl: float

    @property
    def n(self):
        return self.model.n

    def _eq(self, u):
        return self.model.equilibrium(u)

    def f_star(self, u):
        return self.model.flux(self._eq(u))

    def df_star(self, u):
        return self.model.matrix_A(self._eq(u))[..., : self.n, : self.n]

    def _blocks(self, u):
        U = self._eq(u)
        A = self.model.matrix_A(U)
        dq_v = self.model.d_source(U)[..., :, self.n :]
        return A[..., : self.n, self.n :], A[..., self.n :, : self.n], dq_v

    def c_star(self, u):
        """``v_CE = c_*(u) u'`` with ``c_* = (dq/dv)^{-1} A21``."""
        _, A21, dq_v = self._blocks(u)
        return np.linalg.solve(dq_v, A21)

    def b_star(self, u):
        A12, _, _ = self._blocks(u)
        return -A12 @ self.c_star(u)

    def right_kernel(self, u):
        return _null_space(self.b_star(np.asarray(u, dtype=float)))

    def pi_star(self, u):
        """Eigenprojector of ``b_*(u)`` onto its kernel (zero if trivial)."""
        L = self.left_kernel
        if L.shape[0] == 0:
            return np.zeros((self.n, self.n))
        R = self.right_kernel(u)
        return R @ np.linalg.solve(L @ R, L)

    def a_star(self, u):
        """Matrix of ``pi_* df_* pi_*`` restricted to ``ker b_*``, in a kernel basis."""
        L = self.left_kernel
        if L.shape[0] == 0:
            return np.zeros((0, 0))
        R = self.right_kernel(u)
        return np.linalg.solve(L @ R, L @ self.df_star(u) @ R)

    def alpha(self, u):
        """The eigenvalue of ``df_*(u)`` nearest zero, with right/left eigenvectors."""
        w, vl, vr = sla.eig(self.df_star(np.asarray(u, dtype=float)), left=True, right=True)
        i = int(np.argmin(np.abs(w)))
        r = vr[:, i].real
        l = vl[:, i].real
        l = l / (l @ r)
        return float(w[i].real), r, l

    def ode_matrix(self, u):
        """``b_*`` with left-kernel rows replaced by ``L df_*`` (nondegenerate form)."""
        B = self.b_star(u)
        L = self.left_kernel
        if L.shape[0] == 0:
            return B
        P = L.T @ L
        return B - P @ B + L.T @ (L @ self.df_star(u))


@dataclass
class StructureReport:
    sd_ok: bool = False
    min_eig_S: float = float("nan")
    max_asymmetry_SA: float = float("nan")
    max_keyrel_residual: float = float("nan")
    max_eig_Re_SdQ_complement: float = float("nan")
    kernel_dims: list = field(default_factory=list)
    gc_ok: bool = False
    gc_margin: float = float("nan")
    gc_method: str = ""
    kawashima_K: list = field(default_factory=list)
    theta_K: float = float("nan")
    reduced_ok: bool = False
    kernel_angle: float = float("nan")
    a_star_min_sv: float = float("nan")
    gnl: float = float("nan")
    orientation: int = 1
    sdf_asymmetry: float = float("nan")
    sb_min_eig: float = float("nan")

    def to_dict(self):
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, np.ndarray):
                v = v.tolist()
            elif isinstance(v, (np.floating, np.integer)):
                v = v.item()
            elif isinstance(v, np.bool_):
                v = bool(v)
            out[k] = v
        return out


def check_symmetric_dissipative(m: ModelSpec, samples, tol=1e-10) -> StructureReport:
    """Symmetrizer positivity, symmetry of ``S A`` and the rank condition.

    Failures are recorded in the report, never raised.
    """
    rep = StructureReport()
    U = np.atleast_2d(np.asarray(samples, dtype=float))
    n = m.n
    S = m.symmetrizer(U)
    A = m.matrix_A(U)
    SA = S @ A
    scale = np.maximum(np.abs(SA).max(axis=(-1, -2)), 1e-300)
    rep.min_eig_S = float(np.min(np.linalg.eigvalsh(_sym(S))))
    rep.max_asymmetry_SA = float(np.max(np.abs(SA - np.swapaxes(SA, -1, -2)).max(axis=(-1, -2)) / scale))
    lhs = np.swapaxes(S[:, :n, :n] @ A[:, :n, n:], -1, -2)
    rhs = S[:, n:, n:] @ A[:, n:, :n]
    kscale = np.maximum(np.abs(rhs).max(axis=(-1, -2)), np.abs(lhs).max(axis=(-1, -2)))
    rep.max_keyrel_residual = float(np.max(np.abs(lhs - rhs).max(axis=(-1, -2)) / np.maximum(kscale, 1e-300)))

    # rank condition and dissipativity at the equilibrium projections of the samples
    Ueq = m.equilibrium(U[:, :n])
    dq = m.d_source(Ueq)
    dQ = np.zeros(Ueq.shape[:-1] + (m.d, m.d))
    dQ[:, n:, :] = dq
    ReSdQ = _sym(m.symmetrizer(Ueq) @ dQ)
    worst = -np.inf
    dims = set()
    rank_ok = True
    for i in range(len(Ueq)):
        ev = np.linalg.eigvalsh(ReSdQ[i])
        ker_sym = _null_space(ReSdQ[i], rtol=1e-9).shape[1]
        ker_dq = _null_space(dQ[i], rtol=1e-9).shape[1]
        dims.add((ker_sym, ker_dq))
        rank_ok &= ker_sym == ker_dq == n
        # eigenvalues off the kernel are the r most negative ones
        worst = max(worst, float(np.sort(ev)[m.r - 1]) if m.r else -np.inf)
        rank_ok &= float(ev.max()) <= tol * max(1.0, np.abs(ev).max())
    rep.max_eig_Re_SdQ_complement = worst
    rep.kernel_dims = sorted(dims)
    rep.sd_ok = bool(
        rep.min_eig_S > 0
        and rep.max_asymmetry_SA <= tol
        and rep.max_keyrel_residual <= tol
        and rank_ok
        and worst < 0
    )
    return rep


def check_genuine_coupling(m: ModelSpec, u, tol=1e-8):
    """Kawashima genuine coupling at ``(u, 0)``.

    Returns ``(ok, margin, method)``.  The margin is the smallest norm, over
    unit eigenvectors of ``A``, of the component orthogonal to ``ker dQ``.  If
    ``A`` is numerically defective the observability test (Hautus) replaces the
    eigenvector enumeration and the margin becomes the smallest singular value
    of ``[dQ; dQ A; ...; dQ A^{d-1}]``.
    """
    U = m.equilibrium(np.asarray(u, dtype=float))
    A = m.matrix_A(U)
    dQ = np.zeros((m.d, m.d))
    dQ[m.n :, :] = m.d_source(U)
    ker = _null_space(dQ)
    Pk = ker @ ker.conj().T
    w, V = np.linalg.eig(A)
    cond = np.linalg.cond(V)
    if np.isfinite(cond) and cond < 1e8:
        V = V / np.linalg.norm(V, axis=0)
        comp = np.linalg.norm(V - Pk @ V, axis=0)
        margin = float(comp.min())
        method = "eigenvectors"
    else:
        blocks = [dQ]
        for _ in range(m.d - 1):
            blocks.append(blocks[-1] @ A)
        sv = np.linalg.svd(np.vstack(blocks), compute_uv=False)
        margin = float(sv[-1] / max(sv[0], 1e-300))
        method = "observability"
    return margin > tol, margin, method


def _kawashima_objective(Kp, At, Dq, beta):
    H = _sym(Kp @ At) - Dq
    lam, X = np.linalg.eigh(H)
    lmin = lam[0]
    z = -beta * (lam - lmin)
    p = np.exp(z)
    p /= p.sum()
    soft = lmin - np.log(np.sum(np.exp(z))) / beta
    # d lam_i / dK = skew part of x_i (At x_i)^T
    G = np.einsum("i,ai,bi->ab", p, X, At @ X)
    G = 0.5 * (G - G.T)
    return soft, lmin, G


def construct_kawashima(m: ModelSpec, U, seed=0, starts=8, iters=500):
    """Skew ``K`` maximizing ``lambda_min(Re(K S A - S dQ))`` at state ``U``.

    Concave maximization over skew matrices by gradient ascent on a soft-min
    with backtracking, from ``starts`` random initial points.  Returns
    ``(K, theta_K, history)`` where ``history`` is the best-so-far value per
    iteration of the winning start.
    """
    U = np.asarray(U, dtype=float)
    d = m.d
    S = m.symmetrizer(U)
    At = _sym(S @ m.matrix_A(U))
    dQ = np.zeros((d, d))
    dQ[m.n :, :] = m.d_source(U)
    Dq = _sym(S @ dQ)
    rng = np.random.default_rng(seed)
    scale = max(1.0, float(np.abs(Dq).max())) / max(float(np.abs(At).max()), 1e-12)

    best = (None, -np.inf, [])
    for start in range(starts):
        R = rng.normal(size=(d, d)) * (0.5 * scale if start else 0.0)
        K = 0.5 * (R - R.T)
        beta = 10.0 / max(float(np.abs(Dq).max()), 1e-12)
        step = scale
        soft, lmin, G = _kawashima_objective(K, At, Dq, beta)
        cur_best, cur_K, hist = lmin, K.copy(), []
        for it in range(iters):
            gnorm = np.linalg.norm(G)
            if gnorm < 1e-14:
                hist.append(cur_best)
                continue
            accepted = False
            for _ in range(30):
                Kn = K + step * G
                sn, ln, Gn = _kawashima_objective(Kn, At, Dq, beta)
                if sn >= soft + 1e-4 * step * gnorm**2:
                    accepted = True
                    break
                step *= 0.5
            if accepted:
                K, soft, lmin, G = Kn, sn, ln, Gn
                step *= 1.5
                if lmin > cur_best:
                    cur_best, cur_K = lmin, K.copy()
            if it % 50 == 49:
                beta *= 2.0
                soft, lmin, G = _kawashima_objective(K, At, Dq, beta)
            hist.append(cur_best)
        if cur_best > best[1]:
            best = (cur_K, cur_best, hist)
    K, theta, hist = best
    if not theta > 0:
        gc_ok, _, _ = check_genuine_coupling(m, U[: m.n])
        reason = "iteration budget exhausted" if gc_ok else "genuine coupling fails"
        raise AssumptionError(f"no Kawashima compensator found ({reason}); best theta_K = {theta:.3e}")
    return K, float(theta), hist


def reduce(m: ModelSpec, u0=None) -> ReducedSystem:
    """Build the Chapman-Enskog reduced system around ``u0`` (default base state)."""
    u0 = np.asarray(m.base_state if u0 is None else u0, dtype=float)
    n = m.n
    U0 = m.equilibrium(u0)
    A = m.matrix_A(U0)
    dq_v = m.d_source(U0)[:, n:]
    c = np.linalg.solve(dq_v, A[n:, :n])
    b = -A[:n, n:] @ c
    L = _null_space(b.T, rtol=1e-10).T
    L = np.atleast_2d(L).reshape(-1, n)

    df = A[:n, :n]
    w, vl, vr = sla.eig(df, left=True, right=True)
    order = np.argsort(np.abs(w))
    i = int(order[0])
    gap = np.abs(w[order[1]] - w[i]) if n > 1 else np.inf
    if gap < EIG_GAP_REL * max(np.linalg.norm(df), 1e-300):
        raise AssumptionError("simple-eigenvalue assumption violated: the near-zero eigenvalue of df_* is not simple")
    if abs(w[i].imag) > 1e-12:
        raise AssumptionError("near-zero eigenvalue of df_* is not real")
    r = vr[:, i].real
    r = r / np.linalg.norm(r)
    l = vl[:, i].real
    l = l / (l @ r)
    # grad alpha . r = l^T (d df_*[r]) r
    d2f = m.d2_flux(U0)[:, :n, :n]
    gnl = float(l @ np.einsum("ijk,k->ij", d2f, r) @ r)
    if gnl == 0.0 or not np.isfinite(gnl):
        raise AssumptionError("characteristic field is not genuinely nonlinear at u0")
    if gnl > 0:
        r, l, gnl = -r, -l, -gnl
        l = l / (l @ r)
    return ReducedSystem(
        model=m, u0=u0, left_kernel=L, alpha0=float(w[i].real), r_vec=r, l_vec=l, gnl=gnl
    )


def check_reduced(rs: ReducedSystem, samples, tol=1e-8) -> StructureReport:
    """Constant kernel of ``b_*``, invertible ``a_*``, genuine nonlinearity and
    symmetric dissipativity of the reduced system with ``s = S11``."""
    rep = StructureReport()
    m = rs.model
    n = m.n
    us = np.atleast_2d(np.asarray(samples, dtype=float))[:, :n]
    L = rs.left_kernel
    angle = 0.0
    min_sv = np.inf
    sdf = 0.0
    sb_min = np.inf
    for u in us:
        B = rs.b_star(u)
        Lu = _null_space(B.T, rtol=1e-9).T.reshape(-1, n)
        if Lu.shape[0] != L.shape[0]:
            angle = np.inf
        elif L.shape[0]:
            angle = max(angle, float(np.max(sla.subspace_angles(L.T, Lu.T))))
        if L.shape[0]:
            min_sv = min(min_sv, float(np.linalg.svd(rs.a_star(u), compute_uv=False).min()))
        s = m.symmetrizer(m.equilibrium(u))[:n, :n]
        sd = s @ rs.df_star(u)
        sdf = max(sdf, float(np.abs(sd - sd.T).max()))
        sb = s @ B
        sb_min = min(sb_min, float(np.linalg.eigvalsh(_sym(sb)).min()))
        sdf = max(sdf, float(np.abs(sb - sb.T).max()))
    rep.kernel_angle = angle
    rep.a_star_min_sv = float(min_sv)
    rep.gnl = rs.gnl
    rep.orientation = 1
    rep.sdf_asymmetry = sdf
    rep.sb_min_eig = sb_min
    rep.reduced_ok = bool(angle <= tol and min_sv > tol and rs.gnl < 0 and sdf <= 1e-10 and sb_min >= -1e-12)
    return rep


def structure_report(m: ModelSpec, count=100, seed=0) -> StructureReport:
    """Run every structural check on random states near the base state."""
    samples = sample_states(m, count=count, seed=seed)
    rep = check_symmetric_dissipative(m, samples)
    ok, margin, method = check_genuine_coupling(m, m.base_state)
    for u in samples[:10, : m.n]:
        ok_u, margin_u, _ = check_genuine_coupling(m, u)
        ok &= ok_u
        margin = min(margin, margin_u)
    rep.gc_ok, rep.gc_margin, rep.gc_method = bool(ok), margin, method
    K, theta, _ = construct_kawashima(m, m.equilibrium(m.base_state), seed=seed)
    rep.kawashima_K = K.tolist()
    rep.theta_K = theta
    rs = reduce(m)
    red = check_reduced(rs, sample_states(m, count=20, radius=0.2, seed=seed + 1, equilibrium=True))
    for key in ("reduced_ok", "kernel_angle", "a_star_min_sv", "gnl", "orientation", "sdf_asymmetry", "sb_min_eig"):
        setattr(rep, key, getattr(red, key))
    rep.orientation = int(np.sign(rs.r_vec[np.argmax(np.abs(rs.r_vec))]))
    return rep
