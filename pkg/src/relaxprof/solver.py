"""Nonlinear profile solver: Nash-Moser iteration, Newton comparator, sweeps.

The unknown is the perturbation ``U = U_bar - U_CE^N`` on the grid.  Each step
solves the linearized equations (least squares with the phase row) and, in
Nash-Moser mode, passes the correction through the smoothing operator
``S_theta`` with a geometric cutoff schedule capped at the grid Nyquist
frequency.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .chapman_enskog import CEApproximation, build_ce, relaxation_residual
from .discretization import Grid, GridProfile, NormSpec, derivative_matrix, smooth, weighted_norm
from .linear import S0, assemble, phase_vector, solve
from .model import ModelSpec
from .structure import reduce

__all__ = [
    "IterationConfig",
    "IterationRecord",
    "IterationTrace",
    "RateFit",
    "SweepPoint",
    "DivergenceError",
    "NeighborhoodError",
    "nonlinear_residual",
    "residual_norm",
    "iterate",
    "fit_rate",
    "fit_decay",
    "sweep",
    "uniqueness_probe",
    "random_profile",
    "shift_profile",
]

FLOOR_ABS = 1e-11
STEP_FLOOR = 1e-12
# tolerance on the phase condition l . u(0) = 0 before a run may stop
PHASE_TOL = 1e-12


class DivergenceError(RuntimeError):
    pass


class NeighborhoodError(RuntimeError):
    pass


@dataclass
class IterationConfig:
    theta0: float = 2.0
    kappa: float = 2.0
    max_iters: int = 30
    tol_residual: float = 1e-10
    mode: str = "nash_moser"
    strict: bool = False
    max_halvings: int = 5

    def __post_init__(self):
        if self.theta0 < 1:
            raise ValueError("theta0 must be at least 1")
        if self.kappa <= 1:
            raise ValueError("kappa must exceed 1")
        if self.mode not in ("nash_moser", "newton"):
            raise ValueError(f"unknown iteration mode {self.mode!r}")
        if self.max_iters < 0 or self.max_halvings < 0:
            raise ValueError("iteration budgets must be nonnegative")


@dataclass
class IterationRecord:
    j: int
    theta: float
    residual_Hs0: float
    residual_L2: float
    residual_sup: float
    step_norm: float
    smoothing_defect: float
    damping: float
    accepted: bool


@dataclass
class IterationTrace:
    records: list = field(default_factory=list)
    status: str = "running"
    iterations: int = 0
    final_residual_Hs0: float = float("nan")
    final_residual_sup: float = float("nan")

    def accepted_residuals(self):
        return [r.residual_Hs0 for r in self.records if r.accepted]

    def to_dict(self):
        return {
            "status": self.status,
            "iterations": self.iterations,
            "final_residual_Hs0": self.final_residual_Hs0,
            "final_residual_sup": self.final_residual_sup,
            "records": [asdict(r) for r in self.records],
        }


def _values(U):
    return np.asarray(getattr(U, "values", U), dtype=float)


def nonlinear_residual(m: ModelSpec, ce: CEApproximation, U, check_neighborhood=True):
    """``Phi(U)`` as a pair of GridProfiles (flux block, relaxation block)."""
    g = ce.grid
    W = ce.U.values + _values(U).reshape(g.M, -1)
    if check_neighborhood:
        inside = m.in_neighborhood(W)
        if not np.all(inside):
            bad = int(np.flatnonzero(~inside)[0])
            raise NeighborhoodError(f"state leaves the working neighborhood at node {bad} (x_tilde = {g.x_tilde[bad]:.3f})")
    fref = m.flux(m.equilibrium(ce.pair.u_minus))
    Ru, Rv = relaxation_residual(m, g, W, fref)
    return GridProfile(g, Ru), GridProfile(g, Rv)


def _stack(pair):
    return np.concatenate([pair[0].values, pair[1].values], axis=1)


def residual_norm(pair, grid: Grid, s: int = S0, delta: float = 0.0) -> float:
    """``|Phi|`` in ``H^s_{eps, delta}`` of the stacked residual."""
    return weighted_norm(GridProfile(grid, _stack(pair)), NormSpec(s, grid.epsilon, delta))


def _nyquist(grid: Grid):
    return math.pi / grid.h_tilde


def iterate(m: ModelSpec, ce: CEApproximation, cfg: IterationConfig | None = None, U0=None):
    """Solve ``Phi(U) = 0`` starting from ``U0`` (default zero).

    Returns ``(U, trace)``.  Termination: residual below ``tol_residual`` in
    ``H^{s0}``, or the roundoff floor (sup residual below ``FLOOR_ABS``).
    """
    cfg = cfg or IterationConfig()
    g = ce.grid
    M, d = g.M, m.d
    U = np.zeros((M, d)) if U0 is None else _values(U0).reshape(M, d).copy()
    trace = IterationTrace()
    nyq = _nyquist(g)

    def measure(U):
        R = nonlinear_residual(m, ce, U)
        return R, residual_norm(R, g), float(np.abs(_stack(R)).max())

    R, rn, rsup = measure(U)
    ell, center = phase_vector(ce), g.center
    phase = lambda U: abs(float(ell @ U[center, : m.n]))
    ph = phase(U)
    rejects = 0
    for j in range(cfg.max_iters + 1):
        if (rn <= cfg.tol_residual or rsup == 0.0) and ph <= PHASE_TOL:
            trace.status = "converged"
            break
        if j == cfg.max_iters:
            trace.status = "max_iters"
            break
        # a translate of a profile is itself a near-solution, so the floor
        # only counts once the phase condition holds
        at_floor = rsup <= FLOOR_ABS and ph <= PHASE_TOL
        phase_fix = rsup <= FLOOR_ABS and not at_floor
        theta = min(cfg.theta0 * cfg.kappa**j, nyq) if cfg.mode == "nash_moser" else nyq
        if at_floor or phase_fix:
            # roundoff level reached: polish with unsmoothed steps
            theta = nyq
        ls = assemble(m, ce, U)
        # the step also restores the phase condition l . u(0) = 0
        v = -solve(ls, _stack(R), check=False, phase_target=ls.phase(U)).U.values
        step = smooth(GridProfile(g, v), theta, allow_window=True).values if theta < nyq else v
        defect = float(np.abs(step - v).max())
        lam = 1.0
        accepted = False
        halvings = 0 if (cfg.strict or at_floor or phase_fix) else cfg.max_halvings
        for _ in range(halvings + 1):
            trial = U + lam * step
            try:
                Rt, rnt, rsupt = measure(trial)
            except NeighborhoodError:
                if cfg.strict:
                    raise
                lam *= 0.5
                continue
            if (cfg.strict and not at_floor) or rnt < rn:
                accepted = True
                break
            if phase_fix and phase(trial) < 0.5 * ph:
                # re-centering a translated near-solution: the residual may
                # rise to second order in the shift, later steps remove it
                accepted = True
                break
            lam *= 0.5
        trace.records.append(
            IterationRecord(j, theta, rn, residual_norm(R, g, 0), rsup, float(np.abs(step).max()), defect, lam, accepted)
        )
        trace.iterations = j + 1
        if accepted:
            U, R, rn, rsup = trial, Rt, rnt, rsupt
            ph = phase(U)
            rejects = 0
            continue
        if at_floor or float(np.abs(v).max()) <= STEP_FLOOR * max(1.0, float(np.abs(ce.U.values).max())):
            # no decrease and a roundoff-sized correction: the residual floor is reached
            trace.status = "converged"
            break
        rejects += 1
        if rejects >= 3:
            trace.status = "diverged"
            trace.final_residual_Hs0, trace.final_residual_sup = rn, rsup
            raise DivergenceError(f"no residual decrease for 3 consecutive damped steps (|Phi| = {rn:.3e})")
    trace.final_residual_Hs0 = rn
    trace.final_residual_sup = rsup
    return GridProfile(g, U, {"kind": "perturbation", "status": trace.status}), trace


@dataclass
class RateFit:
    name: str
    epsilons: list
    values: list
    fitted: float
    r2: float
    claim: float
    tol: float
    mode: str = "equal"
    passed: bool = False
    note: str = ""

    def to_dict(self):
        return asdict(self)


def fit_rate(name, epsilons, values, claim, tol=0.3, mode="equal", min_r2=0.98) -> RateFit:
    """Log-log regression ``log value = p log eps + c``.

    ``mode='equal'`` passes when ``|p - claim| <= tol``; ``'atleast'`` when
    ``p >= claim - tol``.  Both also require ``R^2 >= min_r2``.
    """
    e = np.asarray(epsilons, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = (v > 0) & np.isfinite(v)
    if ok.sum() < 2:
        return RateFit(name, e.tolist(), v.tolist(), float("nan"), float("nan"), claim, tol, mode, False, "too few points")
    x, y = np.log(e[ok]), np.log(v[ok])
    p, c = np.polyfit(x, y, 1)
    yhat = p * x + c
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum((y - yhat) ** 2) / ss if ss > 0 else 1.0
    hit = abs(p - claim) <= tol if mode == "equal" else p >= claim - tol
    return RateFit(name, e.tolist(), v.tolist(), float(p), float(r2), claim, tol, mode, bool(hit and r2 >= min_r2))


def fit_decay(x, y):
    """Exponential rate ``-slope`` of ``log|y|`` against ``x`` (least squares)."""
    y = np.abs(np.asarray(y, dtype=float))
    ok = y > 0
    slope, _ = np.polyfit(np.asarray(x)[ok], np.log(y[ok]), 1)
    return float(-slope)


@dataclass
class SweepPoint:
    epsilon: float
    status: str
    iterations: int
    closeness: list = field(default_factory=list)
    fluid: list = field(default_factory=list)
    micro: list = field(default_factory=list)
    decay_rate: float = float("nan")
    residual_ce: float = float("nan")
    error: str = ""


def _sup(a, mask):
    return float(np.abs(a[mask]).max())


def _sweep_point(m, eps, N, L_tilde, h_tilde, cfg, rs, inner, decay_window):
    g = Grid(eps, L_tilde, h_tilde)
    try:
        ce = build_ce(m, eps, N, g, rs)
        U, trace = iterate(m, ce, cfg)
    except Exception as exc:  # recorded, sweep continues
        return SweepPoint(eps, "failed", 0, error=f"{type(exc).__name__}: {exc}"), None
    n = m.n
    D1 = derivative_matrix(g, 1)
    mask = np.abs(g.x_tilde) <= inner
    W = ce.U.values + U.values
    ub, vb = W[:, :n], W[:, n:]
    side = np.where(g.x[:, None] < 0, ce.pair.u_minus[None, :], ce.pair.u_plus[None, :])
    close = [_sup(U.values, mask), _sup(D1 @ U.values, mask)]
    fluid = [_sup(ub - side, mask), _sup(D1 @ ub, mask)]
    micro = [_sup(vb, mask), _sup(D1 @ vb, mask)]
    lo, hi = decay_window
    right = (g.x_tilde >= lo) & (g.x_tilde <= hi)
    left = (g.x_tilde <= -lo) & (g.x_tilde >= -hi)
    rate = min(
        fit_decay(g.x[right], np.linalg.norm(ub[right] - ce.pair.u_plus, axis=1)),
        fit_decay(-g.x[left], np.linalg.norm(ub[left] - ce.pair.u_minus, axis=1)),
    )
    rce = residual_norm(nonlinear_residual(m, ce, np.zeros_like(W)), g)
    return SweepPoint(eps, trace.status, trace.iterations, close, fluid, micro, rate, rce), (ce, U, trace)


def sweep(m: ModelSpec, cfg: IterationConfig | None = None, epsilons=(0.2, 0.1, 0.05, 0.025), N=0,
          L_tilde=12.0, h_tilde=0.01, inner=8.0, decay_window=(3.0, 8.0), delta=0.05, rs=None, workers=1):
    """Solve the profile at each amplitude and fit the closeness and decay claims.

    Returns ``(fits, points, profiles)``; a failing point is recorded with its
    error message and left out of the fits.  Amplitudes are independent jobs;
    ``workers > 1`` runs them in separate processes.
    """
    eps_list = list(epsilons)
    if len(eps_list) < 4 or any(a <= b for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("sweep needs at least four amplitudes in descending order")
    cfg = cfg or IterationConfig()
    rs = reduce(m) if rs is None else rs
    args = [(m, eps, N, L_tilde, h_tilde, cfg, rs, inner, decay_window) for eps in eps_list]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(workers, len(args))) as pool:
            results = list(pool.map(_sweep_point, *zip(*args)))
    else:
        results = [_sweep_point(*a) for a in args]
    points = [r[0] for r in results]
    profiles = {p.epsilon: prof for p, prof in results if prof is not None}
    good = [p for p in points if p.status in ("converged", "floor")]
    es = [p.epsilon for p in good]
    fits = []
    for k in (0, 1):
        fits.append(fit_rate(f"closeness_k{k}", es, [p.closeness[k] for p in good], k + N + 2))
        fits.append(fit_rate(f"fluid_k{k}", es, [p.fluid[k] for p in good], k + 1, tol=0.2 if k == 0 else 0.3))
        fits.append(fit_rate(f"micro_k{k}", es, [p.micro[k] for p in good], k + 2))
    fits.append(fit_rate(f"ce_residual_N{N}", es, [p.residual_ce for p in good], N + 2, mode="atleast"))
    dec_ok = bool(good) and all(p.decay_rate >= delta * p.epsilon for p in good)
    ratios = [p.decay_rate / p.epsilon for p in good]
    fits.append(
        RateFit("decay", es, [p.decay_rate for p in good], float(min(ratios)) if ratios else float("nan"), 1.0,
                delta, 0.0, "atleast", dec_ok, "fitted rate / eps vs required delta")
    )
    return fits, points, profiles


def random_profile(grid: Grid, width: int, seed=0, modes=6, support=4.0, freq_max=6.0):
    """Smooth decaying random profile: Gaussian-windowed modes in ``x_tilde``."""
    rng = np.random.default_rng(seed)
    xt = grid.x_tilde
    out = np.zeros((grid.M, width))
    for c in range(width):
        for _ in range(modes):
            x0 = rng.uniform(-support / 2, support / 2)
            w = rng.uniform(0.5, 1.5)
            k = rng.uniform(0.0, freq_max)
            ph = rng.uniform(0, 2 * np.pi)
            out[:, c] += rng.normal() * np.exp(-(((xt - x0) / w) ** 2)) * np.cos(k * xt + ph)
    return out


def shift_profile(values, nodes: int):
    """Translate nodal values by whole nodes; the ends are filled by cubic extrapolation."""
    v = np.asarray(values, dtype=float)
    if nodes == 0:
        return v.copy()
    from scipy.interpolate import CubicSpline

    idx = np.arange(v.shape[0], dtype=float)
    return CubicSpline(idx, v, axis=0, extrapolate=True)(idx - nodes)


def uniqueness_probe(m: ModelSpec, ce: CEApproximation, U_star, c=0.1, seeds=5, cfg=None, s=4, shift_nodes=1):
    """Restart the iteration near ``U_star`` and measure where it lands.

    Random restarts have size ``c * eps`` in ``H^s_{eps,0}``; the translation
    restart shifts the full profile ``U_CE + U_star`` by ``shift_nodes`` nodes.
    """
    cfg = cfg or IterationConfig(mode="newton")
    g = ce.grid
    Us = _values(U_star)
    runs = []
    for seed in range(seeds):
        P = random_profile(g, m.d, seed=seed)
        P *= c * g.epsilon / weighted_norm(GridProfile(g, P), NormSpec(s, g.epsilon)) if c > 0 else 0.0
        U, tr = iterate(m, ce, cfg, U0=Us + P)
        runs.append({"kind": "random", "seed": seed, "distance": float(np.abs(U.values - Us).max()),
                     "iterations": tr.iterations, "status": tr.status})
    if shift_nodes:
        start = shift_profile(ce.U.values + Us, shift_nodes) - ce.U.values
        U, tr = iterate(m, ce, cfg, U0=start)
        runs.append({"kind": "translation", "nodes": shift_nodes, "distance": float(np.abs(U.values - Us).max()),
                     "iterations": tr.iterations, "status": tr.status})
    return {"c": c, "epsilon": g.epsilon, "max_distance": max(r["distance"] for r in runs) if runs else 0.0, "runs": runs}
