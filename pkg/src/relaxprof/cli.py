"""Command line entry point ``relaxprof``.

Subcommands: check, ce, linsolve, solve, sweep, oracle, report.  Runs are
configured by an INI file with one section per stage (see ``SCHEMA``);
individual keys can be overridden with ``--set section.key=value``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
(an ``error.json`` artifact is written), 3 a claim failed under
``sweep --strict``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .chapman_enskog import HugoniotError, ProfileError, build_ce, residual
from .discretization import Grid, GridProfile, NormSpec, weighted_norm
from .linear import LinearSolveError, assemble, energy_diagnostics, solve
from .model import make_builtin
from .oracle import MarchConfig, OracleError, march_to_steady, phase_crossing, quadrature_profile, recenter
from .solver import (
    DivergenceError,
    IterationConfig,
    NeighborhoodError,
    fit_rate,
    iterate,
    random_profile,
    residual_norm,
    sweep,
)
from .structure import AssumptionError, reduce, structure_report

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CLAIM = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def _floats(text):
    vals = [float(t) for t in text.replace(",", " ").split()]
    if not vals:
        raise ValueError("empty list")
    return vals


def _opt_float(text):
    return None if text.strip().lower() in ("", "none") else float(text)


# section -> key -> (parser, default)
SCHEMA = {
    "model": {
        "kind": (str, "jin_xin"),
        "a": (float, None),
        "rho0": (float, None),
        "m0": (float, None),
        "tau": (float, None),
        "frame_speed": (_opt_float, None),
        "mu": (float, None),
    },
    "run": {
        "epsilon": (float, 0.1),
        "epsilons": (_floats, [0.2, 0.1, 0.05, 0.025]),
        "order": (int, 0),
        "seed": (int, 0),
        "output": (str, "relaxprof_out"),
    },
    "grid": {"L_tilde": (float, 12.0), "h_tilde": (float, 0.01)},
    "norm": {"s": (int, 4), "delta": (float, 0.0)},
    "iteration": {
        "mode": (str, "nash_moser"),
        "theta0": (float, 2.0),
        "kappa": (float, 2.0),
        "max_iters": (int, 30),
        "tol_residual": (float, 1e-10),
        "max_halvings": (int, 5),
    },
    "sweep": {"inner": (float, 8.0), "decay_lo": (float, 3.0), "decay_hi": (float, 8.0), "delta": (float, 0.05)},
    "linsolve": {"base": (str, ""), "rhs": (str, "")},
    "oracle": {
        "cfl": (float, 0.45),
        "tol": (float, 1e-9),
        "levels": (int, 3),
        "domain_factor": (float, 2.0),
        "max_steps": (int, 400),
    },
}

MODEL_PARAMS = {"jin_xin": {"a"}, "broadwell": {"rho0", "m0", "tau", "frame_speed"}, "synthetic": {"mu"}}


def load_config(path=None, overrides=()):
    """Parse and validate a run configuration.

    Unknown sections or keys, malformed values and model parameters that do
    not belong to the chosen model all raise ``ConfigError``.
    """
    raw = {}
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for sec in cp.sections():
            raw[sec] = dict(cp.items(sec))
    for item in overrides:
        key, sep, value = item.partition("=")
        sec, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        raw.setdefault(sec, {})[name] = value.strip()
    cfg = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
    given = set()
    for sec, items in raw.items():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown config section [{sec}]")
        for k, text in items.items():
            if k not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {k!r} in section [{sec}]")
            parser = SCHEMA[sec][k][0]
            try:
                cfg[sec][k] = parser(text)
            except ValueError as exc:
                raise ConfigError(f"bad value for {sec}.{k}: {exc}") from None
            given.add((sec, k))
    kind = cfg["model"]["kind"]
    if kind not in MODEL_PARAMS:
        raise ConfigError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_PARAMS)}")
    for sec, k in given:
        if sec == "model" and k != "kind" and k not in MODEL_PARAMS[kind]:
            raise ConfigError(f"parameter {k!r} does not apply to model {kind!r}")
    run = cfg["run"]
    if not 0 < run["epsilon"] <= 0.2 or any(not 0 < e <= 0.2 for e in run["epsilons"]):
        raise ConfigError("amplitudes must lie in (0, 0.2]")
    if run["order"] not in (0, 1, 2):
        raise ConfigError("run.order must be 0, 1 or 2")
    if cfg["iteration"]["mode"] not in ("nash_moser", "newton"):
        raise ConfigError("iteration.mode must be nash_moser or newton")
    if not 0 <= cfg["norm"]["s"] <= 6 or not 0 <= cfg["norm"]["delta"] <= 0.1:
        raise ConfigError("norm.s must lie in [0, 6] and norm.delta in [0, 0.1]")
    return cfg


def config_hash(cfg) -> str:
    """Short digest of the resolved configuration (the output directory excluded)."""
    canon = json.dumps(
        {s: {k: _plain(v) for k, v in sorted(d.items()) if (s, k) != ("run", "output")} for s, d in sorted(cfg.items())},
        sort_keys=True,
    )
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def dumps(obj, indent=0) -> str:
    """JSON with floats printed to 17 significant digits; non-finite floats become null."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    obj = _plain(obj)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format(obj, ".17g") if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, list):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + dumps(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = (pad + json.dumps(str(k)) + ": " + dumps(v, indent + 1) for k, v in obj.items())
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


class Run:
    """Artifact writer bound to one validated configuration."""

    def __init__(self, cfg, command):
        self.cfg = cfg
        self.command = command
        self.hash = config_hash(cfg)
        self.out = Path(cfg["run"]["output"])

    def _prepare(self):
        self.out.mkdir(parents=True, exist_ok=True)

    def stamp(self, payload):
        return {"relaxprof_version": __version__, "config_hash": self.hash, "command": self.command, **payload}

    def write_json(self, name, payload):
        self._prepare()
        path = self.out / name
        path.write_text(dumps(self.stamp(payload)) + "\n")
        return path

    def write_csv(self, name, grid: Grid, columns: dict):
        self._prepare()
        path = self.out / name
        names = ["x", "x_tilde", *columns]
        data = [grid.x, grid.x_tilde, *columns.values()]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for row in zip(*data):
                w.writerow([format(float(v), ".17g") for v in row])
        return path

    def write_dat(self, name, header, xs, ys):
        self._prepare()
        path = self.out / name
        lines = [f"# {header}", f"# relaxprof {__version__} config_hash={self.hash}"]
        lines += [f"{format(float(a), '.17g')} {format(float(b), '.17g')}" for a, b in zip(xs, ys)]
        path.write_text("\n".join(lines) + "\n")
        return path


def component_names(m, prefix=("u", "v")):
    def names(p, k):
        return [p] if k == 1 else [f"{p}{i + 1}" for i in range(k)]

    return names(prefix[0], m.n) + names(prefix[1], m.r)


def _columns(m, values, prefix=("u", "v")):
    values = np.asarray(values).reshape(values.shape[0], -1)
    return {name: values[:, i] for i, name in enumerate(component_names(m, prefix))}


def build_model(cfg):
    mc = cfg["model"]
    params = {k: v for k, v in mc.items() if k != "kind" and v is not None}
    return make_builtin(mc["kind"], **params)


def _grid(cfg, eps):
    g = cfg["grid"]
    return Grid(eps, g["L_tilde"], g["h_tilde"])


def _iter_cfg(cfg):
    return IterationConfig(**cfg["iteration"])


def _norm_payload(grid, values, s_max, delta=0.0):
    return {f"H{s}": weighted_norm(GridProfile(grid, values), NormSpec(s, grid.epsilon, delta)) for s in range(s_max + 1)}


def _workers(n_jobs):
    env = os.environ.get("RELAXPROF_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ConfigError(f"RELAXPROF_THREADS must be an integer, got {env!r}") from None
    return max(1, min(cap, n_jobs))


# subcommands ---------------------------------------------------------------


def cmd_check(run: Run, args):
    m = build_model(run.cfg)
    rep = structure_report(m, seed=run.cfg["run"]["seed"])
    run.write_json("structure.json", {"model": m.name, "params": m.params, "report": rep.to_dict()})
    print(f"{m.name}: sd_ok={rep.sd_ok} gc_ok={rep.gc_ok} reduced_ok={rep.reduced_ok} theta_K={rep.theta_K:.4g}")
    return EXIT_OK


def cmd_ce(run: Run, args):
    cfg = run.cfg
    m = build_model(cfg)
    rs = reduce(m)
    N = cfg["run"]["order"]
    eps = cfg["run"]["epsilon"]
    ce = build_ce(m, eps, N, _grid(cfg, eps), rs)
    Ru, Rv = residual(m, ce)
    cols = _columns(m, ce.U.values)
    cols.update({f"R_u{i + 1}" if m.n > 1 else "R_u": Ru.values[:, i] for i in range(m.n)})
    cols.update({f"R_v{i + 1}" if m.r > 1 else "R_v": Rv.values[:, i] for i in range(m.r)})
    run.write_csv("ce_profile.csv", ce.grid, cols)
    norms = []
    for e in cfg["run"]["epsilons"]:
        c = build_ce(m, e, N, _grid(cfg, e), rs)
        norms.append(residual_norm(residual(m, c), c.grid, 3))
    fit = fit_rate(f"ce_residual_N{N}", cfg["run"]["epsilons"], norms, N + 2, mode="atleast")
    payload = {
        "epsilon": eps,
        "order": N,
        "u_minus": ce.pair.u_minus,
        "u_plus": ce.pair.u_plus,
        "residual_norms": _norm_payload(ce.grid, np.hstack([Ru.values, Rv.values]), 3),
        "sweep_residual_H3": norms,
        "fit": fit.to_dict(),
        "csv": "ce_profile.csv",
    }
    run.write_json("ce.json", payload)
    print(f"CE order {N}: |Phi(0)|_H3 = {payload['residual_norms']['H3']:.3e}, exponent {fit.fitted:.3f}")
    return EXIT_OK


def _read_profile_csv(path, grid, width):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    if not rows or rows[0][:2] != ["x", "x_tilde"]:
        raise ConfigError(f"{path}: header must start with x, x_tilde")
    data = np.array(rows[1:], dtype=float)
    if data.shape[0] != grid.M or not np.allclose(data[:, 1], grid.x_tilde, atol=1e-9):
        raise ConfigError(f"{path}: nodes do not match the configured grid")
    if data.shape[1] < 2 + width:
        raise ConfigError(f"{path}: expected {width} component columns")
    return data[:, 2 : 2 + width]


def cmd_linsolve(run: Run, args):
    cfg = run.cfg
    m = build_model(cfg)
    eps = cfg["run"]["epsilon"]
    g = _grid(cfg, eps)
    ce = build_ce(m, eps, cfg["run"]["order"], g)
    base, rhs = cfg["linsolve"]["base"], cfg["linsolve"]["rhs"]
    Ut = _read_profile_csv(base, g, m.d) - ce.U.values if base else None
    F = _read_profile_csv(rhs, g, m.d) if rhs else random_profile(g, m.d, seed=cfg["run"]["seed"])
    ls = assemble(m, ce, Ut)
    rep = solve(ls, F, s=cfg["norm"]["s"])
    diag = energy_diagnostics(ls, rep.U.values, F, cfg["norm"]["delta"])
    run.write_csv("linsolve_solution.csv", g, _columns(m, rep.U.values))
    run.write_json("linsolve.json", {"epsilon": eps, "report": rep.to_dict(), "energy": diag,
                                     "precondition_ok": ls.precondition_ok, "dims": ls.dims,
                                     "csv": "linsolve_solution.csv"})
    print(f"linear solve: residual {rep.ls_residual:.2e}, rho = {rep.rho:.4g}")
    return EXIT_OK


def cmd_solve(run: Run, args):
    cfg = run.cfg
    m = build_model(cfg)
    eps = cfg["run"]["epsilon"]
    ce = build_ce(m, eps, cfg["run"]["order"], _grid(cfg, eps))
    U, trace = iterate(m, ce, _iter_cfg(cfg))
    full = ce.U.values + U.values
    run.write_csv("profile.csv", ce.grid, _columns(m, full))
    run.write_csv("perturbation.csv", ce.grid, _columns(m, U.values))
    run.write_json("solve.json", {"epsilon": eps, "order": ce.order, "trace": trace.to_dict(),
                                  "sup_perturbation": float(np.abs(U.values).max()),
                                  "csv": ["profile.csv", "perturbation.csv"]})
    print(f"{trace.status} after {trace.iterations} iterations, |Phi|_H3 = {trace.final_residual_Hs0:.3e}")
    return EXIT_OK


def cmd_sweep(run: Run, args):
    cfg = run.cfg
    m = build_model(cfg)
    eps_list = sorted(cfg["run"]["epsilons"], reverse=True)
    sw = cfg["sweep"]
    fits, points, profiles = sweep(
        m, _iter_cfg(cfg), eps_list, N=cfg["run"]["order"], L_tilde=cfg["grid"]["L_tilde"],
        h_tilde=cfg["grid"]["h_tilde"], inner=sw["inner"], decay_window=(sw["decay_lo"], sw["decay_hi"]),
        delta=sw["delta"], workers=_workers(len(eps_list)),
    )
    files = []
    for eps, (ce, U, trace) in sorted(profiles.items(), reverse=True):
        name = f"profile_eps{eps:g}.csv"
        run.write_csv(name, ce.grid, _columns(m, ce.U.values + U.values))
        files.append(name)
    for f in fits:
        run.write_dat(f"fit_{f.name}.dat", f"{f.name}: epsilon value (fitted {f.fitted:.6g}, claim {f.claim:g})",
                      f.epsilons, f.values)
    traces = {f"{eps:g}": p[2].to_dict() for eps, p in profiles.items()}
    run.write_json("sweep.json", {"model": m.name, "fits": [f.to_dict() for f in fits],
                                  "points": [vars(p) for p in points], "traces": traces, "csv": files})
    print(format_fits(fits))
    if args.strict and not all(f.passed for f in fits):
        return EXIT_CLAIM
    return EXIT_OK


def format_fits(fits):
    rows = [("claim", "mode", "target", "fitted", "R^2", "result")]
    for f in fits:
        d = f if isinstance(f, dict) else f.to_dict()
        rows.append((d["name"], d["mode"], f"{d['claim']:g}", _fmt(d["fitted"]), _fmt(d["r2"]),
                     "pass" if d["passed"] else "FAIL"))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows)


def _fmt(v):
    return "n/a" if v is None or (isinstance(v, float) and not math.isfinite(v)) else f"{v:.4f}"


def cmd_oracle(run: Run, args):
    cfg = run.cfg
    m = build_model(cfg)
    rs = reduce(m)
    eps = cfg["run"]["epsilon"]
    g = _grid(cfg, eps)
    ce = build_ce(m, eps, cfg["run"]["order"], g, rs)
    mc = MarchConfig(**cfg["oracle"])
    march = march_to_steady(m, ce.pair, g, mc)
    U, trace = iterate(m, ce, _iter_cfg(cfg))
    full = ce.U.values + U.values
    nm = recenter(g.x, full, phase_crossing(g.x, full[:, : m.n], ce.pair))
    payload = {
        "epsilon": eps,
        "march": {k: v for k, v in march.meta.items() if k != "history"},
        "sup_distance_march_vs_solver": float(np.abs(march.values - nm).max()),
        "csv": ["oracle_march.csv"],
    }
    run.write_csv("oracle_march.csv", g, _columns(m, march.values))
    if m.n == 1:
        q = quadrature_profile(rs, ce.pair, g)
        payload["sup_distance_quadrature_vs_reduced"] = float(np.abs(q.values - ce.u_bar.values).max())
        run.write_csv("oracle_quadrature.csv", g, {"u": q.values[:, 0]})
        payload["csv"].append("oracle_quadrature.csv")
    run.write_json("oracle.json", payload)
    print(f"march vs solver: {payload['sup_distance_march_vs_solver']:.3e}")
    if "sup_distance_quadrature_vs_reduced" in payload:
        print(f"quadrature vs reduced profile: {payload['sup_distance_quadrature_vs_reduced']:.3e}")
    return EXIT_OK


def cmd_report(args):
    root = Path(args.directory)
    if not root.is_dir():
        raise ConfigError(f"{root} is not a directory")
    blocks = []
    for path in sorted(root.rglob("*.json")):
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError):
            continue
        if not isinstance(data, dict) or "relaxprof_version" not in data:
            continue
        fits = list(data.get("fits", []))
        if isinstance(data.get("fit"), dict):
            fits.append(data["fit"])
        head = f"{path.relative_to(root)} [{data.get('command', '?')}, config {data.get('config_hash', '?')}]"
        if fits:
            blocks.append(head + "\n" + format_fits(fits))
        elif "error" in data:
            blocks.append(head + f"\n  error: {data['error']}")
        else:
            blocks.append(head + "\n  (no rate claims)")
    text = "\n\n".join(blocks) if blocks else "no relaxprof artifacts found"
    print(text)
    (root / "report.txt").write_text(text + "\n")
    return EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "ce": cmd_ce,
    "linsolve": cmd_linsolve,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "oracle": cmd_oracle,
}

NUMERIC_ERRORS = (
    AssumptionError,
    HugoniotError,
    ProfileError,
    LinearSolveError,
    DivergenceError,
    NeighborhoodError,
    OracleError,
    np.linalg.LinAlgError,
    FloatingPointError,
    ValueError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="relaxprof", description="Shock profiles of hyperbolic relaxation systems.")
    p.add_argument("--version", action="version", version=f"relaxprof {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (
        ("check", "structural assumptions and Kawashima compensator"),
        ("ce", "Chapman-Enskog approximant and residuals"),
        ("linsolve", "solve the linearized profile equations"),
        ("solve", "nonlinear profile by Nash-Moser or Newton iteration"),
        ("sweep", "amplitude sweep with fitted rates"),
        ("oracle", "time-marched and quadrature reference profiles"),
    ):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("-c", "--config", help="INI configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration key (repeatable)")
        sp.add_argument("-o", "--output", help="output directory (overrides run.output)")
        if name == "sweep":
            sp.add_argument("--strict", action="store_true", help="exit 3 when any claim fails")
    rp = sub.add_parser("report", help="summarize all JSON artifacts in a directory")
    rp.add_argument("directory")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "report":
        try:
            return cmd_report(args)
        except ConfigError as exc:
            print(f"relaxprof: {exc}", file=sys.stderr)
            return EXIT_USAGE
    overrides = list(args.set)
    if args.output:
        overrides.append(f"run.output={args.output}")
    try:
        cfg = load_config(args.config, overrides)
        build_model(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"relaxprof: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    run = Run(cfg, args.command)
    try:
        return COMMANDS[args.command](run, args)
    except ConfigError as exc:
        print(f"relaxprof: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        run.write_json("error.json", {"error": f"{type(exc).__name__}: {exc}"})
        print(f"relaxprof: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
