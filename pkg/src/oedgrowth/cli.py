"""Command-line front end.

    python -m oedgrowth design --config run.json [--criterion c:mu_max]
    python -m oedgrowth verify design.txt --config run.json
    python -m oedgrowth efficiency a.txt b.txt --config run.json
    python -m oedgrowth study time-tradeoff --out results/

Exit status: 0 on success (design converged, check passed), 2 when a design
did not reach tolerance but an efficiency bound is reported (or the check
failed), 1 on any error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .design import Criterion, DesignSpace, design_state, efficiency, verify_optimality
from .fileio import ConfigError, atomic_write, load_config, read_design, write_curve, write_design
from .models import BaranyiModel, ExtendedModel, LogConvention
from .solver import NonConvergenceWarning, SolverError, SolverOptions, solve
from .studies import STUDIES, CaseStudyConfig, PlateauBound, run_all

log = logging.getLogger("oedgrowth")

_PARAMS = {"baranyi": ("y0", "y_max", "mu_max", "lam"), "extended": ("y0", "y_max", "lam", "b", "T_min")}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- config -> objects


def _conventions(cfg: dict, args) -> tuple:
    lc = args.log_convention or cfg.get("log_convention", "natural")
    ec = args.eff_convention or cfg.get("efficiency_convention", "homogeneous")
    return LogConvention(lc), ec


def build_problem(cfg: dict, args, criterion: str = None):
    """(model, space, criterion, theta) from a validated run configuration and CLI overrides."""
    family = cfg.get("model")
    if family is None:
        raise UsageError("config needs a 'model' entry (baranyi or extended)")
    lc, _ = _conventions(cfg, args)
    names = _PARAMS[family]
    nominal = cfg.get("nominal", {})
    missing = [n for n in names if n not in nominal]
    if missing:
        raise UsageError(f"nominal values missing for {missing}")
    extra = sorted(set(nominal) - set(names))
    if extra:
        raise UsageError(f"nominal values {extra} do not belong to the {family} model")
    theta = np.array([float(nominal[n]) for n in names])
    model = BaranyiModel(convention=lc) if family == "baranyi" else ExtendedModel(convention=lc)
    if not model.valid(theta):
        raise UsageError(f"nominal values {dict(zip(names, theta))} are outside the model domain")

    sp = cfg.get("space", {})
    n_t = args.grid_time or sp.get("grid_time", 2000)
    depth = sp.get("plateau_depth", 30.0)
    amp = nominal["y_max"] - nominal["y0"]
    if family == "baranyi":
        hi = sp["time"][1] if "time" in sp else PlateauBound(nominal["lam"], amp, depth, lc.scale,
                                                              mu_max=nominal["mu_max"])()
        lo = sp["time"][0] if "time" in sp else 0.0
        space = DesignSpace([(lo, hi)], [n_t])
    else:
        T_lo, T_hi = sp.get("temperature", (4.0, 28.0))
        if T_lo <= nominal["T_min"]:
            raise UsageError("temperature range must lie above T_min")
        n_T = args.grid_temp or sp.get("grid_temp", 97)
        if "time" in sp:
            space = DesignSpace([(T_lo, T_hi), tuple(sp["time"])], [n_T, n_t])
        else:
            bound = PlateauBound(nominal["lam"], amp, depth, lc.scale, b=nominal["b"], T_min=nominal["T_min"])
            space = DesignSpace([(T_lo, T_hi), (0.0, bound(T_lo))], [n_T, n_t], time_upper=bound)

    crit = parse_criterion(criterion, model, theta) if criterion else _criterion_from_cfg(cfg, model, theta)
    return model, space, crit, theta


def _criterion_from_cfg(cfg, model, theta) -> Criterion:
    c = cfg.get("criterion", {"kind": "D"})
    spec = c["kind"] if c["kind"] == "D" else f"{c['kind']}:{','.join(c.get('parameters', []))}"
    return parse_criterion(spec, model, theta, c.get("scaled", False))


def parse_criterion(spec: str, model, theta, scaled: bool = False) -> Criterion:
    """``D``, ``c:<param>`` or ``L:<p1>,<p2>,...``; ``scaled`` divides columns by the nominal values."""
    kind, _, rest = spec.partition(":")
    kind = kind.strip()
    if kind == "D":
        return Criterion.D()
    names = [s.strip() for s in rest.split(",") if s.strip()]
    if kind not in ("c", "L") or not names:
        raise UsageError(f"criterion {spec!r}: use D, c:<parameter> or L:<p1>,<p2>")
    unknown = [n for n in names if n not in model.param_names]
    if unknown:
        raise UsageError(f"unknown parameters {unknown}; the model has {list(model.param_names)}")
    K = model.unit_vector(*names)
    if scaled:
        K = K / np.abs(theta[[model.index(n) for n in names]])
    if kind == "c":
        if len(names) != 1:
            raise UsageError("a c-criterion takes exactly one parameter; use L for several")
        return Criterion.c(K)
    return Criterion.L(K.reshape(model.k, -1))


def solver_options(cfg: dict, args) -> SolverOptions:
    kw = dict(cfg.get("solver", {}))
    if args.tol is not None:
        kw["tol"] = args.tol
    return SolverOptions(**kw)


def study_config(cfg: dict, args) -> CaseStudyConfig:
    st = dict(cfg.get("study", {}))
    kw = {}
    if "primary" in st:
        kw["primary"] = {float(T): tuple(v) for T, v in st.pop("primary").items()}
    if "reference_designs" in st:
        kw["reference_designs"] = {float(T): tuple(v) for T, v in st.pop("reference_designs").items()}
    for key in ("scan_temperatures", "targets"):
        if key in st:
            kw[key] = tuple(float(v) for v in st.pop(key))
    kw.update(st)
    lc, ec = _conventions(cfg, args)
    kw.update(log_convention=lc.value, eff_convention=ec, solver=solver_options(cfg, args))
    sp = cfg.get("space", {})
    if args.grid_time or "grid_time" in sp:
        kw["time_resolution"] = args.grid_time or sp["grid_time"]
    if args.grid_temp or "grid_temp" in sp:
        kw["temp_resolution"] = args.grid_temp or sp["grid_temp"]
    if "plateau_depth" in sp:
        kw["plateau_depth"] = sp["plateau_depth"]
    return CaseStudyConfig(**kw)


# --------------------------------------------------------------------------- commands


def _out_dir(cfg: dict, args) -> Path:
    return Path(args.out or cfg.get("output", {}).get("dir", "."))


def _load(args) -> dict:
    if not args.config:
        raise UsageError("this command needs --config <path>")
    return load_config(args.config)


def cmd_design(args) -> int:
    cfg = _load(args)
    model, space, crit, theta = build_problem(cfg, args, args.criterion)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        design, trace = solve(model, space, crit, theta, solver_options(cfg, args))
    out = _out_dir(cfg, args)
    name = cfg.get("output", {}).get("design_file", "design.txt")
    write_design(out / name, design, model.coord_names)
    value = design_state(design, model, theta).value(crit)
    report = {"criterion": repr(crit), "criterion_value": value, "converged": trace.converged,
              "iterations": len(trace.records), "atwood_bound": trace.atwood_bound,
              "get": trace.report.to_dict(), "seed": args.seed}
    atomic_write(out / (Path(name).stem + "_report.json"), json.dumps(report, indent=2) + "\n")
    print(f"{repr(crit)} design on {space.grid().shape[0]} grid points ({model.coord_names})")
    print(_design_table(design, model.coord_names))
    print(f"criterion value {value:.6g}; max GET violation {trace.report.max_violation:.3g} "
          f"(tol {trace.report.tol:.3g})")
    if not trace.converged:
        print(f"not converged; efficiency >= {trace.atwood_bound:.4f} (Atwood bound)")
        return 2
    return 0


def _design_table(design, coord_names) -> str:
    head = "  ".join(f"{c:>10}" for c in coord_names) + f"  {'weight':>10}"
    rows = ["  ".join(f"{v:10.4f}" for v in p) + f"  {w:10.4f}" for p, w in zip(design.points, design.weights)]
    return "\n".join([head, *rows])


def cmd_verify(args) -> int:
    cfg = _load(args)
    model, space, crit, theta = build_problem(cfg, args, args.criterion)
    design = read_design(args.design)
    _check_dim(design, model, args.design)
    tol = args.tol if args.tol is not None else solver_options(cfg, args).resolved_tol(model.k)
    report = verify_optimality(design, space, model, theta, crit, tol)
    out = _out_dir(cfg, args)
    atomic_write(out / "verify_report.json", json.dumps(report.to_dict(), indent=2) + "\n")
    print(f"max violation {report.max_violation:.4g} at {np.round(report.argmax, 4).tolist()} "
          f"(tol {tol:.3g}): {'passed' if report.passed else 'FAILED'}")
    return 0 if report.passed else 2


def _check_dim(design, model, source):
    if design.dim != model.dim:
        raise UsageError(f"{source}: design has {design.dim} coordinates, the model needs {model.dim}")


def cmd_efficiency(args) -> int:
    cfg = _load(args)
    model, space, crit, theta = build_problem(cfg, args, args.criterion)
    _, ec = _conventions(cfg, args)
    a, b = read_design(args.design_a), read_design(args.design_b)
    _check_dim(a, model, args.design_a)
    _check_dim(b, model, args.design_b)
    eff = efficiency(a, b, model, theta, crit, ec)
    print(f"{eff:.4f}")
    path = _out_dir(cfg, args) / "efficiency.csv"
    rows = []
    if path.exists():
        rows = path.read_text(encoding="utf-8").splitlines()[1:]
    rows.append(",".join([args.design_a, args.design_b, repr(crit), ec, repr(float(eff))]))
    atomic_write(path, "\n".join(["design,reference,criterion,convention,efficiency", *rows]) + "\n")
    return 0


def cmd_study(args) -> int:
    name = args.name
    valid = (*STUDIES, "all")
    if name not in valid:
        raise UsageError(f"unknown study {name!r}; valid names: {', '.join(valid)}")
    cfg = load_config(args.config) if args.config else {}
    sc = study_config(cfg, args)
    studies = STUDIES if name == "all" else (name,)
    report = run_all(sc, studies, conventions=(name == "all"))
    out = _out_dir(cfg, args)
    atomic_write(out / f"study_{name}.json", json.dumps(report.to_dict(), indent=2) + "\n")
    _write_study_files(report, out)
    ok = sum(d.within for d in report.deviations)
    print(f"study {name}: {len(report.solved())} designs solved, "
          f"{ok}/{len(report.deviations)} reference values reproduced within tolerance")
    for d in report.deviations:
        if not d.within:
            print(f"  off: {d.quantity}: {d.computed:.6g} vs {d.reference:g}")
    return 0 if report.all_certified and all(s.converged for s in report.solved()) else 2


def _write_study_files(report, out: Path) -> None:
    s = report.sections
    for key, coords in (("table3", ("t",)), ("table4", ("t",))):
        for T, res in s.get(key, {}).items():
            if "solved" in res:
                write_design(out / f"{key}_T{T:g}.txt", res["solved"].display, coords)
    if "extended" in s:
        write_design(out / "extended_D.txt", s["extended"]["solved"].design, ("T", "t"))
    if "joint" in s:
        for mode, res in s["joint"]["modes"].items():
            write_design(out / f"joint_{mode}.txt", res["solved"].design, ("T", "t"))
    for p, curve in s.get("sensitivity", {}).items():
        write_curve(out / f"sensitivity_{p}.csv", ("nominal", "efficiency"),
                    zip(curve.values, curve.efficiencies))
    tt = s.get("time_tradeoff", {})
    for e, curve in tt.items():
        write_curve(out / f"tradeoff_{e:g}.csv", ("T", "tf"), zip(curve.temperatures, curve.final_times))
    if tt:
        rows = []
        for e, c in tt.items():
            lo, hi = c.saving if c.saving else (math.nan, math.nan)
            rows.append((e, c.fit.a, c.fit.b, c.fit.rmse, lo, hi) if c.fit else (e, *[math.nan] * 5))
        write_curve(out / "tradeoff_fits.csv", ("target", "a", "b", "rmse", "min_saving", "max_saving"), rows)


# --------------------------------------------------------------------------- parser


def _global_options(suppress: bool) -> argparse.ArgumentParser:
    # the same flags are accepted before and after the command; after it they must not
    # reset values given before it, hence SUPPRESS defaults on the command parsers
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", help="JSON run configuration", **kw)
    g.add_argument("--out", help="output directory (default: config output.dir or .)", **kw)
    g.add_argument("--grid-time", type=int, help="grid points along time", **kw)
    g.add_argument("--grid-temp", type=int, help="grid points along temperature", **kw)
    g.add_argument("--tol", type=float, help="equivalence-theorem tolerance (default 1e-4 * k)", **kw)
    g.add_argument("--eff-convention", choices=("raw", "homogeneous"), **kw)
    g.add_argument("--log-convention", choices=("natural", "decimal"), **kw)
    g.add_argument("--seed", type=int, help="accepted for reproducible scripts; every algorithm is deterministic",
                   **kw)
    g.add_argument("-v", "--verbose", action="store_true", **kw)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_options(suppress=True)
    p = argparse.ArgumentParser(prog="oedgrowth", description="Optimal designs for microbial growth experiments.",
                                parents=[_global_options(suppress=False)])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", parents=[common], help="solve an optimal design")
    d.add_argument("--criterion", help="D, c:<param> or L:<p1>,<p2> (default: from config)")
    d.set_defaults(func=cmd_design)

    v = sub.add_parser("verify", parents=[common], help="equivalence-theorem check of a design file")
    v.add_argument("design")
    v.add_argument("--criterion")
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("efficiency", parents=[common], help="efficiency of design A relative to design B")
    e.add_argument("design_a")
    e.add_argument("design_b")
    e.add_argument("--criterion")
    e.set_defaults(func=cmd_efficiency)

    s = sub.add_parser("study", parents=[common], help="run a case-study reproduction")
    s.add_argument("name", help=f"one of {', '.join((*STUDIES, 'all'))}")
    s.set_defaults(func=cmd_study)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2; the contract says 1
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, SolverError, ValueError, np.linalg.LinAlgError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
