"""Command-line entry point: ``qocbench <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, config, foms, optimizer, plant, pulse
from .errors import QocbenchError, ValidationError
from .evaluation import RbExperiment
from .gateset import OPTIMIZED_GATE

METHODS = tuple(k.lower() for k in foms.FOM_KINDS)
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


# ---------------------------------------------------------------------------
# file helpers


def atomic_write(path: Path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_call(path: Path, writer, *args) -> None:
    """Run ``writer(tmp_path, *args)`` and move the result onto ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        writer(tmp, *args)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "" if np.isnan(x) else f"{x:.17g}"


def trace_csv(rows) -> str:
    lines = [",".join(optimizer.TRACE_COLUMNS)]
    for r in rows:
        lines.append(
            ",".join(
                [
                    str(r.eval_index),
                    str(r.superiteration),
                    r.method,
                    "" if r.L is None else str(r.L),
                    str(r.N),
                    _num(r.fom),
                    _num(r.std_estimate),
                    str(int(r.is_reeval)),
                    str(int(r.is_drift_check)),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def run_dir(cfg, args, name: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return cfg.output_root(args.output) / name


def write_snapshot(directory: Path, cfg) -> None:
    atomic_write(directory / "config.snapshot", cfg.snapshot())


def _spec_name(spec: foms.FomSpec) -> str:
    return spec.kind.lower() if spec.length is None else f"{spec.kind.lower()}-L{spec.length}"


# ---------------------------------------------------------------------------
# commands


def cmd_sweep(cfg, args) -> int:
    if args.method:
        cfg.fom.method = args.method
    lengths = [None] if not args.lengths else _int_list(args.lengths, "--lengths")
    if args.grid:
        lo, hi, n = _grid(args.grid)
        cfg.analysis.sweep_min, cfg.analysis.sweep_max, cfg.analysis.sweep_points = lo, hi, n
    if args.repeats:
        cfg.analysis.repeats = args.repeats
    config.validate(cfg)
    model = cfg.model()
    gs = cfg.guess_gateset()
    for L in lengths:
        spec = cfg.fom_spec(length=L)
        res = analysis.amplitude_sweep(
            spec, model, config.sweep_scales(cfg), cfg.analysis.repeats, gs, workers=args.threads
        )
        name = f"sweep-{_spec_name(spec)}"
        if args.out:
            directory = Path(args.out) if len(lengths) == 1 else Path(args.out) / name
        else:
            directory = cfg.output_root(args.output) / name
        snap = replace(cfg, fom=replace(cfg.fom, L=spec.length))
        write_snapshot(directory, snap)
        atomic_call(directory / "sweep.csv", analysis.write_sweep_csv, res)
        summary = {
            "method": spec.kind,
            "L": spec.length,
            "argmin": res.argmin,
            "argmin_ambiguous": res.argmin_ambiguous,
            "consistent_with_min": [float(s) for s in res.consistent_with_min()],
            "interior_minimum": res.has_interior_minimum(),
        }
        atomic_write(directory / "summary.json", to_json(summary))
        flag = "  (argmin ambiguous: neighbours within noise)" if res.argmin_ambiguous else ""
        print(f"{spec.label}: argmin scale {res.argmin:.3f}{flag} -> {directory / 'sweep.csv'}")
    return EXIT_OK


def cmd_optimize(cfg, args) -> int:
    if args.method:
        cfg.fom.method = args.method
    if args.L is not None:
        cfg.fom.L = args.L
    if args.seed is not None:
        cfg.optimizer.seed = args.seed
    config.validate(cfg)
    spec = cfg.fom_spec()
    cfg.fom.L = spec.length
    seed = cfg.optimizer.seed
    directory = run_dir(cfg, args, f"optimize-{_spec_name(spec)}-seed{seed}")
    write_snapshot(directory, cfg)

    def on_improvement(p):
        atomic_call(directory / "best_pulse.csv", pulse.write_pulse_csv, p)

    rec = optimizer.dcrab_run(
        spec,
        cfg.model(),
        cfg.guess_gateset(),
        cfg.dcrab(),
        seed,
        ref_gs=cfg.reference_gateset(),
        on_improvement=on_improvement,
    )
    atomic_write(directory / "fom_trace.csv", trace_csv(rec.trace))
    atomic_call(directory / "best_pulse.csv", pulse.write_pulse_csv, rec.best_pulse)
    summary = rec.summary()
    summary["fluence"] = pulse.fluence(rec.best_pulse)
    atomic_write(directory / "result.json", to_json(summary))
    g = "undefined" if rec.gain is None else f"{rec.gain:.3f}"
    print(f"{spec.label} seed {seed}: gain {g} after {rec.n_evals} evaluations -> {directory}")
    return EXIT_OK


def _rb_experiment(cfg) -> RbExperiment:
    return RbExperiment(tuple(cfg.rb.lengths), cfg.rb.circuits, cfg.rb.seed)


def cmd_evaluate(cfg, args) -> int:
    candidate = pulse.read_pulse_csv(args.pulse)
    gs = cfg.guess_gateset()
    if not np.isclose(candidate.dt, cfg.dt, rtol=1e-9, atol=0):
        raise ValidationError(f"pulse dt {candidate.dt:g} s differs from the configured grid {cfg.dt:g} s")
    candidate = pulse.PulseShape(cfg.dt, candidate.ax, candidate.ay)
    seed = cfg.analysis.eval_circuit_seed
    if args.all_methods:
        specs = analysis.default_eval_specs(seed)
    else:
        specs = [replace(cfg.fom_spec(), seed=seed)]
    rb = _rb_experiment(cfg) if args.rb else None
    cells = analysis.cross_evaluate(
        candidate,
        cfg.model(),
        specs,
        rb,
        cfg.analysis.repeats,
        gs,
        cfg.optimizer.min_separation,
        reference=cfg.reference_gateset().pulses[OPTIMIZED_GATE],
    )
    src = Path(args.pulse)
    directory = run_dir(cfg, args, f"evaluate-{src.parent.name}-{src.stem}" if src.parent.name else f"evaluate-{src.stem}")
    write_snapshot(directory, cfg)
    atomic_call(directory / "gains.csv", analysis.write_gains_csv, cells)
    for c in cells:
        g = "null" if c.gain is None else f"{c.gain:.3f} +- {c.std:.3f}"
        print(f"{c.method:7s} L={'' if c.L is None else c.L!s:3s} gain {g}")
    return EXIT_OK


def cmd_rb(cfg, args) -> int:
    model = cfg.model()
    gs = cfg.guess_gateset()
    pulses = {"guess": gs.pulses[OPTIMIZED_GATE], "reference": cfg.reference_gateset().pulses[OPTIMIZED_GATE]}
    for item in args.pulse or []:
        name, path = _named(item)
        pulses[name] = pulse.read_pulse_csv(path)
    exp = _rb_experiment(cfg)
    surv_lines = ["pulse,m,survival"]
    fit_lines = ["pulse,A,q,r,r_std,converged,clamped"]
    for j, (name, p) in enumerate(pulses.items()):
        ptms = plant.gate_ptms(gs.with_pulse(OPTIMIZED_GATE, p), model)
        surv = exp.survivals(ptms, model, plant.shot_rng(model, 50_000_000 + j))
        fit = foms.rb_fit(exp.lengths, surv)
        surv_lines += [f"{name},{m},{_num(s)}" for m, s in zip(exp.lengths, surv)]
        fit_lines.append(
            f"{name},{_num(fit.A)},{_num(fit.q)},{_num(fit.r)},{_num(fit.r_std)},{int(fit.converged)},{int(fit.clamped)}"
        )
        print(f"{name}: r = {fit.r:.5f} +- {fit.r_std:.5f}{'' if fit.ok else '  (fit flagged)'}")
    directory = run_dir(cfg, args, "rb")
    write_snapshot(directory, cfg)
    atomic_write(directory / "rb_survival.csv", "\n".join(surv_lines) + "\n")
    atomic_write(directory / "rb_fit.csv", "\n".join(fit_lines) + "\n")
    return EXIT_OK


def cmd_correlate(cfg, args) -> int:
    if len(args.gains) < 2:
        raise ValidationError("correlate needs at least two --gains files")
    tables = [analysis.read_gains_csv(p) for p in args.gains]
    X, names = analysis.gains_matrix(tables)
    M = analysis.correlation_matrix(X, names)
    directory = run_dir(cfg, args, "correlate")
    write_snapshot(directory, cfg)
    atomic_call(directory / "correlation.csv", analysis.write_correlation_csv, M, names)
    print(f"{len(names)}x{len(names)} correlation matrix from {len(tables)} runs -> {directory / 'correlation.csv'}")
    return EXIT_OK


def cmd_fluence(cfg, args) -> int:
    pulses = {}
    for item in args.pulses:
        name, path = _named(item)
        path = Path(path)
        if path.is_dir():
            path = path / "best_pulse.csv"
        pulses[name] = pulse.read_pulse_csv(path)
    rows = analysis.fluence_report(
        pulses, cfg.dt, cfg.gateset.guess_duration_ns * pulse.NS, cfg.gateset.reference_duration_ns * pulse.NS
    )
    directory = run_dir(cfg, args, "fluence")
    write_snapshot(directory, cfg)
    atomic_call(directory / "fluence.csv", analysis.write_fluence_csv, rows)
    for name, f, fg, fr in rows:
        print(f"{name}: {f:.6g} rad^2/s (guess {fg:.6g}, reference {fr:.6g})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _int_list(text: str, flag: str) -> list:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"{flag} must be a comma-separated list of integers") from None
    if not vals or any(v < 1 for v in vals):
        raise ValidationError(f"{flag} needs positive integers")
    return vals


def _grid(text: str):
    try:
        lo, hi, n = text.split(":")
        return float(lo), float(hi), int(n)
    except ValueError:
        raise ValidationError("--grid must look like LO:HI:POINTS, e.g. 0.5:1.5:21") from None


def _named(item: str):
    if "=" in item:
        name, path = item.split("=", 1)
        return name, path
    p = Path(item)
    return (p.name if p.is_dir() else p.stem), item


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (defaults are used for missing keys)")
    common.add_argument("--output", help=f"output root (default: config output.root, ${config.OUTPUT_ENV}, ./runs)")
    common.add_argument("--out", help="exact run directory, overriding the generated name")
    common.add_argument("--threads", type=int, default=1, help="maximum worker processes")

    parser = argparse.ArgumentParser(prog="qocbench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", parents=[common], help="amplitude sweep of the G2 guess pulse")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--lengths", help="comma-separated circuit lengths, one sweep per length")
    p.add_argument("--grid", help="LO:HI:POINTS amplitude scale grid")
    p.add_argument("--repeats", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("optimize", parents=[common], help="closed-loop dCRAB optimization of G2")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--L", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("evaluate", parents=[common], help="gains of a pulse under other methods")
    p.add_argument("--pulse", required=True, help="pulse CSV (t_ns,ax_rad_per_s,ay_rad_per_s)")
    p.add_argument("--all-methods", action="store_true")
    p.add_argument("--rb", action="store_true", help="include randomized benchmarking")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rb", parents=[common], help="randomized benchmarking of guess, reference and given pulses")
    p.add_argument("--pulse", action="append", help="[NAME=]FILE, may repeat")
    p.set_defaults(func=cmd_rb)

    p = sub.add_parser("correlate", parents=[common], help="correlation matrix of gain tables")
    p.add_argument("--gains", nargs="+", required=True)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("fluence", parents=[common], help="fluence of pulses against guess and reference")
    p.add_argument("--pulses", nargs="+", required=True, help="[NAME=]FILE or run directory")
    p.set_defaults(func=cmd_fluence)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        if args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        cfg = config.load(args.config) if args.config else config.from_dict({})
        return args.func(cfg, args)
    except ValidationError as exc:
        print(f"qocbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (QocbenchError, OSError, ArithmeticError) as exc:
        print(f"qocbench: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
