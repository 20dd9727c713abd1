"""Amplitude sweeps, cross-evaluation gains, correlations and fluence tables."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import evaluation, foms, plant, pulse
from .errors import DegenerateColumnError, IllConditionedError, NormalizationError, UndefinedGainError, ValidationError
from .evaluation import RbExperiment
from .gateset import OPTIMIZED_GATE, GateSet, calibrated_pulse
from .optimizer import gain, guess_gateset, reference_gateset
from .plant import EnsembleModel
from .pulse import PulseShape

SWEEP_POINTS = 21
SWEEP_RANGE = (0.5, 1.5)
SWEEP_REPEATS = 20
EVAL_CIRCUIT_SEED = 1

_SWEEP_OFFSET = 30_000_000
_CROSS_OFFSET = 40_000_000


# ---------------------------------------------------------------------------
# Correlation


def correlation_matrix(X, names: Optional[Sequence[str]] = None) -> np.ndarray:
    """Pearson correlation between the columns of an (n observations, p methods) matrix."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 2:
        raise ValidationError(f"need at least a 2x2 data matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("data matrix has missing or non-finite entries")
    names = list(names) if names is not None else [str(j) for j in range(X.shape[1])]
    dev = X - X.mean(axis=0)
    ss = np.sqrt(np.sum(dev**2, axis=0))
    for j, s in enumerate(ss):
        if not s > 0:
            raise DegenerateColumnError(f"column {names[j]!r} has zero variance")
    M = (dev.T @ dev) / np.outer(ss, ss)
    M = np.clip((M + M.T) / 2, -1.0, 1.0)
    np.fill_diagonal(M, 1.0)
    return M


# ---------------------------------------------------------------------------
# Amplitude sweeps


def sweep_grid(points: int = SWEEP_POINTS, lo: float = SWEEP_RANGE[0], hi: float = SWEEP_RANGE[1]) -> np.ndarray:
    """Amplitude scale factors relative to the calibrated guess amplitude."""
    return np.linspace(lo, hi, points)


@dataclass(frozen=True)
class SweepResult:
    spec: foms.FomSpec
    scales: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n_valid: np.ndarray

    @property
    def argmin(self) -> float:
        """Scale with the lowest mean FoM; missing points are skipped."""
        if not np.isfinite(self.mean).any():
            raise ValidationError("sweep has no valid points")
        return float(self.scales[np.nanargmin(self.mean)])

    def consistent_with_min(self) -> np.ndarray:
        """Grid scales whose mean is within 2 combined std of the minimum."""
        i = np.nanargmin(self.mean)
        tol = 2 * np.sqrt(self.std**2 + self.std[i] ** 2)
        ok = np.isfinite(self.mean) & (self.mean - self.mean[i] <= tol)
        return self.scales[ok]

    @property
    def argmin_ambiguous(self) -> bool:
        """True when neighbouring grid points cannot be told apart from the minimum."""
        return self.consistent_with_min().size > 1

    def has_interior_minimum(self) -> bool:
        i = int(np.nanargmin(self.mean))
        return 0 < i < self.scales.size - 1


def scaled_guess(gs: GateSet, scale: float) -> GateSet:
    g2 = gs.pulses[OPTIMIZED_GATE]
    return gs.with_pulse(OPTIMIZED_GATE, PulseShape(g2.dt, scale * g2.ax, scale * g2.ay))


def _sweep_point(spec, gs, model, scale, index, repeats, run):
    ev = evaluation.evaluator(spec)
    ptms = plant.gate_ptms(scaled_guess(gs, scale), model)
    vals = []
    for k in range(repeats):
        rng = plant.shot_rng(model, _SWEEP_OFFSET + index * repeats + k, run)
        try:
            vals.append(ev(ptms, model, rng))
        except (IllConditionedError, NormalizationError):
            continue
    if not vals:
        return np.nan, np.nan, 0
    return float(np.mean(vals)), float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0, len(vals)


def amplitude_sweep(
    spec: foms.FomSpec,
    model: EnsembleModel,
    scales=None,
    repeats: int = SWEEP_REPEATS,
    gs: Optional[GateSet] = None,
    run: int = 0,
    workers: int = 1,
) -> SweepResult:
    """Mean and std of ``repeats`` FoM measurements per G2 amplitude scale.

    Grid points draw noise from their own streams, so ``workers > 1``
    (a process pool) gives bit-identical results.
    """
    scales = sweep_grid() if scales is None else np.asarray(scales, dtype=float)
    if scales.size < 5:
        raise ValidationError("a sweep needs at least 5 grid points")
    gs = guess_gateset() if gs is None else gs
    args = [(spec, gs, model, float(s), i, repeats, run) for i, s in enumerate(scales)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_sweep_point, *zip(*args)))
    else:
        points = [_sweep_point(*a) for a in args]
    mean, std, n_valid = (np.array(c) for c in zip(*points))
    return SweepResult(spec, scales, mean.astype(float), std.astype(float), n_valid.astype(int))


def length_study(kind: str, lengths: Sequence[int], model: EnsembleModel, repeats: int = SWEEP_REPEATS, gs=None):
    """FoM of the (unscaled) guess gate-set as a function of circuit length."""
    gs = guess_gateset() if gs is None else gs
    out = []
    for L in lengths:
        vals = evaluation.evaluate_repeated(foms.FomSpec(kind, int(L)), gs, model, repeats, _SWEEP_OFFSET)
        out.append((int(L), float(vals.mean()), float(vals.std(ddof=1)) if repeats > 1 else 0.0))
    return out


# ---------------------------------------------------------------------------
# Cross-evaluation


def default_eval_specs(seed: int = EVAL_CIRCUIT_SEED) -> list:
    """One FomSpec per method; circuits are drawn from ``seed``, not the optimization seed."""
    return [
        foms.FomSpec(foms.QPT, seed=seed),
        foms.FomSpec(foms.LGST, seed=seed),
        foms.FomSpec(foms.GTILDE, seed=seed),
        foms.FomSpec(foms.RLGST, 18, seed=seed),
        foms.FomSpec(foms.ORBIT, 10, seed=seed),
    ]


@dataclass(frozen=True)
class GainCell:
    method: str
    L: Optional[int]
    gain: Optional[float]
    std: Optional[float]
    value_opt: float
    value_guess: float
    value_ref: float


def _gain_std(o, g, r, so, sg, sr) -> float:
    """First-order propagation of the three standard errors through the gain."""
    d = r - g
    dg_do = 1 / d
    dg_dg = (o - r) / d**2
    dg_dr = -(o - g) / d**2
    return float(np.sqrt((dg_do * so) ** 2 + (dg_dg * sg) ** 2 + (dg_dr * sr) ** 2))


def _cell(method, L, vals_o, vals_g, vals_r, eps) -> GainCell:
    o, g, r = (float(np.mean(v)) for v in (vals_o, vals_g, vals_r))

    def sem(v):
        v = np.asarray(v, dtype=float)
        return float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0

    try:
        gv = gain(o, g, r, eps)
        sd = _gain_std(o, g, r, sem(vals_o), sem(vals_g), sem(vals_r))
    except UndefinedGainError:
        gv, sd = None, None
    return GainCell(method, L, gv, sd, o, g, r)


def _rb_cell(pulses, gs, model, rb: RbExperiment, run, eps) -> GainCell:
    r_vals, r_std = [], []
    for j, p in enumerate(pulses):
        ptms = plant.gate_ptms(gs.with_pulse(OPTIMIZED_GATE, p), model)
        fit = rb.run(ptms, model, plant.shot_rng(model, _CROSS_OFFSET + 900_000 + j, run))
        r_vals.append(fit.r)
        r_std.append(fit.r_std)
    o, g, r = r_vals
    try:
        gv = gain(o, g, r, eps)
        sd = _gain_std(o, g, r, *r_std)
    except UndefinedGainError:
        gv, sd = None, None
    return GainCell(foms.RB, max(rb.lengths), gv, sd, o, g, r)


def cross_evaluate(
    candidate: PulseShape,
    model: EnsembleModel,
    specs: Optional[Sequence[foms.FomSpec]] = None,
    rb: Optional[RbExperiment] = None,
    repeats: int = SWEEP_REPEATS,
    gs: Optional[GateSet] = None,
    eps: float = 1e-9,
    run: int = 0,
    reference: Optional[PulseShape] = None,
) -> list:
    """Gain of ``candidate`` as G2 under every method, guess and reference measured alongside.

    A method whose guess and reference cannot be separated gets ``gain=None``.
    """
    gs = guess_gateset(candidate.dt) if gs is None else gs
    specs = default_eval_specs() if specs is None else specs
    ref = reference_gateset(gs).pulses[OPTIMIZED_GATE] if reference is None else reference
    pulses = (candidate, gs.pulses[OPTIMIZED_GATE], ref)
    cells = []
    for n, spec in enumerate(specs):
        vals = []
        for j, p in enumerate(pulses):
            first = _CROSS_OFFSET + (3 * n + j) * repeats
            vals.append(_robust_repeats(spec, gs.with_pulse(OPTIMIZED_GATE, p), model, repeats, first, run))
        cells.append(_cell(spec.kind, spec.length, *vals, eps))
    if rb is not None:
        cells.append(_rb_cell(pulses, gs, model, rb, run, eps))
    return cells


def _robust_repeats(spec, gs, model, repeats, first, run) -> np.ndarray:
    ev = evaluation.evaluator(spec)
    ptms = plant.gate_ptms(gs, model)
    vals = []
    for k in range(repeats):
        try:
            vals.append(ev(ptms, model, plant.shot_rng(model, first + k, run)))
        except (IllConditionedError, NormalizationError):
            continue
    if not vals:
        return np.array([np.nan])
    return np.array(vals)


# ---------------------------------------------------------------------------
# Fluence


def fluence_report(
    pulses: dict,
    dt: float = pulse.DEFAULT_DT,
    guess_duration: float = pulse.GUESS_DURATION,
    reference_duration: float = pulse.REFERENCE_DURATION,
) -> list:
    """Rows ``(name, fluence, fluence_guess, fluence_ref)`` in rad^2/s."""
    f_guess = pulse.fluence(calibrated_pulse(OPTIMIZED_GATE, guess_duration, dt))
    f_ref = pulse.fluence(calibrated_pulse(OPTIMIZED_GATE, reference_duration, dt))
    return [(name, pulse.fluence(p), f_guess, f_ref) for name, p in pulses.items()]


# ---------------------------------------------------------------------------
# CSV output

SWEEP_COLUMNS = ("amplitude", "mean_fom", "std", "n_valid")
GAIN_COLUMNS = ("method", "L", "gain", "std")
FLUENCE_COLUMNS = ("name", "fluence", "fluence_guess", "fluence_ref")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    return "" if np.isnan(x) else f"{x:.17g}"


def _write(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_sweep_csv(path, res: SweepResult) -> None:
    rows = [[_fmt(s), _fmt(m), _fmt(d), _fmt(n)] for s, m, d, n in zip(res.scales, res.mean, res.std, res.n_valid)]
    _write(path, SWEEP_COLUMNS, rows)


def write_gains_csv(path, cells: Sequence[GainCell]) -> None:
    _write(path, GAIN_COLUMNS, [[c.method, _fmt(c.L), _fmt(c.gain), _fmt(c.std)] for c in cells])


def read_gains_csv(path) -> list:
    """Rows of ``(method, L, gain)``; empty gain cells read as None."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ValidationError(f"cannot read gains file {path}: {exc}") from exc
    if not rows or tuple(rows[0]) != GAIN_COLUMNS:
        raise ValidationError(f"{path}: header must be {','.join(GAIN_COLUMNS)}")
    out = []
    try:
        for r in rows[1:]:
            if not r:
                continue
            out.append((r[0], int(r[1]) if r[1] else None, float(r[2]) if r[2] else None))
    except (ValueError, IndexError) as exc:
        raise ValidationError(f"{path}: malformed row ({exc})") from exc
    return out


def gains_matrix(tables: Sequence[list]):
    """Stack gain tables into (X, column names); columns with any null gain are dropped.

    All tables must list the same methods in the same order.
    """
    if len(tables) < 2:
        raise ValidationError("need at least two gain tables")
    keys = [(m, L) for m, L, _ in tables[0]]
    for t in tables[1:]:
        if [(m, L) for m, L, _ in t] != keys:
            raise ValidationError("gain tables list different methods")
    X = np.array([[np.nan if g is None else g for _, _, g in t] for t in tables], dtype=float)
    keep = np.all(np.isfinite(X), axis=0)
    names = [m if L is None else f"{m}(L={L})" for (m, L), k in zip(keys, keep) if k]
    return X[:, keep], names


def write_correlation_csv(path, M, names: Sequence[str]) -> None:
    rows = [[n] + [_fmt(v) for v in row] for n, row in zip(names, np.asarray(M))]
    _write(path, ["method", *names], rows)


def write_fluence_csv(path, rows) -> None:
    _write(path, FLUENCE_COLUMNS, [[n, _fmt(f), _fmt(g), _fmt(r)] for n, f, g, r in rows])
