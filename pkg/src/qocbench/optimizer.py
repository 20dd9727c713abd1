"""Closed-loop dCRAB optimization of the G2 pulse against a figure of merit.

The search runs Nelder-Mead over the coefficients of a random Fourier basis
that dresses the current best pulse. Each super-iteration draws a fresh
basis. Every objective call is one noisy plant measurement, so apparent
small improvements are re-measured before they are accepted.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import evaluation, plant, pulse
from .errors import IllConditionedError, NormalizationError, UndefinedGainError, ValidationError
from .foms import FomSpec
from .gateset import OPTIMIZED_GATE, GateSet, calibrated_gateset, calibrated_pulse
from .plant import EnsembleModel
from .pulse import GUESS_DURATION, REFERENCE_DURATION, PulseShape

# noise streams; each maps to a disjoint range of evaluation indices
_SIGMA_OFFSET = 10_000_000
_FINAL_OFFSET = 20_000_000
_BASIS_STREAM = 0xBA5E
_MAX_RETRIES = 10

NM_ALPHA = 1.0
NM_GAMMA = 2.0
NM_RHO = 0.5
NM_SIGMA = 0.5


@dataclass(frozen=True)
class DcrabConfig:
    superiterations: int = 3
    vectors_per_pulse: int = 2
    n_max_oscillations: int = 4
    stop_window: int = 200
    reeval_max: int = 3
    drift_remeasure_every: int = 40
    max_evals_per_superiteration: int = 600
    a_max: float = field(default_factory=pulse.max_amplitude)
    step_fraction: float = 0.1
    sigma_repeats: int = 100
    final_repeats: int = 20
    min_separation: float = 1e-9

    def __post_init__(self):
        counts = (
            "superiterations",
            "vectors_per_pulse",
            "n_max_oscillations",
            "stop_window",
            "reeval_max",
            "drift_remeasure_every",
            "max_evals_per_superiteration",
            "sigma_repeats",
            "final_repeats",
        )
        for name in counts:
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if not self.a_max > 0:
            raise ValidationError("a_max must be positive")
        if not self.step_fraction > 0:
            raise ValidationError("step_fraction must be positive")


@dataclass(frozen=True)
class TraceRow:
    eval_index: int
    superiteration: int
    method: str
    L: Optional[int]
    N: int
    fom: float
    std_estimate: float
    is_reeval: bool
    is_drift_check: bool


TRACE_COLUMNS = tuple(TraceRow.__dataclass_fields__)


@dataclass
class OptimizationRecord:
    config: DcrabConfig
    spec: FomSpec
    seed: int
    plant_seed: int
    sigma: float
    trace: list
    best_pulse: PulseShape
    fom_guess: float
    fom_guess_std: float
    fom_ref: float
    fom_ref_std: float
    fom_opt: float
    fom_opt_std: float
    gain: Optional[float]
    n_circuits: int = 0

    @property
    def n_evals(self) -> int:
        return len(self.trace)

    def best_so_far(self) -> np.ndarray:
        """Running minimum of the accepted FoM (what the loop compared against)."""
        f = np.array([r.fom for r in self.trace], dtype=float)
        f = np.where(np.isfinite(f), f, np.inf)
        return np.minimum.accumulate(f)

    def summary(self) -> dict:
        return {
            "method": self.spec.kind,
            "L": self.spec.length,
            "N": self.n_circuits,
            "gain": self.gain,
            "fom_guess": self.fom_guess,
            "fom_guess_std": self.fom_guess_std,
            "fom_ref": self.fom_ref,
            "fom_ref_std": self.fom_ref_std,
            "fom_opt": self.fom_opt,
            "fom_opt_std": self.fom_opt_std,
            "sigma": self.sigma,
            "n_evals": self.n_evals,
            "seeds": {"run": self.seed, "plant": self.plant_seed, "circuits": self.spec.seed},
            "config": asdict(self.config),
        }


def gain(fom_opt: float, fom_guess: float, fom_ref: float, eps: float = 1e-9) -> float:
    """0 for the guess, 1 for the reference, >1 when better than the reference."""
    sep = fom_ref - fom_guess
    if not abs(sep) > eps:
        raise UndefinedGainError(f"guess and reference FoMs differ by {sep:.3g} (<= {eps:.3g})")
    return (fom_opt - fom_guess) / sep


def guess_gateset(dt: float = pulse.DEFAULT_DT, duration: float = GUESS_DURATION) -> GateSet:
    """Every gate a calibrated rectangle of ``duration``; G2 is the guess."""
    return calibrated_gateset(duration, dt)


def reference_gateset(base: GateSet, duration: float = REFERENCE_DURATION) -> GateSet:
    """``base`` with G2 replaced by the shortest (maximum amplitude) rectangle."""
    dt = base.pulses[OPTIMIZED_GATE].dt
    return base.with_pulse(OPTIMIZED_GATE, calibrated_pulse(OPTIMIZED_GATE, duration, dt))


def estimate_sigma(spec: FomSpec, gs: GateSet, model: EnsembleModel, repeats: int = 100, run: int = 0) -> float:
    """Sample standard deviation of repeated FoM measurements of a fixed gate-set."""
    if repeats < 2:
        raise ValidationError("need at least two repeats to estimate a spread")
    if model.noiseless:
        return 0.0
    vals = evaluation.evaluate_repeated(spec, gs, model, repeats, _SIGMA_OFFSET, run)
    return float(np.std(vals, ddof=1))


def nelder_mead(
    objective: Callable,
    x0,
    step,
    max_evals: int,
    stop: Optional[Callable[[], bool]] = None,
):
    """Minimize ``objective`` with the classical simplex method.

    Runs until ``max_evals`` objective calls are spent or ``stop()`` returns
    True (checked before each call). Returns ``(x_best, f_best, n_evals)``;
    ties never displace an earlier best, so a flat objective returns ``x0``.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    step = np.broadcast_to(np.asarray(step, dtype=float), (n,))
    count = 0
    best = [x0.copy(), np.inf]

    def done():
        return count >= max_evals or (stop is not None and stop())

    def f(x):
        nonlocal count
        count += 1
        v = float(objective(x))
        if v < best[1]:
            best[0], best[1] = x.copy(), v
        return v

    simplex = [x0.copy()]
    fvals = [f(x0)]
    for i in range(n):
        if done():
            return best[0], best[1], count
        x = x0.copy()
        x[i] += step[i]
        simplex.append(x)
        fvals.append(f(x))
    simplex = np.array(simplex)
    fvals = np.array(fvals)

    while not done():
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]

        xr = centroid + NM_ALPHA * (centroid - worst)
        fr = f(xr)
        if fvals[0] <= fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[0]:
            if done():
                break
            xe = centroid + NM_GAMMA * (xr - centroid)
            fe = f(xe)
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
            continue
        if done():
            break
        if fr < fvals[-1]:
            xc = centroid + NM_RHO * (xr - centroid)
            fc = f(xc)
            if fc <= fr:
                simplex[-1], fvals[-1] = xc, fc
                continue
        else:
            xc = centroid + NM_RHO * (worst - centroid)
            fc = f(xc)
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
                continue
        for i in range(1, n + 1):
            if done():
                break
            simplex[i] = simplex[0] + NM_SIGMA * (simplex[i] - simplex[0])
            fvals[i] = f(simplex[i])
    return best[0], best[1], count


class _Loop:
    """Mutable state of one closed-loop run: plant drift, baseline, trace."""

    def __init__(self, spec, gs, model, cfg, run, sigma):
        self.spec = spec
        self.gs = gs
        self.model = model
        self.cfg = cfg
        self.run = run
        self.sigma = sigma
        self.ev = evaluation.evaluator(spec)
        self.n_circuits = len(self.ev.gate_lists)
        self.trace = []
        self.superiteration = 0
        self.best_pulse = gs.pulses[OPTIMIZED_GATE]
        self.best_fom = np.inf
        self.best_history = []

    def measure(self, g2: PulseShape, is_reeval=False, is_drift_check=False) -> float:
        """One FoM evaluation; failed normalizations are re-measured."""
        ptms = None
        for _ in range(_MAX_RETRIES):
            idx = len(self.trace)
            self.model = plant.advance_drift(self.model)
            if ptms is None or self.model.drift != plant.DRIFT_NONE:
                ptms = plant.gate_ptms(self.gs.with_pulse(OPTIMIZED_GATE, g2), self.model)
            try:
                value = self.ev(ptms, self.model, plant.shot_rng(self.model, idx, self.run))
            except (NormalizationError, IllConditionedError):
                value = float("nan")
            self.trace.append(
                TraceRow(
                    idx,
                    self.superiteration,
                    self.spec.kind,
                    self.spec.length,
                    self.n_circuits,
                    value,
                    self.sigma,
                    is_reeval,
                    is_drift_check,
                )
            )
            self._after_eval()
            if np.isfinite(value):
                return value
        raise NormalizationError(f"{_MAX_RETRIES} consecutive failed measurements")

    def _after_eval(self):
        self.best_history.append(self.best_fom)

    def drift_check(self):
        every = self.cfg.drift_remeasure_every
        if len(self.trace) % every == 0:
            self.best_fom = self.measure(self.best_pulse, is_drift_check=True)
            self.best_history[-1] = self.best_fom


def dcrab_run(
    spec: FomSpec,
    model: EnsembleModel,
    gs: Optional[GateSet] = None,
    cfg: DcrabConfig = DcrabConfig(),
    seed: int = 0,
    ref_gs: Optional[GateSet] = None,
    on_improvement: Optional[Callable[[PulseShape], None]] = None,
) -> OptimizationRecord:
    """Optimize the G2 pulse of ``gs`` (default: 30 ns calibrated gate-set).

    ``seed`` selects the dCRAB bases and the measurement-noise stream; the
    plant's own seed fixes drift. ``ref_gs`` defaults to ``gs`` with the
    14 ns reference pulse as G2. ``on_improvement`` is called with every
    newly accepted pulse.
    """
    gs = guess_gateset() if gs is None else gs
    guess = gs.pulses[OPTIMIZED_GATE]
    ref_gs = reference_gateset(gs) if ref_gs is None else ref_gs
    sigma = estimate_sigma(spec, gs, model, cfg.sigma_repeats, seed) if not model.noiseless else 0.0

    loop = _Loop(spec, gs, model, cfg, seed, sigma)
    loop.best_fom = loop.measure(guess)
    loop.best_history[-1] = loop.best_fom
    step = cfg.step_fraction * cfg.a_max

    def accept(candidate, f):
        loop.best_pulse, loop.best_fom = candidate, f
        loop.best_history[-1] = f
        if on_improvement is not None:
            on_improvement(candidate)

    for si in range(cfg.superiterations):
        loop.superiteration = si + 1
        rng = np.random.default_rng([int(seed), _BASIS_STREAM, si])
        basis = pulse.sample_basis(rng, guess.duration, cfg.vectors_per_pulse, cfg.n_max_oscillations)
        base = loop.best_pulse
        start = len(loop.trace)
        budget_end = start + cfg.max_evals_per_superiteration

        def stop():
            n = len(loop.trace)
            if n >= budget_end:
                return True
            if n - start >= cfg.stop_window:
                past = loop.best_history[n - cfg.stop_window - 1]
                return not loop.best_fom < past - sigma
            return False

        def objective(c):
            candidate = pulse.clip(pulse.expand(base, basis, c), cfg.a_max)
            f = loop.measure(candidate)
            if f < loop.best_fom - sigma:
                accept(candidate, f)
            elif f < loop.best_fom:
                vals = [f]
                while len(vals) <= cfg.reeval_max and len(loop.trace) < budget_end:
                    vals.append(loop.measure(candidate, is_reeval=True))
                    if not np.mean(vals) < loop.best_fom:
                        break
                f = float(np.mean(vals))
                if f < loop.best_fom:
                    accept(candidate, f)
            if len(loop.trace) < budget_end:
                loop.drift_check()
            return f

        nelder_mead(objective, np.zeros(basis.n_coeffs), step, cfg.max_evals_per_superiteration, stop)

    # final comparison at the plant state reached by the end of the run
    final = loop.model
    reps = cfg.final_repeats
    opt_gs = gs.with_pulse(OPTIMIZED_GATE, loop.best_pulse)
    f_guess = evaluation.evaluate_repeated(spec, gs, final, reps, _FINAL_OFFSET, seed)
    f_ref = evaluation.evaluate_repeated(spec, ref_gs, final, reps, _FINAL_OFFSET + reps, seed)
    f_opt = evaluation.evaluate_repeated(spec, opt_gs, final, reps, _FINAL_OFFSET + 2 * reps, seed)
    try:
        g = gain(f_opt.mean(), f_guess.mean(), f_ref.mean(), cfg.min_separation)
    except UndefinedGainError:
        g = None

    def sd(x):
        return float(np.std(x, ddof=1)) if x.size > 1 else 0.0

    return OptimizationRecord(
        config=cfg,
        spec=spec,
        seed=int(seed),
        plant_seed=int(model.seed),
        sigma=sigma,
        trace=loop.trace,
        best_pulse=loop.best_pulse,
        fom_guess=float(f_guess.mean()),
        fom_guess_std=sd(f_guess),
        fom_ref=float(f_ref.mean()),
        fom_ref_std=sd(f_ref),
        fom_opt=float(f_opt.mean()),
        fom_opt_std=sd(f_opt),
        gain=g,
        n_circuits=loop.n_circuits,
    )
