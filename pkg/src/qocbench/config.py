"""Run configuration: nested YAML sections with defaults for every key."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import foms, optimizer, plant, pulse
from .errors import ValidationError
from .gateset import calibrated_gateset

OUTPUT_ENV = "QOCBENCH_OUTPUT"
DEFAULT_OUTPUT_ROOT = "runs"


@dataclass
class PlantConfig:
    seed: int = 0
    shots: Optional[int] = 100_000
    t2_us: float = 2.0
    line_spacing_mhz: float = 2.0
    line_weights: list = field(default_factory=lambda: [0.3, 0.4, 0.3])
    rabi_spread: float = 0.03
    rabi_nodes: int = 5
    contrast: list = field(default_factory=lambda: [1.0, 0.7])
    spam_depolarization: float = 0.03
    drift: str = plant.DRIFT_NONE
    drift_sigma: float = 0.0
    normalize: bool = True


@dataclass
class GatesetConfig:
    dt_ns: float = 0.25
    guess_duration_ns: float = 30.0
    reference_duration_ns: float = 14.0


@dataclass
class FomConfig:
    method: str = "orbit"
    L: Optional[int] = None
    N: int = 300
    circuit_seed: int = 0


@dataclass
class OptimizerConfig:
    seed: int = 0
    superiterations: int = 3
    vectors_per_pulse: int = 2
    n_max_oscillations: int = 4
    stop_window: int = 200
    reeval_max: int = 3
    drift_remeasure_every: int = 40
    max_evals_per_superiteration: int = 600
    step_fraction: float = 0.1
    sigma_repeats: int = 100
    final_repeats: int = 20
    min_separation: float = 1e-9


@dataclass
class AnalysisConfig:
    sweep_points: int = 21
    sweep_min: float = 0.5
    sweep_max: float = 1.5
    repeats: int = 20
    eval_circuit_seed: int = 1


@dataclass
class RbConfig:
    lengths: list = field(default_factory=lambda: [1, 2, 3, 4, 6, 8, 10, 12, 14, 16, 18])
    circuits: int = 300
    seed: int = 0


@dataclass
class OutputConfig:
    root: Optional[str] = None


@dataclass
class RunConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    gateset: GatesetConfig = field(default_factory=GatesetConfig)
    fom: FomConfig = field(default_factory=FomConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    rb: RbConfig = field(default_factory=RbConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def snapshot(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    # --- derived objects ---------------------------------------------------

    @property
    def dt(self) -> float:
        return self.gateset.dt_ns * pulse.NS

    @property
    def a_max(self) -> float:
        return pulse.max_amplitude(self.gateset.reference_duration_ns * pulse.NS)

    def model(self) -> plant.EnsembleModel:
        p = self.plant
        return plant.default_model(
            line_spacing=p.line_spacing_mhz * plant.MHZ,
            line_weights=tuple(p.line_weights),
            rabi_spread=p.rabi_spread,
            rabi_nodes=p.rabi_nodes,
            t2=p.t2_us * plant.US,
            shots=p.shots,
            contrast=tuple(p.contrast),
            spam_depolarization=p.spam_depolarization,
            drift=p.drift,
            drift_sigma=p.drift_sigma,
            rabi_amplitude=self.a_max,
            normalize=p.normalize,
            seed=p.seed,
        )

    def guess_gateset(self):
        return calibrated_gateset(self.gateset.guess_duration_ns * pulse.NS, self.dt)

    def reference_gateset(self):
        return optimizer.reference_gateset(self.guess_gateset(), self.gateset.reference_duration_ns * pulse.NS)

    def fom_spec(self, method: Optional[str] = None, length: Optional[int] = None) -> foms.FomSpec:
        f = self.fom
        return foms.FomSpec(
            (method or f.method).upper(),
            length if length is not None else f.L,
            n_circuits=f.N,
            seed=f.circuit_seed,
        )

    def dcrab(self) -> optimizer.DcrabConfig:
        kw = {k: v for k, v in asdict(self.optimizer).items() if k != "seed"}
        return optimizer.DcrabConfig(a_max=self.a_max, **kw)

    def output_root(self, override: Optional[str] = None) -> Path:
        if override:
            return Path(override)
        if self.output.root:
            return Path(self.output.root)
        return Path(os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT_ROOT)


_SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}


def _coerce(section: str, key: str, default, value):
    where = f"{section}.{key}"
    if value is None:
        if default is None or key in ("shots", "L", "root"):
            return None
        raise ValidationError(f"{where} may not be null")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValidationError(f"{where} must be true or false")
        return value
    if isinstance(default, list) or isinstance(value, list):
        if not isinstance(value, list):
            raise ValidationError(f"{where} must be a list")
        return list(value)
    expected = type(default) if default is not None else None
    if key in ("shots", "L"):
        expected = int
    if key == "root":
        expected = str
    try:
        if expected is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if expected is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if expected is str:
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ValidationError(f"{where} has wrong type ({type(value).__name__})") from None
    return value


def from_dict(data: Optional[dict]) -> RunConfig:
    """Build a config, rejecting unknown sections and keys."""
    data = data or {}
    if not isinstance(data, dict):
        raise ValidationError("config root must be a mapping")
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ValidationError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    sections = {}
    for name, factory in _SECTIONS.items():
        obj = factory()
        given = data.get(name) or {}
        if not isinstance(given, dict):
            raise ValidationError(f"section {name!r} must be a mapping")
        defaults = asdict(obj)
        bad = set(given) - set(defaults)
        if bad:
            raise ValidationError(f"unknown key(s) in {name}: {', '.join(sorted(bad))}")
        for k, v in given.items():
            setattr(obj, k, _coerce(name, k, defaults[k], v))
        sections[name] = obj
    cfg = RunConfig(**sections)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Construct every derived object once so bad values fail before a run starts."""
    if cfg.fom.method.upper() not in foms.FOM_KINDS:
        raise ValidationError(f"fom.method must be one of {', '.join(k.lower() for k in foms.FOM_KINDS)}")
    if not cfg.gateset.dt_ns > 0:
        raise ValidationError("gateset.dt_ns must be positive")
    if cfg.analysis.sweep_points < 5:
        raise ValidationError("analysis.sweep_points must be >= 5")
    if cfg.analysis.repeats < 2:
        raise ValidationError("analysis.repeats must be >= 2")
    if len(set(cfg.rb.lengths)) < 3 or cfg.rb.circuits < 1:
        raise ValidationError("rb needs >= 3 distinct lengths and >= 1 circuit")
    cfg.model()
    cfg.dcrab()
    cfg.fom_spec()
    cfg.guess_gateset()


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError(f"config {path} is not valid YAML: {exc}") from exc
    return from_dict(data)


_COMMENTS = {
    "plant": "simulated ensemble qubit",
    "gateset": "pulse grid and rectangular pulse durations",
    "fom": "figure of merit; L null picks 18 for rlgst and 10 for orbit",
    "optimizer": "dCRAB / Nelder-Mead closed loop",
    "analysis": "sweeps (scale of the calibrated guess amplitude) and cross-evaluation",
    "rb": "randomized benchmarking experiment",
    "output": f"run directory root; null uses ${OUTPUT_ENV}, then ./{DEFAULT_OUTPUT_ROOT}",
}


def reference_text() -> str:
    """Every key with its default value, as a loadable config file."""
    out = ["# qocbench configuration reference: all keys and their defaults"]
    for name, factory in _SECTIONS.items():
        out.append("")
        out.append(f"# {_COMMENTS[name]}")
        out.append(yaml.safe_dump({name: asdict(factory())}, sort_keys=False, default_flow_style=False).rstrip())
    return "\n".join(out) + "\n"


def sweep_scales(cfg: RunConfig) -> np.ndarray:
    a = cfg.analysis
    return np.linspace(a.sweep_min, a.sweep_max, a.sweep_points)


if __name__ == "__main__":
    print(reference_text(), end="")
