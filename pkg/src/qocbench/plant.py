"""Simulated spin-ensemble qubit standing in for the optical experiment.

Each ensemble member sees the rotating-frame Hamiltonian
``H = (d/2) sz + (e/2) (ax sx + ay sy)`` with its own detuning ``d`` and
drive scale ``e``. Gates are ensemble-averaged PTMs followed by a per-gate
dephasing of the transverse Bloch components. Readout is a two-level
fluorescence model with binomial projection noise, normalized with the
three-part sequence (Rabi block, |0> reference block, body).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from . import hs
from .errors import NormalizationError, ValidationError
from .gateset import Circuit, CliffordTable, GateSet, default_clifford_table
from .pulse import NS, PulseShape, max_amplitude

MHZ = 2 * np.pi * 1e6
US = 1e-6

RABI_BLOCK_DURATION = 600 * NS
ZERO_BLOCK_PULSES = 20
RABI_SAMPLES_PER_PERIOD = 8
RABI_TAIL_PERIODS = 4

DRIFT_NONE = "none"
DRIFT_RANDOM_WALK = "random-walk"
_DRIFT_BLOCK = 1024
_DRIFT_STREAM = 0xD1F7
_SHOT_STREAM = 0x5107


@dataclass(frozen=True)
class EnsembleMember:
    detuning: float
    rabi_scale: float = 1.0
    weight: float = 1.0


@dataclass(frozen=True)
class EnsembleModel:
    members: tuple
    t2: float = 2 * US
    shots: Optional[int] = 100_000
    contrast: tuple = (1.0, 0.7)
    spam_depolarization: float = 0.03
    drift: str = DRIFT_NONE
    drift_sigma: float = 0.0
    rabi_amplitude: float = field(default_factory=max_amplitude)
    normalize: bool = True
    seed: int = 0
    rabi_multiplier: float = 1.0
    drift_step: int = 0

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValidationError("ensemble needs at least one member")
        w = np.array([m.weight for m in members], dtype=float)
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-12):
            raise ValidationError("member weights must be non-negative and sum to 1")
        if any(m.rabi_scale <= 0 for m in members):
            raise ValidationError("rabi_scale must be positive")
        c0, c1 = self.contrast
        if not c0 > c1 > 0:
            raise ValidationError("contrast must satisfy c0 > c1 > 0")
        if self.shots is not None and self.shots < 1:
            raise ValidationError("shots must be >= 1")
        if not self.t2 > 0:
            raise ValidationError("T2 must be positive")
        if self.drift not in (DRIFT_NONE, DRIFT_RANDOM_WALK):
            raise ValidationError(f"unknown drift mode {self.drift!r}")
        object.__setattr__(self, "members", members)

    @property
    def detunings(self) -> np.ndarray:
        return np.array([m.detuning for m in self.members])

    @property
    def rabi_scales(self) -> np.ndarray:
        return np.array([m.rabi_scale for m in self.members]) * self.rabi_multiplier

    @property
    def weights(self) -> np.ndarray:
        return np.array([m.weight for m in self.members])

    @property
    def rho(self) -> np.ndarray:
        s = self.spam_depolarization
        return (1 - s) * hs.ZERO + s * hs.MIXED

    @property
    def effect(self) -> np.ndarray:
        return hs.ZERO

    @property
    def noiseless(self) -> bool:
        return self.shots is None


def default_ensemble(
    line_spacing: float = 2 * MHZ,
    line_weights: Sequence[float] = (0.3, 0.4, 0.3),
    rabi_spread: float = 0.03,
    rabi_nodes: int = 5,
    rabi_classes: Sequence = ((1.0, 1.0),),
) -> tuple:
    """Detuning lines at ``(-s, 0, +s)`` crossed with a drive-scale distribution.

    The drive-scale distribution is a mixture of Gaussian classes given as
    ``(center, weight)`` pairs, each of relative width ``rabi_spread`` and
    discretized with ``rabi_nodes`` Gauss-Hermite nodes.
    """
    n_lines = len(line_weights)
    offsets = (np.arange(n_lines) - (n_lines - 1) / 2) * line_spacing
    lw = np.asarray(line_weights, dtype=float)
    lw = lw / lw.sum()
    if rabi_spread > 0 and rabi_nodes > 1:
        x, w = hermegauss(rabi_nodes)
        w = w / w.sum()
    else:
        x, w = np.zeros(1), np.ones(1)
    cw = np.array([c[1] for c in rabi_classes], dtype=float)
    cw = cw / cw.sum()
    members = []
    for d, wd in zip(offsets, lw):
        for (center, _), wc in zip(rabi_classes, cw):
            for xi, wi in zip(x, w):
                members.append(EnsembleMember(float(d), float(center * (1 + rabi_spread * xi)), float(wd * wc * wi)))
    total = sum(m.weight for m in members)
    return tuple(replace(m, weight=m.weight / total) for m in members)


def default_model(**overrides) -> EnsembleModel:
    ens_keys = {"line_spacing", "line_weights", "rabi_spread", "rabi_nodes", "rabi_classes"}
    ens = {k: overrides.pop(k) for k in list(overrides) if k in ens_keys}
    return EnsembleModel(members=default_ensemble(**ens), **overrides)


def ideal_model(**overrides) -> EnsembleModel:
    """Single resonant member, no decoherence, no SPAM error, no shot noise."""
    kw = dict(
        members=(EnsembleMember(0.0, 1.0, 1.0),),
        t2=np.inf,
        shots=None,
        spam_depolarization=0.0,
    )
    kw.update(overrides)
    return EnsembleModel(**kw)


# ---------------------------------------------------------------------------
# Dynamics


def _sample_unitaries(pulse: PulseShape, detunings, scales) -> np.ndarray:
    """Per-sample propagators, shape (members, samples, 2, 2)."""
    hx = scales[:, None] * pulse.ax[None, :]
    hy = scales[:, None] * pulse.ay[None, :]
    hz = np.broadcast_to(np.asarray(detunings, dtype=float)[:, None], hx.shape)
    norm = np.sqrt(hx**2 + hy**2 + hz**2)
    half = norm * pulse.dt / 2
    c = np.cos(half)
    # sin(half)/norm with the removable singularity at norm = 0
    s = np.where(norm > 0, np.sin(half) / np.where(norm > 0, norm, 1.0), pulse.dt / 2)
    u = np.empty(hx.shape + (2, 2), dtype=complex)
    u[..., 0, 0] = c - 1j * s * hz
    u[..., 1, 1] = c + 1j * s * hz
    u[..., 0, 1] = -1j * s * (hx - 1j * hy)
    u[..., 1, 0] = -1j * s * (hx + 1j * hy)
    return u


def _time_ordered_product(u: np.ndarray) -> np.ndarray:
    """Reduce axis -3 (time) so that the earliest sample acts first."""
    while u.shape[-3] > 1:
        n = u.shape[-3]
        if n % 2:
            pad = np.broadcast_to(np.eye(2, dtype=complex), u.shape[:-3] + (1, 2, 2))
            u = np.concatenate([u, pad], axis=-3)
        u = u[..., 1::2, :, :] @ u[..., 0::2, :, :]
    return u[..., 0, :, :]


def propagate(pulse: PulseShape, member: EnsembleMember, rabi_multiplier: float = 1.0) -> np.ndarray:
    u = _sample_unitaries(
        pulse, np.array([member.detuning]), np.array([member.rabi_scale * rabi_multiplier])
    )
    return _time_ordered_product(u)[0]


def propagate_ensemble(pulse: PulseShape, model: EnsembleModel) -> np.ndarray:
    return _time_ordered_product(_sample_unitaries(pulse, model.detunings, model.rabi_scales))


def dephasing(duration: float, t2: float) -> np.ndarray:
    g = np.exp(-duration / t2)
    return np.diag([1.0, g, g, 1.0])


def gate_superop(pulse: PulseShape, model: EnsembleModel) -> np.ndarray:
    us = propagate_ensemble(pulse, model)
    avg = np.einsum("m,mjk->jk", model.weights, hs.unitaries_to_ptms(us))
    return dephasing(pulse.duration, model.t2) @ avg


def gate_ptms(gs: GateSet, model: EnsembleModel) -> np.ndarray:
    if gs.pulses is None:
        raise ValidationError("gate-set has no pulse bindings")
    return np.stack([gate_superop(p, model) for p in gs.pulses])


# ---------------------------------------------------------------------------
# Circuits and readout


def circuit_gate_lists(circuits: Sequence[Circuit], table: Optional[CliffordTable] = None) -> list:
    table = table or default_clifford_table()
    return [c.gate_indices(table) for c in circuits]


def true_probabilities(gate_lists, ptms, rho=hs.ZERO, effect=hs.ZERO) -> np.ndarray:
    """Exact <<E| C_i |rho>> for many gate lists at once."""
    ptms = np.asarray(ptms, dtype=float)
    n = len(gate_lists)
    if n == 0:
        return np.zeros(0)
    k = ptms.shape[0]
    lengths = [len(g) for g in gate_lists]
    width = max(lengths)
    idx = np.full((n, width), k, dtype=np.int64)  # index k is the padding identity
    for i, g in enumerate(gate_lists):
        if len(g):
            gi = np.asarray(g, dtype=np.int64)
            if gi.min() < 0 or gi.max() >= k:
                raise ValidationError(f"gate index out of range in circuit {i}")
            idx[i, : len(g)] = gi
    table = np.concatenate([ptms, np.eye(4)[None]], axis=0)
    state = np.tile(np.asarray(rho, dtype=float), (n, 1))
    for col in range(width):
        state = np.einsum("nij,nj->ni", table[idx[:, col]], state)
    return state @ np.asarray(effect, dtype=float)


def _binomial_fraction(p: np.ndarray, shots: Optional[int], rng: np.random.Generator) -> np.ndarray:
    if shots is None:
        return np.asarray(p, dtype=float)
    return rng.binomial(shots, np.clip(p, 0.0, 1.0)) / shots


def shot_rng(model: EnsembleModel, eval_index: int, run: int = 0) -> np.random.Generator:
    """Measurement noise stream for one figure-of-merit evaluation of run ``run``."""
    return np.random.default_rng([int(model.seed), _SHOT_STREAM, int(run), int(eval_index)])


def run_circuit(circuit: Circuit, gs: GateSet, model: EnsembleModel, rng=None) -> float:
    """Single-circuit expectation estimate with projection noise (unnormalized)."""
    ptms = gate_ptms(gs, model)
    p = true_probabilities([circuit.gate_indices()], ptms, model.rho, model.effect)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return float(_binomial_fraction(p, model.shots, rng)[0])


def rabi_times(model: EnsembleModel, duration: float = RABI_BLOCK_DURATION) -> np.ndarray:
    """Rabi-block sample times: ``RABI_SAMPLES_PER_PERIOD`` per nominal period."""
    period = 2 * np.pi / model.rabi_amplitude
    step = period / RABI_SAMPLES_PER_PERIOD
    return np.arange(int(np.floor(duration / step + 1e-9)) + 1) * step


def rabi_trace(model: EnsembleModel, duration: float = RABI_BLOCK_DURATION, a_max=None, times=None):
    """|0> population under constant x drive at ``a_max``, ensemble averaged.

    Returns ``(times, population)``. Coherent oscillations decay towards 1/2
    as ``exp(-t/T2)``.
    """
    if not duration > 0:
        raise ValidationError("Rabi duration must be positive")
    a = model.rabi_amplitude if a_max is None else a_max
    t = rabi_times(replace(model, rabi_amplitude=a), duration) if times is None else np.asarray(times, float)
    omega = model.rabi_scales * a
    delta = model.detunings
    gen = np.sqrt(omega**2 + delta**2)
    # population transfer from |0> for a pure initial state
    ratio = np.where(gen > 0, omega**2 / np.where(gen > 0, gen, 1.0) ** 2, 0.0)
    transfer = ratio[:, None] * np.sin(gen[:, None] * t[None, :] / 2) ** 2
    p_pure = 1 - model.weights @ transfer
    # initial-state purity scales the contrast of the oscillation
    purity = 1 - model.spam_depolarization
    p = 0.5 + purity * (p_pure - 0.5)
    p = 0.5 + (p - 0.5) * np.exp(-t / model.t2)
    return t, p


@dataclass(frozen=True)
class RawRecord:
    rabi_times: np.ndarray
    rabi_trace: np.ndarray
    zero_level: np.ndarray
    body: np.ndarray

    def levels(self) -> tuple:
        """(c0_hat, c_mid_hat, c1_hat) estimated from the calibration blocks."""
        c0 = float(np.mean(self.zero_level))
        n_tail = RABI_SAMPLES_PER_PERIOD * RABI_TAIL_PERIODS
        c_mid = float(np.mean(self.rabi_trace[-n_tail:]))
        return c0, c_mid, 2 * c_mid - c0

    def normalized(self) -> np.ndarray:
        c0, _, c1 = self.levels()
        if not c0 > c1:
            raise NormalizationError(f"contrast collapsed (c0={c0:.6g}, c1={c1:.6g})")
        return (self.body - c1) / (c0 - c1)


def fluorescence(p, model: EnsembleModel, rng: np.random.Generator) -> np.ndarray:
    c0, c1 = model.contrast
    return c1 + (c0 - c1) * _binomial_fraction(np.asarray(p, dtype=float), model.shots, rng)


def measure_record(gate_lists, ptms, model: EnsembleModel, rng: np.random.Generator):
    """Simulate the three-part sequence; return ``(RawRecord, normalized body)``."""
    t, p_rabi = rabi_trace(model)
    p_zero = np.full(ZERO_BLOCK_PULSES, float(model.effect @ model.rho))
    p_body = true_probabilities(gate_lists, ptms, model.rho, model.effect)
    record = RawRecord(
        t,
        fluorescence(p_rabi, model, rng),
        fluorescence(p_zero, model, rng),
        fluorescence(p_body, model, rng),
    )
    return record, record.normalized()


def measure(gate_lists, ptms, model: EnsembleModel, rng: np.random.Generator) -> np.ndarray:
    """Normalized expectation values for a batch of circuits."""
    if model.normalize:
        return measure_record(gate_lists, ptms, model, rng)[1]
    p = true_probabilities(gate_lists, ptms, model.rho, model.effect)
    return _binomial_fraction(p, model.shots, rng)


# ---------------------------------------------------------------------------
# Drift


def _drift_increments(seed: int, start: int, count: int) -> np.ndarray:
    out = np.empty(count)
    pos = 0
    step = start
    while pos < count:
        block, offset = divmod(step, _DRIFT_BLOCK)
        z = np.random.default_rng([int(seed), _DRIFT_STREAM, block]).standard_normal(_DRIFT_BLOCK)
        take = min(_DRIFT_BLOCK - offset, count - pos)
        out[pos : pos + take] = z[offset : offset + take]
        pos += take
        step += take
    return out


def advance_drift(model: EnsembleModel, steps: int = 1) -> EnsembleModel:
    """Random-walk the global drive-scale multiplier by ``steps`` steps."""
    if model.drift == DRIFT_NONE or model.drift_sigma == 0 or steps == 0:
        return model
    inc = _drift_increments(model.seed, model.drift_step, steps)
    return replace(
        model,
        rabi_multiplier=model.rabi_multiplier + model.drift_sigma * float(inc.sum()),
        drift_step=model.drift_step + steps,
    )
