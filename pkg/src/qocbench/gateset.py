"""Target gate-set, SPAM set, single-qubit Clifford synthesis and circuit sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import lru_cache
from itertools import product
from typing import Optional

import numpy as np

from . import hs
from .errors import ConsistencyError, LookupFailure, ValidationError
from .pulse import DEFAULT_DT, GUESS_DURATION, PulseShape, calibrated_amplitude, rectangular

GATE_NAMES = ("I", "X/2", "-X/2", "Y/2", "-Y/2", "X", "Y")
# (angle, axis) per gate in the rotation convention of ``hs.rotation``
GATE_ROTATIONS = (
    (0.0, (0, 0, 1)),
    (np.pi / 2, (1, 0, 0)),
    (-np.pi / 2, (1, 0, 0)),
    (np.pi / 2, (0, 1, 0)),
    (-np.pi / 2, (0, 1, 0)),
    (np.pi, (1, 0, 0)),
    (np.pi, (0, 1, 0)),
)
N_GATES = len(GATE_NAMES)
OPTIMIZED_GATE = 2
SPAM_INDICES = (0, 1, 3, 5)


def target_unitary(k: int) -> np.ndarray:
    angle, axis = GATE_ROTATIONS[k]
    return hs.rotation(angle, axis)


@dataclass(frozen=True)
class GateSet:
    targets: tuple
    pulses: Optional[tuple] = None

    def with_pulse(self, index: int, pulse: PulseShape) -> "GateSet":
        if self.pulses is None:
            raise ValidationError("gate-set has no pulse bindings")
        pulses = list(self.pulses)
        pulses[index] = pulse
        return replace(self, pulses=tuple(pulses))

    def with_pulses(self, pulses) -> "GateSet":
        pulses = tuple(pulses)
        if len(pulses) != N_GATES:
            raise ValidationError(f"need {N_GATES} pulses, got {len(pulses)}")
        return replace(self, pulses=pulses)


def build_gateset(pulses=None) -> GateSet:
    targets = tuple(hs.unitary_to_ptm(target_unitary(k)) for k in range(N_GATES))
    for t in targets:
        t.setflags(write=False)
    gs = GateSet(targets)
    return gs.with_pulses(pulses) if pulses is not None else gs


def calibrated_pulse(k: int, duration: float = GUESS_DURATION, dt: float = DEFAULT_DT) -> PulseShape:
    """Resonant rectangular pulse realizing target gate ``k`` in ``duration``."""
    angle, axis = GATE_ROTATIONS[k]
    if angle == 0:
        return rectangular(0.0, duration, dt)
    phase = np.arctan2(axis[1], axis[0]) + (np.pi if angle < 0 else 0.0)
    return rectangular(calibrated_amplitude(angle, duration), duration, dt, phase)


def calibrated_gateset(
    duration: float = GUESS_DURATION,
    dt: float = DEFAULT_DT,
    idle_duration=None,
    pulse_overrides=None,
) -> GateSet:
    """Targets bound to calibrated rectangular pulses of a common length.

    The idle gate is a zero-amplitude pulse of ``idle_duration`` (one sample
    by default). ``pulse_overrides`` maps gate index to a replacement pulse.
    """
    pulses = [calibrated_pulse(k, duration, dt) for k in range(N_GATES)]
    pulses[0] = rectangular(0.0, dt if idle_duration is None else idle_duration, dt)
    for k, p in (pulse_overrides or {}).items():
        pulses[k] = p
    return build_gateset(pulses)


@dataclass(frozen=True)
class SpamSet:
    indices: tuple = SPAM_INDICES

    def ptms(self, gs: GateSet) -> list:
        return [gs.targets[i] for i in self.indices]


def spam_matrices(gate_ptms, rho=hs.ZERO, effect=hs.ZERO, spam: SpamSet = SpamSet()):
    """Return (A, B): rows of A are <<E|F_i, columns of B are F_j|rho>>."""
    fs = [np.asarray(gate_ptms[i]) for i in spam.indices]
    a = np.stack([np.asarray(effect) @ f for f in fs])
    b = np.stack([f @ np.asarray(rho) for f in fs], axis=1)
    return a, b


# ---------------------------------------------------------------------------
# Clifford group


@dataclass(frozen=True)
class CliffordTable:
    decompositions: tuple
    composed: np.ndarray

    def __len__(self):
        return len(self.decompositions)

    @property
    def mean_length(self) -> float:
        return float(np.mean([len(d) for d in self.decompositions]))

    @property
    def identity_index(self) -> int:
        return 0

    def find(self, ptm, atol: float = 1e-6) -> int:
        dist = np.abs(self.composed - np.asarray(ptm)[None]).max(axis=(1, 2))
        k = int(np.argmin(dist))
        if dist[k] > atol:
            raise LookupFailure("matrix is not an element of the Clifford group")
        return k

    def multiply(self, first: int, second: int) -> int:
        """Index of the Clifford equal to ``first`` followed by ``second``."""
        return int(self._mult_table()[second, first])

    def _mult_table(self) -> np.ndarray:
        tab = self.__dict__.get("_mult")
        if tab is None:
            n = len(self)
            tab = np.empty((n, n), dtype=np.int64)
            for a in range(n):
                for b in range(n):
                    tab[a, b] = self.find(self.composed[a] @ self.composed[b], atol=1e-9)
            object.__setattr__(self, "_mult", tab)
        return tab


def _key(m: np.ndarray) -> tuple:
    return tuple(np.rint(m * 4).astype(int).ravel())


def build_clifford_table(gs: GateSet) -> CliffordTable:
    """Breadth-first shortest decompositions of the 24 Cliffords.

    The idle gate decomposes the identity and is otherwise unused. Among
    equally short decompositions the lexicographically smallest index list
    wins, which makes the table deterministic.
    """
    gens = list(range(1, N_GATES))
    decomps = {_key(np.eye(4)): ((0,), np.eye(4))}
    length = 0
    while len(decomps) < 24 and length < 6:
        length += 1
        for seq in product(gens, repeat=length):
            m = hs.compose([gs.targets[k] for k in seq])
            key = _key(m)
            if key not in decomps:
                decomps[key] = (seq, m)
    if len(decomps) != 24:
        raise ConsistencyError(f"generated {len(decomps)} Cliffords, expected 24")
    entries = sorted(decomps.values(), key=lambda e: (len(e[0]), e[0] != (0,), e[0]))
    table = CliffordTable(
        tuple(tuple(d) for d, _ in entries), np.stack([m for _, m in entries])
    )
    table.composed.setflags(write=False)
    _verify_table(table, gs)
    return table


def _verify_table(table: CliffordTable, gs: GateSet) -> None:
    n = len(table)
    for i in range(n):
        for j in range(i + 1, n):
            if np.allclose(table.composed[i], table.composed[j], atol=1e-9):
                raise ConsistencyError(f"Cliffords {i} and {j} coincide")
    for d, m in zip(table.decompositions, table.composed):
        if not np.allclose(hs.compose([gs.targets[k] for k in d]), m, atol=1e-12):
            raise ConsistencyError(f"decomposition {d} does not compose to its PTM")
    try:
        table._mult_table()
    except LookupFailure as exc:
        raise ConsistencyError("Clifford table is not closed under composition") from exc


@lru_cache(maxsize=1)
def default_clifford_table() -> CliffordTable:
    return build_clifford_table(build_gateset())


def invert_clifford(table: CliffordTable, product_ptm) -> int:
    """Clifford that returns ``product_ptm |0>>`` to ``|0>>``.

    Ties are broken by the smallest Frobenius distance of the combined map
    from the identity, i.e. the exact inverse when it exists.
    """
    p = np.asarray(product_ptm, dtype=float)
    dist = np.abs(table.composed - p[None]).max(axis=(1, 2))
    if dist.min() > 1e-6:
        raise LookupFailure("product is not within 1e-6 of a Clifford group element")
    combined = table.composed @ p[None]
    restores = np.abs(hs.ZERO @ combined @ hs.ZERO - 1) < 1e-6
    frob = np.linalg.norm(combined - np.eye(4)[None], axis=(1, 2))
    frob[~restores] = np.inf
    return int(np.argmin(frob))


# ---------------------------------------------------------------------------
# Circuits

GATE_STRING = "gate-string"
CLIFFORD_STRING = "clifford-string"


@dataclass(frozen=True)
class Circuit:
    kind: str
    indices: tuple
    recovery: Optional[int] = None
    seed: Optional[object] = None

    @property
    def length(self) -> int:
        return len(self.indices)

    def gate_indices(self, table: Optional[CliffordTable] = None) -> tuple:
        """Physical gate sequence in time order."""
        if self.kind == GATE_STRING:
            return self.indices
        table = table or default_clifford_table()
        seq = []
        for c in self.indices:
            seq.extend(table.decompositions[c])
        if self.recovery is not None:
            seq.extend(table.decompositions[self.recovery])
        return tuple(seq)

    def to_record(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "indices": list(self.indices),
            "recovery": self.recovery,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)

    @classmethod
    def from_record(cls, rec: dict) -> "Circuit":
        kind = rec["kind"]
        if kind not in (GATE_STRING, CLIFFORD_STRING):
            raise ValidationError(f"unknown circuit kind {kind!r}")
        seed = rec.get("seed")
        if isinstance(seed, list):
            seed = tuple(seed)
        return cls(kind, tuple(int(i) for i in rec["indices"]), rec.get("recovery"), seed)


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def sample_clifford_circuit(m: int, rng, table: Optional[CliffordTable] = None) -> Circuit:
    if m < 0:
        raise ValidationError("number of Cliffords must be >= 0")
    table = table or default_clifford_table()
    seed = rng if not isinstance(rng, np.random.Generator) else None
    idx = tuple(int(i) for i in _rng(rng).integers(0, len(table), size=m))
    net = table.identity_index
    for c in idx:
        net = table.multiply(net, c)
    recovery = invert_clifford(table, table.composed[net])
    return Circuit(CLIFFORD_STRING, idx, recovery, seed)


def sample_gate_string(length: int, rng) -> Circuit:
    if length < 0:
        raise ValidationError("gate-string length must be >= 0")
    seed = rng if not isinstance(rng, np.random.Generator) else None
    idx = tuple(int(i) for i in _rng(rng).integers(0, N_GATES, size=length))
    return Circuit(GATE_STRING, idx, None, seed)


def circuit_seed(seed: int, index: int, stream: int = 0) -> tuple:
    """Entropy for the ``index``-th circuit of a family; independent substreams."""
    return (int(seed), int(stream), int(index))


def sample_circuits(kind: str, length: int, count: int, seed: int, stream: int = 0) -> list:
    sampler = sample_clifford_circuit if kind == CLIFFORD_STRING else sample_gate_string
    out = []
    for i in range(count):
        s = circuit_seed(seed, i, stream)
        c = sampler(length, np.random.default_rng(list(s)))
        out.append(replace(c, seed=s))
    return out


# Average physical gates per Clifford used to pair gate-string and Clifford
# lengths; the synthesized table itself averages 1.875.
GATES_PER_CLIFFORD = 1.8


def matched_gate_length(n_cliffords: int, ratio: float = GATES_PER_CLIFFORD) -> int:
    """Gate-string length comparable to ``n_cliffords`` random Cliffords."""
    return int(round(n_cliffords * ratio))


def lgst_circuits(spam: SpamSet = SpamSet()) -> list:
    """Gate strings for F_i G_k F_j (all i, j, k) followed by the bare F_i.

    Circuits are in time order, so F_j comes first. The first ``7 * 16`` entries
    are ordered by (k, i, j).
    """
    out = []
    for k in range(N_GATES):
        for fi in spam.indices:
            for fj in spam.indices:
                out.append(Circuit(GATE_STRING, (fj, k, fi)))
    for fi in spam.indices:
        out.append(Circuit(GATE_STRING, (fi,)))
    return out


def qpt_circuits(gate: int = OPTIMIZED_GATE, spam: SpamSet = SpamSet()) -> list:
    return [Circuit(GATE_STRING, (fj, gate, fi)) for fi in spam.indices for fj in spam.indices]
