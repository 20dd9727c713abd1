"""Measure a figure of merit (or an RB experiment) on the simulated plant."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import foms, plant
from .gateset import (
    CLIFFORD_STRING,
    GATE_STRING,
    N_GATES,
    GateSet,
    build_gateset,
    default_clifford_table,
    lgst_circuits,
    qpt_circuits,
    sample_circuits,
)
from .plant import EnsembleModel

RB_LENGTHS = (1, 2, 3, 4, 6, 8, 10, 12, 14, 16, 18)
RB_CIRCUITS = 300

_TARGETS = build_gateset().targets


class FomEvaluator:
    """Circuits, cached linear algebra and the FoM formula for one ``FomSpec``.

    Random circuit families (RLGST, ORBIT) are drawn once from ``spec.seed``
    and reused for every evaluation, so evaluations differ only by
    measurement noise and plant drift.
    """

    def __init__(self, spec: foms.FomSpec, targets: Sequence = _TARGETS):
        self.spec = spec
        self.targets = targets
        table = default_clifford_table()
        kind = spec.kind
        if kind == foms.QPT:
            self.circuits = qpt_circuits(spec.target_gate)
        elif kind in (foms.LGST, foms.GTILDE):
            self.circuits = lgst_circuits()
        elif kind == foms.ORBIT:
            self.circuits = sample_circuits(CLIFFORD_STRING, spec.length, spec.n_circuits, spec.seed)
        else:
            self.circuits = sample_circuits(GATE_STRING, spec.length, spec.n_circuits, spec.seed)
        self.gate_lists = [c.gate_indices(table) for c in self.circuits]
        self._solver = foms.RlgstSolver(self.gate_lists, targets) if kind == foms.RLGST else None

    def expectations(self, ptms, model: EnsembleModel, rng: np.random.Generator) -> np.ndarray:
        return plant.measure(self.gate_lists, ptms, model, rng)

    def from_expectations(self, p) -> float:
        p = np.asarray(p, dtype=float)
        kind = self.spec.kind
        if kind == foms.QPT:
            return foms.fom_qpt(p.reshape(4, 4), self.targets[self.spec.target_gate], self.targets)
        if kind in (foms.LGST, foms.GTILDE):
            gtilde = p[: N_GATES * 16].reshape(N_GATES, 4, 4)
            if kind == foms.GTILDE:
                return foms.fom_gtilde(gtilde, self.targets)
            single = p[N_GATES * 16 :]
            est = foms.lgst_estimate(gtilde, single, single, self.targets)
            return foms.fom_lgst(est, self.targets)
        if kind == foms.ORBIT:
            return foms.fom_orbit(p)
        return foms.fom_rlgst(self._solver.solve(p))

    def __call__(self, ptms, model: EnsembleModel, rng: np.random.Generator) -> float:
        return self.from_expectations(self.expectations(ptms, model, rng))


@lru_cache(maxsize=32)
def evaluator(spec: foms.FomSpec) -> FomEvaluator:
    return FomEvaluator(spec)


def evaluate(spec: foms.FomSpec, gs: GateSet, model: EnsembleModel, eval_index: int = 0, run: int = 0) -> float:
    """One FoM measurement of the gate-set, noise drawn from ``(model.seed, run, eval_index)``."""
    ptms = plant.gate_ptms(gs, model)
    return evaluator(spec)(ptms, model, plant.shot_rng(model, eval_index, run))


def evaluate_repeated(
    spec: foms.FomSpec, gs: GateSet, model: EnsembleModel, repeats: int, first_index: int = 0, run: int = 0
) -> np.ndarray:
    """``repeats`` independent measurements of a fixed gate-set (no drift between them)."""
    ev = evaluator(spec)
    ptms = plant.gate_ptms(gs, model)
    return np.array([ev(ptms, model, plant.shot_rng(model, first_index + i, run)) for i in range(repeats)])


@dataclass
class RbExperiment:
    lengths: tuple = RB_LENGTHS
    n_circuits: int = RB_CIRCUITS
    seed: int = 0
    gate_lists: dict = field(init=False, repr=False)

    def __post_init__(self):
        table = default_clifford_table()
        self.gate_lists = {}
        for j, m in enumerate(self.lengths):
            circs = sample_circuits(CLIFFORD_STRING, m, self.n_circuits, self.seed, stream=1000 + j)
            self.gate_lists[m] = [c.gate_indices(table) for c in circs]

    def survivals(self, ptms, model: EnsembleModel, rng: np.random.Generator) -> np.ndarray:
        """Mean normalized survival per length; one measurement sequence covers all lengths."""
        flat = [g for m in self.lengths for g in self.gate_lists[m]]
        p = plant.measure(flat, ptms, model, rng).reshape(len(self.lengths), self.n_circuits)
        return p.mean(axis=1)

    def run(self, ptms, model: EnsembleModel, rng: np.random.Generator) -> foms.RbFit:
        return foms.rb_fit(self.lengths, self.survivals(ptms, model, rng))
