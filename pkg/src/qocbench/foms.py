"""Gate-set figures of merit computed from normalized expectation values.

All functions here are pure: they take measured numbers (and the ideal
targets) and return estimates or scalars. Circuit generation and the
plant-facing evaluation loop live in :mod:`qocbench.evaluation`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from . import hs
from .errors import IllConditionedError, ValidationError
from .gateset import N_GATES, OPTIMIZED_GATE, SpamSet, spam_matrices

QPT = "QPT"
LGST = "LGST"
GTILDE = "GTILDE"
RLGST = "RLGST"
ORBIT = "ORBIT"
RB = "RB"
FOM_KINDS = (QPT, LGST, GTILDE, RLGST, ORBIT)

GRAM_CONDITION_LIMIT = 1e6
RB_OFFSET = 0.5


@dataclass(frozen=True)
class FomSpec:
    """Which figure of merit to evaluate.

    ``length`` is the gate-string length for RLGST and the number of random
    Cliffords for ORBIT; other kinds ignore it, as they ignore ``n_circuits``.
    ``seed`` fixes the family of random circuits.
    """

    kind: str
    length: Optional[int] = None
    n_circuits: int = 300
    target_gate: int = OPTIMIZED_GATE
    seed: int = 0

    def __post_init__(self):
        kind = self.kind.upper()
        if kind in ("G~", "GT", "G_TILDE"):
            kind = GTILDE
        if kind not in FOM_KINDS:
            raise ValidationError(f"unknown figure of merit {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.n_circuits < 1:
            raise ValidationError("n_circuits must be >= 1")
        if kind in (RLGST, ORBIT):
            if self.length is None:
                object.__setattr__(self, "length", 18 if kind == RLGST else 10)
            if self.length < 1:
                raise ValidationError(f"{kind} needs a circuit length >= 1")

    @property
    def label(self) -> str:
        if self.kind in (RLGST, ORBIT):
            return f"{self.kind}(L={self.length})"
        return self.kind


@dataclass(frozen=True)
class FomValue:
    value: float
    std: float = 0.0
    n: int = 1


def _ideal(targets: Sequence, spam: SpamSet = SpamSet()):
    a, b = spam_matrices(targets, hs.ZERO, hs.ZERO, spam)
    return a, b


def frob(x) -> float:
    x = np.asarray(x)
    return float(np.sqrt(np.sum(np.abs(x) ** 2)))


# ---------------------------------------------------------------------------
# QPT


def qpt_ptm(p, targets: Sequence, spam: SpamSet = SpamSet()) -> np.ndarray:
    """Linear-inversion PTM assuming ideal preparation and measurement."""
    a, b = _ideal(targets, spam)
    return np.linalg.solve(a, np.linalg.solve(b.T, np.asarray(p, float).T).T)


def fom_qpt(p, target, targets: Sequence, spam: SpamSet = SpamSet()) -> float:
    """Frobenius distance between reconstructed and target process matrices.

    ``p[i, j]`` holds <<E|F_i G F_j|rho>>.
    """
    chi = hs.ptm_to_chi(qpt_ptm(p, targets, spam))
    chi_t = hs.ptm_to_chi(target)
    return frob(chi - chi_t)


# ---------------------------------------------------------------------------
# LGST and G~


@dataclass(frozen=True)
class LgstEstimates:
    gates: np.ndarray
    rho_hat: np.ndarray
    E_hat: np.ndarray

    @property
    def spam_outer(self) -> np.ndarray:
        return np.outer(self.rho_hat, self.E_hat)

    def predict(self, spam: SpamSet = SpamSet()) -> np.ndarray:
        """Expectation matrices p_ijk implied by the estimates."""
        a, b = spam_matrices(self.gates, self.rho_hat, self.E_hat, spam)
        return np.einsum("ia,kab,bj->kij", a, self.gates, b)


def target_expectation_matrices(targets: Sequence, spam: SpamSet = SpamSet()) -> np.ndarray:
    a, b = _ideal(targets, spam)
    return np.einsum("ia,kab,bj->kij", a, np.asarray(targets), b)


def lgst_estimate(gtilde, rho_tilde, e_tilde, targets: Sequence, spam: SpamSet = SpamSet()) -> LgstEstimates:
    """Linear-inversion GST with a perfect idle, gauge-fixed to the target frame.

    ``gtilde[k]`` is the measured matrix (p_ijk)_ij; ``gtilde[0]`` doubles as
    the Gram matrix. ``rho_tilde[i] = e_tilde[i] = <<E|F_i|rho>>``.
    """
    gtilde = np.asarray(gtilde, dtype=float)
    gram = gtilde[0]
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > GRAM_CONDITION_LIMIT:
        raise IllConditionedError(f"Gram matrix condition number {cond:.3g} exceeds {GRAM_CONDITION_LIMIT:g}")
    gates = np.linalg.solve(gram, gtilde)
    rho_hat = np.linalg.solve(gram, np.asarray(rho_tilde, float))
    e_hat = np.asarray(e_tilde, float)
    _, b_t = _ideal(targets, spam)
    b_inv = np.linalg.inv(b_t)
    return LgstEstimates(b_t @ gates @ b_inv, b_t @ rho_hat, e_hat @ b_inv)


def fom_lgst(est: LgstEstimates, targets: Sequence) -> float:
    t = np.asarray(targets)
    spam_t = np.outer(hs.ZERO, hs.ZERO)
    sq = np.sum((est.gates - t) ** 2) + np.sum((est.spam_outer - spam_t) ** 2)
    return float(np.sqrt(sq))


def fom_gtilde(gtilde, targets: Sequence, spam: SpamSet = SpamSet()) -> float:
    diff = np.asarray(gtilde, float) - target_expectation_matrices(targets, spam)
    return frob(diff)


# ---------------------------------------------------------------------------
# ORBIT


def fom_orbit(survivals) -> float:
    s = np.asarray(survivals, dtype=float)
    if s.size == 0:
        raise ValidationError("need at least one survival probability")
    return float(1.0 - s.mean())


# ---------------------------------------------------------------------------
# RLGST

N_GATE_PARAMS = 16 * N_GATES
N_PARAMS = N_GATE_PARAMS + 8


@dataclass(frozen=True)
class RlgstErrors:
    gate_errors: np.ndarray
    rho_error: np.ndarray
    povm_error: np.ndarray

    @classmethod
    def from_vector(cls, x) -> "RlgstErrors":
        x = np.asarray(x, dtype=float)
        return cls(
            x[:N_GATE_PARAMS].reshape(N_GATES, 4, 4),
            x[N_GATE_PARAMS : N_GATE_PARAMS + 4],
            x[N_GATE_PARAMS + 4 :],
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.gate_errors.ravel(), self.rho_error, self.povm_error])


def rlgst_design(gate_lists, targets: Sequence, rho=hs.ZERO, effect=hs.ZERO):
    """First-order sensitivity of each circuit to the error parameters.

    Returns ``(A, p_ideal)`` with ``A`` of shape (N, 120): for circuit ``i``,
    ``p_i ~ p_ideal_i + A[i] @ x`` where ``x`` stacks the seven 4x4 gate error
    matrices ``e_k`` (row-major, acting as ``(1 + e_k) T_k``), then the
    preparation error vector ``v_rho`` and the effect error vector ``v_E``.
    """
    n = len(gate_lists)
    if n == 0:
        raise ValidationError("RLGST needs at least one circuit")
    t = np.concatenate([np.asarray(targets, float), np.eye(4)[None]], axis=0)
    width = max((len(g) for g in gate_lists), default=0)
    idx = np.full((n, width), N_GATES, dtype=np.int64)
    for i, g in enumerate(gate_lists):
        idx[i, : len(g)] = g
    # forward states s_l after gate l
    states = np.empty((width + 1, n, 4))
    states[0] = rho
    for l in range(width):
        states[l + 1] = np.einsum("nij,nj->ni", t[idx[:, l]], states[l])
    # backward effects a_l = (T_L ... T_{l+1})^T E
    effects = np.empty((width + 1, n, 4))
    effects[width] = effect
    for l in range(width - 1, -1, -1):
        effects[l] = np.einsum("nji,nj->ni", t[idx[:, l]], effects[l + 1])
    a = np.zeros((n, N_GATES + 1, 4, 4))
    rows = np.arange(n)
    for l in range(width):
        outer = effects[l + 1][:, :, None] * states[l + 1][:, None, :]
        np.add.at(a, (rows, idx[:, l]), outer)
    design = np.concatenate(
        [a[:, :N_GATES].reshape(n, -1), effects[0], states[width]], axis=1
    )
    p_ideal = states[width] @ effect
    return design, p_ideal


@dataclass
class RlgstSolver:
    """Cached min-norm least-squares solver for a fixed circuit family."""

    gate_lists: list
    targets: Sequence
    rcond: float = 1e-10
    design: np.ndarray = field(init=False, repr=False)
    p_ideal: np.ndarray = field(init=False, repr=False)
    pinv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.design, self.p_ideal = rlgst_design(self.gate_lists, self.targets)
        self.pinv = np.linalg.pinv(self.design, rcond=self.rcond)

    def solve(self, p) -> RlgstErrors:
        p = np.asarray(p, dtype=float)
        if p.shape != self.p_ideal.shape:
            raise ValidationError(f"expected {self.p_ideal.size} expectation values, got {p.size}")
        return RlgstErrors.from_vector(self.pinv @ (p - self.p_ideal))

    def predict(self, errors: RlgstErrors) -> np.ndarray:
        return self.p_ideal + self.design @ errors.to_vector()


def rlgst_estimate(gate_lists, p, targets: Sequence) -> RlgstErrors:
    return RlgstSolver(list(gate_lists), targets).solve(p)


def fom_rlgst(errors: RlgstErrors) -> float:
    return float(np.sqrt(np.sum(errors.gate_errors**2) + np.sum(errors.rho_error**2) + np.sum(errors.povm_error**2)))


# ---------------------------------------------------------------------------
# Randomized benchmarking


@dataclass(frozen=True)
class RbFit:
    A: float
    q: float
    r: float
    covariance: np.ndarray
    B: float = RB_OFFSET
    converged: bool = True
    clamped: bool = False

    @property
    def q_std(self) -> float:
        return float(np.sqrt(max(self.covariance[1, 1], 0.0)))

    @property
    def r_std(self) -> float:
        return self.q_std / 2

    @property
    def ok(self) -> bool:
        return self.converged and not self.clamped


def rb_model(m, A, q, B=RB_OFFSET):
    return A * np.power(q, np.asarray(m, dtype=float)) + B


def rb_fit(lengths, survivals, sigma=None) -> RbFit:
    """Fit ``p(m) = A q^m + 1/2`` and report the error per Clifford ``(1-q)/2``."""
    m = np.asarray(lengths, dtype=float)
    s = np.asarray(survivals, dtype=float)
    if m.shape != s.shape:
        raise ValidationError("lengths and survivals differ in shape")
    if np.unique(m).size < 3:
        raise ValidationError("RB fit needs at least three distinct lengths")
    w = np.ones_like(s) if sigma is None else 1.0 / np.asarray(sigma, dtype=float)

    # log-linear start on points above the asymptote
    above = s - RB_OFFSET > 1e-12
    if above.sum() >= 2:
        slope, icpt = np.polyfit(m[above], np.log(s[above] - RB_OFFSET), 1)
        x0 = np.array([np.exp(icpt), np.exp(slope)])
    else:
        x0 = np.array([max(s.max() - RB_OFFSET, 1e-3), 0.9])

    def resid(x):
        return w * (rb_model(m, x[0], x[1]) - s)

    converged = True
    if np.max(np.abs(resid(x0))) < 1e-13:
        x = x0
        jac = np.column_stack([w * np.power(x[1], m), w * x[0] * m * np.power(x[1], np.maximum(m - 1, 0))])
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            sol = least_squares(resid, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        x, jac = sol.x, sol.jac
        converged = bool(sol.success)
    dof = max(m.size - 2, 1)
    s2 = float(np.sum(resid(x) ** 2) / dof) if sigma is None else 1.0
    try:
        cov = np.linalg.inv(jac.T @ jac) * s2
    except np.linalg.LinAlgError:
        cov = np.full((2, 2), np.inf)
        converged = False
    a_fit, q_fit = float(x[0]), float(x[1])
    clamped = not (0.0 <= q_fit <= 1.0)
    q_fit = min(max(q_fit, 0.0), 1.0)
    return RbFit(a_fit, q_fit, (1 - q_fit) / 2, cov, converged=converged, clamped=clamped)
