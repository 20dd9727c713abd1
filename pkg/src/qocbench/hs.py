"""Single-qubit Hilbert-Schmidt space over the normalized Pauli basis.

States and effects are real 4-vectors, channels are real 4x4 Pauli transfer
matrices (PTMs). The basis order is fixed to (I, X, Y, Z)/sqrt(2) everywhere,
including serialized files.

Rotation convention: an angle ``theta`` about axis ``n`` is
``U = exp(-i theta n.sigma / 2)``.
"""

from __future__ import annotations

import csv
import io
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ValidationError

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)

PAULIS = np.stack([I2, SX, SY, SZ])
PAULI_BASIS = PAULIS / np.sqrt(2)

TOL = 1e-10


def rotation(theta: float, axis) -> np.ndarray:
    """Return ``exp(-i theta n.sigma / 2)`` for a (not necessarily unit) axis."""
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    nsig = n[0] * SX + n[1] * SY + n[2] * SZ
    return np.cos(theta / 2) * I2 - 1j * np.sin(theta / 2) * nsig


def vectorize(rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise ValidationError(f"density matrix must be 2x2, got {rho.shape}")
    if not np.allclose(rho, rho.conj().T, atol=TOL):
        raise ValidationError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > TOL:
        raise ValidationError(f"density matrix trace is {np.trace(rho).real:.3g}, not 1")
    return np.einsum("kji,ji->k", PAULI_BASIS.conj(), rho).real


def devectorize(vec) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    return np.einsum("k,kij->ij", vec, PAULI_BASIS)


def unitary_to_ptm(u) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.shape != (2, 2):
        raise ValidationError(f"unitary must be 2x2, got {u.shape}")
    if not np.allclose(u.conj().T @ u, I2, atol=TOL):
        raise ValidationError("matrix is not unitary")
    return _ptm_unchecked(u)


def _ptm_unchecked(u: np.ndarray) -> np.ndarray:
    # R[j, k] = tr(P_j U P_k U^dag)
    conj = np.einsum("ab,kbc,dc->kad", u, PAULI_BASIS, u.conj())
    return np.einsum("jba,kab->jk", PAULI_BASIS, conj).real


def unitaries_to_ptms(us: np.ndarray) -> np.ndarray:
    """Batched ``unitary_to_ptm`` over a leading axis, without validation."""
    conj = np.einsum("nab,kbc,ndc->nkad", us, PAULI_BASIS, us.conj())
    return np.einsum("jba,nkab->njk", PAULI_BASIS, conj).real


def expectation(effect, gates, state) -> float:
    """Return <<E| G_n ... G_1 |rho>>, ``gates`` given in time order.

    No clamping is applied; shot noise and model errors can push the raw
    value outside [0, 1].
    """
    v = np.asarray(state, dtype=float)
    for g in gates:
        v = np.asarray(g) @ v
    return float(np.asarray(effect, dtype=float) @ v)


def compose(gates) -> np.ndarray:
    """Product of PTMs listed in time order (first element acts first)."""
    out = np.eye(4)
    for g in gates:
        out = np.asarray(g) @ out
    return out


@lru_cache(maxsize=1)
def _chi_system() -> np.ndarray:
    # M[(a, b), (m, n)] = 1/2 tr(s_a s_m s_b s_n)
    m = np.einsum("aij,mjk,bkl,nli->abmn", PAULIS, PAULIS, PAULIS, PAULIS) / 2
    return m.reshape(16, 16)


def ptm_to_chi(ptm) -> np.ndarray:
    """Process matrix over unnormalized Paulis: L(rho) = sum chi_mn s_m rho s_n^dag."""
    r = np.asarray(ptm, dtype=float)
    if r.shape != (4, 4):
        raise ValidationError(f"PTM must be 4x4, got {r.shape}")
    chi = np.linalg.solve(_chi_system(), r.reshape(16).astype(complex))
    chi = chi.reshape(4, 4)
    return (chi + chi.conj().T) / 2


def unitary_to_chi(u) -> np.ndarray:
    """chi directly from the Pauli expansion U = sum c_m s_m."""
    u = np.asarray(u, dtype=complex)
    c = np.einsum("mji,ji->m", PAULIS.conj(), u) / 2
    return np.outer(c, c.conj())


# Fixed states used throughout: |0><0| as both preparation and effect.
ZERO = vectorize(np.array([[1, 0], [0, 0]], dtype=complex))
MIXED = vectorize(I2 / 2)


def write_matrix_csv(path_or_buf, matrix) -> None:
    """Row-major CSV with 17 significant digits; complex entries become re,im pairs."""
    m = np.atleast_2d(np.asarray(matrix))
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
    try:
        w = csv.writer(fh)
        for row in m:
            if np.iscomplexobj(m):
                cells = []
                for z in row:
                    cells += [f"{z.real:.17g}", f"{z.imag:.17g}"]
            else:
                cells = [f"{x:.17g}" for x in row]
            w.writerow(cells)
    finally:
        if own:
            fh.close()


def read_matrix_csv(path_or_buf, complex_valued: bool = False) -> np.ndarray:
    if isinstance(path_or_buf, (str, Path)):
        text = Path(path_or_buf).read_text(encoding="utf-8")
    else:
        text = path_or_buf.read()
    rows = [[float(x) for x in r] for r in csv.reader(io.StringIO(text)) if r]
    arr = np.array(rows)
    if complex_valued:
        return arr[:, 0::2] + 1j * arr[:, 1::2]
    return arr
