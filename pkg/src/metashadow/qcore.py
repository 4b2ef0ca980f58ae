"""Dense state vectors and density matrices used as exact references.

Qubit 0 is the most significant (leftmost) bit of every basis index, so
``|10>`` on two qubits is amplitude index 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, InvalidArgumentError

MAX_PURE_QUBITS = 22
MAX_MIXED_QUBITS = 12

_NORM_TOL = 1e-12
_EIG_TOL = 1e-10


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=complex)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StateDescriptor:
    """An n-qubit state, stored either as amplitudes or as a density matrix.

    Use :meth:`pure` / :meth:`mixed` rather than the raw constructor; they
    validate normalization and positivity.
    """

    n: int
    kind: str
    data: np.ndarray

    @classmethod
    def pure(cls, amplitudes: Sequence[complex]) -> "StateDescriptor":
        amps = np.asarray(amplitudes, dtype=complex).ravel()
        n = _qubits_for(amps.size)
        if n > MAX_PURE_QUBITS:
            raise CapacityError(f"pure states are limited to {MAX_PURE_QUBITS} qubits, got {n}")
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > _NORM_TOL:
            raise InvalidArgumentError(f"amplitudes not normalized (norm^2 = {norm!r})")
        return cls(n, "pure", _frozen(amps))

    @classmethod
    def mixed(cls, matrix: np.ndarray) -> "StateDescriptor":
        rho = np.asarray(matrix, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise InvalidArgumentError(f"density matrix must be square, got shape {rho.shape}")
        n = _qubits_for(rho.shape[0])
        if n > MAX_MIXED_QUBITS:
            raise CapacityError(f"mixed states are limited to {MAX_MIXED_QUBITS} qubits, got {n}")
        if np.max(np.abs(rho - rho.conj().T)) > _NORM_TOL:
            raise InvalidArgumentError("density matrix is not Hermitian")
        tr = np.trace(rho)
        if abs(tr - 1.0) > _NORM_TOL:
            raise InvalidArgumentError(f"density matrix trace is {tr!r}, expected 1")
        if np.linalg.eigvalsh(rho).min() < -_EIG_TOL:
            raise InvalidArgumentError("density matrix has negative eigenvalues")
        return cls(n, "mixed", _frozen(rho))

    @property
    def dim(self) -> int:
        return 2**self.n

    @property
    def is_pure(self) -> bool:
        return self.kind == "pure"

    def density(self) -> np.ndarray:
        """Density matrix (a fresh array; pure states are promoted)."""
        if self.is_pure:
            return np.outer(self.data, self.data.conj())
        return np.array(self.data)

    def to_mixed(self) -> "StateDescriptor":
        if not self.is_pure:
            return self
        return StateDescriptor(self.n, "mixed", _frozen(self.density()))


@dataclass(frozen=True)
class HermitianOp:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidArgumentError(f"operator must be square, got shape {m.shape}")
        _qubits_for(m.shape[0])
        if np.max(np.abs(m - m.conj().T)) > _NORM_TOL * max(1.0, np.abs(m).max()):
            raise InvalidArgumentError("operator is not Hermitian")
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def expectation(self, state: StateDescriptor) -> float:
        """Tr(rho O)."""
        if state.dim != self.dim:
            raise InvalidArgumentError("dimension mismatch")
        if state.is_pure:
            return float(np.vdot(state.data, self.matrix @ state.data).real)
        return float(np.trace(state.data @ self.matrix).real)


def _qubits_for(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 2 or 2**n != dim:
        raise InvalidArgumentError(f"dimension {dim} is not a power of two >= 2")
    return n


def basis_state(bits: str) -> StateDescriptor:
    """Computational basis state from a bit string such as ``"100"``."""
    if not bits or set(bits) - {"0", "1"}:
        raise InvalidArgumentError(f"invalid bit string {bits!r}")
    amps = np.zeros(2 ** len(bits), dtype=complex)
    amps[int(bits, 2)] = 1.0
    return StateDescriptor.pure(amps)


def w_state(n: int) -> StateDescriptor:
    """Equal superposition of the n single-excitation bit strings."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidArgumentError(f"W state needs n >= 1, got {n!r}")
    if n > MAX_PURE_QUBITS:
        raise CapacityError(f"W state limited to {MAX_PURE_QUBITS} qubits")
    amps = np.zeros(2**n, dtype=complex)
    amps[[1 << (n - 1 - q) for q in range(n)]] = 1.0 / np.sqrt(n)
    return StateDescriptor.pure(amps)


def partial_trace(state: StateDescriptor, keep: Iterable[int]) -> StateDescriptor:
    """Reduced density matrix on ``keep`` (returned in ascending qubit order)."""
    keep = sorted(set(int(q) for q in keep))
    if not keep:
        raise InvalidArgumentError("keep must be nonempty")
    if keep[0] < 0 or keep[-1] >= state.n:
        raise InvalidArgumentError(f"qubit indices {keep} out of range for n={state.n}")
    n = state.n
    k = len(keep)
    if k > MAX_MIXED_QUBITS:
        raise CapacityError(f"reduced state on {k} qubits exceeds the mixed-state limit")
    rest = [q for q in range(n) if q not in keep]
    if state.is_pure:
        psi = state.data.reshape((2,) * n).transpose(keep + rest).reshape(2**k, -1)
        rho = psi @ psi.conj().T
    else:
        t = state.data.reshape((2,) * (2 * n))
        order = keep + rest + [n + q for q in keep] + [n + q for q in rest]
        t = t.transpose(order).reshape(2**k, 2 ** (n - k), 2**k, 2 ** (n - k))
        rho = np.einsum("arbr->ab", t)
    # drop rounding asymmetry so the Hermitian check stays tight
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    return StateDescriptor.mixed(rho)


def exact_purity(state: StateDescriptor) -> float:
    if state.is_pure:
        return 1.0
    rho = state.data
    # Tr(rho^2) = sum |rho_ij|^2 for Hermitian rho
    return float(np.sum(np.abs(rho) ** 2))


def exact_overlap(a: StateDescriptor, b: StateDescriptor) -> float:
    """Tr(rho_a rho_b); |<a|b>|^2 for two pure states."""
    if a.n != b.n:
        raise InvalidArgumentError(f"dimension mismatch: {a.n} vs {b.n} qubits")
    if a.is_pure and b.is_pure:
        return float(abs(np.vdot(a.data, b.data)) ** 2)
    if a.is_pure:
        a, b = b, a
    if b.is_pure:
        return float(np.vdot(b.data, a.data @ b.data).real)
    return float(np.sum(a.data * b.data.T).real)


def bloch_to_state(v: Sequence[float]) -> StateDescriptor:
    """Single-qubit pure state with Bloch vector ``v``.

    The phase is fixed so that the first nonzero amplitude is real and
    positive.
    """
    x, y, z = (float(c) for c in v)
    norm = np.sqrt(x * x + y * y + z * z)
    if abs(norm - 1.0) > 1e-9:
        raise InvalidArgumentError(f"Bloch vector must have unit norm, got {norm!r}")
    x, y, z = x / norm, y / norm, z / norm
    r = abs(complex(x, y))
    if z >= 0:
        a = np.sqrt((1.0 + z) / 2.0)
        amps = np.array([a, complex(x, y) / (2.0 * a)])
    else:
        # near the south pole sqrt((1 + z)/2) loses all precision; use |b| instead
        mag_b = np.sqrt((1.0 - z) / 2.0)
        phase = complex(x, y) / r if r > 0 else 1.0
        amps = np.array([r / (2.0 * mag_b), mag_b * phase])
        if amps[0] == 0:
            amps[1] = 1.0
    return StateDescriptor.pure(amps / np.linalg.norm(amps))


def random_pure_state(n: int, rng: np.random.Generator) -> StateDescriptor:
    """Haar-random pure state."""
    amps = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return StateDescriptor.pure(amps / np.linalg.norm(amps))


def random_mixed_state(n: int, rng: np.random.Generator, rank: int | None = None) -> StateDescriptor:
    """Random density matrix from the induced (Ginibre) measure."""
    d = 2**n
    g = rng.normal(size=(d, rank or d)) + 1j * rng.normal(size=(d, rank or d))
    rho = g @ g.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return StateDescriptor.mixed(rho / np.trace(rho).real)
