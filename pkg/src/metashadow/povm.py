"""Metasurface POVMs built from antipodal pairs of Bloch-sphere vertices.

Port ``k = 2*i + b`` is outcome ``b`` of basis ``i`` (both zero-based); its
effect is ``(2/K)|phi_k><phi_k|``.  Files and CLIs use one-based basis
digits; everything in memory is zero-based.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _tensor
from .errors import CapacityError, InvalidArgumentError
from .qcore import MAX_MIXED_QUBITS, HermitianOp, StateDescriptor, bloch_to_state

DESIGNS = ("octa6", "cube8", "icosa12")
MAX_TABLE_QUBITS = 8

_GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0


@dataclass(frozen=True)
class Port:
    basis: int
    bit: int
    label: str
    bloch: np.ndarray
    ket: np.ndarray


@dataclass(frozen=True)
class BasisPair:
    index: int
    label: str
    ports: tuple


@dataclass(frozen=True)
class Povm:
    design: str
    bases: tuple

    @property
    def K(self) -> int:
        return 2 * len(self.bases)

    @property
    def n_bases(self) -> int:
        return len(self.bases)

    @property
    def weight(self) -> float:
        return 2.0 / self.K

    @property
    def ports(self) -> list:
        return [p for pair in self.bases for p in pair.ports]

    @property
    def kets(self) -> np.ndarray:
        """(K, 2) array of port states, ordered by port index."""
        return np.array([p.ket for p in self.ports])

    @property
    def projectors(self) -> np.ndarray:
        kets = self.kets
        return np.einsum("ka,kb->kab", kets, kets.conj())

    @property
    def effects(self) -> np.ndarray:
        return self.weight * self.projectors

    @property
    def port_labels(self) -> list:
        return [p.label for p in self.ports]

    @property
    def basis_labels(self) -> list:
        return [b.label for b in self.bases]

    def port_index(self, label: str) -> int:
        try:
            return self.port_labels.index(label)
        except ValueError:
            raise InvalidArgumentError(f"unknown port label {label!r} for {self.design}") from None

    def basis_index(self, label) -> int:
        """Zero-based basis index from a basis label or a one-based digit."""
        if isinstance(label, (int, np.integer)) or str(label).isdigit():
            i = int(label) - 1
            if 0 <= i < self.n_bases:
                return i
        elif label in self.basis_labels:
            return self.basis_labels.index(label)
        raise InvalidArgumentError(f"unknown basis {label!r} for {self.design}")


def _pair(index, label, v, labels) -> BasisPair:
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    ports = []
    for bit, (vec, lab) in enumerate(zip((v.copy(), -v), labels)):
        ket = np.array(bloch_to_state(vec).data)
        vec.setflags(write=False)
        ket.setflags(write=False)
        ports.append(Port(index, bit, lab, vec, ket))
    return BasisPair(index, label, tuple(ports))


@functools.lru_cache(maxsize=None)
def build_povm(design: str) -> Povm:
    """Construct one of the three metasurface designs.

    octa6 uses the H/V, H+-V and LC/RC bases in that order with outcome 0
    being H, H+V and LC; |RC> = (|H> + i|V>)/sqrt(2) sits at the +y pole.
    """
    if design == "octa6":
        pairs = [
            _pair(0, "H/V", (0, 0, 1), ("H", "V")),
            _pair(1, "H+V/H-V", (1, 0, 0), ("H+V", "H-V")),
            _pair(2, "LC/RC", (0, -1, 0), ("LC", "RC")),
        ]
    elif design == "cube8":
        reps = [(1, 1, 1), (1, 1, -1), (1, -1, 1), (-1, 1, 1)]
        pairs = [_pair(i, f"B{i + 1}", v, (f"{i + 1}+", f"{i + 1}-")) for i, v in enumerate(reps)]
    elif design == "icosa12":
        g = _GOLDEN
        reps = [(0, 1, g), (0, 1, -g), (1, g, 0), (1, -g, 0), (g, 0, 1), (-g, 0, 1)]
        pairs = [_pair(i, f"B{i + 1}", v, (f"{i + 1}+", f"{i + 1}-")) for i, v in enumerate(reps)]
    else:
        raise InvalidArgumentError(f"unknown design {design!r}; expected one of {DESIGNS}")
    return Povm(design, tuple(pairs))


@dataclass(frozen=True)
class FramePotentialReport:
    frame_potential: float
    target: float
    channel_residual: float

    def passed(self, tol: float = 1e-9) -> bool:
        return abs(self.frame_potential - self.target) <= tol and self.channel_residual < tol

    def to_dict(self) -> dict:
        return {
            "frame_potential": self.frame_potential,
            "target": self.target,
            "channel_residual": self.channel_residual,
        }


def measurement_channel(povm: Povm, rho: np.ndarray) -> np.ndarray:
    """sum_k Tr(rho E_k) |phi_k><phi_k|, the map inverted by X -> 3X - I.

    Normalizing by 1/K instead of the effect weight 2/K would give
    (I + rho)/6 for a qubit 2-design.
    """
    proj = povm.projectors
    weights = np.einsum("kab,ba->k", povm.effects, rho).real
    return np.einsum("k,kab->ab", weights, proj)


def check_two_design(povm: Povm, probes: int = 32, seed: int = 0) -> FramePotentialReport:
    kets = povm.kets
    K = povm.K
    d = kets.shape[1]
    gram = kets.conj() @ kets.T
    fp = float(np.sum(np.abs(gram) ** 4)) / K**2
    target = 2.0 / (d * (d + 1))

    rng = np.random.default_rng(seed)
    residual = 0.0
    for _ in range(max(probes, 20)):
        g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        rho = g @ g.conj().T
        rho /= np.trace(rho).real
        diff = measurement_channel(povm, rho) - (np.eye(d) + rho) / 3.0
        residual = max(residual, float(np.linalg.norm(diff)))
    return FramePotentialReport(fp, target, residual)


@dataclass
class ProbTable:
    """Joint outcome probabilities grouped by basis string.

    ``probs[r, c]`` is the probability of basis string with mixed-radix
    index ``r`` and bit string ``c``.  Lossless tables have every row summing
    to ``(2/K)**n``.
    """

    n: int
    K: int
    probs: np.ndarray
    allow_negative: bool = field(default=False, repr=False)

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        shape = ((self.K // 2) ** self.n, 2**self.n)
        if p.shape != shape:
            raise InvalidArgumentError(f"table shape {p.shape} does not match {shape}")
        if not self.allow_negative:
            if p.min(initial=0.0) < -1e-9:
                raise InvalidArgumentError(f"negative probability {p.min()!r} in table")
            p = np.clip(p, 0.0, None)
        self.probs = p

    @property
    def n_bases(self) -> int:
        return self.K // 2

    @property
    def prior(self) -> float:
        return (2.0 / self.K) ** self.n

    def group(self, basis: Sequence[int]) -> np.ndarray:
        """Group vector for a zero-based basis string."""
        row = _tensor.basis_index(np.asarray([basis]), self.n_bases)[0]
        return self.probs[row]

    def group_masses(self) -> np.ndarray:
        return self.probs.sum(axis=1)

    def total(self) -> float:
        return float(self.probs.sum())

    def conditionals(self) -> np.ndarray:
        mass = self.group_masses()[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(mass > 0, self.probs / mass, 2.0**-self.n)

    def basis_strings(self) -> np.ndarray:
        return _tensor.index_to_digits(np.arange(self.probs.shape[0]), self.n_bases, self.n)

    def validate_lossless(self, tol: float = 1e-9) -> None:
        if np.max(np.abs(self.group_masses() - self.prior)) > tol:
            raise InvalidArgumentError("group masses differ from (2/K)^n")


def _check_table_capacity(n: int, K: int) -> None:
    if n > MAX_TABLE_QUBITS or K**n > _tensor.MAX_TABLE_ENTRIES:
        raise CapacityError(f"dense table for n={n}, K={K} exceeds capacity")


def port_tensor(state: StateDescriptor, povm: Povm) -> np.ndarray:
    """Born probabilities for all K**n port strings as a ``(K,)*n`` tensor."""
    n = state.n
    _check_table_capacity(n, povm.K)
    bras = povm.kets.conj()
    if state.is_pure:
        x = state.data.reshape((2,) * n)
        for _ in range(n):
            # contract the leading qubit axis, append the port axis
            x = np.tensordot(x, bras, axes=([0], [1]))
        t = np.abs(x) ** 2
    else:
        t = _tensor.contract_local(state.data, povm.projectors, n)
    return t * povm.weight**n


def born_table(state: StateDescriptor, povm: Povm) -> ProbTable:
    t = port_tensor(state, povm)
    probs = _tensor.ports_to_groups(t, state.n, povm.n_bases)
    return ProbTable(state.n, povm.K, np.clip(probs, 0.0, None))


def shadow_blocks(povm: Povm) -> np.ndarray:
    """Single-qubit snapshots 3|phi_k><phi_k| - I for every port."""
    return 3.0 * povm.projectors - np.eye(2)[None, :, :]


def shadow_from_outcome(povm: Povm, outcome: Sequence[tuple]) -> HermitianOp:
    """Classical shadow for one shot: outcome is a list of (basis, bit) per qubit."""
    if not outcome:
        raise InvalidArgumentError("outcome must cover at least one qubit")
    if len(outcome) > MAX_MIXED_QUBITS:
        raise CapacityError("shadow matrix too large")
    blocks = shadow_blocks(povm)
    mat = np.ones((1, 1), dtype=complex)
    for i, b in outcome:
        if not (0 <= int(i) < povm.n_bases and int(b) in (0, 1)):
            raise InvalidArgumentError(f"invalid port ({i}, {b}) for {povm.design}")
        mat = np.kron(mat, blocks[2 * int(i) + int(b)])
    return HermitianOp(mat)
