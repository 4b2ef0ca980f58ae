"""Count-table emulator standing in for the electromagnetic device model.

Each port (i, b) has a 2x2 positive response operator N; a single photon in
state psi reaches that port with probability (2/K) <psi|N|psi> (it meets
grating i with probability 2/K) and is lost otherwise.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _tensor
from .errors import CapacityError, DataFormatError, EstimationError, FitError, InvalidArgumentError, ModelError
from .noise import LossyProbTable, NoiseParams, apply_composite
from .povm import MAX_TABLE_QUBITS, Povm, born_table, build_povm
from .qcore import StateDescriptor

PROBE_LABELS = ("H", "V", "H+V", "H-V", "RC", "LC")
_S = 1.0 / np.sqrt(2.0)
PROBE_KETS = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "H+V": np.array([_S, _S], dtype=complex),
    "H-V": np.array([_S, -_S], dtype=complex),
    "RC": np.array([_S, 1j * _S]),
    "LC": np.array([_S, -1j * _S]),
}

FIT_RESIDUAL_MAX = 0.05
_PSD_TOL = 1e-8


def probe_state(label: str, povm: Optional[Povm] = None) -> StateDescriptor:
    """Single-qubit probe by polarization label or by a port label of ``povm``."""
    if label in PROBE_KETS:
        return StateDescriptor.pure(PROBE_KETS[label])
    if povm is not None and label in povm.port_labels:
        return StateDescriptor.pure(povm.kets[povm.port_index(label)])
    raise InvalidArgumentError(f"unknown probe state {label!r}")


def _order_to_bit(order: str) -> int:
    o = str(order).strip()
    if o in ("+1", "1"):
        return 0
    if o == "-1":
        return 1
    raise DataFormatError(f"diffraction order must be +1 or -1, got {order!r}")


@dataclass
class TransmissionTable:
    """Transmission ``values[i, b, p]`` of grating i, order (+1 -> b=0, -1 -> b=1), probe p."""

    design: str
    values: np.ndarray

    def __post_init__(self):
        nb = build_povm(self.design).n_bases
        v = np.asarray(self.values, dtype=float)
        if v.shape != (nb, 2, len(PROBE_LABELS)):
            raise InvalidArgumentError(f"transmission table shape {v.shape} != {(nb, 2, len(PROBE_LABELS))}")
        if v.min() < 0.0 or v.max() > 1.0:
            raise InvalidArgumentError("transmission values must lie in [0, 1]")
        self.values = v

    def probe(self, label: str) -> np.ndarray:
        return self.values[:, :, PROBE_LABELS.index(label)]


def read_transmission_csv(path, design: str = "octa6") -> TransmissionTable:
    povm = build_povm(design)
    values = np.full((povm.n_bases, 2, len(PROBE_LABELS)), np.nan)
    rows = _read_csv(path, ["grating", "order", *PROBE_LABELS])
    for lineno, row in rows:
        try:
            i = povm.basis_index(row["grating"])
        except InvalidArgumentError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from None
        b = _order_to_bit(row["order"])
        for p, lab in enumerate(PROBE_LABELS):
            values[i, b, p] = _float_cell(row, lab, path, lineno)
    if np.isnan(values).any():
        raise DataFormatError(f"{path}: missing grating/order rows")
    return TransmissionTable(design, values)


def write_transmission_csv(table: TransmissionTable, path) -> None:
    povm = build_povm(table.design)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["grating", "order", *PROBE_LABELS])
    for i, lab in enumerate(povm.basis_labels):
        for b, order in enumerate(("+1", "-1")):
            w.writerow([lab, order, *(repr(float(x)) for x in table.values[i, b])])
    Path(path).write_text(buf.getvalue())


@dataclass
class PortOperatorSet:
    """Response operators ``ops[k]`` for every port, in povm port order."""

    design: str
    ops: np.ndarray
    residuals: Optional[np.ndarray] = None

    def __post_init__(self):
        K = build_povm(self.design).K
        ops = np.asarray(self.ops, dtype=complex)
        if ops.shape != (K, 2, 2):
            raise InvalidArgumentError(f"expected {K} 2x2 operators, got shape {ops.shape}")
        if np.max(np.abs(ops - ops.conj().transpose(0, 2, 1))) > 1e-10:
            raise InvalidArgumentError("port operators must be Hermitian")
        if np.linalg.eigvalsh(ops).min() < -_PSD_TOL:
            raise InvalidArgumentError("port operators must be positive semidefinite")
        total = ops.sum(axis=0)
        if np.linalg.eigvalsh(total - (K // 2) * np.eye(2)).max() > 1e-6:
            raise InvalidArgumentError("port operators exceed unit detection probability")
        self.ops = ops

    @property
    def K(self) -> int:
        return self.ops.shape[0]

    def port_probabilities(self, probe: StateDescriptor) -> np.ndarray:
        if probe.n != 1:
            raise InvalidArgumentError("emulator probes must be single-qubit states")
        rho = probe.density()
        probs = (2.0 / self.K) * np.einsum("kab,ba->k", self.ops, rho).real
        if probs.sum() > 1.0 + 1e-6 or probs.min() < -1e-9:
            raise ModelError(f"port probabilities sum to {probs.sum()!r}")
        return np.clip(probs, 0.0, None)

    def distribution(self, probe: StateDescriptor) -> np.ndarray:
        """Port probabilities followed by the lost-photon probability."""
        probs = self.port_probabilities(probe)
        return np.append(probs, max(0.0, 1.0 - probs.sum()))

    def to_dict(self) -> dict:
        povm = build_povm(self.design)
        ports = []
        for k, lab in enumerate(povm.port_labels):
            entry = {"label": lab, "real": self.ops[k].real.tolist(), "imag": self.ops[k].imag.tolist()}
            if self.residuals is not None:
                entry["residual"] = float(self.residuals[k])
            ports.append(entry)
        return {"design": self.design, "ports": ports}

    @classmethod
    def from_dict(cls, doc: dict) -> "PortOperatorSet":
        try:
            povm = build_povm(doc["design"])
            ops = np.zeros((povm.K, 2, 2), dtype=complex)
            for entry in doc["ports"]:
                k = povm.port_index(entry["label"])
                ops[k] = np.array(entry["real"], float) + 1j * np.array(entry["imag"], float)
            return cls(doc["design"], ops)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"malformed port-operator document: {exc}") from exc


def fit_port_operators(t: TransmissionTable) -> PortOperatorSet:
    """Closed-form 2x2 response operator per port from four probe responses.

    With N = [[a, c], [c*, d]] and |RC> = (|H> + i|V>)/sqrt(2):
    a = T(H), d = T(V), Re c = T(H+V) - (a+d)/2, Im c = (a+d)/2 - T(RC).
    T(H-V) and T(LC) are only used as a consistency check.
    """
    povm = build_povm(t.design)
    ops = np.zeros((povm.K, 2, 2), dtype=complex)
    residuals = np.zeros(povm.K)
    for i in range(povm.n_bases):
        for b in range(2):
            k = 2 * i + b
            vals = dict(zip(PROBE_LABELS, t.values[i, b]))
            a, d = vals["H"], vals["V"]
            mean = 0.5 * (a + d)
            c = (vals["H+V"] - mean) + 1j * (mean - vals["RC"])
            n_op = np.array([[a, c], [np.conj(c), d]])
            residuals[k] = max(abs(mean - c.real - vals["H-V"]), abs(mean + c.imag - vals["LC"]))
            if residuals[k] > FIT_RESIDUAL_MAX:
                raise FitError(f"port {povm.port_labels[k]}: redundant probes off by {residuals[k]:.4f}")
            w, v = np.linalg.eigh(n_op)
            if w.min() < -_PSD_TOL:
                raise FitError(f"port {povm.port_labels[k]}: fitted operator has eigenvalue {w.min():.3g}")
            if w.min() < 0.0:
                n_op = (v * np.clip(w, 0.0, None)) @ v.conj().T
            ops[k] = n_op
    return PortOperatorSet(t.design, ops, residuals)


def transmission_from_operators(ops: PortOperatorSet) -> TransmissionTable:
    """Synthetic transmission table: T = <probe|N|probe> for the six probes."""
    povm = build_povm(ops.design)
    values = np.zeros((povm.n_bases, 2, len(PROBE_LABELS)))
    for p, lab in enumerate(PROBE_LABELS):
        ket = PROBE_KETS[lab]
        values[:, :, p] = np.einsum("a,kab,b->k", ket.conj(), ops.ops, ket).real.reshape(-1, 2)
    return TransmissionTable(ops.design, np.clip(values, 0.0, 1.0))


def port_operators_from_noise(params: NoiseParams) -> PortOperatorSet:
    """Response operators reproducing the parametric noise model exactly."""
    povm = build_povm(params.design)
    proj = povm.projectors
    gammas = params.gammas()
    surv = params.survival()
    ops = np.zeros((povm.K, 2, 2), dtype=complex)
    for i in range(povm.n_bases):
        for b in range(2):
            ops[2 * i + b] = surv[i, b] * (gammas[i, b, 0] * proj[2 * i] + gammas[i, b, 1] * proj[2 * i + 1])
    return PortOperatorSet(params.design, ops)


@dataclass
class CountTable:
    """Photon counts per probe (rows) and port (columns, povm port order)."""

    design: str
    probes: list
    counts: np.ndarray
    injected: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(len(self.probes), -1)
        self.injected = np.asarray(self.injected, dtype=np.int64).reshape(len(self.probes))
        if self.counts.shape[1] != build_povm(self.design).K:
            raise InvalidArgumentError("count table has the wrong number of ports")
        if self.counts.min(initial=0) < 0:
            raise InvalidArgumentError("counts must be nonnegative")
        if np.any(self.counts.sum(axis=1) > self.injected):
            raise InvalidArgumentError("port counts exceed injected photons")

    @property
    def lost(self) -> np.ndarray:
        return self.injected - self.counts.sum(axis=1)

    def distributions(self) -> np.ndarray:
        """Observed frequencies over ports plus a trailing lost column."""
        full = np.column_stack([self.counts, self.lost]).astype(float)
        return full / self.injected[:, None]

    def probe_states(self) -> list:
        povm = build_povm(self.design)
        return [probe_state(lab, povm) for lab in self.probes]


def emulate_counts(ops: PortOperatorSet, probe: StateDescriptor, shots: int, seed=None, label: str = "probe") -> CountTable:
    """Multinomial photon counts for one probe over the K ports plus loss."""
    if shots < 0:
        raise InvalidArgumentError("shots must be nonnegative")
    dist = ops.distribution(probe)
    rng = np.random.default_rng(seed)
    draw = rng.multinomial(int(shots), dist / dist.sum())
    return CountTable(ops.design, [label], draw[None, :-1], [shots])


def emulate_calibration(ops: PortOperatorSet, probes: Sequence[str], shots: int, seed=None) -> CountTable:
    """Count table for several named probes, one independent stream per probe."""
    povm = build_povm(ops.design)
    streams = np.random.SeedSequence(seed).spawn(len(probes))
    rows = [emulate_counts(ops, probe_state(lab, povm), shots, s).counts[0] for lab, s in zip(probes, streams)]
    return CountTable(ops.design, list(probes), np.array(rows), [shots] * len(probes))


def read_counts_csv(path, design: str = "octa6") -> CountTable:
    povm = build_povm(design)
    rows = _read_csv(path, ["input", *povm.port_labels, "injected"])
    probes, counts, injected = [], [], []
    for lineno, row in rows:
        label = row["input"].strip()
        try:
            probe_state(label, povm)
        except InvalidArgumentError:
            raise DataFormatError(f"{path}:{lineno}: unknown input state {label!r}") from None
        probes.append(label)
        counts.append([_int_cell(row, lab, path, lineno) for lab in povm.port_labels])
        injected.append(_int_cell(row, "injected", path, lineno))
    if not probes:
        raise DataFormatError(f"{path}: no data rows")
    try:
        return CountTable(design, probes, counts, injected)
    except InvalidArgumentError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def write_counts_csv(table: CountTable, path) -> None:
    povm = build_povm(table.design)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["input", *povm.port_labels, "injected"])
    for lab, row, inj in zip(table.probes, table.counts, table.injected):
        w.writerow([lab, *(int(x) for x in row), int(inj)])
    Path(path).write_text(buf.getvalue())


def _read_csv(path, required: list) -> list:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [c for c in required if c not in header]
    if missing:
        raise DataFormatError(f"{path}: header missing columns {missing}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if None in row or any(row.get(c) in (None, "") for c in required):
            raise DataFormatError(f"{path}:{lineno}: row has missing or extra fields")
        rows.append((lineno, row))
    return rows


def _float_cell(row, col, path, lineno) -> float:
    try:
        return float(row[col])
    except ValueError:
        raise DataFormatError(f"{path}:{lineno}: column {col!r} is not a number: {row[col]!r}") from None


def _int_cell(row, col, path, lineno) -> int:
    try:
        return int(row[col])
    except ValueError:
        raise DataFormatError(f"{path}:{lineno}: column {col!r} is not an integer: {row[col]!r}") from None


# ---------------------------------------------------------------- shot sampling


@dataclass
class Repetition:
    """Survived shots of one repetition as zero-based (basis, bits) arrays of shape (m, n)."""

    basis: np.ndarray
    bits: np.ndarray
    lost: int
    seed: Optional[int] = None
    index: int = 0

    @property
    def survived(self) -> int:
        return self.basis.shape[0]


@dataclass
class ShotSet:
    n: int
    design: str
    shots: int
    repetitions: list = field(default_factory=list)

    def repetition(self, r: int) -> "ShotSet":
        return ShotSet(self.n, self.design, self.shots, [self.repetitions[r]])

    @property
    def reps(self) -> int:
        return len(self.repetitions)


def sample_shots(
    state: StateDescriptor,
    povm: Povm,
    params: NoiseParams,
    shots: int,
    reps: int = 1,
    seed=None,
    method: str = "auto",
    threads: int = 1,
    survived: bool = False,
) -> ShotSet:
    """Simulate noisy metasurface measurements.

    ``method="exact"`` samples from the full noisy outcome table (n <= 8);
    ``"sequential"`` measures pure states qubit by qubit and applies the
    readout transition and loss per photon.  ``"auto"`` prefers the exact
    path when it fits.  Each repetition draws from its own child of
    ``SeedSequence(seed)``, so results do not depend on ``threads``.

    With ``survived=True`` each repetition keeps drawing until ``shots``
    photons have been detected; ``lost`` then counts the losses before the
    last kept shot.
    """
    if params.K != povm.K:
        raise InvalidArgumentError(f"noise design {params.design} does not match povm {povm.design}")
    if shots < 0 or reps < 1:
        raise InvalidArgumentError("need shots >= 0 and reps >= 1")
    fits_table = state.n <= MAX_TABLE_QUBITS and povm.K**state.n <= _tensor.MAX_TABLE_ENTRIES
    if method == "auto":
        method = "exact" if fits_table else "sequential"
    if method == "exact":
        if not fits_table:
            raise CapacityError(f"exact sampling path supports n <= {MAX_TABLE_QUBITS}")
        sampler = _ExactSampler(state, povm, params)
    elif method == "sequential":
        if not state.is_pure:
            raise InvalidArgumentError("sequential sampling needs a pure state")
        sampler = _SequentialSampler(state, povm, params)
    else:
        raise InvalidArgumentError(f"unknown sampling method {method!r}")

    children = np.random.SeedSequence(seed).spawn(reps)

    def run(r):
        rng = np.random.default_rng(children[r])
        if not survived:
            basis, bits, alive = sampler.draw(int(shots), rng)
            return Repetition(basis[alive], bits[alive], int(alive.size - alive.sum()), seed, r)
        return _run_until_survived(sampler, int(shots), rng, seed, r)

    if threads > 1 and reps > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(run, range(reps)))
    else:
        out = [run(r) for r in range(reps)]
    return ShotSet(state.n, povm.design, int(shots), out)


_MAX_DRAWS = 10**9


def _run_until_survived(sampler, target: int, rng, seed, r) -> Repetition:
    parts_b, parts_x = [], []
    got = lost = drawn = 0
    rate = 0.5
    while got < target:
        # overshoot by 10% so most repetitions need a single batch
        batch = int(np.ceil((target - got) / max(rate, 1e-3) * 1.1)) + 16
        drawn += batch
        if drawn > _MAX_DRAWS:
            raise EstimationError(f"repetition {r}: survival too low to collect {target} shots", repetition=r)
        basis, bits, alive = sampler.draw(batch, rng)
        need = target - got
        pos = np.flatnonzero(alive)
        if pos.size >= need:
            cut = pos[need - 1] + 1
            alive, basis, bits = alive[:cut], basis[:cut], bits[:cut]
        parts_b.append(basis[alive])
        parts_x.append(bits[alive])
        got += int(alive.sum())
        lost += int(alive.size - alive.sum())
        rate = max(got, 1) / (got + lost)
    if not parts_b:
        empty = np.empty((0, sampler.n), dtype=np.int8)
        return Repetition(empty, empty.copy(), 0, seed, r)
    return Repetition(np.concatenate(parts_b), np.concatenate(parts_x), lost, seed, r)


class _ExactSampler:
    def __init__(self, state, povm, params):
        self.n = state.n
        self.nb = povm.n_bases
        noisy = apply_composite(born_table(state, povm), params)
        joint = noisy.joint_survived().ravel()
        lost = max(0.0, 1.0 - joint.sum())
        p = np.append(joint, lost)
        self.p = p / p.sum()

    def draw(self, shots, rng):
        idx = rng.choice(self.p.size, size=shots, p=self.p)
        alive = idx < self.p.size - 1
        row, col = np.divmod(np.where(alive, idx, 0), 2**self.n)
        basis = _tensor.index_to_digits(row, self.nb, self.n)
        bits = _tensor.index_to_digits(col, 2, self.n)
        return basis, bits, alive


class _SequentialSampler:
    _BATCH_AMPS = 2**22

    def __init__(self, state, povm, params):
        self.psi = np.asarray(state.data, dtype=complex)
        self.n = state.n
        self.nb = povm.n_bases
        self.bras = povm.kets.conj()
        self.gammas = params.gammas()
        self.p_pl = np.asarray(params.p_pl)

    def draw(self, shots, rng):
        n, nb = self.n, self.nb
        basis = np.empty((shots, n), dtype=np.int8)
        bits = np.empty((shots, n), dtype=np.int8)
        alive = np.ones(shots, dtype=bool)
        batch = max(1, self._BATCH_AMPS // 2**n)
        for start in range(0, shots, batch):
            stop = min(shots, start + batch)
            m = stop - start
            psi = np.broadcast_to(self.psi, (m, self.psi.size))
            for q in range(n):
                psi = psi.reshape(m, 2, -1)
                i = rng.integers(nb, size=m)
                amp0 = np.einsum("sa,sar->sr", self.bras[2 * i], psi)
                amp1 = np.einsum("sa,sar->sr", self.bras[2 * i + 1], psi)
                w0 = np.sum(np.abs(amp0) ** 2, axis=1)
                w1 = np.sum(np.abs(amp1) ** 2, axis=1)
                ideal = (rng.random(m) * (w0 + w1) >= w0).astype(np.int8)
                chosen = np.where(ideal[:, None] == 0, amp0, amp1)
                norm = np.sqrt(np.where(ideal == 0, w0, w1))
                psi = chosen / norm[:, None]
                # readout transition: P(read 0 | ideal b') = Gamma[0, b']
                p_read0 = self.gammas[i, 0, ideal]
                read = (rng.random(m) >= p_read0).astype(np.int8)
                survive = rng.random(m) >= self.p_pl[i, read]
                basis[start:stop, q] = i
                bits[start:stop, q] = read
                alive[start:stop] &= survive
        return basis, bits, alive


def empirical_table(shots: ShotSet) -> LossyProbTable:
    """Pool all repetitions of ``shots`` into per-group conditional frequencies."""
    povm = build_povm(shots.design)
    n, nb = shots.n, povm.n_bases
    counts = np.zeros((nb**n, 2**n), dtype=np.int64)
    lost = 0
    for rep in shots.repetitions:
        if rep.survived:
            flat = _tensor.basis_index(rep.basis, nb) * 2**n + _tensor.bit_index(rep.bits)
            counts += np.bincount(flat, minlength=counts.size).reshape(counts.shape)
        lost += rep.lost
    survived = int(counts.sum())
    if survived == 0:
        raise EstimationError("no survived shots")
    row = counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = np.where(row[:, None] > 0, counts / row[:, None], 0.0)
    requested = survived + lost
    survival = np.clip(row / (requested * (2.0 / povm.K) ** n), 0.0, 1.0)
    return LossyProbTable(n, povm.K, cond, survival, counts=counts, lost=lost, requested=requested)


# ---------------------------------------------------------------- shot files


def write_shotset(shots: ShotSet, outdir) -> list:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for rep in shots.repetitions:
        stem = outdir / f"rep_{rep.index:03d}"
        lines = ["basis_string,bit_string"]
        for bas, bit in zip(rep.basis, rep.bits):
            lines.append("".join(str(int(x) + 1) for x in bas) + "," + "".join(str(int(x)) for x in bit))
        csv_path = stem.with_suffix(".csv")
        csv_path.write_text("\n".join(lines) + "\n")
        meta = {"design": shots.design, "n": shots.n, "shots": shots.shots, "lost": rep.lost, "seed": rep.seed, "repetition": rep.index}
        json_path = stem.with_suffix(".json")
        json_path.write_text(json.dumps(meta, indent=2) + "\n")
        written += [csv_path, json_path]
    return written


def read_shotset(indir) -> ShotSet:
    indir = Path(indir)
    metas = sorted(indir.glob("rep_*.json"))
    if not metas:
        raise DataFormatError(f"{indir}: no rep_*.json sidecars")
    reps = []
    design = n = shots = None
    for meta_path in metas:
        try:
            meta = json.loads(meta_path.read_text())
            design, n, shots = meta["design"], int(meta["n"]), int(meta["shots"])
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise DataFormatError(f"{meta_path}: {exc}") from exc
        nb = build_povm(design).n_bases
        basis, bits = [], []
        lines = meta_path.with_suffix(".csv").read_text().splitlines()
        for lineno, line in enumerate(lines[1:], start=2):
            parts = line.strip().split(",")
            if len(parts) != 2 or len(parts[0]) != n or len(parts[1]) != n:
                raise DataFormatError(f"{meta_path.with_suffix('.csv')}:{lineno}: malformed shot {line!r}")
            try:
                bas = [int(c) - 1 for c in parts[0]]
                bit = [int(c) for c in parts[1]]
            except ValueError:
                raise DataFormatError(f"{meta_path.with_suffix('.csv')}:{lineno}: non-digit shot {line!r}") from None
            if min(bas) < 0 or max(bas) >= nb or set(bit) - {0, 1}:
                raise DataFormatError(f"{meta_path.with_suffix('.csv')}:{lineno}: port out of range")
            basis.append(bas)
            bits.append(bit)
        reps.append(
            Repetition(
                np.array(basis, dtype=np.int8).reshape(-1, n),
                np.array(bits, dtype=np.int8).reshape(-1, n),
                int(meta["lost"]),
                meta.get("seed"),
                int(meta.get("repetition", len(reps))),
            )
        )
    return ShotSet(n, design, shots, reps)
