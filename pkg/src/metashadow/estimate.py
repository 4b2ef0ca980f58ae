"""Shadow-fidelity and Hamming-distance purity estimators plus the repeated-experiment driver."""

from __future__ import annotations

import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _tensor
from .emulator import Repetition, ShotSet, empirical_table, sample_shots
from .errors import CapacityError, DataFormatError, EstimationError, InvalidArgumentError, MetashadowError
from .mitigate import _inverse_gammas, mitigate
from .noise import NoiseParams, load_noise, loss_weights, scale_noise
from .povm import MAX_TABLE_QUBITS, Povm, ProbTable, build_povm, shadow_blocks
from .qcore import StateDescriptor, w_state

ESTIMATORS = ("fidelity", "purity")
FIXTURES = Path(__file__).parent / "fixtures"


# ---------------------------------------------------------------- fidelity


def shadow_values(povm: Povm, target: StateDescriptor) -> np.ndarray:
    """Grouped table of <target| (x)_q (3|phi><phi| - I) |target> for every outcome."""
    n = target.n
    if n > MAX_TABLE_QUBITS or povm.K**n > _tensor.MAX_TABLE_ENTRIES:
        raise CapacityError(f"shadow value table for n={n}, K={povm.K} exceeds capacity")
    t = _tensor.contract_local(target.density(), shadow_blocks(povm), n)
    return _tensor.ports_to_groups(t, n, povm.n_bases)


def shadow_fidelity(table: ProbTable, povm: Povm, target: StateDescriptor) -> float:
    """Probability-weighted classical-shadow estimate of <target|rho|target>.

    Not clamped: finite-sample values above 1 are legitimate.
    """
    if table.K != povm.K:
        raise InvalidArgumentError(f"table K={table.K} does not match povm K={povm.K}")
    if table.n != target.n:
        raise InvalidArgumentError(f"table has {table.n} qubits, target has {target.n}")
    return float(np.sum(table.probs * shadow_values(povm, target)))


def shadow_fidelity_per_shot(rep: Repetition, povm: Povm, target: StateDescriptor) -> float:
    """Plain average of single-shot shadow overlaps over the surviving shots."""
    if rep.survived == 0:
        raise EstimationError("no surviving shots", repetition=rep.index)
    if rep.basis.shape[1] != target.n:
        raise InvalidArgumentError(f"shots have {rep.basis.shape[1]} qubits, target has {target.n}")
    values = shadow_values(povm, target)
    rows = _tensor.basis_index(rep.basis, povm.n_bases)
    cols = _tensor.bit_index(rep.bits)
    return float(values[rows, cols].mean())


# ---------------------------------------------------------------- purity


def _hamming_kernel(sign: int) -> np.ndarray:
    """Single-qubit factor of (-2)^(sign * D)."""
    if sign not in (-1, 1):
        raise InvalidArgumentError("sign must be -1 or +1")
    off = (-2.0) ** sign
    return np.array([[1.0, off], [off, 1.0]])


def _check_subsystem(subsystem, n: int) -> list:
    sub = sorted(set(int(q) for q in subsystem))
    if not sub:
        raise InvalidArgumentError("subsystem must be nonempty")
    if sub[0] < 0 or sub[-1] >= n:
        raise InvalidArgumentError(f"subsystem {sub} out of range for {n} qubits")
    return sub


def _marginal(arr: np.ndarray, n: int, nb: int, sub: list) -> np.ndarray:
    """Sum a grouped array over the basis and bit indices of qubits outside ``sub``."""
    x = np.asarray(arr).reshape((nb,) * n + (2,) * n)
    drop = [q for q in range(n) if q not in sub]
    x = x.sum(axis=tuple(drop) + tuple(n + q for q in drop))
    m = len(sub)
    return x.reshape(nb**m, 2**m)


def hamming_purity(table: ProbTable, subsystem: Sequence[int], sign: int = -1) -> float:
    """Subsystem purity from per-basis conditionals with the (-2)^(-D) kernel.

    ``sign=+1`` evaluates the (-2)^(+D) variant, which does not give the purity;
    it exists so the choice can be pinned by tests.
    """
    sub = _check_subsystem(subsystem, table.n)
    m = len(sub)
    joint = _marginal(table.probs, table.n, table.n_bases, sub)
    mass = joint.sum(axis=1, keepdims=True)
    if np.any(mass <= 0):
        raise EstimationError("subsystem basis group without probability mass")
    cond = joint / mass
    kern = np.repeat(_hamming_kernel(sign)[None], table.n_bases, axis=0)
    per_group = np.sum(cond * _tensor.apply_local(cond, kern, m), axis=1)
    return float(2**m * per_group.mean())


def _kron_apply(vecs: np.ndarray, kern: np.ndarray, m: int) -> np.ndarray:
    """Apply ``kern`` (2x2) to every bit axis of row vectors of length 2**m."""
    x = np.asarray(vecs).reshape((-1,) + (2,) * m)
    for q in range(m):
        x = np.moveaxis(np.tensordot(x, kern, axes=([q + 1], [1])), -1, q + 1)
    return x.reshape(-1, 2**m)


def _marginal_bits(arr: np.ndarray, n: int, sub: list) -> np.ndarray:
    """Sum a grouped array over the bits of qubits outside ``sub``, keeping every row."""
    x = np.asarray(arr).reshape((-1,) + (2,) * n)
    drop = tuple(1 + q for q in range(n) if q not in sub)
    return x.sum(axis=drop).reshape(arr.shape[0], 2 ** len(sub))


def _by_subsystem_basis(arr: np.ndarray, n: int, nb: int, sub: list) -> np.ndarray:
    """Reorder rows (full basis strings) to shape (nb**m, nb**(n-m), cols)."""
    rest = [q for q in range(n) if q not in sub]
    x = np.asarray(arr).reshape((nb,) * n + (arr.shape[1],))
    x = x.transpose(sub + rest + [n])
    return x.reshape(nb ** len(sub), nb ** len(rest), arr.shape[1])


def hamming_purity_corrected(table, params: NoiseParams, subsystem: Sequence[int]) -> float:
    """Purity from shot counts with the same-shot pairs removed.

    Mitigation (loss reweighting, then the local inverse transition
    matrices) is applied to the counts of each full basis group.  Products
    of two different groups are independent and are kept as they are.
    Within a group the squared sum is replaced by a weighted U-statistic,
    which removes the O(1/m) self-pairing bias of the plug-in form.  Pass
    zero noise for raw data.  Groups with fewer than two shots keep the
    plug-in term (the empty ones use the uniform conditional).
    """
    if getattr(table, "counts", None) is None:
        raise InvalidArgumentError("pair correction needs an empirical table with counts")
    if table.K != params.K:
        raise InvalidArgumentError(f"table K={table.K} does not match noise K={params.K}")
    n, nb = table.n, table.n_bases
    sub = _check_subsystem(subsystem, n)
    m = len(sub)
    inv = _inverse_gammas(params)
    kern = _hamming_kernel(-1)
    counts = np.asarray(table.counts, dtype=float)
    w = loss_weights(params, n)
    size = counts.sum(axis=1)
    k = counts / w
    s1 = k.sum(axis=1)
    s2 = (counts / w**2).sum(axis=1)

    u = _marginal_bits(_tensor.apply_local(k, inv, n), n, sub)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(s1[:, None] > 0, u / s1[:, None], 2.0**-m)
    # diagonal of inv^T kern inv per basis and bit, multiplied over the subsystem
    dg = np.einsum("icb,cd,idb->ib", inv, kern, inv)
    dfac = _tensor.local_weights(dg, m)
    t = _marginal_bits(counts / w**2, n, sub)

    p_g = _by_subsystem_basis(p, n, nb, sub)
    u_g = _by_subsystem_basis(u, n, nb, sub)
    t_g = _by_subsystem_basis(t, n, nb, sub)
    ok = _by_subsystem_basis(size[:, None] >= 2, n, nb, sub)[..., 0]
    s1_g = _by_subsystem_basis(s1[:, None], n, nb, sub)[..., 0]
    s2_g = _by_subsystem_basis(s2[:, None], n, nb, sub)[..., 0]
    n_rest = p_g.shape[1]

    pbar = p_g.mean(axis=1)
    q = np.sum(pbar * _kron_apply(pbar, kern, m), axis=1)
    plug = np.sum(p_g * _kron_apply(p_g, kern, m).reshape(p_g.shape), axis=2)
    pairs = np.sum(u_g * _kron_apply(u_g, kern, m).reshape(u_g.shape), axis=2) - np.einsum("grb,gb->gr", t_g, dfac)
    with np.errstate(invalid="ignore", divide="ignore"):
        fixed = np.where(ok, pairs / (s1_g**2 - s2_g), plug)
    q = q + (fixed - plug).sum(axis=1) / n_rest**2
    return float(2**m * q.mean())


def hamming_purity_sampled(shots: ShotSet, subsystem: Sequence[int]) -> float:
    """U-statistic purity: ordered pairs of distinct shots within each subsystem basis group."""
    sub = _check_subsystem(subsystem, shots.n)
    m = len(sub)
    nb = build_povm(shots.design).n_bases
    counts = np.zeros((nb**m, 2**m))
    for rep in shots.repetitions:
        if rep.survived:
            rows = _tensor.basis_index(rep.basis[:, sub], nb)
            cols = _tensor.bit_index(rep.bits[:, sub])
            np.add.at(counts, (rows, cols), 1.0)
    size = counts.sum(axis=1)
    ok = size >= 2
    if not ok.any():
        raise EstimationError("no subsystem basis group with at least two shots")
    kern = np.repeat(_hamming_kernel(-1)[None], nb, axis=0)
    # c^T K c counts every ordered pair; the diagonal (self) pairs contribute size
    pairs = np.sum(counts * _tensor.apply_local(counts, kern, m), axis=1) - size
    values = pairs[ok] / (size[ok] * (size[ok] - 1))
    return float(2**m * values.mean())


# ---------------------------------------------------------------- experiments


@dataclass
class EstimateReport:
    estimator: str
    values: list
    mean: float
    std: float
    shots: int
    mitigated: bool
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def from_values(cls, estimator, values, shots, mitigated, diagnostics=None) -> "EstimateReport":
        v = np.asarray(values, dtype=float)
        if v.size == 0 or not np.all(np.isfinite(v)):
            raise EstimationError("estimator produced no or non-finite values")
        std = float(v.std(ddof=1)) if v.size > 1 else 0.0
        return cls(estimator, v.tolist(), float(v.mean()), std, int(shots), bool(mitigated), dict(diagnostics or {}))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "EstimateReport":
        try:
            return cls(
                str(doc["estimator"]),
                [float(x) for x in doc["values"]],
                float(doc["mean"]),
                float(doc["std"]),
                int(doc.get("shots", 0)),
                bool(doc.get("mitigated", False)),
                dict(doc.get("diagnostics", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"malformed report: {exc}") from exc


def state_from_spec(spec) -> StateDescriptor:
    """``{"w": n}``, ``{"amplitudes": [...]}`` or a bare amplitude list.

    Complex amplitudes may be given as ``[re, im]`` pairs.
    """
    if isinstance(spec, dict):
        if "w" in spec:
            return w_state(int(spec["w"]))
        if "amplitudes" in spec:
            spec = spec["amplitudes"]
        else:
            raise InvalidArgumentError(f"unrecognized state spec {spec!r}")
    if not isinstance(spec, (list, tuple)) or not spec:
        raise InvalidArgumentError(f"unrecognized state spec {spec!r}")
    amps = [complex(a[0], a[1]) if isinstance(a, (list, tuple)) else complex(a) for a in spec]
    return StateDescriptor.pure(amps)


@dataclass
class ExperimentConfig:
    state: object
    design: str = "octa6"
    noise: object = None
    shots: int = 10_000
    reps: int = 100
    seed: int = 42
    estimator: str = "fidelity"
    subsystem: Optional[list] = None
    mitigate: bool = True
    h: float = 1.0
    method: str = "auto"
    clip: bool = False
    pair_correction: bool = True
    count_survived: bool = False
    base_dir: Optional[str] = field(default=None, repr=False)

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise InvalidArgumentError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.design not in ("octa6", "cube8", "icosa12"):
            raise InvalidArgumentError(f"unknown design {self.design!r}")
        if int(self.shots) < 1 or int(self.reps) < 1:
            raise InvalidArgumentError("shots and reps must be positive")
        if float(self.h) < 0:
            raise InvalidArgumentError("h must be nonnegative")
        self.shots, self.reps, self.seed, self.h = int(self.shots), int(self.reps), int(self.seed), float(self.h)
        self.mitigate = bool(self.mitigate)

    def target(self) -> StateDescriptor:
        return state_from_spec(self.state)

    def noise_params(self) -> NoiseParams:
        if self.noise is None:
            base = NoiseParams.zeros(self.design)
        elif isinstance(self.noise, dict):
            base = NoiseParams.from_dict(self.noise)
        else:
            base = load_noise(self._resolve(self.noise))
        if base.design != self.design:
            raise InvalidArgumentError(f"noise design {base.design} does not match {self.design}")
        return scale_noise(base, self.h)

    def _resolve(self, path) -> Path:
        p = Path(path)
        if not p.is_absolute() and self.base_dir is not None and (Path(self.base_dir) / p).exists():
            return Path(self.base_dir) / p
        if not p.exists() and (FIXTURES / p.name).exists():
            return FIXTURES / p.name
        return p

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "ExperimentConfig":
        known = {k for k in cls.__dataclass_fields__ if k != "base_dir"}
        unknown = set(doc) - known
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
        if "state" not in doc:
            raise InvalidArgumentError("config needs a state")
        return cls(**doc, base_dir=None if base_dir is None else str(base_dir))


SWEEPABLE = ("state", "h", "mitigate", "subsystem", "shots", "design", "noise")


def expand_configs(doc: dict, base_dir=None) -> list:
    """Expand an experiment document into one config per sweep point.

    A ``sweep`` entry maps config keys to lists of values; the cartesian
    product is taken in key order of the document.
    """
    doc = dict(doc)
    sweep = doc.pop("sweep", {}) or {}
    if not isinstance(sweep, dict):
        raise InvalidArgumentError("sweep must map keys to value lists")
    for key, vals in sweep.items():
        if key not in SWEEPABLE:
            raise InvalidArgumentError(f"cannot sweep {key!r}")
        if not isinstance(vals, list) or not vals:
            raise InvalidArgumentError(f"sweep values for {key!r} must be a nonempty list")
    keys = list(sweep)
    out = []
    for combo in itertools.product(*(sweep[k] for k in keys)):
        d = dict(doc)
        d.update(zip(keys, combo))
        out.append((dict(zip(keys, combo)), ExperimentConfig.from_dict(d, base_dir)))
    return out


def load_experiment(path) -> list:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataFormatError(f"config {path} must be a JSON object")
    return expand_configs(doc, Path(path).parent)


def run_experiment(config: ExperimentConfig, threads: int = 1, table_sink=None) -> EstimateReport:
    """Sample, optionally mitigate, and estimate for each repetition.

    Unmitigated data still pass through the loss renormalization with zero
    noise, which turns raw frequencies into a lossless table.  By default the
    inverted table is left unclipped, because clipping negative entries
    biases the (linear) fidelity estimate at a few shots per group.  Purity
    uses the pair-corrected form unless ``pair_correction`` is off.  The
    report depends only on the config, never on ``threads``.

    ``table_sink(r, report)``, if given, receives each repetition's
    mitigation report.
    """
    target = config.target()
    povm = build_povm(config.design)
    params = config.noise_params()
    zero = NoiseParams.zeros(config.design)
    if config.estimator == "purity":
        subsystem = _check_subsystem(config.subsystem if config.subsystem is not None else range(target.n), target.n)
    shots = sample_shots(
        target, povm, params, config.shots, config.reps, config.seed, config.method, threads, config.count_survived
    )

    def one(r):
        try:
            table = empirical_table(shots.repetition(r))
            model = params if config.mitigate else zero
            report = mitigate(table, model, clip=config.clip)
            if table_sink is not None:
                table_sink(r, report)
            if config.estimator == "fidelity":
                value = shadow_fidelity(report.mitigated, povm, target)
            elif config.pair_correction:
                value = hamming_purity_corrected(table, model, subsystem)
            else:
                value = hamming_purity(report.mitigated, subsystem)
            return value, report.empty_group_count, report.negativity, int(table.requested - table.lost)
        except MetashadowError as exc:
            raise EstimationError(f"repetition {r}: {exc}", repetition=r) from exc

    if threads > 1 and config.reps > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(config.reps)))
    else:
        rows = [one(r) for r in range(config.reps)]

    values, empty, negativity, survived = (list(col) for col in zip(*rows))
    diagnostics = {
        "empty_groups": empty,
        "negativity": negativity,
        "survived": survived,
        "h": config.h,
        "design": config.design,
        "n": target.n,
    }
    if config.estimator == "purity":
        diagnostics["subsystem"] = subsystem
    return EstimateReport.from_values(config.estimator, values, config.shots, config.mitigate, diagnostics)
