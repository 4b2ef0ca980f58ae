"""Noise parameter vectors and the forward noise map (linear part, then photon loss)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import _tensor
from .errors import DataFormatError, DegenerateGroupError, InvalidArgumentError
from .povm import ProbTable, build_povm

CLAMP_MAX = 0.999


def _check_prob(p, name="p") -> float:
    p = float(p)
    if not (0.0 <= p < 1.0) or not np.isfinite(p):
        raise InvalidArgumentError(f"{name} must lie in [0, 1), got {p!r}")
    return p


def gamma_bf(p: float) -> np.ndarray:
    """Symmetric basis-flip transition matrix."""
    p = _check_prob(p)
    return np.array([[1.0 - p, p], [p, 1.0 - p]])


def gamma_ad(p: float) -> np.ndarray:
    """Readout amplitude damping: outcome 1 is read as 0 with probability p."""
    p = _check_prob(p)
    return np.array([[1.0, p], [0.0, 1.0 - p]])


@dataclass(frozen=True)
class NoiseParams:
    """Per-basis effective basis-flip, amplitude damping and per-port loss rates."""

    design: str
    p_bf: np.ndarray
    p_ad: np.ndarray
    p_pl: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        nb = build_povm(self.design).n_bases
        arrays = {}
        for name, shape in (("p_bf", (nb,)), ("p_ad", (nb,)), ("p_pl", (nb, 2))):
            a = np.array(getattr(self, name), dtype=float)
            if a.size != int(np.prod(shape)):
                raise InvalidArgumentError(f"{name} needs {int(np.prod(shape))} entries for {self.design}, got {a.size}")
            a = a.reshape(shape)
            if np.any(~np.isfinite(a)) or a.min() < 0.0 or a.max() >= 1.0:
                raise InvalidArgumentError(f"{name} entries must lie in [0, 1): {a.tolist()}")
            a.setflags(write=False)
            arrays[name] = a
        for name, a in arrays.items():
            object.__setattr__(self, name, a)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(build_povm(self.design).basis_labels))

    @property
    def n_bases(self) -> int:
        return self.p_bf.shape[0]

    @property
    def K(self) -> int:
        return 2 * self.n_bases

    @classmethod
    def zeros(cls, design: str) -> "NoiseParams":
        nb = build_povm(design).n_bases
        return cls(design, np.zeros(nb), np.zeros(nb), np.zeros((nb, 2)))

    def to_vector(self) -> np.ndarray:
        """Flatten as [p_bf, p_ad, p_pl0, p_pl1] per basis."""
        return np.column_stack([self.p_bf, self.p_ad, self.p_pl]).ravel()

    @classmethod
    def from_vector(cls, design: str, vec, labels: tuple = ()) -> "NoiseParams":
        v = np.asarray(vec, dtype=float).reshape(-1, 4)
        return cls(design, v[:, 0], v[:, 1], v[:, 2:], labels)

    def gammas(self) -> np.ndarray:
        """(K/2, 2, 2) stack of local transition matrices."""
        return np.array([local_gamma(self, i) for i in range(self.n_bases)])

    def survival(self) -> np.ndarray:
        return 1.0 - self.p_pl

    def to_dict(self) -> dict:
        return {
            "design": self.design,
            "bases": [
                {
                    "label": self.labels[i],
                    "p_bf": float(self.p_bf[i]),
                    "p_ad": float(self.p_ad[i]),
                    "p_pl": [float(self.p_pl[i, 0]), float(self.p_pl[i, 1])],
                }
                for i in range(self.n_bases)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NoiseParams":
        try:
            design = doc["design"]
            bases = doc["bases"]
            labels = tuple(str(b["label"]) for b in bases)
            p_bf = [b["p_bf"] for b in bases]
            p_ad = [b["p_ad"] for b in bases]
            p_pl = [b["p_pl"] for b in bases]
            return cls(design, np.array(p_bf, float), np.array(p_ad, float), np.array(p_pl, float), labels)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"malformed noise document: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def load_noise(path) -> NoiseParams:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read noise file {path}: {exc}") from exc
    return NoiseParams.from_dict(doc)


def save_noise(params: NoiseParams, path) -> None:
    Path(path).write_text(params.to_json() + "\n")


def local_gamma(params: NoiseParams, i: int) -> np.ndarray:
    """Gamma_ad @ Gamma_bf for basis ``i`` (this product order; they do not commute)."""
    if not 0 <= i < params.n_bases:
        raise InvalidArgumentError(f"basis index {i} out of range")
    return gamma_ad(params.p_ad[i]) @ gamma_bf(params.p_bf[i])


def scale_noise(params: NoiseParams, h: float) -> NoiseParams:
    if h < 0:
        raise InvalidArgumentError(f"scale factor must be nonnegative, got {h!r}")
    vec = np.clip(params.to_vector() * h, 0.0, CLAMP_MAX)
    return NoiseParams.from_vector(params.design, vec, params.labels)


@dataclass
class LossyProbTable:
    """Per-group conditional distributions of surviving shots.

    ``survival[r]`` is the fraction of shots in group ``r`` that are not
    lost.  Empirical tables also carry raw ``counts``; groups without any
    shot are flagged in :attr:`empty` and hold a zero conditional.
    """

    n: int
    K: int
    cond: np.ndarray
    survival: np.ndarray
    counts: Optional[np.ndarray] = None
    lost: Optional[int] = None
    requested: Optional[int] = None

    @property
    def n_bases(self) -> int:
        return self.K // 2

    @property
    def prior(self) -> float:
        return (2.0 / self.K) ** self.n

    @property
    def empty(self) -> np.ndarray:
        if self.counts is None:
            return np.zeros(self.cond.shape[0], dtype=bool)
        return self.counts.sum(axis=1) == 0

    def joint_survived(self) -> np.ndarray:
        """Absolute probability of observing each (basis, bits) outcome."""
        return self.prior * self.survival[:, None] * self.cond


def _check_design(table, params: NoiseParams) -> None:
    if table.K != params.K:
        raise InvalidArgumentError(f"table has K={table.K} but noise design {params.design} has K={params.K}")


def apply_linear(table: ProbTable, params: NoiseParams) -> ProbTable:
    _check_design(table, params)
    probs = _tensor.apply_local(table.probs, params.gammas(), table.n)
    return ProbTable(table.n, table.K, probs, allow_negative=table.allow_negative)


def loss_weights(params: NoiseParams, n: int) -> np.ndarray:
    """Grouped array of prod_q (1 - p_pl(i_q, b_q))."""
    return _tensor.local_weights(params.survival(), n)


def apply_photon_loss(table: ProbTable, params: NoiseParams) -> LossyProbTable:
    _check_design(table, params)
    cond = table.conditionals()
    weighted = cond * loss_weights(params, table.n)
    surv = weighted.sum(axis=1)
    if np.any(surv <= 0.0):
        bad = int(np.flatnonzero(surv <= 0.0)[0])
        raise DegenerateGroupError(f"basis group {bad} has zero weight after photon loss")
    return LossyProbTable(table.n, table.K, weighted / surv[:, None], surv)


def apply_composite(table: ProbTable, params: NoiseParams) -> LossyProbTable:
    """Linear readout noise first, then photon loss."""
    return apply_photon_loss(apply_linear(table, params), params)
