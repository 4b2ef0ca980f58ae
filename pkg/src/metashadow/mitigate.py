"""Error mitigation on probability tables: undo photon loss, then invert readout noise."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _tensor
from .errors import DataFormatError, InvalidArgumentError, SingularityError
from .noise import LossyProbTable, NoiseParams, loss_weights
from .povm import ProbTable

DET_MIN = 1e-6


@dataclass
class MitigationReport:
    mitigated: ProbTable
    empty_group_count: int
    negativity: float
    condition: float


def _check(table, params: NoiseParams):
    if table.K != params.K:
        raise InvalidArgumentError(f"table has K={table.K} but noise design {params.design} has K={params.K}")


def invert_photon_loss(table: LossyProbTable, params: NoiseParams) -> ProbTable:
    """Reweight surviving-shot frequencies by inverse survival, renormalize per group,
    and restore the state-independent group prior (2/K)^n.

    Groups without any shot get the uniform conditional.
    """
    _check(table, params)
    k = table.cond / loss_weights(params, table.n)
    total = k.sum(axis=1, keepdims=True)
    empty = table.empty | (total[:, 0] <= 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = np.where(empty[:, None], 2.0**-table.n, k / np.where(total > 0, total, 1.0))
    return ProbTable(table.n, table.K, cond * table.prior)


def _inverse_gammas(params: NoiseParams) -> np.ndarray:
    gammas = params.gammas()
    dets = np.linalg.det(gammas)
    for i, det in enumerate(dets):
        if abs(det) <= DET_MIN:
            raise SingularityError(
                f"transition matrix for basis {params.labels[i]!r} is singular (det = {det:.3g})", basis=i
            )
    return np.linalg.inv(gammas)


def invert_linear(table: ProbTable, params: NoiseParams, clip: bool = True) -> MitigationReport:
    """Apply the per-qubit inverse transition matrices within each group.

    ``negativity`` is the total negative mass of the inverted table.  With
    ``clip`` (default) negative entries are zeroed and each group is rescaled
    to (2/K)^n; without it the quasi-probabilities are returned unchanged,
    which keeps linear estimators unbiased.
    """
    _check(table, params)
    inv = _inverse_gammas(params)
    condition = float(max(np.linalg.cond(g) for g in params.gammas()))
    probs = _tensor.apply_local(table.probs, inv, table.n)
    neg = np.clip(probs, None, 0.0)
    # drop float noise from exact round trips
    neg[neg > -1e-15] = 0.0
    negativity = float(-neg.sum()) + 0.0
    if not clip:
        return MitigationReport(ProbTable(table.n, table.K, probs, allow_negative=True), 0, negativity, condition)
    pos = probs - neg
    mass = pos.sum(axis=1, keepdims=True)
    probs = pos * (table.prior / mass)
    return MitigationReport(ProbTable(table.n, table.K, probs), 0, negativity, condition)


def mitigate(table: LossyProbTable, params: NoiseParams, clip: bool = True) -> MitigationReport:
    """Invert the composite noise map: photon-loss renormalization, then linear inversion."""
    lossless = invert_photon_loss(table, params)
    report = invert_linear(lossless, params, clip=clip)
    report.empty_group_count = int(table.empty.sum())
    return report


def write_table_csv(table: ProbTable, path) -> None:
    """``basis_string,bit_string,probability`` with one-based basis digits."""
    digits = table.basis_strings() + 1
    n = table.n
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["basis_string", "bit_string", "probability"])
        for r, row in enumerate(digits):
            basis = "".join(str(int(d)) for d in row)
            for c in range(table.probs.shape[1]):
                w.writerow([basis, format(c, f"0{n}b"), repr(float(table.probs[r, c]))])


def read_table_csv(path, K: int) -> ProbTable:
    nb = K // 2
    rows = []
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["basis_string", "bit_string", "probability"]:
                raise DataFormatError(f"{path}: unexpected header {reader.fieldnames}")
            for lineno, rec in enumerate(reader, start=2):
                try:
                    basis = [int(ch) - 1 for ch in rec["basis_string"]]
                    bits = [int(ch) for ch in rec["bit_string"]]
                    rows.append((basis, bits, float(rec["probability"])))
                except (TypeError, ValueError) as exc:
                    raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataFormatError(f"{path}: no rows")
    n = len(rows[0][0])
    probs = np.full((nb**n, 2**n), np.nan)
    for lineno, (basis, bits, p) in enumerate(rows, start=2):
        if len(basis) != n or len(bits) != n or min(basis) < 0 or max(basis) >= nb or set(bits) - {0, 1}:
            raise DataFormatError(f"{path}:{lineno}: malformed basis or bit string")
        r = _tensor.basis_index(np.array([basis]), nb)[0]
        probs[r, _tensor.bit_index(np.array([bits]))[0]] = p
    if np.isnan(probs).any():
        raise DataFormatError(f"{path}: table is incomplete")
    return ProbTable(n, K, probs, allow_negative=True)
