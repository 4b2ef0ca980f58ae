"""Noise-parameter calibration by maximizing summed Bhattacharyya fidelity.

The lost photon is an explicit extra outcome in both the observed and the
predicted distributions, which makes absolute loss rates identifiable.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .emulator import PROBE_LABELS, CountTable, PortOperatorSet, probe_state
from .errors import InvalidArgumentError, NonConvergenceError
from .noise import CLAMP_MAX, NoiseParams, apply_composite
from .povm import born_table, build_povm
from .qcore import StateDescriptor


def bhattacharyya_fidelity(p, q) -> float:
    """(sum_i sqrt(p_i q_i))^2 for two distributions of equal length."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise InvalidArgumentError(f"length mismatch: {p.shape} vs {q.shape}")
    if p.min() < 0 or q.min() < 0:
        raise InvalidArgumentError("distributions must be nonnegative")
    if abs(p.sum() - 1.0) > 1e-6 or abs(q.sum() - 1.0) > 1e-6:
        raise InvalidArgumentError("distributions must sum to 1")
    return float(min(1.0, np.sum(np.sqrt(p * q)) ** 2))


def predict_distribution(params: NoiseParams, probe: StateDescriptor) -> np.ndarray:
    """Noisy port probabilities for a single-qubit probe, then P(lost)."""
    if probe.n != 1:
        raise InvalidArgumentError("calibration probes must be single-qubit states")
    povm = build_povm(params.design)
    noisy = apply_composite(born_table(probe, povm), params)
    ports = noisy.joint_survived().ravel()
    return np.append(ports, max(0.0, 1.0 - ports.sum()))


def default_probes(design: str) -> list:
    """The six polarization probes for octa6, otherwise the design's own port states."""
    if design == "octa6":
        return list(PROBE_LABELS)
    return build_povm(design).port_labels


@dataclass
class CalibrationConfig:
    starts: int = 16
    max_evals: int = 10_000
    tol: float = 1e-9
    seed: int = 0
    threads: int = 1


@dataclass
class CalibrationProblem:
    design: str
    probes: list
    observed: np.ndarray
    labels: list = field(default_factory=list)
    config: CalibrationConfig = field(default_factory=CalibrationConfig)

    def __post_init__(self):
        K = build_povm(self.design).K
        obs = np.asarray(self.observed, dtype=float)
        if obs.shape != (len(self.probes), K + 1):
            raise InvalidArgumentError(f"observed shape {obs.shape} != {(len(self.probes), K + 1)}")
        if np.any(np.abs(obs.sum(axis=1) - 1.0) > 1e-9) or obs.min() < 0:
            raise InvalidArgumentError("each observed distribution must be nonnegative and sum to 1")
        n_params = 4 * (K // 2)
        # each probe contributes K independent outcome frequencies (K+1 minus normalization)
        if n_params > len(self.probes) * K:
            raise InvalidArgumentError("too few probes to identify all noise parameters")
        self.observed = obs
        if not self.labels:
            self.labels = [f"probe{k}" for k in range(len(self.probes))]

    @classmethod
    def from_counts(cls, table: CountTable, config: Optional[CalibrationConfig] = None) -> "CalibrationProblem":
        return cls(table.design, table.probe_states(), table.distributions(), list(table.probes), config or CalibrationConfig())

    @classmethod
    def from_operators(
        cls, ops: PortOperatorSet, probes: Optional[Sequence[str]] = None, config: Optional[CalibrationConfig] = None
    ) -> "CalibrationProblem":
        """Problem whose observations are exact emulator distributions (infinite shots)."""
        povm = build_povm(ops.design)
        labels = list(probes or default_probes(ops.design))
        states = [probe_state(lab, povm) for lab in labels]
        obs = np.array([ops.distribution(s) for s in states])
        return cls(ops.design, states, obs, labels, config or CalibrationConfig())


@dataclass
class CalibrationResult:
    lambda_opt: NoiseParams
    objective_value: float
    per_probe_fidelity: list
    diagnostics: dict

    def diagnostics_dict(self) -> dict:
        return {
            "objective": self.objective_value,
            "per_probe_fidelity": dict(zip(self.diagnostics["labels"], self.per_probe_fidelity)),
            "starts": self.diagnostics["starts"],
            "converged": self.diagnostics["converged"],
        }


class _Objective:
    """Vectorized sum of per-probe fidelities as a function of the flat parameter vector."""

    def __init__(self, problem: CalibrationProblem):
        povm = build_povm(problem.design)
        self.K = povm.K
        self.nb = povm.n_bases
        # ideal per-basis conditionals, shape (C, K/2, 2)
        self.ideal = np.array([born_table(s, povm).conditionals() for s in problem.probes])
        self.sqrt_obs = np.sqrt(problem.observed)

    def predict(self, vec: np.ndarray) -> np.ndarray:
        v = np.clip(np.asarray(vec, dtype=float), 0.0, CLAMP_MAX).reshape(self.nb, 4)
        bf, ad, surv = v[:, 0], v[:, 1], 1.0 - v[:, 2:]
        # Gamma_ad @ Gamma_bf applied to (P0, P1) per basis
        p0, p1 = self.ideal[..., 0], self.ideal[..., 1]
        f0 = (1 - bf) * p0 + bf * p1
        f1 = bf * p0 + (1 - bf) * p1
        n0 = f0 + ad * f1
        n1 = (1 - ad) * f1
        ports = (2.0 / self.K) * np.stack([n0 * surv[:, 0], n1 * surv[:, 1]], axis=-1).reshape(len(self.ideal), -1)
        lost = np.clip(1.0 - ports.sum(axis=1, keepdims=True), 0.0, None)
        return np.hstack([ports, lost])

    def per_probe(self, vec) -> np.ndarray:
        q = np.clip(self.predict(vec), 0.0, None)
        return np.sum(self.sqrt_obs * np.sqrt(q), axis=1) ** 2

    def __call__(self, vec) -> float:
        return float(self.per_probe(vec).sum())


def _to_box(y) -> np.ndarray:
    return CLAMP_MAX * np.sin(np.asarray(y, dtype=float)) ** 2


def _from_box(lam) -> np.ndarray:
    return np.arcsin(np.sqrt(np.clip(np.asarray(lam, dtype=float), 0.0, CLAMP_MAX) / CLAMP_MAX))


def calibrate(problem: CalibrationProblem) -> CalibrationResult:
    """Multi-start Nelder-Mead over the box [0, 0.999]^dim.

    Starts come from a seeded Latin hypercube; the best objective wins, ties
    going to the lowest start index.
    """
    cfg = problem.config
    obj = _Objective(problem)
    dim = 4 * obj.nb
    starts = qmc.LatinHypercube(d=dim, rng=np.random.default_rng(cfg.seed)).random(cfg.starts) * CLAMP_MAX

    def run(lam0):
        # search over y with lambda = 0.999 sin^2(y): the box becomes smooth and
        # optima on its faces (common, e.g. zero damping) become interior points
        return minimize(
            lambda y: -obj(_to_box(y)),
            _from_box(lam0),
            method="Nelder-Mead",
            # the diameter criterion alone decides convergence
            options={"maxfev": cfg.max_evals, "xatol": cfg.tol / 2, "fatol": np.inf, "adaptive": False},
        )

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            runs = list(pool.map(run, starts))
    else:
        runs = [run(x0) for x0 in starts]

    values = [float(-r.fun) for r in runs]
    best_idx = int(np.argmax(values))  # first maximum = lowest start index
    best = runs[best_idx]
    x = _to_box(best.x)
    lam = NoiseParams.from_vector(problem.design, x)
    result = CalibrationResult(
        lam,
        float(obj(x)),
        obj.per_probe(x).tolist(),
        {
            "labels": list(problem.labels),
            "starts": cfg.starts,
            "best_start": best_idx,
            "evaluations": [int(r.nfev) for r in runs],
            "start_objectives": values,
            "converged": [bool(r.success) for r in runs],
        },
    )
    if not any(r.success for r in runs):
        raise NonConvergenceError(f"none of {cfg.starts} starts converged", best=result)
    return result


@dataclass
class ValidationCurve:
    points: list  # (theta, family, fidelity)

    @property
    def minimum(self) -> float:
        return min(f for _, _, f in self.points)

    def family(self, name: str) -> list:
        return [(t, f) for t, fam, f in self.points if fam == name]

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)


def validation_state(theta: float, family: str) -> StateDescriptor:
    """sin(t)|H> + cos(t)|V> ("xz") or sin(t)|H> + i cos(t)|V> ("yz")."""
    if family == "xz":
        return StateDescriptor.pure([np.sin(theta), np.cos(theta)])
    if family == "yz":
        return StateDescriptor.pure([np.sin(theta), 1j * np.cos(theta)])
    raise InvalidArgumentError(f"unknown family {family!r}")


def validate_model(lam: NoiseParams, reference: PortOperatorSet, sweep: int = 64) -> ValidationCurve:
    """Fidelity of the fitted model against the reference emulator on two state families."""
    if sweep < 2:
        raise InvalidArgumentError("sweep must be at least 2")
    if lam.design != reference.design:
        raise InvalidArgumentError("noise model and reference use different designs")
    points = []
    for family in ("xz", "yz"):
        for theta in np.arange(sweep) * (2.0 * np.pi / sweep):
            state = validation_state(theta, family)
            f = bhattacharyya_fidelity(reference.distribution(state), predict_distribution(lam, state))
            points.append((float(theta), family, f))
    return ValidationCurve(points)
