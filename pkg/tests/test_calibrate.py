import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import REF_P_AD, REF_P_BF, REF_P_PL, random_noise
from metashadow.calibrate import (
    CalibrationConfig,
    CalibrationProblem,
    _Objective,
    bhattacharyya_fidelity,
    calibrate,
    default_probes,
    predict_distribution,
    validate_model,
    validation_state,
)
from metashadow.emulator import PROBE_LABELS, port_operators_from_noise, probe_state
from metashadow.errors import InvalidArgumentError
from metashadow.noise import NoiseParams
from metashadow.povm import build_povm
from metashadow.qcore import StateDescriptor, basis_state


class TestBhattacharyya:
    def test_identical(self):
        assert bhattacharyya_fidelity([0.2, 0.3, 0.5], [0.2, 0.3, 0.5]) == pytest.approx(1.0)

    def test_disjoint(self):
        assert bhattacharyya_fidelity([1, 0], [0, 1]) == 0.0

    def test_worked_example(self):
        assert bhattacharyya_fidelity([0.5, 0.5], [0.9, 0.1]) == pytest.approx(0.8, abs=1e-12)

    @pytest.mark.parametrize("p, q", [([0.5, 0.5], [1.0]), ([1.2, -0.2], [0.5, 0.5]), ([0.5, 0.4], [0.5, 0.5])])
    def test_invalid(self, p, q):
        with pytest.raises(InvalidArgumentError):
            bhattacharyya_fidelity(p, q)

    @given(st.integers(min_value=2, max_value=10), st.integers(min_value=0, max_value=2**32 - 1))
    def test_symmetric_and_bounded(self, k, seed):
        rng = np.random.default_rng(seed)
        p, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
        f = bhattacharyya_fidelity(p, q)
        assert f == pytest.approx(bhattacharyya_fidelity(q, p), abs=1e-15)
        assert 0.0 <= f < 1.0 - 1e-9
        assert bhattacharyya_fidelity(p, p) == pytest.approx(1.0, abs=1e-12)


class TestPredict:
    def test_noiseless_h(self):
        dist = predict_distribution(NoiseParams.zeros("octa6"), basis_state("0"))
        np.testing.assert_allclose(dist, [1 / 3, 0, 1 / 6, 1 / 6, 1 / 6, 1 / 6, 0], atol=1e-15)

    def test_sums_to_one(self, ref_noise):
        for lab in PROBE_LABELS:
            assert predict_distribution(ref_noise, probe_state(lab)).sum() == pytest.approx(1.0, abs=1e-12)

    def test_reference_matches_bundled_counts(self, ref_noise, calibration_counts):
        # each count against the reference model prediction, multinomial 4 sigma
        for row, lab in enumerate(calibration_counts.probes):
            q = predict_distribution(ref_noise, probe_state(lab))
            n = calibration_counts.injected[row]
            obs = np.append(calibration_counts.counts[row], calibration_counts.lost[row])
            sigma = np.sqrt(n * q * (1 - q))
            assert np.all(np.abs(obs - n * q) <= 4 * sigma + 1.0), lab

    @pytest.mark.xfail(strict=True, reason="photon-loss asymmetry of the fitted device is not reproducible by the per-port loss model at 1e-3")
    def test_reference_matches_device_model_h(self, ref_noise, fitted_ops):
        q = predict_distribution(ref_noise, probe_state("H"))
        np.testing.assert_allclose(q, fitted_ops.distribution(probe_state("H")), atol=1e-3)

    def test_reference_vs_device_model_h_gap(self, ref_noise, fitted_ops):
        # the gap above is a few 1e-3, dominated by the H-V port
        diff = predict_distribution(ref_noise, probe_state("H")) - fitted_ops.distribution(probe_state("H"))
        assert 1e-3 < np.abs(diff).max() < 1e-2
        assert int(np.argmax(np.abs(diff[:-1]))) == 3

    def test_mixed_probe_symmetry(self, rng):
        params = random_noise("octa6", rng)
        dist = predict_distribution(params, StateDescriptor.mixed(np.eye(2) / 2))
        g = params.gammas()
        s = params.survival()
        for i in range(3):
            expected = (1 / 3) * 0.5 * g[i].sum(axis=1) * s[i]
            np.testing.assert_allclose(dist[2 * i : 2 * i + 2], expected, atol=1e-12)

    def test_multi_qubit_probe(self):
        with pytest.raises(InvalidArgumentError):
            predict_distribution(NoiseParams.zeros("octa6"), basis_state("00"))

    def test_vectorized_objective_matches(self, rng):
        params = random_noise("octa6", rng)
        states = [probe_state(lab) for lab in PROBE_LABELS]
        obs = np.array([predict_distribution(params, s) for s in states])
        obj = _Objective(CalibrationProblem("octa6", states, obs))
        np.testing.assert_allclose(obj.predict(params.to_vector()), obs, atol=1e-14)


def _exact_problem(params, config=None):
    return CalibrationProblem.from_operators(port_operators_from_noise(params), config=config)


class TestProblem:
    def test_default_probes(self):
        assert default_probes("octa6") == list(PROBE_LABELS)
        assert default_probes("cube8") == build_povm("cube8").port_labels

    def test_shape_and_normalization(self):
        states = [probe_state(lab) for lab in PROBE_LABELS]
        with pytest.raises(InvalidArgumentError):
            CalibrationProblem("octa6", states, np.full((6, 6), 1 / 6))
        with pytest.raises(InvalidArgumentError):
            CalibrationProblem("octa6", states, np.full((6, 7), 0.2))

    def test_underdetermined(self):
        with pytest.raises(InvalidArgumentError):
            CalibrationProblem("octa6", [probe_state("H")], np.full((1, 7), 1 / 7))

    def test_from_counts(self, calibration_counts):
        prob = CalibrationProblem.from_counts(calibration_counts)
        assert prob.labels == ["H", "V", "H+V", "H-V", "RC", "LC"]
        assert prob.observed[0, 0] == pytest.approx(0.2552)
        assert prob.observed[0, -1] == pytest.approx(1 - 0.7713)


class TestCalibrate:
    def test_zero_noise(self):
        res = calibrate(_exact_problem(NoiseParams.zeros("octa6")))
        assert np.abs(res.lambda_opt.to_vector()).max() < 1e-6
        assert res.objective_value == pytest.approx(6.0, abs=1e-12)
        assert all(res.diagnostics["converged"])

    def test_reference_round_trip(self, ref_noise):
        res = calibrate(_exact_problem(ref_noise))
        np.testing.assert_allclose(res.lambda_opt.to_vector(), ref_noise.to_vector(), atol=1e-4)

    def test_bundled_counts(self, calibration_counts):
        res = calibrate(CalibrationProblem.from_counts(calibration_counts))
        lam = res.lambda_opt
        np.testing.assert_allclose(lam.p_bf, REF_P_BF, atol=0.005)
        np.testing.assert_allclose(lam.p_ad, REF_P_AD, atol=0.005)
        np.testing.assert_allclose(lam.p_pl, REF_P_PL, atol=0.01)
        assert res.objective_value <= 6.0
        assert all(0 <= f <= 1 for f in res.per_probe_fidelity)

    def test_deterministic(self, rng):
        params = random_noise("octa6", rng, bf_max=0.1, ad_max=0.1, pl_max=0.3)
        cfg = CalibrationConfig(starts=4, seed=3)
        a = calibrate(_exact_problem(params, cfg))
        b = calibrate(_exact_problem(params, CalibrationConfig(starts=4, seed=3, threads=4)))
        np.testing.assert_array_equal(a.lambda_opt.to_vector(), b.lambda_opt.to_vector())
        assert a.diagnostics["best_start"] == b.diagnostics["best_start"]

    def test_truth_beats_perturbations(self, rng):
        params = random_noise("octa6", rng, bf_max=0.2, ad_max=0.2, pl_max=0.4)
        prob = _exact_problem(params)
        obj = _Objective(prob)
        best = obj(params.to_vector())
        for _ in range(100):
            trial = np.clip(params.to_vector() + rng.uniform(-0.05, 0.05, 12), 0, 0.999)
            assert obj(trial) <= best + 1e-12

    def test_cube8_round_trip(self, rng):
        params = random_noise("cube8", rng, bf_max=0.1, ad_max=0.1, pl_max=0.3)
        # 16 parameters: the simplex needs more than the default 1e4 evaluations
        res = calibrate(_exact_problem(params, CalibrationConfig(starts=4, max_evals=50_000)))
        np.testing.assert_allclose(res.lambda_opt.to_vector(), params.to_vector(), atol=1e-4)

    def test_diagnostics_dict(self):
        res = calibrate(_exact_problem(NoiseParams.zeros("octa6"), CalibrationConfig(starts=2)))
        d = res.diagnostics_dict()
        assert set(d) == {"objective", "per_probe_fidelity", "starts", "converged"}
        assert list(d["per_probe_fidelity"]) == list(PROBE_LABELS)


class TestValidate:
    def test_self_consistent(self, rng):
        params = random_noise("octa6", rng)
        curve = validate_model(params, port_operators_from_noise(params), sweep=16)
        assert len(curve) == 32
        assert curve.minimum == pytest.approx(1.0, abs=1e-10)

    def test_theta_zero_is_v_probe(self, ref_noise, fitted_ops):
        curve = validate_model(ref_noise, fitted_ops, sweep=8)
        theta0 = curve.family("xz")[0]
        assert theta0[0] == 0.0
        v = probe_state("V")
        expected = bhattacharyya_fidelity(fitted_ops.distribution(v), predict_distribution(ref_noise, v))
        assert theta0[1] == pytest.approx(expected, abs=1e-12)

    def test_families(self):
        np.testing.assert_allclose(validation_state(np.pi / 2, "xz").data, [1, 0], atol=1e-15)
        np.testing.assert_allclose(validation_state(0.0, "yz").data, [0, 1j], atol=1e-15)
        with pytest.raises(InvalidArgumentError):
            validation_state(0.0, "xy")

    def test_arguments(self, ref_noise, fitted_ops):
        with pytest.raises(InvalidArgumentError):
            validate_model(ref_noise, fitted_ops, sweep=1)
        with pytest.raises(InvalidArgumentError):
            validate_model(NoiseParams.zeros("cube8"), fitted_ops)
