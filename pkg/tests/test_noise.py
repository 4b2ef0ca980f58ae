import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import REF_P_AD, REF_P_BF, REF_P_PL, random_noise
from metashadow.errors import DataFormatError, DegenerateGroupError, InvalidArgumentError
from metashadow.noise import (
    NoiseParams,
    apply_composite,
    apply_linear,
    apply_photon_loss,
    gamma_ad,
    gamma_bf,
    load_noise,
    local_gamma,
    loss_weights,
    save_noise,
    scale_noise,
)
from metashadow.povm import DESIGNS, ProbTable, born_table, build_povm
from metashadow.qcore import StateDescriptor, basis_state, random_mixed_state, random_pure_state

probs = st.floats(min_value=0.0, max_value=0.999, allow_nan=False)


class TestGammas:
    def test_bf_identity(self):
        np.testing.assert_array_equal(gamma_bf(0.0), np.eye(2))

    def test_bf_reference(self):
        np.testing.assert_allclose(gamma_bf(0.012466), [[0.987534, 0.012466], [0.012466, 0.987534]], atol=1e-15)

    def test_bf_half_is_singular(self):
        assert np.linalg.det(gamma_bf(0.5)) == pytest.approx(0.0, abs=1e-15)

    def test_ad_reference(self):
        np.testing.assert_allclose(gamma_ad(7.14e-3), [[1, 0.00714], [0, 0.99286]], atol=1e-15)
        np.testing.assert_allclose(gamma_ad(7.14e-3).sum(axis=0), [1, 1], atol=1e-15)

    @pytest.mark.parametrize("p", [-0.1, 1.0, 1.5, float("nan")])
    def test_out_of_range(self, p):
        with pytest.raises(InvalidArgumentError):
            gamma_bf(p)
        with pytest.raises(InvalidArgumentError):
            gamma_ad(p)

    @given(probs, probs)
    def test_column_stochastic(self, bf, ad):
        g = gamma_ad(ad) @ gamma_bf(bf)
        assert np.all(g >= 0)
        np.testing.assert_allclose(g.sum(axis=0), [1, 1], atol=1e-12)


def _single(p_bf, p_ad, design="octa6"):
    nb = build_povm(design).n_bases
    return NoiseParams(design, [p_bf] * nb, [p_ad] * nb, np.zeros((nb, 2)))


class TestLocalGamma:
    def test_zero(self):
        np.testing.assert_array_equal(local_gamma(_single(0, 0), 0), np.eye(2))

    def test_damping_only(self):
        np.testing.assert_allclose(local_gamma(_single(0, 0.3), 1), gamma_ad(0.3))

    def test_product(self):
        np.testing.assert_allclose(local_gamma(_single(0.1, 0.2), 0), [[0.92, 0.28], [0.08, 0.72]], atol=1e-15)

    def test_order_matters(self):
        other = gamma_bf(0.1) @ gamma_ad(0.2)
        assert np.abs(local_gamma(_single(0.1, 0.2), 0) - other).max() > 1e-3

    def test_bad_index(self):
        with pytest.raises(InvalidArgumentError):
            local_gamma(_single(0, 0), 3)


class TestNoiseParams:
    def test_reference_fixture(self, ref_noise):
        assert ref_noise.design == "octa6"
        np.testing.assert_allclose(ref_noise.p_bf, REF_P_BF)
        np.testing.assert_allclose(ref_noise.p_ad, REF_P_AD)
        np.testing.assert_allclose(ref_noise.p_pl, REF_P_PL)

    def test_vector_layout(self, ref_noise):
        v = ref_noise.to_vector()
        assert v.shape == (12,)
        np.testing.assert_allclose(v[:4], [REF_P_BF[0], REF_P_AD[0], *REF_P_PL[0]])
        back = NoiseParams.from_vector("octa6", v)
        np.testing.assert_array_equal(back.to_vector(), v)

    def test_immutable(self, ref_noise):
        with pytest.raises(ValueError):
            ref_noise.p_bf[0] = 0.3

    def test_rejects_bad_entries(self):
        with pytest.raises(InvalidArgumentError):
            NoiseParams("octa6", [0.1, 0.1, 1.0], [0, 0, 0], np.zeros((3, 2)))
        with pytest.raises(InvalidArgumentError):
            NoiseParams("octa6", [0.1, 0.1], [0, 0, 0], np.zeros((3, 2)))

    def test_json_round_trip(self, tmp_path, rng):
        params = random_noise("icosa12", rng)
        path = tmp_path / "noise.json"
        save_noise(params, path)
        back = load_noise(path)
        assert back.design == "icosa12"
        np.testing.assert_array_equal(back.to_vector(), params.to_vector())
        doc = json.loads(path.read_text())
        assert list(doc) == ["design", "bases"]
        assert list(doc["bases"][0]) == ["label", "p_bf", "p_ad", "p_pl"]

    @pytest.mark.parametrize("text", ["{", '{"design": "octa6"}', '{"design": "octa6", "bases": [{"label": "a"}]}'])
    def test_malformed_json(self, tmp_path, text):
        path = tmp_path / "bad.json"
        path.write_text(text)
        with pytest.raises(DataFormatError):
            load_noise(path)


class TestScale:
    def test_zero_and_one(self, ref_noise):
        assert not scale_noise(ref_noise, 0.0).to_vector().any()
        np.testing.assert_array_equal(scale_noise(ref_noise, 1.0).to_vector(), ref_noise.to_vector())

    def test_double(self, ref_noise):
        assert scale_noise(ref_noise, 2.0).p_bf[1] == pytest.approx(0.109384, abs=1e-15)

    def test_clamped(self, ref_noise):
        assert scale_noise(ref_noise, 10.0).p_pl.max() == 0.999

    def test_negative(self, ref_noise):
        with pytest.raises(InvalidArgumentError):
            scale_noise(ref_noise, -1.0)


class TestApplyLinear:
    def test_zero_noise_identity(self, rng):
        povm = build_povm("octa6")
        t = born_table(random_mixed_state(2, rng), povm)
        np.testing.assert_allclose(apply_linear(t, NoiseParams.zeros("octa6")).probs, t.probs, atol=1e-15)

    def test_zero_state_flip(self):
        p = 0.07
        params = NoiseParams("octa6", [p, 0, 0], [0, 0, 0], np.zeros((3, 2)))
        out = apply_linear(born_table(basis_state("0"), build_povm("octa6")), params)
        np.testing.assert_allclose(out.group([0]), [(1 - p) / 3, p / 3], atol=1e-15)

    @pytest.mark.parametrize("design", DESIGNS)
    def test_group_masses_preserved(self, design, rng):
        povm = build_povm(design)
        t = born_table(random_pure_state(3, rng), povm)
        out = apply_linear(t, random_noise(design, rng))
        np.testing.assert_allclose(out.group_masses(), (2 / povm.K) ** 3, atol=1e-12)
        assert out.total() == pytest.approx(1.0, abs=1e-10)

    def test_matches_dense_kronecker(self, rng):
        povm = build_povm("octa6")
        params = random_noise("octa6", rng)
        t = born_table(random_mixed_state(3, rng), povm)
        out = apply_linear(t, params)
        g = params.gammas()
        for r, digits in enumerate(t.basis_strings()):
            dense = np.kron(np.kron(g[digits[0]], g[digits[1]]), g[digits[2]])
            np.testing.assert_allclose(out.probs[r], dense @ t.probs[r], atol=1e-15)

    def test_design_mismatch(self):
        t = born_table(basis_state("0"), build_povm("cube8"))
        with pytest.raises(InvalidArgumentError):
            apply_linear(t, NoiseParams.zeros("octa6"))


class TestPhotonLoss:
    def test_worked_example(self):
        params = NoiseParams("octa6", [0, 0, 0], [0, 0, 0], [[0, 0], [0.2, 0.0], [0, 0]])
        out = apply_photon_loss(born_table(basis_state("0"), build_povm("octa6")), params)
        np.testing.assert_allclose(out.cond[1], [4 / 9, 5 / 9], atol=1e-15)
        assert out.survival[1] == pytest.approx(0.9)

    def test_zero_loss(self, rng):
        t = born_table(random_pure_state(2, rng), build_povm("octa6"))
        out = apply_photon_loss(t, NoiseParams.zeros("octa6"))
        np.testing.assert_allclose(out.survival, 1.0)
        np.testing.assert_allclose(out.cond, t.conditionals(), atol=1e-15)

    @pytest.mark.parametrize("design", DESIGNS)
    def test_uniform_loss(self, design, rng):
        nb = build_povm(design).n_bases
        eps = 0.37
        params = NoiseParams(design, np.zeros(nb), np.zeros(nb), np.full((nb, 2), eps))
        t = born_table(random_mixed_state(3, rng), build_povm(design))
        out = apply_photon_loss(t, params)
        np.testing.assert_allclose(out.cond, t.conditionals(), atol=1e-12)
        np.testing.assert_allclose(out.survival, (1 - eps) ** 3, atol=1e-12)

    def test_per_basis_equal_loss_keeps_conditionals(self, rng):
        params = NoiseParams("octa6", [0, 0, 0], [0, 0, 0], [[0.1, 0.1], [0.4, 0.4], [0.7, 0.7]])
        t = born_table(random_pure_state(2, rng), build_povm("octa6"))
        np.testing.assert_allclose(apply_photon_loss(t, params).cond, t.conditionals(), atol=1e-12)

    def test_loss_weights_product(self, ref_noise):
        w = loss_weights(ref_noise, 2)
        s = ref_noise.survival()
        # group (x, y), bits (1, 0)
        assert w[1 * 3 + 2, 2] == pytest.approx(s[1, 1] * s[2, 0])

    def test_degenerate_group(self):
        # a quasi-probability group whose loss-weighted mass is not positive
        params = NoiseParams("octa6", [0, 0, 0], [0, 0, 0], [[0.999, 0.0], [0, 0], [0, 0]])
        t = ProbTable(1, 6, [[0.5, -1 / 6], [1 / 6, 1 / 6], [1 / 6, 1 / 6]], allow_negative=True)
        with pytest.raises(DegenerateGroupError):
            apply_photon_loss(t, params)


class TestComposite:
    def test_zero_noise(self, rng):
        t = born_table(random_mixed_state(3, rng), build_povm("cube8"))
        out = apply_composite(t, NoiseParams.zeros("cube8"))
        np.testing.assert_allclose(out.cond, t.conditionals(), atol=1e-12)
        np.testing.assert_allclose(out.survival, 1.0, atol=1e-12)

    def test_linear_then_loss(self, rng):
        params = random_noise("octa6", rng)
        t = born_table(random_pure_state(2, rng), build_povm("octa6"))
        a = apply_composite(t, params)
        b = apply_photon_loss(apply_linear(t, params), params)
        np.testing.assert_array_equal(a.cond, b.cond)

    def test_order_check(self):
        params = NoiseParams("octa6", [0.1, 0.2, 0.05], [0.15, 0.1, 0.3], [[0.1, 0.4], [0.0, 0.5], [0.3, 0.1]])
        plus = born_table(StateDescriptor.pure([1 / np.sqrt(2), 1 / np.sqrt(2)]), build_povm("octa6"))
        forward = apply_composite(plus, params)
        lossy = apply_photon_loss(plus, params)
        swapped = apply_linear(ProbTable(1, 6, lossy.cond * lossy.prior), params).conditionals()
        assert np.abs(forward.cond - swapped).max() > 1e-6

    def test_reference_h_port_distribution(self, ref_noise):
        t = apply_composite(born_table(basis_state("0"), build_povm("octa6")), ref_noise)
        joint = t.joint_survived().ravel()
        s = 1 - REF_P_PL
        expected_hv = np.array([(1 - REF_P_BF[0]) + REF_P_AD[0] * REF_P_BF[0], (1 - REF_P_AD[0]) * REF_P_BF[0]])
        np.testing.assert_allclose(joint[:2], expected_hv * s[0] / 3, atol=1e-12)
        np.testing.assert_allclose(joint[2:4], 0.5 * np.array([1 + REF_P_AD[1], 1 - REF_P_AD[1]]) * s[1] / 3, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1), st.sampled_from(DESIGNS))
    def test_composite_outputs_valid(self, seed, design):
        rng = np.random.default_rng(seed)
        t = born_table(random_pure_state(2, rng), build_povm(design))
        out = apply_composite(t, random_noise(design, rng))
        assert out.cond.min() >= 0
        np.testing.assert_allclose(out.cond.sum(axis=1), 1.0, atol=1e-9)
        assert np.all((out.survival > 0) & (out.survival <= 1 + 1e-12))
