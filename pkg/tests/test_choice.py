import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genchoice.choice import (
    alternative_invariance_check,
    choice_probabilities,
    log_probabilities,
    predict,
    relative_beta,
    utilities,
)
from genchoice.data import encode, fit_schema
from genchoice.energy import ModelParams
from genchoice.trainer import refine_choice

import oracles
import planted
from test_energy import random_params


def test_uniform_five():
    out = choice_probabilities(np.ones(3), ModelParams.zeros(3, 5, 4))
    np.testing.assert_allclose(out.probs, 0.2, atol=1e-15)


def test_breakdown_invariants():
    rng = np.random.default_rng(0)
    p = random_params(rng, 4, 3, 6, scale=2.0)
    out = choice_probabilities(rng.normal(size=(20, 4)), p)
    np.testing.assert_allclose(out.probs.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(out.V, out.nu + out.entropy)
    assert np.all(out.entropy >= 0)


def test_h_zero_is_mnl():
    rng = np.random.default_rng(1)
    p = random_params(rng, 3, 4, 0)
    x = rng.normal(size=3)
    V = x @ (p.beta + p.d[:, None]) + p.c
    expected = np.exp(V - V.max()) / np.exp(V - V.max()).sum()
    np.testing.assert_allclose(choice_probabilities(x, p).probs, expected, atol=1e-14)
    # d is alternative-invariant and cancels
    without_d = p.replace(d=np.zeros(3))
    np.testing.assert_allclose(choice_probabilities(x, without_d).probs, expected, atol=1e-14)


@pytest.mark.parametrize("H", [1, 4, 8, 12])
def test_enumeration_oracle(H):
    rng = np.random.default_rng(H)
    for _ in range(5):
        p = random_params(rng, 4, 3, H)
        x = rng.normal(size=4)
        np.testing.assert_allclose(choice_probabilities(x, p).probs, oracles.choice_probs_enumerated(x, p),
                                   atol=1e-10, rtol=0)


def test_large_utilities_stable():
    p = ModelParams.zeros(1, 3, 0).replace(c=[500.0, 0.0, -500.0])
    out = choice_probabilities([0.0], p)
    assert np.all(np.isfinite(out.probs))
    assert out.probs[0] == pytest.approx(1.0)
    assert np.isfinite(log_probabilities(np.zeros((1, 1)), p)).all()


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        choice_probabilities(np.ones(4), ModelParams.zeros(3, 2, 1))


def test_to_frame_columns():
    p = random_params(np.random.default_rng(0), 2, 2, 1)
    frame = choice_probabilities(np.ones((3, 2)), p).to_frame(["a", "b"], ids=["r1", "r2", "r3"])
    assert list(frame.columns) == ["id", "nu[a]", "entropy[a]", "V[a]", "prob[a]",
                                   "nu[b]", "entropy[b]", "V[b]", "prob[b]"]
    assert len(frame) == 3


def test_utilities_include_d():
    p = ModelParams.zeros(2, 2, 0).replace(d=[1.0, 2.0])
    np.testing.assert_allclose(utilities([1.0, 1.0], p), [3.0, 3.0])


class TestInvariance:
    def test_report_ok(self):
        p = random_params(np.random.default_rng(3), 5, 4, 3)
        report = alternative_invariance_check(p)
        assert report["ok"]
        assert report["max_dev_constant_shift"] <= 1e-12
        assert report["max_dev_beta_shift"] <= 1e-12
        assert report["max_dev_single_shift"] > 1e-3

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-20, 20))
    def test_constant_shift_property(self, seed, shift):
        rng = np.random.default_rng(seed)
        p = random_params(rng, 3, 3, 2)
        x = rng.normal(size=3)
        a = choice_probabilities(x, p).probs
        b = choice_probabilities(x, p.replace(c=p.c + shift)).probs
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_scaling_keeps_argmax(self):
        rng = np.random.default_rng(4)
        p = random_params(rng, 3, 4, 0)
        X = rng.normal(size=(50, 3))
        scaled = p.replace(beta=3 * p.beta, d=3 * p.d, c=3 * p.c)
        a = choice_probabilities(X, p).probs
        b = choice_probabilities(X, scaled).probs
        np.testing.assert_array_equal(a.argmax(axis=1), b.argmax(axis=1))
        assert np.max(np.abs(a - b)) > 1e-3


class TestMonotonicity:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_entropy_monotone_in_alpha(self, seed):
        rng = np.random.default_rng(seed)
        p = random_params(rng, 3, 3, 4)
        x = rng.normal(size=3)
        h = rng.integers(4)
        alpha = p.alpha.copy()
        alpha[h] += 1e-4
        before = choice_probabilities(x, p).entropy
        after = choice_probabilities(x, p.replace(alpha=alpha)).entropy
        assert np.all(after >= before)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_prob_monotone_in_wp(self, seed):
        rng = np.random.default_rng(seed)
        p = random_params(rng, 3, 3, 4)
        x = rng.normal(size=3)
        h, j = rng.integers(4), rng.integers(3)
        Wp = p.Wp.copy()
        Wp[h, j] += 1e-4
        before = choice_probabilities(x, p).probs[j]
        after = choice_probabilities(x, p.replace(Wp=Wp)).probs[j]
        assert after >= before


class TestPredict:
    def test_uniform(self):
        raw = planted.mnl_population(50, seed=0)
        ds = encode(raw, fit_schema(raw, planted.MNL_SPECS))
        probs, share = predict(ds, ModelParams.zeros(ds.schema.encoded_width, 3, 2))
        np.testing.assert_allclose(share, 1 / 3)
        assert probs.shape == (50, 3)

    def test_single_record(self):
        raw = planted.mnl_population(10, seed=0)
        ds = encode(raw, fit_schema(raw, planted.MNL_SPECS)).subset([3])
        p = random_params(np.random.default_rng(0), ds.schema.encoded_width, 3, 2)
        probs, share = predict(ds, p)
        np.testing.assert_array_equal(share, probs[0])
        assert share.sum() == pytest.approx(1.0)

    def test_mode_share_matches_generator(self):
        raw = planted.mnl_population(20000, seed=11)
        ds = encode(raw, fit_schema(raw, planted.MNL_SPECS))
        p = refine_choice(ds, ModelParams.zeros(ds.schema.encoded_width, 3, 0))
        _, share = predict(ds, p)
        # generator shares from the true probabilities on the same covariates
        log_cost = np.log(raw["cost"].to_numpy())
        z = np.column_stack([log_cost, (np.log(raw["time"].to_numpy()) - 1.0) / 0.7])
        V = z @ np.array([[0.0, 0.8, -0.6], [0.0, -0.5, 0.4]]) + np.array([0.0, 0.3, -0.4])
        P = np.exp(V - V.max(axis=1, keepdims=True))
        P /= P.sum(axis=1, keepdims=True)
        assert np.max(np.abs(share - P.mean(axis=0))) < 0.01


def test_relative_beta():
    p = ModelParams.zeros(2, 3, 0).replace(beta=[[1.0, 2.0, 4.0], [0.0, -1.0, 1.0]])
    np.testing.assert_array_equal(relative_beta(p), [[0, 1, 3], [0, -1, 1]])
    np.testing.assert_array_equal(relative_beta(p, base=2)[:, 2], 0)
