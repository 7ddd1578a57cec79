import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genchoice.diagnostics import (
    MaxentReport,
    activation_stats,
    beta_sensitivity,
    empirical_kl,
    entropy,
    maxent,
    maxent_report,
    mutual_information,
)
from genchoice.energy import ModelParams
from genchoice.trainer import TrainConfig

import planted
from test_energy import random_params

SHARES = np.array([0.068, 0.613, 0.028, 0.222, 0.069])

# maxent rows of the published table, S = 0, 5, 20, 35, 50
TABLE = np.array([
    [2.833, 1.721, 1.511, 1.518, 1.568],
    [1.706, 1.600, 1.591, 1.807, 1.847],
    [1.532, 1.456, 1.513, 1.503, 1.538],
    [2.234, 2.038, 1.781, 1.834, 1.756],
    [1.640, 1.619, 1.693, 1.696, 1.584],
    [1.677, 1.596, 1.538, 1.517, 1.512],
])


class TestMaxent:
    def test_uniform_row(self):
        assert maxent(np.full(5, 3.2), SHARES) == pytest.approx(np.log(5), abs=1e-9)

    def test_equals_entropy_at_shares(self):
        # -sum p log p for the published shares
        assert entropy(SHARES) == pytest.approx(1.10152, abs=1e-5)
        assert maxent(np.log(SHARES) + 0.7, SHARES) == pytest.approx(entropy(SHARES), abs=1e-12)

    def test_rejects_bad_shares(self):
        with pytest.raises(ValueError):
            maxent(np.zeros(3), [0.5, 0.3, 0.3])
        with pytest.raises(ValueError):
            maxent(np.zeros(3), [0.5, 0.5])

    def test_vectorized_rows(self):
        rows = np.random.default_rng(0).normal(size=(4, 5))
        out = maxent(rows, SHARES)
        assert out.shape == (4,)
        assert out[2] == pytest.approx(maxent(rows[2], SHARES))

    def test_large_coefficients_stable(self):
        assert np.isfinite(maxent(np.array([800.0, -800.0, 0.0]), [0.2, 0.3, 0.5]))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-20, 20), min_size=5, max_size=5), st.floats(-50, 50))
    def test_shift_invariance_and_gibbs(self, row, shift):
        row = np.asarray(row)
        a = maxent(row, SHARES)
        assert maxent(row + shift, SHARES) == pytest.approx(a, abs=1e-9)
        assert a >= entropy(SHARES) - 1e-12

    def test_published_table_footer(self):
        report = MaxentReport([f"r{i}" for i in range(6)], [0, 5, 20, 35, 50], TABLE, SHARES)
        # the published footer is rounded to two decimals (1.6045 is printed as 1.61)
        np.testing.assert_allclose(report.mean, [1.94, 1.67, 1.61, 1.65, 1.63], atol=0.006)
        np.testing.assert_allclose(report.std, [0.502, 0.199, 0.11, 0.153, 0.135], atol=0.0015)
        # every published value respects the Gibbs lower bound
        assert TABLE.min() >= entropy(SHARES)

    def test_report_frame_layout(self):
        report = MaxentReport(["a", "b"], [0, 8], np.array([[2.0, 1.5], [1.7, 1.6]]), SHARES)
        frame = report.to_frame()
        assert list(frame.columns) == ["parameter", "S=0", "S=8"]
        assert frame.iloc[-1]["parameter"] == "mean (std. dev.)"
        assert frame.iloc[-1]["S=0"] == f"{1.85:.4f} ({np.std([2.0, 1.7], ddof=1):.4f})"

    def test_maxent_report_rows_follow_columns(self):
        from genchoice.data import fit_schema
        raw = planted.mnl_population(50, seed=0)
        schema = fit_schema(raw, planted.MNL_SPECS)
        p = random_params(np.random.default_rng(0), schema.encoded_width, 3, 0)
        report = maxent_report({0: p}, [0.2, 0.3, 0.5], schema)
        assert report.rows == list(schema.columns)
        assert report.values.shape == (2, 1)


class TestActivation:
    def dataset(self):
        tr, _ = planted.encoded_split(planted.mnl_population(300, seed=1), planted.MNL_SPECS)
        return tr

    def test_zero_params_strict_threshold(self):
        ds = self.dataset()
        frame = activation_stats(ModelParams.zeros(ds.schema.encoded_width, 3, 4), ds)
        assert (frame["activation_rate"] == 0.0).all()
        assert (frame["wp_mean"] == 0.0).all()
        assert frame["n_records"].sum() == len(ds)

    def test_saturation(self):
        ds = self.dataset()
        p = ModelParams.zeros(ds.schema.encoded_width, 3, 1).replace(alpha=[10.0])
        assert np.allclose(activation_stats(p, ds)["activation_rate"], 1.0)

    def test_missing_alternative(self):
        ds = self.dataset()
        only = ds.subset(np.flatnonzero(ds.choices != 2))
        frame = activation_stats(ModelParams.zeros(ds.schema.encoded_width, 3, 2), only)
        assert np.isnan(frame["activation_rate"].iloc[2])
        assert frame["n_records"].iloc[2] == 0

    def test_wp_statistics(self):
        ds = self.dataset()
        p = random_params(np.random.default_rng(0), ds.schema.encoded_width, 3, 6)
        frame = activation_stats(p, ds)
        np.testing.assert_allclose(frame["wp_mean"], p.Wp.mean(axis=0))
        np.testing.assert_allclose(frame["wp_std"], p.Wp.std(axis=0))

    def test_bad_threshold(self):
        ds = self.dataset()
        with pytest.raises(ValueError):
            activation_stats(ModelParams.zeros(ds.schema.encoded_width, 3, 1), ds, threshold=1.0)


class TestKL:
    def test_identical(self):
        assert empirical_kl([3, 5, 2], [3, 5, 2]) == 0.0
        assert empirical_kl([3, 5, 2], [6, 10, 4]) == 0.0

    def test_hand_values(self):
        assert empirical_kl([1, 0], [0.5, 0.5]) == pytest.approx(np.log(2), abs=1e-12)
        assert empirical_kl([0.9, 0.1], [0.5, 0.5]) == pytest.approx(0.368064, abs=1e-6)
        assert empirical_kl([0.5, 0.5], [0.9, 0.1]) == pytest.approx(0.510826, abs=1e-6)

    def test_smoothing(self):
        assert empirical_kl([1, 1], [2, 0], smoothing="none") == np.inf
        finite = empirical_kl([1, 1], [2, 0])
        assert np.isfinite(finite) and finite > 0
        assert empirical_kl([1, 0], [1, 1], smoothing="always") != pytest.approx(np.log(2))

    def test_errors(self):
        with pytest.raises(ValueError):
            empirical_kl([1, 2], [1, 2, 3])
        with pytest.raises(ValueError):
            empirical_kl([-1, 2], [1, 2])
        with pytest.raises(ValueError):
            empirical_kl([1, 2], [1, 2], smoothing="laplace")

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, 50), min_size=2, max_size=8), st.data())
    def test_non_negative(self, p, data):
        q = data.draw(st.lists(st.integers(0, 50), min_size=len(p), max_size=len(p)))
        if sum(p) == 0 or sum(q) == 0:
            return
        assert empirical_kl(p, q) >= 0.0


class TestMutualInformation:
    def test_independent(self):
        rng = np.random.default_rng(0)
        res = mutual_information(rng.integers(0, 3, 2000), rng.integers(0, 2, 2000), n_permutations=300, rng=rng)
        assert res.mi < 0.01
        assert res.independent

    def test_identical(self):
        s = np.random.default_rng(1).integers(0, 2, 10000)
        res = mutual_information(s, s, n_permutations=200)
        assert res.mi == pytest.approx(np.log(2), abs=0.01)
        assert res.independent is False

    def test_noisy_channel(self):
        rng = np.random.default_rng(2)
        s = rng.integers(0, 2, 20000)
        x = s ^ (rng.random(20000) < 0.1)
        hb = -(0.1 * np.log(0.1) + 0.9 * np.log(0.9))
        res = mutual_information(x, s, n_permutations=20)
        assert res.mi == pytest.approx(np.log(2) - hb, abs=0.02)
        assert np.log(2) - hb == pytest.approx(0.368, abs=1e-3)

    def test_small_sample_warns(self):
        with pytest.warns(UserWarning):
            res = mutual_information([0, 1] * 10, [0, 1] * 10)
        assert res.independent is None and res.p_value is None

    def test_joint_symbols(self):
        s = np.random.default_rng(3).integers(0, 2, (500, 2))
        res = mutual_information(s, s[:, 0] * 2 + s[:, 1], n_permutations=10)
        assert res.mi == pytest.approx(entropy(np.bincount(s[:, 0] * 2 + s[:, 1]) / 500), abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 1)), min_size=100, max_size=200))
    def test_non_negative(self, pairs):
        x, s = np.array(pairs).T
        res = mutual_information(x, s, n_permutations=5)
        assert res.mi >= 0.0


@pytest.fixture(scope="module")
def split():
    return planted.encoded_split(planted.mnl_population(2000, seed=4), planted.MNL_SPECS, 0.7, seed=0)


class TestSensitivity:
    def test_requires_zero(self, split):
        with pytest.raises(ValueError):
            beta_sensitivity(*split, [2, 4], TrainConfig(max_epochs=1))
        with pytest.raises(ValueError):
            beta_sensitivity(*split, [], TrainConfig(max_epochs=1))

    def test_single_mnl_column(self, split):
        res = beta_sensitivity(*split, [0], TrainConfig(max_epochs=2))
        frame = res.maxent.to_frame()
        assert list(frame.columns) == ["parameter", "S=0"]
        assert res.beta.shape == (1, 2, 3)
        np.testing.assert_array_equal(res.beta[0][:, 0], 0.0)

    def test_pure_mnl_beta_stable_and_reproducible(self, split):
        cfg = TrainConfig(max_epochs=4, seed=3)
        a = beta_sensitivity(*split, [0, 2, 4], cfg)
        b = beta_sensitivity(*split, [4, 0, 2], cfg)
        assert a.sizes == [0, 2, 4]
        np.testing.assert_array_equal(a.beta, b.beta)
        drift = np.max(np.abs(a.beta - a.beta[0]))
        assert drift <= 0.05
        assert set(a.beta_frame().columns) == {"S", "parameter", "alternative", "beta"}
