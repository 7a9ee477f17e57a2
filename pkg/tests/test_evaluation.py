import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ordergan.evaluation.forest import forest_leaf_distribution
from ordergan.evaluation.propensity import (
    CHARACTERISTICS,
    PropensityTable,
    rsm,
    season_shares,
    train_characteristic_classifiers,
)
from ordergan.evaluation.report import distribution_rows, histogram_svg, write_distribution_report
from ordergan.evaluation.tracker import DegenerateSplit, logistic_tracker
from ordergan.evaluation.triplet import column_shuffle, correlation_matrix, sample_triplets, triplet_agreement
from ordergan.evaluation.tsne import calibrate, pca, squared_distances, tsne


def correlated(rng, n, d=8):
    A = rng.standard_normal((d, d))
    return rng.standard_normal((n, d)) @ A


class TestTracker:
    def test_same_distribution_is_chance(self):
        rng = np.random.default_rng(0)
        X = correlated(rng, 4000)
        acc = logistic_tracker(X[:2000], X[2000:], np.random.default_rng(1))
        assert abs(acc - 0.5) <= 0.05

    def test_shifted_is_separable(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-1, 1, (4000, 6))
        acc = logistic_tracker(X[:2000], X[2000:] + 5.0, np.random.default_rng(1))
        assert acc > 0.99

    def test_width_mismatch_and_degenerate(self):
        with pytest.raises(ValueError):
            logistic_tracker(np.zeros((10, 3)), np.zeros((10, 4)), np.random.default_rng(0))
        with pytest.raises(DegenerateSplit):
            logistic_tracker(np.zeros((10, 3)), np.zeros((0, 3)), np.random.default_rng(0))


class TestTriplet:
    def test_correlation_properties(self):
        C, flat = correlation_matrix(correlated(np.random.default_rng(2), 300))
        assert np.allclose(C, C.T)
        assert np.allclose(np.diag(C), 1.0)
        assert C.min() >= -1 and C.max() <= 1
        assert not flat.any()

    def test_zero_variance_feature_flagged(self):
        X = correlated(np.random.default_rng(2), 100, 4)
        X[:, 2] = 3.0
        C, flat = correlation_matrix(X)
        assert flat.tolist() == [False, False, True, False]
        assert np.all(C[2, [0, 1, 3]] == 0) and C[2, 2] == 1

    def test_self_agreement(self):
        X = correlated(np.random.default_rng(3), 500)
        res = triplet_agreement(X, X, 5000, np.random.default_rng(0))
        assert res.agreement == 1.0 and res.strict_agreement == 1.0

    def test_shuffled_is_chance(self):
        rng = np.random.default_rng(4)
        X = correlated(rng, 20000, 12)
        res = triplet_agreement(X, column_shuffle(X, rng), 20000, np.random.default_rng(0))
        assert abs(res.agreement - 0.5) < 0.05

    @given(st.integers(3, 30), st.integers(0, 2**31))
    @settings(max_examples=50)
    def test_triplets_distinct(self, d, seed):
        t = sample_triplets(np.random.default_rng(seed), d, 200)
        assert t.min() >= 0 and t.max() < d
        assert np.all((t[:, 0] != t[:, 1]) & (t[:, 0] != t[:, 2]) & (t[:, 1] != t[:, 2]))

    def test_triplets_uniform_third(self):
        t = sample_triplets(np.random.default_rng(0), 4, 40000)
        # given (a, b) the third index is uniform over the two remaining features
        counts = np.bincount(t[:, 2], minlength=4) / len(t)
        assert np.allclose(counts, 0.25, atol=0.01)


@pytest.fixture(scope="module")
def balanced():
    rng = np.random.default_rng(5)
    X = correlated(rng, 4000, 6)
    return forest_leaf_distribution(X[:2000], X[2000:], np.random.default_rng(1))


@pytest.fixture(scope="module")
def blobs():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.standard_normal((60, 6)), rng.standard_normal((60, 6)) + 8.0])
    return tsne(X, np.random.default_rng(2), iterations=600)


class TestForest:
    def test_resample_centered(self, balanced):
        assert 0.45 <= balanced.mean <= 0.55

    def test_weighted_leaf_mean_exact(self, balanced):
        for t in range(0, 100, 7):
            assert balanced.exact_tree_fraction(t) == 0.5
            assert balanced.weighted_tree_mean(t) == pytest.approx(0.5, abs=1e-12)

    def test_structure(self, balanced):
        assert balanced.max_depth <= 5
        assert len(balanced.leaf_counts) == 100
        assert all(len(c) <= 32 for c in balanced.leaf_counts)
        assert balanced.histogram.sum() == 2000 and len(balanced.histogram) == 20

    def test_constant_fake_separates(self):
        rng = np.random.default_rng(6)
        real = correlated(rng, 1000, 6)
        fake = np.tile(real.mean(axis=0) + 10.0, (1000, 1))
        res = forest_leaf_distribution(real, fake, np.random.default_rng(1))
        assert res.ratios[res.is_real].mean() > 0.9

    def test_unequal_counts_rejected(self):
        with pytest.raises(ValueError):
            forest_leaf_distribution(np.zeros((5, 3)), np.zeros((4, 3)), np.random.default_rng(0))


class TestTsne:
    def test_calibration_entropy(self):
        X = np.random.default_rng(0).standard_normal((200, 5))
        P, H = calibrate(squared_distances(X), 30.0)
        assert np.max(np.abs(H - np.log(30.0))) < 1e-4
        assert np.allclose(P.sum(axis=1), 1.0)
        assert np.all(np.diag(P) == 0)

    def test_blobs_separate(self, blobs):
        Y = blobs.Y
        a, b = Y[:60], Y[60:]
        intra = 0.5 * (np.linalg.norm(a - a.mean(0), axis=1).mean() + np.linalg.norm(b - b.mean(0), axis=1).mean())
        inter = np.linalg.norm(a.mean(0) - b.mean(0))
        assert inter > intra
        assert Y.shape == (120, 3)

    def test_kl_settles(self, blobs):
        tail = np.array(blobs.kl_history[-100:])
        assert np.all(np.diff(tail) <= 1e-6)

    def test_size_limits(self):
        with pytest.raises(ValueError):
            tsne(np.zeros((5, 3)), np.random.default_rng(0))

    def test_pca_orders_variance(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((500, 5)) * np.array([5.0, 3.0, 1.0, 0.1, 0.1])
        Z = pca(X)
        v = Z.var(axis=0)
        assert v[0] > v[1] > v[2]


class TestRsm:
    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=60, unique=True))
    @settings(max_examples=50)
    def test_perfect_and_reversed(self, s):
        s = np.array(s)
        assert rsm(s, s, 1000, np.random.default_rng(0)) == 100.0
        assert rsm(s, -s, 1000, np.random.default_rng(0)) == 0.0

    def test_random_is_chance(self):
        rng = np.random.default_rng(1)
        s = rng.random(300)
        assert abs(rsm(s, rng.random(300), 10000, np.random.default_rng(2)) - 50.0) < 2.0

    @given(st.lists(st.integers(-20, 20), min_size=2, max_size=40))
    @settings(max_examples=50)
    def test_monotone_invariance(self, s):
        s = np.array(s, dtype=float)
        g = np.random.default_rng(0).permutation(s)
        a = rsm(s, g, 500, np.random.default_rng(3))
        b = rsm(np.exp(s), np.exp(g) * 2 + 1, 500, np.random.default_rng(3))
        assert a == b

    def test_tie_rule_is_asymmetric(self):
        # tied truth counts as >=, so a generated strict "<" on the same pair disagrees
        t = np.array([1.0, 1.0])
        g = np.array([0.0, 1.0])
        r = rsm(t, g, 1000, np.random.default_rng(0))
        assert 0 < r < 100

    def test_needs_two_products(self):
        with pytest.raises(ValueError):
            rsm(np.array([1.0]), np.array([1.0]), 10, np.random.default_rng(0))


class TestPropensityPieces:
    def test_season_shares(self):
        assert season_shares(np.array([6, 6, 1, 3])) == pytest.approx((2 / 3, 1 / 3))
        assert season_shares(np.array([3, 4])) == (0.5, 0.5)
        s, w = season_shares(np.array([7, 12, 12, 12, 9]))
        assert s + w == pytest.approx(1.0)

    def table(self):
        products = np.array([3, 8])
        truth = {c: np.array([0.7, 0.4]) for c in CHARACTERISTICS}
        gen = {c: np.array([0.6, 0.5]) for c in CHARACTERISTICS}
        truth["male"] = 1 - truth["female"]
        gen["male"] = 1 - gen["female"]
        return PropensityTable(products, truth, gen, 0)

    def test_distribution_shares_sum_to_one(self, tmp_path):
        rows = distribution_rows(self.table(), [3, 8])
        assert len(rows) == 8
        assert rows[0][4] == pytest.approx(0.7)
        paths = write_distribution_report(tmp_path, self.table(), [3, 8], "# prov")
        assert [p.name for p in paths] == ["distribution.csv", "product_3.svg", "product_8.svg"]
        first = paths[0].read_bytes()
        write_distribution_report(tmp_path, self.table(), [3, 8], "# prov")
        assert paths[0].read_bytes() == first

    def test_histogram_svg(self):
        svg = histogram_svg([0, 3, 5, 1], "leaf ratios")
        assert svg.startswith("<svg") and svg.count("<rect") == 4


class TestClassifiers:
    class World:
        class C:
            pass

        def __init__(self, n, rng):
            self.customers = self.C()
            self.customers.female = rng.random(n) < 0.5
            self.customers.high_tenure = rng.random(n) < 0.5
            self.customers.high_volume = rng.random(n) < 0.3

    def test_planted_and_shuffled(self):
        rng = np.random.default_rng(0)
        w = self.World(400, rng)
        ids = rng.integers(0, 400, 6000)
        lab = np.c_[w.customers.female, w.customers.high_tenure, w.customers.high_volume][ids].astype(float)
        X = np.hstack([lab * 2 - 1 + 0.8 * rng.standard_normal(lab.shape), rng.standard_normal((6000, 3))])
        clf = train_characteristic_classifiers(X, ids, w, np.random.default_rng(1))
        assert all(c.accuracy > 0.75 for c in clf.values())
        p = clf["gender"].predict_proba(X[:5])
        assert np.all((p >= 0) & (p <= 1))
        again = train_characteristic_classifiers(X, ids, w, np.random.default_rng(1))
        assert again["tenure"].accuracy == clf["tenure"].accuracy

        shuffled = {"gender": rng.permutation(w.customers.female.astype(int)), "tenure": w.customers.high_tenure.astype(int), "volume": w.customers.high_volume.astype(int)}
        noise = rng.standard_normal((6000, 6))
        clf = train_characteristic_classifiers(noise, ids, w, np.random.default_rng(1), labels=shuffled)
        assert abs(clf["gender"].accuracy - 0.5) < 0.07

    def test_imbalance_warns(self):
        rng = np.random.default_rng(0)
        w = self.World(200, rng)
        w.customers.high_volume = np.zeros(200, bool)
        w.customers.high_volume[:6] = True
        ids = np.arange(200).repeat(3)
        with pytest.warns(UserWarning, match="volume"):
            train_characteristic_classifiers(rng.standard_normal((600, 4)), ids, w, np.random.default_rng(1))
