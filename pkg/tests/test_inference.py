from fractions import Fraction
from itertools import combinations, combinations_with_replacement, product

import numpy as np
import pytest
from scipy import stats

from phenotyper.core import AnalysisError, QualityCode
from phenotyper.feature_catalog import FeatureMatrix
from phenotyper.inference import (_balanced_accuracy_codes, bh_fdr, correlation_cluster, permutation_test,
                                  rank_features, rank_pairwise, spearman_abs)
from phenotyper.learn import balanced_accuracy, encode_labels, lda_single_feature, nearest_mean_predict


def make_matrix(values, feature_ids=None):
    values = np.asarray(values, dtype=float)
    feature_ids = feature_ids or [f"f{j}" for j in range(values.shape[1])]
    quality = np.full(values.shape, QualityCode.OK, dtype=object)
    return FeatureMatrix([f"s{i}" for i in range(values.shape[0])], feature_ids, values, quality)


def brute_force_bh(p, q_level):
    """Largest k with p_(k) <= k q / n; the k smallest p-values are significant"""
    n = len(p)
    order = np.argsort(p, kind='stable')
    passing = [k for k in range(1, n + 1) if p[order[k - 1]] <= k * q_level / n]
    significant = np.zeros(n, dtype=bool)
    if passing:
        significant[order[:max(passing)]] = True
    return significant


class TestPermutationTest:
    def test_perfect_separation(self):
        values = np.concatenate((np.arange(20.0), 100 + np.arange(20.0)))
        labels = ['a'] * 20 + ['b'] * 20
        result = permutation_test(values, labels, n_perm=1000, seed=1)
        assert result.observed_stat == 1.0
        assert result.p_value == pytest.approx(1 / 1001)

    def test_constant_feature(self):
        labels = ['a'] * 10 + ['b'] * 10
        result = permutation_test(np.ones(20), labels, n_perm=200, seed=1)
        assert result.observed_stat == 0.5
        assert result.p_value == 1.0

    def test_matches_full_enumeration(self):
        values = np.array([0.1, 0.4, 1.2, 0.9, 2.0, 2.2])
        labels = np.array(['a', 'a', 'a', 'b', 'b', 'b'], dtype=object)

        def statistic(assignment):
            predicted = lda_single_feature(values, assignment, values, classes=['a', 'b'])
            return balanced_accuracy(predicted, assignment, ['a', 'b'])

        observed = statistic(labels)
        all_stats = []
        for members in combinations(range(6), 3):
            assignment = np.array(['b'] * 6, dtype=object)
            assignment[list(members)] = 'a'
            all_stats.append(statistic(assignment))
        exact = np.mean(np.array(all_stats) >= observed)

        n_perm = 10_000
        result = permutation_test(values, labels, n_perm=n_perm, seed=3)
        assert result.observed_stat == observed
        standard_error = np.sqrt(exact * (1 - exact) / n_perm)
        assert abs(result.p_value - exact) <= 3 * standard_error + 1 / n_perm

    def test_reproducible_per_feature_index(self, rng):
        values = rng.standard_normal(30)
        labels = ['a'] * 15 + ['b'] * 15
        first = permutation_test(values, labels, n_perm=300, seed=5, feature_index=2)
        second = permutation_test(values, labels, n_perm=300, seed=5, feature_index=2)
        assert first == second

    def test_needs_two_classes(self):
        with pytest.raises(AnalysisError) as excinfo:
            permutation_test([1.0, 2.0, 3.0], ['a', 'a', 'a'], n_perm=10)
        assert excinfo.value.code == 'MISSING_CLASS'

    def test_statistic_independent_of_class_order(self):
        actual = np.repeat(np.arange(3), 10)
        counts = np.full(3, 10)

        def predictions(hits):
            predicted = (actual + 1) % 3
            for code, n_hits in enumerate(hits):
                predicted[np.flatnonzero(actual == code)[:n_hits]] = code
            return predicted

        forward = _balanced_accuracy_codes(predictions((1, 2, 3)), actual, counts)
        backward = _balanced_accuracy_codes(predictions((3, 2, 1)), actual, counts)
        assert forward == backward
        assert forward == pytest.approx(0.2)

    def test_ties_counted_exactly_with_three_classes(self):
        values = np.random.default_rng(21).integers(0, 3, 30).astype(float)
        classes = ['a', 'b', 'c']
        labels = ['a'] * 10 + ['b'] * 10 + ['c'] * 10
        codes = encode_labels(labels, classes)

        def exact_statistic(assignment):
            predicted = nearest_mean_predict(values, assignment, 3, values)
            return sum(Fraction(int(np.sum((predicted == code) & (assignment == code))), 10)
                       for code in range(3))

        observed = exact_statistic(codes)
        stream = np.random.default_rng([4, 0])
        exceed = sum(exact_statistic(stream.permutation(codes)) >= observed for _ in range(500))

        result = permutation_test(values, labels, n_perm=500, seed=4, feature_index=0, classes=classes)
        assert result.p_value == (1 + exceed) / 501

    def test_null_p_values_are_conservative(self):
        labels = ['a'] * 6 + ['b'] * 6
        p_values = np.array([
            permutation_test(np.random.default_rng(rep).standard_normal(12), labels, n_perm=99, seed=rep).p_value
            for rep in range(200)
        ])
        for level in np.arange(0.05, 1.0, 0.05):
            # Uniform CDF plus a DKW margin for 200 replicates
            assert np.mean(p_values <= level) <= level + 0.12


class TestBhFdr:
    def test_all_significant(self):
        result = bh_fdr([0.01, 0.02, 0.03, 0.04, 0.05], q_level=0.05)
        assert result.significant.all()
        np.testing.assert_allclose(result.q_values, 0.05)

    def test_single_value(self):
        result = bh_fdr([0.04])
        assert result.q_values[0] == pytest.approx(0.04)
        assert result.significant[0]

    def test_all_ones(self):
        result = bh_fdr([1.0, 1.0, 1.0])
        assert not result.significant.any()
        np.testing.assert_array_equal(result.q_values, 1.0)

    def test_empty(self):
        assert len(bh_fdr([]).q_values) == 0

    @pytest.mark.parametrize('n', [1, 2, 3, 4])
    def test_agrees_with_step_up_rule(self, n):
        grid = np.round(np.arange(0.1, 1.01, 0.1), 10)
        for p in product(grid, repeat=n):
            p = np.array(p)
            # Levels chosen so no grid value sits exactly on a k q / n boundary
            for q_level in (0.23, 0.37, 0.61):
                result = bh_fdr(p, q_level=q_level)
                np.testing.assert_array_equal(result.significant, brute_force_bh(p, q_level))

    @pytest.mark.parametrize('n', [5, 6, 7, 8])
    def test_agrees_with_step_up_rule_on_longer_vectors(self, n):
        grid = np.round(np.arange(0.1, 1.01, 0.1), 10)
        shuffle = np.random.default_rng(n).permutation(n)
        # Every multiset of grid values, presented in a fixed scrambled order
        for p in combinations_with_replacement(grid, n):
            p = np.array(p)[shuffle]
            for q_level in (0.23, 0.61):
                result = bh_fdr(p, q_level=q_level)
                np.testing.assert_array_equal(result.significant, brute_force_bh(p, q_level))

    def test_q_values_monotone_in_p(self, rng):
        p = rng.uniform(size=200)
        q = bh_fdr(p).q_values
        order = np.argsort(p)
        assert np.all(np.diff(q[order]) >= 0)
        assert np.all(q >= p)


class TestRanking:
    @pytest.fixture
    def synthetic(self, rng):
        n = 40
        labels = ['a'] * (n // 2) + ['b'] * (n // 2)
        informative = np.concatenate((rng.normal(0, 1, n // 2), rng.normal(4, 1, n // 2)))
        # Both classes get the same values, so these columns carry no information
        half = rng.standard_normal((n // 2, 5))
        noise = np.vstack((half, half))
        values = np.column_stack((noise[:, :2], informative, noise[:, 2:]))
        return make_matrix(values, ['n1', 'n2', 'sep', 'n3', 'n4', 'n5']), labels

    def test_separating_feature_ranked_first(self, synthetic):
        matrix, labels = synthetic
        ranking = rank_features(matrix, labels, n_perm=1000, seed=42)
        assert ranking.features[0].feature_id == 'sep'
        assert ranking.features[0].q_value < 0.05
        assert all(not rank.significant for rank in ranking.features[1:])

    def test_schedule_independent(self, synthetic):
        matrix, labels = synthetic
        serial = rank_features(matrix, labels, n_perm=200, seed=1, max_workers=1)
        parallel = rank_features(matrix, labels, n_perm=200, seed=1, max_workers=3)
        assert serial.to_dict() == parallel.to_dict()

    def test_sorted_by_statistic_then_id(self, synthetic):
        matrix, labels = synthetic
        ranking = rank_features(matrix, labels, n_perm=100, seed=2)
        keys = [(-rank.statistic, rank.feature_id) for rank in ranking.features]
        assert keys == sorted(keys)

    def test_single_feature(self, synthetic):
        matrix, labels = synthetic
        ranking = rank_features(matrix.select_features(['sep']), labels, n_perm=200, seed=3)
        assert len(ranking) == 1
        assert ranking.features[0].q_value == ranking.features[0].p_value

    def test_class_summaries(self, synthetic):
        matrix, labels = synthetic
        rank = rank_features(matrix.select_features(['sep']), labels, n_perm=50).features[0]
        assert set(rank.class_summaries) == {'a', 'b'}
        assert rank.class_summaries['a']['n'] == 20
        assert rank.class_summaries['a']['median'] < rank.class_summaries['b']['median']

    def test_shuffled_labels_rarely_significant(self):
        fractions = []
        for seed in range(20):
            generator = np.random.default_rng(seed)
            matrix = make_matrix(generator.standard_normal((30, 10)))
            labels = list(generator.permutation(['a'] * 15 + ['b'] * 15))
            ranking = rank_features(matrix, labels, n_perm=200, seed=seed)
            fractions.append(ranking.n_significant / len(ranking))
        assert np.mean(fractions) < 0.05

    def test_rejects_special_values(self, synthetic):
        matrix, labels = synthetic
        matrix.quality[0, 0] = QualityCode.NOT_FINITE
        with pytest.raises(AnalysisError):
            rank_features(matrix, labels, n_perm=10)

    def test_pairwise(self, rng):
        labels = ['a'] * 10 + ['b'] * 10 + ['c'] * 10
        values = np.column_stack((np.repeat([0.0, 5.0, 10.0], 10) + rng.normal(0, 0.5, 30),
                                  rng.standard_normal(30)))
        rankings = rank_pairwise(make_matrix(values), labels, n_perm=100, seed=0)
        assert list(rankings) == [('a', 'b'), ('a', 'c'), ('b', 'c')]
        for ranking in rankings.values():
            assert ranking.features[0].feature_id == 'f0'


class TestCorrelation:
    def test_monotone_transform(self, rng):
        x = rng.standard_normal(100)
        rho = spearman_abs(np.column_stack((x, np.exp(x), -x ** 3)))
        np.testing.assert_allclose(rho, 1.0)

    def test_matches_scipy(self, rng):
        values = rng.standard_normal((50, 4))
        expected = np.abs(stats.spearmanr(values)[0])
        np.testing.assert_allclose(spearman_abs(values), expected, atol=1e-12)

    def test_independent_columns(self):
        rho = spearman_abs(np.random.default_rng(4).standard_normal((1000, 5)))
        assert np.max(rho[~np.eye(5, dtype=bool)]) < 0.15

    def test_duplicates_adjacent_in_leaf_order(self, rng):
        base = rng.standard_normal((60, 4))
        values = np.column_stack((base[:, 0], base[:, 1], base[:, 2], base[:, 1] * 2 + 1, base[:, 3]))
        matrix = make_matrix(values)
        labels = ['a'] * 30 + ['b'] * 30
        ranking = rank_features(matrix, labels, n_perm=20)

        cluster = correlation_cluster(matrix, ranking, top_k=5)
        positions = {cluster.feature_ids[i]: p for p, i in enumerate(cluster.leaf_order)}
        assert abs(positions['f1'] - positions['f3']) == 1
        i, j = cluster.feature_ids.index('f1'), cluster.feature_ids.index('f3')
        assert cluster.correlation[i, j] == pytest.approx(1.0)
        assert sorted(cluster.leaf_order) == list(range(5))

    def test_top_k_bounds(self, rng):
        matrix = make_matrix(rng.standard_normal((20, 3)))
        ranking = rank_features(matrix, ['a'] * 10 + ['b'] * 10, n_perm=10)
        with pytest.raises(ValueError):
            correlation_cluster(matrix, ranking, top_k=4)
        assert correlation_cluster(matrix, ranking, top_k=1).leaf_order == [0]
