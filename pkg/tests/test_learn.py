import numpy as np
import pytest
from sklearn.decomposition import PCA
from sklearn.metrics import balanced_accuracy_score

from phenotyper.core import AnalysisError
from phenotyper.learn import (balanced_accuracy, class_weights, cross_validate, encode_labels,
                              fit_weighted_linear, lda_single_feature, logistic_loss_and_grad, pca,
                              stratified_kfold)


class TestBalancedAccuracy:
    def test_perfect(self):
        labels = ['a', 'b', 'b', 'c']
        assert balanced_accuracy(labels, labels, ['a', 'b', 'c']) == 1.0

    def test_worked_value(self):
        actual = ['a'] * 4 + ['b'] * 3
        predicted = ['a', 'a', 'b', 'b', 'b', 'b', 'b']
        assert balanced_accuracy(predicted, actual, ['a', 'b']) == 0.75

    @pytest.mark.parametrize('m', [2, 3, 5])
    def test_majority_classifier_scores_chance(self, m):
        classes = [f"c{i}" for i in range(m)]
        actual = [classes[i % m] for i in range(10 * m)] + [classes[0]] * 50
        predicted = [classes[0]] * len(actual)
        assert balanced_accuracy(predicted, actual, classes) == pytest.approx(1 / m, abs=1e-15)

    def test_random_predictions(self):
        generator = np.random.default_rng(0)
        classes = ['a', 'b', 'c', 'd', 'e']
        actual = generator.choice(classes, 100_000)
        predicted = generator.choice(classes, 100_000)
        assert balanced_accuracy(predicted, actual, classes) == pytest.approx(0.2, abs=0.02)

    def test_matches_sklearn(self, rng):
        classes = ['x', 'y', 'z']
        actual = rng.choice(classes, 200)
        predicted = rng.choice(classes, 200)
        assert balanced_accuracy(predicted, actual, classes) == pytest.approx(
            balanced_accuracy_score(actual, predicted))

    def test_invariant_to_class_relabeling(self, rng):
        classes = ['x', 'y', 'z', 'w']
        actual = list(rng.choice(classes, 97))
        predicted = list(rng.choice(classes, 97))
        renamed = dict(zip(classes, ['w', 'z', 'x', 'y']))

        original = balanced_accuracy(predicted, actual, classes)
        relabeled = balanced_accuracy([renamed[p] for p in predicted], [renamed[a] for a in actual],
                                      ['w', 'x', 'y', 'z'])
        assert relabeled == original

    def test_missing_class(self):
        with pytest.raises(AnalysisError) as excinfo:
            balanced_accuracy(['a'], ['a'], ['a', 'b'])
        assert excinfo.value.code == 'MISSING_CLASS'


class TestLda:
    def test_nearest_mean(self, rng):
        train = np.concatenate((rng.normal(0, 0.1, 10), rng.normal(10, 0.1, 10)))
        labels = ['low'] * 10 + ['high'] * 10
        predicted = lda_single_feature(train, labels, [1.0, 9.0], classes=['low', 'high'])
        assert list(predicted) == ['low', 'high']

    def test_midpoint_goes_to_first_class(self):
        train = [-1.0, 1.0, 9.0, 11.0]
        labels = ['b', 'b', 'a', 'a']
        assert list(lda_single_feature(train, labels, [5.0], classes=['b', 'a'])) == ['b']
        assert list(lda_single_feature(train, labels, [5.0], classes=['a', 'b'])) == ['a']

    def test_affine_invariance(self, rng):
        train = rng.standard_normal(40)
        labels = list(rng.choice(['a', 'b', 'c'], 40))
        test = rng.standard_normal(100)
        original = lda_single_feature(train, labels, test)
        transformed = lda_single_feature(3.0 * train + 1.5, labels, 3.0 * test + 1.5)
        np.testing.assert_array_equal(original, transformed)

    def test_zero_pooled_variance(self):
        with pytest.raises(AnalysisError) as excinfo:
            lda_single_feature([1.0, 1.0, 2.0, 2.0], ['a', 'a', 'b', 'b'], [1.5])
        assert excinfo.value.code == 'DEGENERATE'


class TestWeightedLinear:
    def test_class_weights(self):
        codes = np.array([0, 0, 0, 1])
        np.testing.assert_allclose(class_weights(codes, 2), [4 / 6, 4 / 6, 4 / 6, 2.0])

    @pytest.mark.parametrize('seed', range(20))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((25, 3))
        codes = rng.integers(0, 3, 25)
        targets = -np.ones((25, 3))
        targets[np.arange(25), codes] = 1.0
        weights = rng.uniform(0.5, 2.0, 25)
        coef = rng.standard_normal((3, 4))

        _, grad = logistic_loss_and_grad(coef, X, targets, weights, 0.1)
        numeric = np.zeros_like(coef)
        step = 1e-6
        for index in np.ndindex(*coef.shape):
            delta = np.zeros_like(coef)
            delta[index] = step
            upper, _ = logistic_loss_and_grad(coef + delta, X, targets, weights, 0.1)
            lower, _ = logistic_loss_and_grad(coef - delta, X, targets, weights, 0.1)
            numeric[index] = (upper - lower) / (2 * step)
        np.testing.assert_allclose(grad, numeric, rtol=1e-6, atol=1e-8)

    def test_weighting_equals_duplication(self, rng):
        X = rng.standard_normal((12, 2))
        labels = ['a'] * 9 + ['b'] * 3
        codes = encode_labels(labels, ['a', 'b'])
        targets = np.where(codes[:, None] == np.arange(2)[None, :], 1.0, -1.0)
        coef = rng.standard_normal((2, 3))

        weighted, _ = logistic_loss_and_grad(coef, X, targets, class_weights(codes, 2), 0.0)
        # Weights 12/18 and 12/6 are in ratio 1:3, so triplicating class b is equivalent
        repeat = np.where(codes == 1, 3, 1)
        duplicated, _ = logistic_loss_and_grad(coef, np.repeat(X, repeat, axis=0),
                                               np.repeat(targets, repeat, axis=0),
                                               np.ones(int(repeat.sum())), 0.0)
        assert weighted == pytest.approx(duplicated, rel=1e-12)

    def test_separable_data(self, rng):
        X = np.vstack((rng.normal(-3, 0.5, (20, 2)), rng.normal(3, 0.5, (20, 2))))
        labels = ['neg'] * 20 + ['pos'] * 20
        model = fit_weighted_linear(X, labels)
        assert balanced_accuracy(model.predict(X), labels, ['neg', 'pos']) == 1.0

    def test_deterministic(self, rng):
        X = rng.standard_normal((30, 4))
        labels = list(rng.choice(['a', 'b', 'c'], 30))
        first = fit_weighted_linear(X, labels, seed=7)
        second = fit_weighted_linear(X, labels, seed=7)
        np.testing.assert_array_equal(first.weights, second.weights)
        np.testing.assert_array_equal(first.bias, second.bias)

    def test_single_class(self):
        with pytest.raises(AnalysisError):
            fit_weighted_linear(np.zeros((3, 1)), ['a', 'a', 'a'])


class TestStratifiedKfold:
    def test_exact_divisibility(self):
        labels = ['A'] * 100 + ['B'] * 20
        assignment = stratified_kfold(labels, k=10, seed=42)
        labels = np.array(labels)
        for fold in range(10):
            _, test = assignment.split(fold)
            assert np.sum(labels[test] == 'A') == 10
            assert np.sum(labels[test] == 'B') == 2

    def test_class_too_small(self):
        with pytest.raises(AnalysisError) as excinfo:
            stratified_kfold(['A'] * 20 + ['B'] * 9, k=10)
        assert excinfo.value.code == 'CLASS_TOO_SMALL'

    def test_seed_behaviour(self):
        labels = ['A'] * 33 + ['B'] * 17
        first = stratified_kfold(labels, k=5, seed=1)
        again = stratified_kfold(labels, k=5, seed=1)
        other = stratified_kfold(labels, k=5, seed=2)
        np.testing.assert_array_equal(first.folds, again.folds)
        assert not np.array_equal(first.folds, other.folds)

        labels = np.array(labels)
        for fold in range(5):
            for name in ('A', 'B'):
                assert np.sum(labels[first.folds == fold] == name) == np.sum(labels[other.folds == fold] == name)

    def test_per_class_counts_differ_by_at_most_one(self):
        labels = np.array(['A'] * 23 + ['B'] * 14 + ['C'] * 11)
        assignment = stratified_kfold(labels, k=4, seed=3)
        for name in ('A', 'B', 'C'):
            counts = np.bincount(assignment.folds[labels == name], minlength=4)
            assert counts.max() - counts.min() <= 1
        sizes = np.bincount(assignment.folds, minlength=4)
        assert sizes.max() - sizes.min() <= 1


class TestCrossValidate:
    def test_separable_classes(self, rng):
        X = np.vstack((rng.normal(0, 1, (30, 3)), rng.normal(4, 1, (30, 3))))
        labels = ['a'] * 30 + ['b'] * 30
        report = cross_validate(X, labels, k=5, seed=0)
        assert report.mean_accuracy >= 0.95
        assert len(report.fold_accuracies) == 5
        assert report.chance_level == 0.5
        assert report.confusion.sum() == 60

    def test_shuffled_labels_near_chance(self):
        means = []
        for seed in range(10):
            generator = np.random.default_rng(seed)
            X = generator.standard_normal((60, 5))
            labels = list(generator.permutation(['a'] * 30 + ['b'] * 30))
            means.append(cross_validate(X, labels, k=5, seed=seed).mean_accuracy)
        assert np.mean(means) == pytest.approx(0.5, abs=0.1)

    def test_test_rows_do_not_reach_training(self, rng):
        X = rng.standard_normal((40, 3))
        labels = ['a'] * 20 + ['b'] * 20
        assignment = stratified_kfold(labels, k=4, seed=11)
        seen = []

        def record(train_X, test_X):
            seen.append(train_X.copy())
            return train_X, test_X

        cross_validate(X, labels, k=4, seed=11, fold_transform=record)
        perturbed = X.copy()
        _, test = assignment.split(0)
        perturbed[test] += 1000.0
        seen_perturbed = []

        def record_perturbed(train_X, test_X):
            seen_perturbed.append(train_X.copy())
            return train_X, test_X

        cross_validate(perturbed, labels, k=4, seed=11, fold_transform=record_perturbed)
        np.testing.assert_array_equal(seen[0], seen_perturbed[0])

    def test_report_dict(self, rng):
        X = np.vstack((rng.normal(0, 1, (10, 2)), rng.normal(3, 1, (10, 2))))
        labels = ['a'] * 10 + ['b'] * 10
        report = cross_validate(X, labels, k=2, series_ids=[f"s{i}" for i in range(20)])
        payload = report.to_dict()
        assert payload['k_folds'] == 2
        assert payload['chance_level'] == 0.5
        assert [row['series_id'] for row in payload['predictions']] == [f"s{i}" for i in range(20)]

    def test_one_class(self):
        with pytest.raises(AnalysisError) as excinfo:
            cross_validate(np.zeros((10, 2)), ['a'] * 10, k=2)
        assert excinfo.value.code == 'MISSING_CLASS'


class TestPca:
    def test_rank_one_data(self, rng):
        t = rng.standard_normal(50)
        X = np.column_stack((t, 2 * t, -t)) + np.array([1.0, 2.0, 3.0])
        projection = pca(X, n_components=1)
        assert projection.explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-10)

    def test_rank_deficient(self, rng):
        t = rng.standard_normal(50)
        with pytest.raises(AnalysisError) as excinfo:
            pca(np.column_stack((t, 2 * t)), n_components=2)
        assert excinfo.value.code == 'RANK_DEFICIENT'

    def test_orthonormal_loadings(self, rng):
        projection = pca(rng.standard_normal((40, 6)), n_components=3)
        np.testing.assert_allclose(projection.loadings @ projection.loadings.T, np.eye(3), atol=1e-12)

    def test_matches_sklearn_up_to_sign(self, rng):
        X = rng.standard_normal((60, 5)) @ rng.standard_normal((5, 5))
        ours = pca(X, n_components=2)
        reference = PCA(n_components=2, svd_solver='full').fit(X)
        np.testing.assert_allclose(ours.explained_variance_ratio, reference.explained_variance_ratio_, rtol=1e-10)
        np.testing.assert_allclose(np.abs(ours.scores), np.abs(reference.transform(X)), atol=1e-9)

    def test_full_rank_reconstruction(self, rng):
        X = rng.standard_normal((20, 5)) * [1.0, 3.0, 0.5, 2.0, 10.0] + 4.0
        projection = pca(X, n_components=5)
        np.testing.assert_allclose(projection.scores @ projection.loadings, X - X.mean(axis=0), atol=1e-8)

    def test_row_order_invariance(self, rng):
        X = rng.standard_normal((30, 4)) @ rng.standard_normal((4, 4))
        order = rng.permutation(30)
        original = pca(X, n_components=3)
        reordered = pca(X[order], n_components=3)
        np.testing.assert_allclose(reordered.loadings, original.loadings, atol=1e-9)
        np.testing.assert_allclose(reordered.scores, original.scores[order], atol=1e-9)

    def test_sign_convention(self, rng):
        projection = pca(rng.standard_normal((30, 4)), n_components=2)
        for row in projection.loadings:
            assert row[np.argmax(np.abs(row))] > 0
