"""
Learn Module
Single-feature LDA, a class-weighted one-vs-rest linear classifier, stratified
cross-validation with balanced accuracy, and PCA for low-dimensional views
"""

import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from sklearn.metrics import confusion_matrix

from .core import AnalysisError


logger = logging.getLogger('Learn')


def class_list(labels, classes=None):
    return list(classes) if classes is not None else sorted(set(labels))


def encode_labels(labels, classes):
    """Map labels to integer positions in `classes`"""
    index = {name: i for i, name in enumerate(classes)}
    try:
        return np.array([index[label] for label in labels], dtype=int)
    except KeyError as e:
        raise ValueError(f"Label {e.args[0]!r} is not among the classes {classes}")


def balanced_accuracy(predicted, actual, classes):
    """
    Mean per-class recall: (1/m) sum_i t_i / c_i

    Args:
        predicted (sequence): Predicted labels
        actual (sequence): True labels, each one of `classes`
        classes (list): The m classes

    Returns:
        float: Balanced accuracy in [0, 1]
    """
    predicted = list(predicted)
    actual = list(actual)
    if len(predicted) != len(actual):
        raise ValueError('Predicted and actual labels differ in length')

    classes = list(classes)
    actual_codes = encode_labels(actual, classes)
    counts = np.bincount(actual_codes, minlength=len(classes))

    missing = [name for name, count in zip(classes, counts) if count == 0]
    if missing:
        raise AnalysisError('MISSING_CLASS', f"No examples of class(es) {missing}")

    correct = np.array([p == a for p, a in zip(predicted, actual)], dtype=float)
    hits = np.bincount(actual_codes, weights=correct, minlength=len(classes))
    return math.fsum(hits / counts) / len(classes)


def nearest_mean_predict(train_values, train_codes, n_classes, test_values):
    """Argmax of -(x - mu_i)^2 with ties going to the earliest class"""
    sums = np.bincount(train_codes, weights=train_values, minlength=n_classes)
    counts = np.bincount(train_codes, minlength=n_classes)
    means = sums / counts
    discriminant = -(np.asarray(test_values, dtype=float)[:, None] - means[None, :]) ** 2
    return np.argmax(discriminant, axis=1)


def lda_single_feature(train_values, train_labels, test_values, classes=None):
    """
    Linear discriminant analysis on one feature with equal priors

    With a pooled variance shared by every class, the Gaussian discriminant
    reduces to the negative squared distance to each class mean.

    Returns:
        np.ndarray: Predicted labels for the test values
    """
    train_values = np.asarray(train_values, dtype=float)
    classes = class_list(train_labels, classes)
    codes = encode_labels(train_labels, classes)

    present = np.bincount(codes, minlength=len(classes))
    if np.count_nonzero(present) < 2:
        raise AnalysisError('DEGENERATE', 'LDA needs at least two classes in training')
    if np.any(present == 0):
        raise AnalysisError('MISSING_CLASS', 'Every class needs training examples')

    means = np.bincount(codes, weights=train_values) / present
    pooled = np.sum((train_values - means[codes]) ** 2) / max(len(train_values) - len(classes), 1)
    if pooled == 0:
        raise AnalysisError('DEGENERATE', 'Pooled within-class variance is zero')

    predicted = nearest_mean_predict(train_values, codes, len(classes), test_values)
    return np.array(classes, dtype=object)[predicted]


def class_weights(codes, n_classes):
    """Observation weight N / (m c_i), the inverse probability of each class label"""
    counts = np.bincount(codes, minlength=n_classes)
    return len(codes) / (n_classes * counts[codes])


def logistic_loss_and_grad(coef, X, targets, sample_weight, regularization):
    """
    Weighted one-vs-rest logistic loss and its gradient

    Args:
        coef (np.ndarray): (m, p + 1) weights, bias in the last column
        X (np.ndarray): (n, p) features
        targets (np.ndarray): (n, m) entries +1 / -1
        sample_weight (np.ndarray): (n,) observation weights
        regularization (float): L2 penalty on the weights (bias unpenalized)

    Returns:
        tuple: (loss, gradient with the shape of coef)
    """
    X1 = np.column_stack((X, np.ones(len(X))))
    margins = targets * (X1 @ coef.T)
    total_weight = np.sum(sample_weight)

    loss = np.sum(sample_weight[:, None] * np.logaddexp(0.0, -margins)) / total_weight
    weights = coef[:, :-1]
    loss += 0.5 * regularization * np.sum(weights ** 2)

    # d/dz log(1 + exp(-z)) = -expit(-z)
    slope = -targets * expit(-margins) * sample_weight[:, None] / total_weight
    grad = slope.T @ X1
    grad[:, :-1] += regularization * weights
    return loss, grad


@dataclass
class LinearModel:
    """Per-class weight vectors and biases of a one-vs-rest linear classifier"""

    classes: list
    weights: np.ndarray
    bias: np.ndarray
    converged: bool = True
    n_iter: int = 0
    loss: float = float('nan')

    def decision_function(self, X):
        return np.asarray(X, dtype=float) @ self.weights.T + self.bias

    def predict(self, X):
        scores = self.decision_function(X)
        return np.array(self.classes, dtype=object)[np.argmax(scores, axis=1)]


def fit_weighted_linear(X, labels, regularization=0.01, seed=42, classes=None,
                        max_iter=5000, tol=1e-6):
    """
    Train a class-weighted linear classifier by full-batch gradient descent

    Args:
        X (np.ndarray): Normalized training features (series x features)
        labels (sequence): Training labels
        regularization (float): L2 penalty
        seed (int): Seeds the small random initialization of the weights
        classes (list, optional): Class order, sorted labels by default
        max_iter (int): Iteration budget
        tol (float): Relative loss change that counts as converged

    Returns:
        LinearModel: The fitted model; converged is False if the budget ran out
    """
    X = np.asarray(X, dtype=float)
    classes = class_list(labels, classes)
    codes = encode_labels(labels, classes)
    n_classes = len(classes)

    if len(np.unique(codes)) < 2:
        raise AnalysisError('DEGENERATE', 'Classifier needs at least two classes in training')
    if np.any(np.bincount(codes, minlength=n_classes) == 0):
        raise AnalysisError('MISSING_CLASS', 'Every class needs training examples')

    sample_weight = class_weights(codes, n_classes)
    targets = -np.ones((len(codes), n_classes))
    targets[np.arange(len(codes)), codes] = 1.0

    # Step 1/L from a bound on the curvature of the weighted logistic loss
    X1 = np.column_stack((X, np.ones(len(X))))
    gram = (X1 * sample_weight[:, None]).T @ X1 / np.sum(sample_weight)
    lipschitz = 0.25 * np.max(np.linalg.eigvalsh(gram)) + regularization
    step = 1.0 / lipschitz

    rng = np.random.default_rng(seed)
    coef = np.zeros((n_classes, X.shape[1] + 1))
    coef[:, :-1] = rng.normal(scale=1e-3, size=(n_classes, X.shape[1]))

    loss, grad = logistic_loss_and_grad(coef, X, targets, sample_weight, regularization)
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        coef = coef - step * grad
        new_loss, grad = logistic_loss_and_grad(coef, X, targets, sample_weight, regularization)
        change = abs(loss - new_loss) / max(abs(loss), np.finfo(float).tiny)
        loss = new_loss
        if change < tol:
            converged = True
            break

    if not converged:
        logger.warning(f"Classifier did not converge within {max_iter} iterations (loss {loss:.6g})")

    return LinearModel(
        classes=classes,
        weights=coef[:, :-1].copy(),
        bias=coef[:, -1].copy(),
        converged=converged,
        n_iter=n_iter,
        loss=float(loss),
    )


@dataclass
class FoldAssignment:
    """Fold index per labeled series"""

    k: int
    folds: np.ndarray
    seed: int

    def split(self, fold):
        """Return (train indices, test indices) for one fold"""
        test = np.flatnonzero(self.folds == fold)
        train = np.flatnonzero(self.folds != fold)
        return train, test


def stratified_kfold(labels, k=10, seed=42, classes=None):
    """
    Deal each class's shuffled members round-robin over k folds

    Each class starts dealing where the previous one stopped, which keeps the
    folds close in total size without changing any per-class count.

    Returns:
        FoldAssignment: Deterministic given the seed
    """
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")

    classes = class_list(labels, classes)
    codes = encode_labels(labels, classes)
    counts = np.bincount(codes, minlength=len(classes))

    for name, count in zip(classes, counts):
        if count < k:
            raise AnalysisError('CLASS_TOO_SMALL', f"Class {name!r} has {count} members, fewer than k = {k}")

    rng = np.random.default_rng(seed)
    folds = np.empty(len(codes), dtype=int)
    offset = 0
    for c in range(len(classes)):
        members = rng.permutation(np.flatnonzero(codes == c))
        folds[members] = (offset + np.arange(len(members))) % k
        offset = (offset + len(members)) % k

    return FoldAssignment(k=k, folds=folds, seed=seed)


@dataclass
class ClassifierReport:
    """Cross-validated predictions and balanced accuracies"""

    classes: list
    folds: np.ndarray
    predictions: list
    fold_accuracies: list
    confusion: np.ndarray
    n_unconverged: int = 0
    series_ids: list = field(default_factory=list)

    @property
    def mean_accuracy(self):
        return float(np.mean(self.fold_accuracies))

    @property
    def chance_level(self):
        return 1.0 / len(self.classes)

    def to_dict(self):
        return {
            'classes': list(self.classes),
            'k_folds': int(np.max(self.folds)) + 1,
            'mean_balanced_accuracy': self.mean_accuracy,
            'fold_balanced_accuracies': [float(a) for a in self.fold_accuracies],
            'chance_level': self.chance_level,
            'confusion_matrix': self.confusion.tolist(),
            'n_unconverged_folds': self.n_unconverged,
            'predictions': [
                {'series_id': sid, 'fold': int(fold), 'predicted': pred}
                for sid, fold, pred in zip(self.series_ids, self.folds, self.predictions)
            ],
        }


def cross_validate(X, labels, k=10, regularization=0.01, seed=42, classes=None,
                   series_ids=None, max_workers=1, max_iter=5000, fold_transform=None):
    """
    Stratified k-fold cross-validation of the weighted linear classifier

    Args:
        X (np.ndarray): Normalized features (series x features)
        labels (sequence): Class label per series
        k (int): Number of folds
        regularization (float): L2 penalty passed to fit_weighted_linear
        seed (int): Seed for fold assignment and model initialization
        classes (list, optional): Class order
        series_ids (list, optional): Row identifiers carried into the report
        max_workers (int): Folds trained in parallel
        max_iter (int): Iteration budget per fold
        fold_transform (callable, optional): f(train_X, test_X) -> (train_X, test_X),
            applied inside each fold

    Returns:
        ClassifierReport: Per-fold and pooled results
    """
    X = np.asarray(X, dtype=float)
    labels = list(labels)
    classes = class_list(labels, classes)
    if len(classes) < 2:
        raise AnalysisError('MISSING_CLASS', 'Classification needs at least two classes')

    assignment = stratified_kfold(labels, k=k, seed=seed, classes=classes)
    label_array = np.array(labels, dtype=object)

    def run_fold(fold):
        train, test = assignment.split(fold)
        train_X, test_X = X[train], X[test]
        if fold_transform is not None:
            train_X, test_X = fold_transform(train_X, test_X)

        model = fit_weighted_linear(train_X, label_array[train], regularization=regularization,
                                    seed=seed, classes=classes, max_iter=max_iter)
        predicted = model.predict(test_X)
        accuracy = balanced_accuracy(predicted, label_array[test], classes)
        return test, predicted, accuracy, model.converged

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        results = list(executor.map(run_fold, range(k)))

    predictions = np.empty(len(labels), dtype=object)
    accuracies = []
    n_unconverged = 0
    for test, predicted, accuracy, converged in results:
        predictions[test] = predicted
        accuracies.append(accuracy)
        n_unconverged += int(not converged)

    confusion = confusion_matrix(labels, list(predictions), labels=classes)
    report = ClassifierReport(
        classes=classes,
        folds=assignment.folds,
        predictions=list(predictions),
        fold_accuracies=accuracies,
        confusion=confusion,
        n_unconverged=n_unconverged,
        series_ids=list(series_ids) if series_ids is not None else [str(i) for i in range(len(labels))],
    )
    logger.info(f"{k}-fold balanced accuracy {report.mean_accuracy:.3f} (chance {report.chance_level:.3f})")
    return report


@dataclass
class PcaProjection:
    """Scores, orthonormal loadings and variance explained of the leading components"""

    scores: np.ndarray
    loadings: np.ndarray
    explained_variance_ratio: np.ndarray
    singular_values: np.ndarray
    series_ids: list = field(default_factory=list)
    feature_ids: list = field(default_factory=list)

    def to_dict(self):
        return {
            'n_components': len(self.explained_variance_ratio),
            'explained_variance_ratio': self.explained_variance_ratio.tolist(),
            'singular_values': self.singular_values.tolist(),
            'feature_ids': list(self.feature_ids),
            'loadings': self.loadings.tolist(),
        }


def pca(X, n_components=2, series_ids=None, feature_ids=None):
    """
    Principal components of column-centred data by singular value decomposition

    Each loading vector is signed so that its largest-magnitude entry is positive.

    Returns:
        PcaProjection: Scores (series x components) and loadings (components x features)
    """
    X = np.asarray(X, dtype=float)
    n_rows, n_cols = X.shape
    if n_rows < 2:
        raise AnalysisError('RANK_DEFICIENT', 'PCA needs at least two rows')
    if n_components > min(n_rows, n_cols):
        raise AnalysisError('RANK_DEFICIENT', f"Cannot extract {n_components} components from a {n_rows}x{n_cols} matrix")

    centred = X - X.mean(axis=0)
    _, singular, vt = np.linalg.svd(centred, full_matrices=False)

    rank = int(np.sum(singular > 1e-10 * singular[0])) if singular[0] > 0 else 0
    if rank < n_components:
        raise AnalysisError('RANK_DEFICIENT', f"Only {rank} non-zero singular values for {n_components} components")

    loadings = vt[:n_components]
    pivots = np.argmax(np.abs(loadings), axis=1)
    signs = np.sign(loadings[np.arange(n_components), pivots])
    loadings = loadings * signs[:, None]

    explained = singular ** 2 / np.sum(singular ** 2)
    return PcaProjection(
        scores=centred @ loadings.T,
        loadings=loadings,
        explained_variance_ratio=explained[:n_components],
        singular_values=singular[:n_components],
        series_ids=list(series_ids) if series_ids is not None else [],
        feature_ids=list(feature_ids) if feature_ids is not None else [],
    )
