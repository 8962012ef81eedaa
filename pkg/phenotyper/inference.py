"""
Inference Module
Permutation testing with Benjamini-Hochberg FDR control for single features,
and the correlation structure among the top-ranked features
"""

import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import stats
from scipy.cluster.hierarchy import leaves_list, linkage
from scipy.spatial.distance import squareform
from tqdm import tqdm

from .core import AnalysisError, QualityCode
from .learn import class_list, encode_labels, nearest_mean_predict


logger = logging.getLogger('Inference')


@dataclass(frozen=True)
class PermutationResult:
    observed_stat: float
    p_value: float


@dataclass(frozen=True)
class FdrResult:
    q_values: np.ndarray
    significant: np.ndarray


@dataclass
class FeatureRank:
    """Test outcome and per-class distribution summary for one feature"""

    feature_id: str
    statistic: float
    p_value: float
    q_value: float
    significant: bool
    class_summaries: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            'feature_id': self.feature_id,
            'statistic': self.statistic,
            'p_value': self.p_value,
            'q_value': self.q_value,
            'significant': self.significant,
            'class_summaries': self.class_summaries,
        }


@dataclass
class RankingResult:
    """Features ordered by single-feature balanced accuracy, best first"""

    features: list
    classes: list
    n_perm: int
    q_level: float = 0.05

    def __len__(self):
        return len(self.features)

    @property
    def n_significant(self):
        return sum(1 for rank in self.features if rank.significant)

    @property
    def feature_ids(self):
        return [rank.feature_id for rank in self.features]

    def to_dict(self):
        return {
            'classes': list(self.classes),
            'n_perm': self.n_perm,
            'q_level': self.q_level,
            'n_features': len(self.features),
            'n_significant': self.n_significant,
            'features': [rank.to_dict() for rank in self.features],
        }


@dataclass
class CorrelationCluster:
    """Absolute Spearman correlations among top features, with a dendrogram leaf order"""

    feature_ids: list
    correlation: np.ndarray
    leaf_order: list

    def to_dict(self):
        return {
            'feature_ids': list(self.feature_ids),
            'leaf_order': [int(i) for i in self.leaf_order],
            'ordered_feature_ids': [self.feature_ids[i] for i in self.leaf_order],
        }


def _balanced_accuracy_codes(predicted, actual, counts):
    hits = np.bincount(actual, weights=(predicted == actual).astype(float), minlength=len(counts))
    # Correctly rounded sum, so equal recalls in any class order give the same value
    return math.fsum(hits / counts) / len(counts)


def _lda_statistic(values, codes, counts):
    """In-sample balanced accuracy of single-feature LDA with equal priors"""
    predicted = nearest_mean_predict(values, codes, len(counts), values)
    return _balanced_accuracy_codes(predicted, codes, counts)


def permutation_test(feature_column, labels, n_perm=1000, seed=42, feature_index=0, classes=None):
    """
    Permutation p-value of the single-feature LDA balanced accuracy

    Args:
        feature_column (sequence): Finite feature values, one per series
        labels (sequence): Class label per series
        n_perm (int): Number of label shuffles
        seed (int): Base seed; the stream is derived from (seed, feature_index)
        feature_index (int): Position of the feature, so each feature has its own stream
        classes (list, optional): Class order

    Returns:
        PermutationResult: Observed statistic and p = (1 + #{perm >= obs}) / (1 + n_perm)
    """
    values = np.asarray(feature_column, dtype=float)
    if not np.all(np.isfinite(values)):
        raise AnalysisError('DEGENERATE', 'Feature column contains special values')

    classes = class_list(labels, classes)
    codes = encode_labels(labels, classes)
    counts = np.bincount(codes, minlength=len(classes))
    if len(classes) < 2:
        raise AnalysisError('MISSING_CLASS', 'Permutation test needs at least two classes')
    if np.any(counts < 2):
        raise AnalysisError('DEGENERATE', 'Every class needs at least two members')

    observed = _lda_statistic(values, codes, counts)

    rng = np.random.default_rng([seed, feature_index])
    exceed = 0
    for _ in range(n_perm):
        shuffled = rng.permutation(codes)
        # Ties count as exceeding
        if _lda_statistic(values, shuffled, counts) >= observed:
            exceed += 1

    return PermutationResult(observed_stat=observed, p_value=(1 + exceed) / (1 + n_perm))


def bh_fdr(p_values, q_level=0.05):
    """
    Benjamini-Hochberg step-up adjusted p-values

    Args:
        p_values (sequence): p-values in (0, 1]
        q_level (float): Significance threshold on the q-values

    Returns:
        FdrResult: q-values in input order and significance flags (q <= q_level)
    """
    p = np.asarray(p_values, dtype=float)
    n = len(p)
    if n == 0:
        return FdrResult(q_values=np.zeros(0), significant=np.zeros(0, dtype=bool))

    order = np.argsort(p, kind='stable')
    scaled = p[order] * n / np.arange(1, n + 1)
    adjusted = np.minimum(np.minimum.accumulate(scaled[::-1])[::-1], 1.0)

    q = np.empty(n)
    q[order] = adjusted
    return FdrResult(q_values=q, significant=q <= q_level)


def class_summaries(values, labels, classes):
    """Median, quartiles, extremes and count per class (violin-plot data)"""
    values = np.asarray(values, dtype=float)
    labels = np.array(labels, dtype=object)

    summaries = {}
    for name in classes:
        group = values[labels == name]
        if len(group) == 0:
            continue
        q1, median, q3 = np.quantile(group, [0.25, 0.5, 0.75])
        summaries[name] = {
            'n': int(len(group)),
            'min': float(np.min(group)),
            'q1': float(q1),
            'median': float(median),
            'q3': float(q3),
            'max': float(np.max(group)),
        }
    return summaries


def rank_features(matrix, labels, n_perm=1000, seed=42, classes=None, q_level=0.05,
                  max_workers=1, show_progress=False):
    """
    Permutation-test every column on raw values and control the FDR across them

    Args:
        matrix (FeatureMatrix): Filtered matrix (every cell OK), un-normalized
        labels (sequence): Class label per row
        n_perm (int): Shuffles per feature
        seed (int): Base seed
        classes (list, optional): Class order
        q_level (float): FDR level for the significance flags
        max_workers (int): Features tested in parallel
        show_progress (bool): Display a progress bar

    Returns:
        RankingResult: Features by statistic descending, ties by feature id
    """
    if np.any(matrix.quality != QualityCode.OK):
        raise AnalysisError('DEGENERATE', 'Ranking needs a filtered matrix without special values')

    labels = list(labels)
    classes = class_list(labels, classes)
    if len(classes) < 2:
        raise AnalysisError('MISSING_CLASS', 'Ranking needs at least two classes')

    logger.info(f"Ranking {len(matrix.feature_ids)} features with {n_perm} permutations each")

    def test_column(j):
        return permutation_test(matrix.values[:, j], labels, n_perm=n_perm, seed=seed,
                                feature_index=j, classes=classes)

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        results = list(tqdm(executor.map(test_column, range(len(matrix.feature_ids))),
                            total=len(matrix.feature_ids),
                            desc="Permutation Tests",
                            disable=not show_progress))

    fdr = bh_fdr([r.p_value for r in results], q_level=q_level)

    ranks = [
        FeatureRank(
            feature_id=feature_id,
            statistic=result.observed_stat,
            p_value=result.p_value,
            q_value=float(fdr.q_values[j]),
            significant=bool(fdr.significant[j]),
            class_summaries=class_summaries(matrix.values[:, j], labels, classes),
        )
        for j, (feature_id, result) in enumerate(zip(matrix.feature_ids, results))
    ]
    ranks.sort(key=lambda rank: (-rank.statistic, rank.feature_id))

    ranking = RankingResult(features=ranks, classes=classes, n_perm=n_perm, q_level=q_level)
    logger.info(f"{ranking.n_significant} features individually informative at q < {q_level}")
    return ranking


def rank_pairwise(matrix, labels, n_perm=1000, seed=42, classes=None, q_level=0.05, max_workers=1):
    """
    Rank features separately for every pair of classes

    Returns:
        dict: (class_a, class_b) -> RankingResult, pairs in class order
    """
    labels = list(labels)
    classes = class_list(labels, classes)
    label_array = np.array(labels, dtype=object)

    rankings = {}
    for first, second in combinations(classes, 2):
        rows = np.flatnonzero((label_array == first) | (label_array == second))
        sub = matrix.select_series([matrix.series_ids[i] for i in rows])
        rankings[(first, second)] = rank_features(
            sub, label_array[rows], n_perm=n_perm, seed=seed, classes=[first, second],
            q_level=q_level, max_workers=max_workers
        )
    return rankings


def spearman_abs(values):
    """Absolute Spearman correlation between columns, average ranks for ties"""
    ranks = stats.rankdata(np.asarray(values, dtype=float), method='average', axis=0)
    return np.abs(np.corrcoef(ranks, rowvar=False))


def correlation_cluster(matrix, ranking, top_k=40):
    """
    Cluster the top-ranked features on 1 - |Spearman rho|

    Args:
        matrix (FeatureMatrix): Matrix holding the ranked features
        ranking (RankingResult): Ranking whose first top_k features are used
        top_k (int): Number of features

    Returns:
        CorrelationCluster: Correlation matrix in ranking order and the leaf order
            of an average-linkage dendrogram
    """
    if top_k < 1 or top_k > len(ranking):
        raise ValueError(f"top_k must lie in 1..{len(ranking)}, got {top_k}")

    feature_ids = ranking.feature_ids[:top_k]
    values = matrix.select_features(feature_ids).values

    for j, feature_id in enumerate(feature_ids):
        if np.ptp(values[:, j]) == 0:
            raise AnalysisError('DEGENERATE', f"Feature {feature_id} is constant")

    correlation = np.clip(spearman_abs(values), 0.0, 1.0)
    correlation = np.atleast_2d(correlation)
    correlation = (correlation + correlation.T) / 2
    np.fill_diagonal(correlation, 1.0)

    if top_k == 1:
        return CorrelationCluster(feature_ids=feature_ids, correlation=correlation, leaf_order=[0])

    distance = squareform(1.0 - correlation, checks=False)
    tree = linkage(distance, method='average')
    return CorrelationCluster(
        feature_ids=feature_ids,
        correlation=correlation,
        leaf_order=[int(i) for i in leaves_list(tree)],
    )
