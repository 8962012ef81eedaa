"""
Quality Module
Post-extraction feature filtration and unit-interval normalization
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit

from .core import AnalysisError, QualityCode


logger = logging.getLogger('Quality')

# Keeps sigmoid output strictly inside (0, 1) when exp() saturates
_LOWEST = np.nextafter(0.0, 1.0)
_HIGHEST = np.nextafter(1.0, 0.0)


class FilterReason(Enum):
    HAS_SPECIAL = 'HAS_SPECIAL'
    CONSTANT = 'CONSTANT'
    ZERO_IQR = 'ZERO_IQR'


@dataclass
class FilterReport:
    """Which features survived filtration, and why the others did not"""

    kept_feature_ids: list
    removed: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            'n_features': len(self.kept_feature_ids) + len(self.removed),
            'n_kept': len(self.kept_feature_ids),
            'kept_feature_ids': list(self.kept_feature_ids),
            'removed': {fid: reason.value for fid, reason in self.removed.items()},
        }


@dataclass
class NormalizedMatrix:
    """Feature values mapped into (0, 1), plus the columns dropped for a zero IQR"""

    series_ids: list
    feature_ids: list
    values: np.ndarray
    removed: dict = field(default_factory=dict)


def is_constant(column):
    """Sample std at most 1e-12 relative to max(1, |mean|)"""
    column = np.asarray(column, dtype=float)
    if len(column) < 2:
        return True
    return np.std(column, ddof=1) <= 1e-12 * max(1.0, abs(np.mean(column)))


def filter_features(matrix):
    """
    Drop features with special values or no variation across the dataset

    Args:
        matrix (FeatureMatrix): Extracted feature matrix

    Returns:
        FilterReport: Kept feature ids in column order and removal reasons
    """
    if matrix.values.size == 0:
        raise AnalysisError('EMPTY_RESULT', 'Feature matrix is empty')

    kept = []
    removed = {}
    for j, feature_id in enumerate(matrix.feature_ids):
        if np.any(matrix.quality[:, j] != QualityCode.OK):
            removed[feature_id] = FilterReason.HAS_SPECIAL
        elif is_constant(matrix.values[:, j]):
            removed[feature_id] = FilterReason.CONSTANT
        else:
            kept.append(feature_id)

    logger.info(f"Filtered {len(matrix.feature_ids)} features down to {len(kept)} well-behaved features")
    if not kept:
        raise AnalysisError('EMPTY_RESULT', 'Every feature was removed by filtration')

    return FilterReport(kept_feature_ids=kept, removed=removed)


def scaled_robust_sigmoid(values, median, iqr):
    """[1 + exp(-(f - median) / (1.35 iqr))]^-1, clipped into the open unit interval"""
    scaled = expit((np.asarray(values, dtype=float) - median) / (1.35 * iqr))
    return np.clip(scaled, _LOWEST, _HIGHEST)


class RobustSigmoidNormalizer:
    """
    Column-wise sigmoid normalizer with parameters fitted on a chosen set of rows

    method 'scaled_robust_sigmoid' centres on the median and scales by the IQR;
    method 'sigmoid' uses the mean and standard deviation instead.
    """

    METHODS = ('scaled_robust_sigmoid', 'sigmoid')

    def __init__(self, method='scaled_robust_sigmoid'):
        if method not in self.METHODS:
            raise ValueError(f"Unknown normalization method {method!r}")
        self.method = method
        self.centre = None
        self.scale = None
        self.keep = None

    def fit(self, values):
        """
        Compute per-column centre and scale

        Args:
            values (np.ndarray): Rows used for fitting (series x features)

        Returns:
            RobustSigmoidNormalizer: self
        """
        values = np.asarray(values, dtype=float)
        if self.method == 'scaled_robust_sigmoid':
            q25, median, q75 = np.quantile(values, [0.25, 0.5, 0.75], axis=0)
            self.centre = median
            self.scale = q75 - q25
        else:
            self.centre = np.mean(values, axis=0)
            self.scale = np.std(values, axis=0, ddof=1) / 1.35

        self.keep = self.scale > 0
        return self

    def transform(self, values):
        """Normalize the fitted columns that have a positive scale"""
        if self.keep is None:
            raise RuntimeError('Normalizer has not been fitted')

        values = np.asarray(values, dtype=float)[:, self.keep]
        return scaled_robust_sigmoid(values, self.centre[self.keep], self.scale[self.keep])


def normalize_sigmoid(matrix, method='scaled_robust_sigmoid', fit_rows=None):
    """
    Map every column of a filtered matrix into (0, 1)

    Args:
        matrix (FeatureMatrix): Matrix restricted to kept features
        method (str): 'scaled_robust_sigmoid' (default) or 'sigmoid'
        fit_rows (array-like, optional): Row indices to fit the parameters on;
            all rows when None

    Returns:
        NormalizedMatrix: Normalized values; zero-IQR columns are dropped and reported
    """
    values = np.asarray(matrix.values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise AnalysisError('DEGENERATE', 'Normalization needs a filtered matrix without special values')

    fit_values = values if fit_rows is None else values[np.asarray(fit_rows)]
    normalizer = RobustSigmoidNormalizer(method).fit(fit_values)

    removed = {
        fid: FilterReason.ZERO_IQR
        for fid, keep in zip(matrix.feature_ids, normalizer.keep) if not keep
    }
    if removed:
        logger.warning(f"Dropping {len(removed)} features with zero interquartile range")

    kept_ids = [fid for fid, keep in zip(matrix.feature_ids, normalizer.keep) if keep]
    if not kept_ids:
        raise AnalysisError('ZERO_IQR', 'Every feature has a zero interquartile range')

    return NormalizedMatrix(
        series_ids=list(matrix.series_ids),
        feature_ids=kept_ids,
        values=normalizer.transform(values),
        removed=removed,
    )
