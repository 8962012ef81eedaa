"""
Core Module
Domain types shared by every stage of the pipeline, the exception hierarchy,
and elementary preprocessing (z-scoring, validation, missing-data trimming)
"""

import math
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


logger = logging.getLogger('Core')


class QualityCode(Enum):
    """Outcome of computing one feature-matrix cell"""

    OK = 'OK'
    NOT_FINITE = 'NOT_FINITE'
    DEGENERATE_INPUT = 'DEGENERATE_INPUT'
    TOO_SHORT = 'TOO_SHORT'
    NO_CONVERGENCE = 'NO_CONVERGENCE'


class PhenotyperError(Exception):
    """Base class for every error raised by the package"""

    def __init__(self, code, message=''):
        self.code = code
        super().__init__(f"{code}: {message}" if message else str(code))


class FeatureError(PhenotyperError):
    """An extractor could not produce a value; carries the cell's quality code"""

    def __init__(self, quality, message=''):
        self.quality = quality
        super().__init__(quality.value, message)


class SeriesRejected(PhenotyperError):
    """A series was dropped during ingestion"""

    def __init__(self, reason, message=''):
        self.reason = reason
        super().__init__('REJECTED', f"{reason} {message}".strip())


class AnalysisError(PhenotyperError):
    """A statistical precondition failed (DEGENERATE, MISSING_CLASS, CLASS_TOO_SMALL, ...)"""


class ConfigError(PhenotyperError):
    """Fatal configuration or file problem (codes CONFIG and IO)"""


@dataclass(frozen=True)
class TimeSeries:
    """One univariate, uniformly sampled recording"""

    id: str
    values: np.ndarray
    sampling_rate_hz: float = None
    label: str = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or len(values) < 1:
            raise ValueError(f"Series {self.id} must be a non-empty 1-D sequence")
        if self.sampling_rate_hz is not None and not self.sampling_rate_hz > 0:
            raise ValueError(f"Series {self.id} has a non-positive sampling rate")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of series plus the class list and per-class counts"""

    series: tuple
    classes: tuple = ()
    class_counts: dict = field(default_factory=dict)

    @classmethod
    def from_series(cls, series, classes=None):
        """
        Build a dataset, inferring the class list from the labels when not given

        Args:
            series (iterable): TimeSeries objects, kept in the given order
            classes (list, optional): Explicit class order

        Returns:
            Dataset: The validated dataset
        """
        series = tuple(series)
        ids = [s.id for s in series]
        duplicates = [sid for sid, count in Counter(ids).items() if count > 1]
        if duplicates:
            raise ValueError(f"Duplicate series ids: {duplicates}")

        labels = [s.label for s in series if s.label is not None]
        if classes is None:
            classes = sorted(set(labels))
        classes = tuple(classes)

        unknown = sorted(set(labels) - set(classes))
        if unknown:
            raise ValueError(f"Labels not among the classes: {unknown}")

        counts = Counter(labels)
        class_counts = {name: counts.get(name, 0) for name in classes}
        return cls(series=series, classes=classes, class_counts=class_counts)

    def __len__(self):
        return len(self.series)

    @property
    def ids(self):
        return [s.id for s in self.series]

    @property
    def labels(self):
        return [s.label for s in self.series]

    @property
    def is_labeled(self):
        return bool(self.series) and all(s.label is not None for s in self.series)


@dataclass(frozen=True)
class ValidationReport:
    series_id: str
    length: int
    all_finite: bool
    constant: bool


def zscore(values):
    """
    Standardize a sequence to zero mean and unit sample standard deviation

    Args:
        values (sequence): Real values

    Returns:
        np.ndarray: (x - mean) / std with the n-1 denominator
    """
    x = np.asarray(values, dtype=float)
    if len(x) < 2:
        raise FeatureError(QualityCode.TOO_SHORT, 'z-scoring needs at least 2 points')

    std = np.std(x, ddof=1)
    if std == 0 or not np.isfinite(std):
        raise FeatureError(QualityCode.DEGENERATE_INPUT, 'zero standard deviation')

    return (x - np.mean(x)) / std


def validate(series):
    """Report length, finiteness and constancy of a series without touching it"""
    values = np.asarray(series.values, dtype=float)
    finite = np.isfinite(values)
    finite_values = values[finite]
    constant = len(finite_values) == 0 or bool(np.all(finite_values == finite_values[0]))

    return ValidationReport(
        series_id=series.id,
        length=len(values),
        all_finite=bool(np.all(finite)),
        constant=constant
    )


def _is_missing(value):
    if value is None:
        return True
    if isinstance(value, str):
        return value.strip() in ('', 'NaN')
    return isinstance(value, float) and math.isnan(value)


def trim_missing(values, max_fraction=0.15):
    """
    Remove a single leading or trailing block of missing values

    Args:
        values (sequence): Reals, with None / NaN / '' marking missing points
        max_fraction (float): Block must be strictly shorter than this share of the length

    Returns:
        np.ndarray: The series without its missing block

    Raises:
        SeriesRejected: reason interior_missing, multiple_blocks or too_much_missing
    """
    if not 0 < max_fraction < 1:
        raise ValueError(f"max_fraction must lie in (0, 1), got {max_fraction}")

    values = list(values)
    n = len(values)
    missing = np.array([_is_missing(v) for v in values], dtype=bool)

    if not missing.any():
        return np.array(values, dtype=float)

    # Block boundaries as (start, stop) pairs
    edges = np.diff(np.concatenate(([0], missing.astype(int), [0])))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)

    touches_end = [start == 0 or stop == n for start, stop in zip(starts, stops)]
    if not all(touches_end):
        raise SeriesRejected('interior_missing')
    if len(starts) > 1:
        raise SeriesRejected('multiple_blocks')

    block = stops[0] - starts[0]
    if block / n >= max_fraction:
        raise SeriesRejected('too_much_missing', f"({block} of {n} points)")

    kept = [v for v, gone in zip(values, missing) if not gone]
    return np.array(kept, dtype=float)


def window_max(values, width):
    """Downsample by taking the maximum of each non-overlapping block of `width` points"""
    if width < 1:
        raise ValueError(f"width must be at least 1, got {width}")

    x = np.asarray(values, dtype=float)
    if len(x) < width:
        raise FeatureError(QualityCode.TOO_SHORT, f"need at least {width} points")

    n_blocks = len(x) // width
    return x[:n_blocks * width].reshape(n_blocks, width).max(axis=1)


def combine_labels(*label_sequences, sep='_'):
    """
    Join several label sequences into combination classes

    Args:
        *label_sequences: Equal-length label sequences (e.g. condition, sex)
        sep (str): Separator placed between the parts

    Returns:
        list: One combined label per position
    """
    if not label_sequences:
        return []

    lengths = {len(labels) for labels in label_sequences}
    if len(lengths) != 1:
        raise ValueError('Label sequences must have equal length')

    combined = []
    for parts in zip(*label_sequences):
        if any(part is None for part in parts):
            raise ValueError('Cannot combine missing labels')
        combined.append(sep.join(str(part) for part in parts))
    return combined
