"""
Feature Catalog Module
Ordered registry of feature definitions and the batch extraction that fills
the series x feature matrix
"""

import json
import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from tqdm import tqdm

from . import feature_extractors as fx
from .core import ConfigError, FeatureError, QualityCode


class Family(Enum):
    DIST = 'DIST'
    AUTOCORR = 'AUTOCORR'
    SPECTRAL = 'SPECTRAL'
    ENTROPY = 'ENTROPY'
    SCALING = 'SCALING'
    MODEL = 'MODEL'
    FORECAST = 'FORECAST'
    STATIONARITY = 'STATIONARITY'
    INCREMENT = 'INCREMENT'
    OUTLIER = 'OUTLIER'
    WAVELET = 'WAVELET'


# Extractor name -> function; a catalog record's `operation` must be a key here
OPERATIONS = {
    'distribution': fx.feat_distribution,
    'autocorr': fx.feat_autocorr,
    'spectral': fx.feat_spectral,
    'multiscale_entropy': fx.feat_multiscale_entropy,
    'dfa': fx.feat_dfa,
    'ar': fx.feat_ar,
    'local_forecast': fx.feat_local_forecast,
    'stationarity': fx.feat_stationarity,
    'increments': fx.feat_increments,
    'outlier_timing': fx.feat_outlier_timing,
    'wavelet': fx.feat_wavelet,
}


@dataclass(frozen=True)
class FeatureSpec:
    """One feature: a named output of an extractor run with fixed parameters"""

    feature_id: str
    family: Family
    operation: str
    output: str
    params: dict = field(default_factory=dict)
    min_length: int = 1
    description: str = ''

    def to_dict(self):
        return {
            'feature_id': self.feature_id,
            'family': self.family.value,
            'operation': self.operation,
            'output': self.output,
            'params': self.params,
            'min_length': self.min_length,
            'description': self.description,
        }

    @classmethod
    def from_dict(cls, record):
        try:
            return cls(
                feature_id=str(record['feature_id']),
                family=Family(record['family']),
                operation=str(record['operation']),
                output=str(record['output']),
                params=dict(record.get('params', {})),
                min_length=int(record.get('min_length', 1)),
                description=str(record.get('description', '')),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigError('CONFIG', f"Invalid catalog record {record!r}: {e}")

    @property
    def group_key(self):
        """Specs sharing this key are served by a single extractor call"""
        return self.operation, json.dumps(self.params, sort_keys=True)


class FeatureCatalog:
    """Ordered, validated list of FeatureSpec records; the order fixes matrix columns"""

    def __init__(self, specs):
        self.specs = tuple(specs)
        self.logger = logging.getLogger('FeatureCatalog')
        self._validate()

    def _validate(self):
        if not self.specs:
            raise ConfigError('CONFIG', 'Feature catalog is empty')

        seen = set()
        for spec in self.specs:
            if spec.feature_id in seen:
                raise ConfigError('CONFIG', f"Duplicate feature id {spec.feature_id}")
            seen.add(spec.feature_id)
            if spec.operation not in OPERATIONS:
                raise ConfigError('CONFIG', f"Unknown operation {spec.operation!r} for {spec.feature_id}")
            if spec.min_length < 1:
                raise ConfigError('CONFIG', f"min_length must be positive for {spec.feature_id}")

    def __len__(self):
        return len(self.specs)

    def __iter__(self):
        return iter(self.specs)

    def __getitem__(self, feature_id):
        for spec in self.specs:
            if spec.feature_id == feature_id:
                return spec
        raise KeyError(feature_id)

    @property
    def feature_ids(self):
        return [spec.feature_id for spec in self.specs]

    def to_records(self):
        return [spec.to_dict() for spec in self.specs]

    def digest(self):
        """SHA-256 of the canonical JSON form, recorded in run manifests"""
        canonical = json.dumps(self.to_records(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    @classmethod
    def load(cls, path):
        """
        Load a catalog from a JSON list of FeatureSpec records

        Args:
            path (str): Path to the catalog file

        Returns:
            FeatureCatalog: The validated catalog
        """
        try:
            with open(path, 'r', encoding='utf-8') as f:
                records = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError('CONFIG', f"Cannot read catalog {path}: {e}")

        if not isinstance(records, list):
            raise ConfigError('CONFIG', f"Catalog {path} must contain a JSON list")
        return cls(FeatureSpec.from_dict(record) for record in records)

    @classmethod
    def default(cls):
        return cls(_default_specs())


def _default_specs():
    """The built-in 55-feature catalog"""
    specs = []

    def add(family, operation, output, feature_id, min_length, description, **params):
        specs.append(FeatureSpec(feature_id, family, operation, output, params, min_length, description))

    dist = [
        ('mean', 'Mean of the values'),
        ('std', 'Sample standard deviation of the values'),
        ('skewness', 'Skewness of the value distribution'),
        ('excess_kurtosis', 'Excess kurtosis of the value distribution'),
        ('median', 'Median of the values'),
        ('iqr', 'Interquartile range of the values'),
        ('outlier_range_ratio', '1-99 percentile range relative to the interquartile range'),
        ('frac_abs_z_gt2', 'Fraction of points more than 2 standard deviations from the mean'),
    ]
    for name, description in dist:
        add(Family.DIST, 'distribution', name, f"dist.{name}", 4, description)

    for lag in range(1, 11):
        add(Family.AUTOCORR, 'autocorr', f"acf_{lag}", f"autocorr.acf_{lag}", 12,
            f"Autocorrelation at lag {lag}", max_lag=10)
    add(Family.AUTOCORR, 'autocorr', 'first_zero_lag', 'autocorr.first_zero_lag', 12,
        'First lag at which the autocorrelation turns negative', max_lag=10)
    add(Family.AUTOCORR, 'autocorr', 'first_1e_lag', 'autocorr.first_1e_lag', 12,
        'First lag at which the autocorrelation drops below 1/e', max_lag=10)
    add(Family.AUTOCORR, 'autocorr', 'sum_sq_acf10', 'autocorr.sum_sq_acf10', 12,
        'Sum of squared autocorrelations over lags 1-10', max_lag=10)

    spectral = [
        ('spectral_flatness', 'Geometric over arithmetic mean of the periodogram (1 = white)'),
        ('spectral_centroid', 'Power-weighted mean normalized frequency'),
        ('power_low_third', 'Share of power in the lowest third of frequencies'),
        ('power_mid_third', 'Share of power in the middle third of frequencies'),
        ('power_high_third', 'Share of power in the highest third of frequencies'),
        ('peak_freq_index_fraction', 'Location of the periodogram peak as a fraction of the band'),
    ]
    for name, description in spectral:
        add(Family.SPECTRAL, 'spectral', name, f"spectral.{name}", 16, description)

    for scale in range(1, 6):
        add(Family.ENTROPY, 'multiscale_entropy', f"sampen_scale{scale}",
            f"entropy.sampen_m2_r015_scale{scale}", 4 * scale,
            f"Sample Entropy SampEn(2, 0.15) after coarse-graining by {scale}",
            scales=[1, 2, 3, 4, 5], m=2, r_frac=0.15)

    add(Family.SCALING, 'dfa', 'dfa_alpha', 'scaling.dfa_alpha', 64,
        'Detrended fluctuation analysis scaling exponent')
    add(Family.SCALING, 'dfa', 'dfa_fit_residual', 'scaling.dfa_fit_residual', 64,
        'RMS residual of the DFA log-log fit')

    model = [
        ('ar2_coef1', 'First coefficient of a Yule-Walker AR(2) fit'),
        ('ar2_coef2', 'Second coefficient of a Yule-Walker AR(2) fit'),
        ('ar2_resid_var_ratio', 'AR(2) innovation variance relative to the series variance'),
        ('ar_best_order_aic', 'AR order (1-8) minimizing AIC'),
        ('ar_best_resid_var_ratio', 'Innovation variance ratio of the AIC-best AR model'),
    ]
    for name, description in model:
        add(Family.MODEL, 'ar', name, f"model.{name}", 20, description)

    for width in (1, 3, 5):
        add(Family.FORECAST, 'local_forecast', f"localmean_nmse_l{width}",
            f"forecast.localmean_nmse_l{width}", 20,
            f"Normalized squared error of a {width}-point local mean forecast")

    stationarity = [
        ('statav5', 'Spread of 5 segment means relative to the overall spread (StatAv)'),
        ('sliding_mean_std_ratio', 'Spread of sliding-window means relative to the overall spread'),
        ('sliding_std_std_ratio', 'Spread of sliding-window stds relative to the overall spread'),
    ]
    for name, description in stationarity:
        add(Family.STATIONARITY, 'stationarity', name, f"stationarity.{name}", 25, description)

    increments = [
        ('std_diff_z', 'Standard deviation of successive differences of the z-scored series'),
        ('mean_abs_diff_z', 'Mean absolute successive difference of the z-scored series'),
        ('diff_var_ratio', 'Variance of successive differences relative to the series variance'),
    ]
    for name, description in increments:
        add(Family.INCREMENT, 'increments', name, f"increment.{name}", 3, description)

    outliers = [
        ('n_events_frac', 'Fraction of points beyond 2 standard deviations'),
        ('mean_interevent', 'Mean number of samples between outliers beyond 2 standard deviations'),
        ('max_interevent', 'Longest gap in samples between outliers beyond 2 standard deviations'),
    ]
    for name, description in outliers:
        add(Family.OUTLIER, 'outlier_timing', name, f"outlier.{name}", 10, description,
            threshold_z=2.0)

    for level in range(1, 5):
        add(Family.WAVELET, 'wavelet', f"haar_energy_frac_level{level}",
            f"wavelet.haar_energy_frac_level{level}", 32,
            f"Share of energy in Haar detail level {level} (1 = finest)")

    return specs


@dataclass
class FeatureMatrix:
    """Series x feature values with one quality code per cell"""

    series_ids: list
    feature_ids: list
    values: np.ndarray
    quality: np.ndarray

    def __post_init__(self):
        self.series_ids = list(self.series_ids)
        self.feature_ids = list(self.feature_ids)
        self.values = np.asarray(self.values, dtype=float)
        self.quality = np.asarray(self.quality, dtype=object)

        shape = (len(self.series_ids), len(self.feature_ids))
        if self.values.shape != shape or self.quality.shape != shape:
            raise ValueError(f"Matrix shape {self.values.shape} does not match labels {shape}")

    @property
    def shape(self):
        return self.values.shape

    @property
    def ok_mask(self):
        return self.quality == QualityCode.OK

    def column(self, feature_id):
        return self.values[:, self.feature_ids.index(feature_id)]

    def select_features(self, feature_ids):
        """Sub-matrix restricted to the given columns, in the given order"""
        idx = [self.feature_ids.index(fid) for fid in feature_ids]
        return FeatureMatrix(self.series_ids, list(feature_ids), self.values[:, idx], self.quality[:, idx])

    def select_series(self, series_ids):
        idx = [self.series_ids.index(sid) for sid in series_ids]
        return FeatureMatrix(list(series_ids), self.feature_ids, self.values[idx], self.quality[idx])

    def equals(self, other):
        """Exact equality of labels, values (NaN == NaN) and codes"""
        return (
            self.series_ids == other.series_ids
            and self.feature_ids == other.feature_ids
            and np.array_equal(self.values, other.values, equal_nan=True)
            and np.array_equal(self.quality, other.quality)
        )


class FeatureExtractor:
    """Runs every catalog feature on every series of a dataset"""

    def __init__(self, catalog=None, max_workers=4, show_progress=True):
        """
        Initialize the extractor

        Args:
            catalog (FeatureCatalog, optional): Features to compute, default catalog if None
            max_workers (int): Number of threads working on series in parallel
            show_progress (bool): Display a progress bar
        """
        self.catalog = catalog or FeatureCatalog.default()
        self.max_workers = max_workers
        self.show_progress = show_progress
        self.logger = logging.getLogger('FeatureExtractor')

    def extract_all(self, dataset):
        """
        Fill the feature matrix for a dataset

        Args:
            dataset (Dataset): Series to process, rows keep this order

        Returns:
            FeatureMatrix: Values and quality codes, columns in catalog order
        """
        if len(dataset) == 0:
            raise ValueError('Cannot extract features from an empty dataset')

        self.logger.info(f"Extracting {len(self.catalog)} features from {len(dataset)} series")

        # Rows are written by index, so the schedule cannot change the result
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            rows = list(tqdm(executor.map(self.extract_series, dataset.series),
                             total=len(dataset),
                             desc="Extracting Features",
                             disable=not self.show_progress))

        values = np.array([row[0] for row in rows], dtype=float)
        quality = np.empty(values.shape, dtype=object)
        for i, row in enumerate(rows):
            quality[i, :] = row[1]

        n_bad = int(np.sum(quality != QualityCode.OK))
        self.logger.info(f"Extraction finished: {n_bad} of {quality.size} cells are special values")
        return FeatureMatrix(dataset.ids, self.catalog.feature_ids, values, quality)

    def extract_series(self, series):
        """
        Compute every catalog feature for one series

        Returns:
            tuple: (list of values, list of QualityCode) in catalog order
        """
        results = {}
        values = []
        codes = []

        with np.errstate(all='ignore'):
            for spec in self.catalog:
                if len(series.values) < spec.min_length:
                    values.append(np.nan)
                    codes.append(QualityCode.TOO_SHORT)
                    continue

                if spec.group_key not in results:
                    results[spec.group_key] = self._run_operation(spec, series)

                value, code = self._cell(results[spec.group_key], spec, series)
                values.append(value)
                codes.append(code)

        return values, codes

    def _run_operation(self, spec, series):
        """Call the extractor once; failures come back as a QualityCode"""
        try:
            return OPERATIONS[spec.operation](series.values, **spec.params)
        except FeatureError as e:
            return e.quality
        except np.linalg.LinAlgError as e:
            self.logger.warning(f"Linear algebra failure in {spec.operation} for {series.id}: {e}")
            return QualityCode.NO_CONVERGENCE
        except Exception as e:
            self.logger.error(f"Error computing {spec.operation} for {series.id}: {str(e)}")
            return QualityCode.NOT_FINITE

    def _cell(self, result, spec, series):
        if isinstance(result, QualityCode):
            return np.nan, result

        if spec.output not in result:
            self.logger.error(f"Operation {spec.operation} has no output {spec.output!r} ({spec.feature_id})")
            return np.nan, QualityCode.NOT_FINITE

        value = result[spec.output]
        if isinstance(value, QualityCode):
            return np.nan, value

        value = float(value)
        if not np.isfinite(value):
            return np.nan, QualityCode.NOT_FINITE
        return value, QualityCode.OK


def extract_all(dataset, catalog=None, max_workers=4, show_progress=False):
    """Functional shortcut for FeatureExtractor(catalog, ...).extract_all(dataset)"""
    extractor = FeatureExtractor(catalog, max_workers=max_workers, show_progress=show_progress)
    return extractor.extract_all(dataset)
