"""
Pipeline Module
Ingestion, feature computation, analysis and reporting stages behind the CLI
"""

import os
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone

import pandas as pd

from phenotyper import __version__
from phenotyper.core import (AnalysisError, ConfigError, Dataset, FeatureError, SeriesRejected,
                             TimeSeries, trim_missing, validate, window_max)
from phenotyper.feature_catalog import FeatureCatalog, FeatureExtractor
from phenotyper.inference import correlation_cluster, rank_features, rank_pairwise
from phenotyper.learn import cross_validate, pca
from phenotyper.quality import RobustSigmoidNormalizer, filter_features, normalize_sigmoid
from utils.file_handler import LABELS_FILE, FileHandler


logger = logging.getLogger('Pipeline')

OUTPUTS = {
    'features': 'features.csv',
    'quality': 'quality.csv',
    'labels': 'labels.csv',
    'catalog': 'catalog.json',
    'manifest': 'manifest.json',
    'filter_report': 'filter_report.json',
    'ranking': 'ranking.json',
    'top_features': 'top_features.csv',
    'classification': 'classification.json',
    'pca_scores': 'pca_scores.csv',
    'pca': 'pca.json',
    'correlation_matrix': 'correlation_matrix.csv',
    'correlation_cluster': 'correlation_cluster.json',
    'pairwise_ranking': 'pairwise_ranking.json',
    'report': 'report.txt',
    'run_config': 'run.conf',
}


@dataclass
class RunManifest:
    """Provenance of one run; equal manifests (timestamps aside) give identical outputs"""

    tool_version: str
    catalog_hash: str
    config: dict
    input_digests: dict
    rejected: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)
    timestamps: dict = field(default_factory=dict)

    def stamp(self, stage):
        self.timestamps[stage] = datetime.now(timezone.utc).isoformat()

    def to_dict(self):
        return {
            'tool_version': self.tool_version,
            'catalog_hash': self.catalog_hash,
            'config': self.config,
            'input_digests': self.input_digests,
            'rejected': self.rejected,
            'warnings': self.warnings,
            'failures': self.failures,
            'timestamps': self.timestamps,
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(**{key: payload[key] for key in (
            'tool_version', 'catalog_hash', 'config', 'input_digests',
            'rejected', 'warnings', 'failures', 'timestamps')})


def _output(config, name):
    return os.path.join(config.output_dir, OUTPUTS[name])


def _series_id(path):
    return os.path.splitext(os.path.basename(path))[0]


def _input_files(config):
    """Every file the dataset is read from, used for digests"""
    files = []
    for path in config.input_paths:
        if os.path.isdir(path):
            files.extend(FileHandler().get_series_files(path))
            labels = os.path.join(path, LABELS_FILE)
            if os.path.exists(labels):
                files.append(labels)
        else:
            files.append(path)
    if config.labels_path:
        files.append(config.labels_path)
    return sorted(set(files))


def ingest(config, file_handler=None):
    """
    Read every input into a Dataset, trimming or rejecting series with missing data

    Args:
        config (ProjectConfig): Run configuration (input_paths, labels_path, ...)
        file_handler (FileHandler, optional): Reader to use

    Returns:
        tuple: (Dataset in lexicographic id order, dict series_id -> rejection reason)
    """
    handler = file_handler or FileHandler()
    if not config.input_paths:
        raise ConfigError('CONFIG', 'No input_paths configured')

    raw = {}
    rejected = {}
    labels_path = config.labels_path or None

    for path in config.input_paths:
        if os.path.isdir(path):
            for series_path in handler.get_series_files(path):
                series_id = _series_id(series_path)
                if series_id in raw or series_id in rejected:
                    raise ConfigError('IO', f"Duplicate series id {series_id}")
                try:
                    raw[series_id] = handler.read_series_file(series_path)
                except SeriesRejected as e:
                    handler.logger.warning(f"Rejected {series_id}: {e}")
                    rejected[series_id] = e.reason
            if labels_path is None and os.path.exists(os.path.join(path, LABELS_FILE)):
                labels_path = os.path.join(path, LABELS_FILE)
        elif os.path.isfile(path):
            series, bad = handler.read_long_format(path)
            for series_id in list(series) + list(bad):
                if series_id in raw or series_id in rejected:
                    raise ConfigError('IO', f"Duplicate series id {series_id}")
            raw.update(series)
            rejected.update(bad)
        else:
            raise ConfigError('IO', f"Input path {path} does not exist")

    labels = None
    if labels_path:
        labels = {}
        for key, label in handler.read_labels(labels_path).items():
            series_id = _series_id(key) if key.lower().endswith('.csv') else key
            if series_id not in raw and series_id not in rejected:
                raise ConfigError('IO', f"Labels file names series {key!r}, which is not among the inputs")
            labels[series_id] = label

    window = config.downsample_window
    # 0 means the rate is unknown
    rate = config.sampling_rate_hz / window if config.sampling_rate_hz else None
    if window > 1:
        logger.info(f"Downsampling by the maximum of every {window} points")

    series = []
    for series_id in sorted(raw):
        try:
            values = trim_missing(raw[series_id], max_fraction=config.max_missing_fraction)
            if labels is not None and series_id not in labels:
                raise SeriesRejected('unlabeled')
            if window > 1:
                try:
                    values = window_max(values, window)
                except FeatureError:
                    raise SeriesRejected('too_short', f"fewer than {window} points")
        except SeriesRejected as e:
            logger.warning(f"Rejected {series_id}: {e.reason}")
            rejected[series_id] = e.reason
            continue
        label = labels[series_id] if labels is not None else None
        series.append(TimeSeries(id=series_id, values=values, sampling_rate_hz=rate, label=label))

    if not series:
        raise ConfigError('IO', 'No usable series in the inputs')

    dataset = Dataset.from_series(series)
    logger.info(f"Ingested {len(dataset)} series ({len(rejected)} rejected), classes {list(dataset.classes)}")
    return dataset, dict(sorted(rejected.items()))


def cmd_ingest_check(config):
    """
    Ingest and validate without writing anything

    Returns:
        str: Plain-text table of accepted and rejected series
    """
    dataset, rejected = ingest(config)

    lines = [f"{'series_id':<30} {'label':<15} {'length':>8}  status"]
    for series in dataset.series:
        report = validate(series)
        status = 'constant' if report.constant else 'ok'
        lines.append(f"{series.id:<30} {str(series.label or '-'):<15} {report.length:>8}  {status}")
    for series_id, reason in rejected.items():
        lines.append(f"{series_id:<30} {'-':<15} {'-':>8}  rejected({reason})")

    counts = ', '.join(f"{name}: {count}" for name, count in dataset.class_counts.items())
    lines.append(f"{len(dataset)} accepted, {len(rejected)} rejected" + (f" ({counts})" if counts else ''))
    rate = dataset.series[0].sampling_rate_hz
    if rate is not None:
        lines.append(f"Sampling rate after ingestion: {rate:g} Hz")
    return '\n'.join(lines)


def load_catalog(config):
    if config.catalog_path:
        return FeatureCatalog.load(config.catalog_path)
    return FeatureCatalog.default()


def cmd_compute(config, show_progress=True):
    """
    Compute the feature matrix and write features.csv, quality.csv, labels.csv,
    catalog.json and manifest.json

    Returns:
        RunManifest: Manifest of the run
    """
    handler = FileHandler()
    catalog = load_catalog(config)
    dataset, rejected = ingest(config, handler)

    manifest = RunManifest(
        tool_version=__version__,
        catalog_hash=catalog.digest(),
        config=config.as_dict(),
        input_digests={path: handler.file_digest(path) for path in _input_files(config)},
        rejected=rejected,
    )
    manifest.stamp('compute_started')

    extractor = FeatureExtractor(catalog, max_workers=config.n_jobs, show_progress=show_progress)
    matrix = extractor.extract_all(dataset)

    handler.write_feature_matrix(matrix, _output(config, 'features'), _output(config, 'quality'))
    handler.write_frame(_output(config, 'labels'), pd.DataFrame({
        'series_id': dataset.ids,
        'label': [label if label is not None else '' for label in dataset.labels],
    }))
    handler.write_json(_output(config, 'catalog'), catalog.to_records())

    manifest.stamp('compute_finished')
    handler.write_json(_output(config, 'manifest'), manifest.to_dict())
    config.save(_output(config, 'run_config'))
    logger.info(f"Wrote {matrix.shape[0]} x {matrix.shape[1]} feature matrix to {config.output_dir}")
    return manifest


def _load_manifest(config, handler):
    path = _output(config, 'manifest')
    if os.path.exists(path):
        return RunManifest.from_dict(handler.read_json(path))
    return RunManifest(__version__, '', config.as_dict(), {})


def _fold_normalizer(method):
    """Per-fold transform fitting the sigmoid parameters on training rows only"""
    def transform(train_X, test_X):
        normalizer = RobustSigmoidNormalizer(method).fit(train_X)
        return normalizer.transform(train_X), normalizer.transform(test_X)
    return transform


def _top_features_frame(ranking, top_k):
    rows = []
    for position, rank in enumerate(ranking.features[:top_k], start=1):
        for name, summary in rank.class_summaries.items():
            rows.append({
                'rank': position,
                'feature_id': rank.feature_id,
                'q_value': rank.q_value,
                'class': name,
                **summary,
            })
    return pd.DataFrame(rows, columns=['rank', 'feature_id', 'q_value', 'class',
                                       'n', 'min', 'q1', 'median', 'q3', 'max'])


def cmd_analyze(config, show_progress=True):
    """
    Filter, rank (raw values), normalize, cross-validate, project and cluster

    Stages that fail record their error in the manifest; the others still run.

    Returns:
        RunManifest: Manifest updated with warnings and failures
    """
    handler = FileHandler()
    for name in ('features', 'quality', 'labels'):
        if not os.path.exists(_output(config, name)):
            raise ConfigError('IO', f"{_output(config, name)} is missing; run `compute` first")

    manifest = _load_manifest(config, handler)
    manifest.config = config.as_dict()
    manifest.warnings = []
    manifest.failures = {}
    manifest.stamp('analyze_started')

    matrix = handler.read_feature_matrix(_output(config, 'features'), _output(config, 'quality'))
    label_map = handler.read_labels(_output(config, 'labels'))
    labels = [label_map.get(series_id, '') for series_id in matrix.series_ids]

    report = filter_features(matrix)
    handler.write_json(_output(config, 'filter_report'), report.to_dict())
    filtered = matrix.select_features(report.kept_feature_ids)

    labeled_rows = [i for i, label in enumerate(labels) if label]
    labeled = filtered.select_series([filtered.series_ids[i] for i in labeled_rows])
    labeled_labels = [labels[i] for i in labeled_rows]
    classes = sorted(set(labeled_labels))

    ranking = None
    try:
        if len(classes) < 2:
            raise AnalysisError('MISSING_CLASS', f"Need at least two classes, found {classes}")
        ranking = rank_features(labeled, labeled_labels, n_perm=config.n_perm, seed=config.seed,
                                classes=classes, q_level=config.q_level, max_workers=config.n_jobs,
                                show_progress=show_progress)
        handler.write_json(_output(config, 'ranking'), ranking.to_dict())
        handler.write_frame(_output(config, 'top_features'), _top_features_frame(ranking, config.top_k))
    except AnalysisError as e:
        logger.error(f"Ranking failed: {e}")
        manifest.failures['rank'] = str(e)

    if ranking is not None and config.pairwise:
        if len(classes) < 3:
            manifest.warnings.append('Pairwise ranking skipped: it needs three or more classes')
            logger.warning(manifest.warnings[-1])
        else:
            try:
                pairs = rank_pairwise(labeled, labeled_labels, n_perm=config.n_perm, seed=config.seed,
                                      classes=classes, q_level=config.q_level, max_workers=config.n_jobs)
                handler.write_json(_output(config, 'pairwise_ranking'), {'pairs': [
                    {'pair': list(pair), **result.to_dict()} for pair, result in pairs.items()
                ]})
            except AnalysisError as e:
                logger.error(f"Pairwise ranking failed: {e}")
                manifest.failures['pairwise'] = str(e)

    normalized = None
    try:
        normalized = normalize_sigmoid(filtered, method=config.normalization)
        if normalized.removed:
            manifest.warnings.append(f"{len(normalized.removed)} features dropped before normalization (ZERO_IQR)")
    except AnalysisError as e:
        logger.error(f"Normalization failed: {e}")
        manifest.failures['normalize'] = str(e)

    if normalized is not None:
        try:
            if len(classes) < 2:
                raise AnalysisError('MISSING_CLASS', f"Need at least two classes, found {classes}")
            if config.normalize_within_folds:
                features = labeled.select_features(normalized.feature_ids).values
                fold_transform = _fold_normalizer(config.normalization)
            else:
                features = normalized.values[labeled_rows]
                fold_transform = None
            classification = cross_validate(
                features, labeled_labels, k=config.k_folds, regularization=config.regularization,
                seed=config.seed, classes=classes, series_ids=labeled.series_ids,
                max_workers=config.n_jobs, max_iter=config.max_iter, fold_transform=fold_transform
            )
            if classification.n_unconverged:
                manifest.warnings.append(f"Classifier did not converge in {classification.n_unconverged} fold(s)")
            handler.write_json(_output(config, 'classification'), classification.to_dict())
        except AnalysisError as e:
            logger.error(f"Classification failed: {e}")
            manifest.failures['classify'] = str(e)

        try:
            projection = pca(normalized.values, n_components=config.n_components,
                             series_ids=normalized.series_ids, feature_ids=normalized.feature_ids)
            scores = pd.DataFrame(projection.scores,
                                  columns=[f"pc{i + 1}" for i in range(projection.scores.shape[1])])
            scores.insert(0, 'label', labels)
            scores.insert(0, 'series_id', normalized.series_ids)
            handler.write_frame(_output(config, 'pca_scores'), scores)
            handler.write_json(_output(config, 'pca'), projection.to_dict())
        except AnalysisError as e:
            logger.error(f"PCA failed: {e}")
            manifest.failures['pca'] = str(e)

    if ranking is not None:
        top_k = config.top_k
        if top_k > len(ranking):
            manifest.warnings.append(f"top_k clamped from {top_k} to {len(ranking)} surviving features")
            logger.warning(manifest.warnings[-1])
            top_k = len(ranking)
        try:
            cluster = correlation_cluster(labeled, ranking, top_k=top_k)
            frame = pd.DataFrame(cluster.correlation, columns=cluster.feature_ids)
            frame.insert(0, 'feature_id', cluster.feature_ids)
            handler.write_frame(_output(config, 'correlation_matrix'), frame)
            handler.write_json(_output(config, 'correlation_cluster'), cluster.to_dict())
        except AnalysisError as e:
            logger.error(f"Correlation clustering failed: {e}")
            manifest.failures['correlation'] = str(e)

    manifest.stamp('analyze_finished')
    handler.write_json(_output(config, 'manifest'), manifest.to_dict())
    config.save(_output(config, 'run_config'))
    return manifest


def cmd_report(config):
    """
    Summarize the analysis outputs as plain text and write report.txt

    Returns:
        str: The summary
    """
    handler = FileHandler()
    required = ('ranking', 'filter_report', 'catalog', 'labels')
    for name in required:
        if not os.path.exists(_output(config, name)):
            raise ConfigError('IO', f"{_output(config, name)} is missing; run `analyze` first "
                                    f"(it needs two or more classes to rank features)")

    ranking = handler.read_json(_output(config, 'ranking'))
    filter_report = handler.read_json(_output(config, 'filter_report'))
    catalog = FeatureCatalog.load(_output(config, 'catalog'))
    label_map = handler.read_labels(_output(config, 'labels'))

    counts = pd.Series([label for label in label_map.values() if label]).value_counts().sort_index()
    lines = ['Phenotyping summary', '===================', '']
    lines.append("Series per class: " + ', '.join(f"{name} {count}" for name, count in counts.items()))
    lines.append(f"Computed {filter_report['n_features']} features, filtered down to "
                 f"{filter_report['n_kept']} well-behaved features")
    lines.append('')

    q_level = ranking['q_level']
    n_significant = ranking['n_significant']
    if n_significant == 0:
        lines.append(f"No features significant at q < {q_level:g}")
    else:
        lines.append(f"{n_significant} features individually informative of the class label "
                     f"(q < {q_level:g}, FDR-corrected, permutation test with {ranking['n_perm']} shuffles)")

    lines.append('')
    lines.append('Top features:')
    for position, rank in enumerate(ranking['features'][:10], start=1):
        lines.append(f"{position:>3}. {rank['feature_id']:<40} accuracy {rank['statistic']:.3f}  "
                     f"q = {rank['q_value']:.4g}  {catalog[rank['feature_id']].description}")

    classification_path = _output(config, 'classification')
    lines.append('')
    if os.path.exists(classification_path):
        classification = handler.read_json(classification_path)
        accuracies = classification['fold_balanced_accuracies']
        lines.append(f"{len(accuracies)}-fold cross-validated balanced accuracy: "
                     f"{100 * classification['mean_balanced_accuracy']:.1f}% "
                     f"(chance level: {100 * classification['chance_level']:.1f}%)")
        lines.append("Per-fold: " + ', '.join(f"{100 * a:.1f}%" for a in accuracies))
    else:
        lines.append('Classification results not available')

    pairwise_path = _output(config, 'pairwise_ranking')
    if config.pairwise and os.path.exists(pairwise_path):
        lines.append('')
        lines.append('Pairwise comparisons:')
        for result in handler.read_json(pairwise_path)['pairs']:
            first, second = result['pair']
            best = result['features'][0]['feature_id'] if result['features'] else '-'
            lines.append(f"  {first} vs {second}: {result['n_significant']} significant, best {best}")

    text = '\n'.join(lines) + '\n'
    handler.write_text(_output(config, 'report'), text)
    return text
