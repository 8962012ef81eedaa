"""
File Handler Utility
Handles dataset files and result files for the phenotyping pipeline
"""

import os
import json
import hashlib
import logging
import tempfile

import numpy as np
import pandas as pd

from phenotyper.core import ConfigError, QualityCode, SeriesRejected, combine_labels
from phenotyper.feature_catalog import FeatureMatrix


LABELS_FILE = 'labels.csv'
MISSING_TOKENS = ('', 'NaN', 'nan')


def _parse_token(token):
    """Float value of a CSV field, None for a missing marker"""
    if token is None or (isinstance(token, float) and np.isnan(token)):
        return None
    token = str(token).strip()
    if token in MISSING_TOKENS:
        return None
    return float(token)


class FileHandler:
    """Utility class for reading inputs and writing results"""

    def __init__(self):
        """Initialize the file handler"""
        self.logger = logging.getLogger('FileHandler')

    def get_series_files(self, directory):
        """
        Get all one-column series files from a directory

        Args:
            directory (str): Directory path to scan (not recursive)

        Returns:
            list: Sorted CSV paths, the labels file excluded
        """
        try:
            names = sorted(os.listdir(directory))
        except OSError as e:
            raise ConfigError('IO', f"Cannot list input directory {directory}: {e}")

        return [
            os.path.join(directory, name) for name in names
            if name.lower().endswith('.csv') and name != LABELS_FILE
        ]

    def read_series_file(self, path):
        """
        Read a one-column CSV series, with an optional header line

        Args:
            path (str): Path to the series file

        Returns:
            list: Values with None marking missing points

        Raises:
            SeriesRejected: reason 'malformed' for unparseable content
            ConfigError: code IO when the file cannot be read at all
        """
        try:
            frame = pd.read_csv(path, header=None, dtype=str, keep_default_na=False,
                                skip_blank_lines=False)
        except pd.errors.EmptyDataError:
            raise SeriesRejected('malformed', f"{path} is empty")
        except OSError as e:
            raise ConfigError('IO', f"Cannot read series file {path}: {e}")
        except pd.errors.ParserError as e:
            raise SeriesRejected('malformed', f"cannot parse {path}: {e}")

        if frame.shape[1] != 1:
            raise SeriesRejected('malformed', f"{path} has {frame.shape[1]} columns")

        tokens = list(frame.iloc[:, 0])
        try:
            _parse_token(tokens[0])
        except ValueError:
            tokens = tokens[1:]  # header line

        try:
            values = [_parse_token(token) for token in tokens]
        except ValueError as e:
            raise SeriesRejected('malformed', f"{path}: {e}")

        if not values:
            raise SeriesRejected('malformed', f"{path} holds no values")
        return values

    def read_long_format(self, path):
        """
        Read a long-format CSV with columns series_id, t_index, value

        Returns:
            tuple: (dict series_id -> values, dict series_id -> rejection reason)
        """
        try:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise ConfigError('IO', f"Cannot read long-format file {path}: {e}")

        missing_columns = {'series_id', 't_index', 'value'} - set(frame.columns)
        if missing_columns:
            raise ConfigError('IO', f"{path} lacks columns {sorted(missing_columns)}")

        series = {}
        rejected = {}
        for series_id, group in frame.groupby('series_id', sort=True):
            try:
                index = group['t_index'].astype(int).to_numpy()
                order = np.argsort(index, kind='stable')
                if not np.array_equal(index[order], np.arange(len(index))):
                    raise SeriesRejected('bad_index', 't_index is not 0..n-1')
                series[series_id] = [_parse_token(token) for token in group['value'].to_numpy()[order]]
            except SeriesRejected as e:
                rejected[series_id] = e.reason
            except ValueError:
                rejected[series_id] = 'malformed'
        return series, rejected

    def read_labels(self, path):
        """
        Read a labels file: `series_id` followed by one or more factor columns

        A single factor (usually `label`) is used as is. Several factors, such as
        `genotype,sex`, are joined into combination classes like `wt_female`.

        Args:
            path (str): Path to the labels file

        Returns:
            dict: series_id -> label, in file order
        """
        try:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise ConfigError('IO', f"Cannot read labels file {path}: {e}")

        if len(frame.columns) < 2 or frame.columns[0] != 'series_id':
            raise ConfigError('IO', f"{path} must have the header 'series_id,label' "
                                    f"or 'series_id' followed by factor columns")

        duplicated = frame['series_id'][frame['series_id'].duplicated()].tolist()
        if duplicated:
            raise ConfigError('IO', f"{path} lists series more than once: {duplicated}")

        series_ids = frame['series_id'].str.strip().tolist()
        factors = [frame[column].str.strip().tolist() for column in frame.columns[1:]]
        if len(factors) == 1:
            return dict(zip(series_ids, factors[0]))

        incomplete = [sid for sid, parts in zip(series_ids, zip(*factors)) if '' in parts]
        if incomplete:
            raise ConfigError('IO', f"{path} has empty factor values for {incomplete}")

        self.logger.info(f"Combining label factors {list(frame.columns[1:])} from {path}")
        return dict(zip(series_ids, combine_labels(*factors)))

    def file_digest(self, path):
        """SHA-256 of a file's bytes"""
        digest = hashlib.sha256()
        try:
            with open(path, 'rb') as f:
                for chunk in iter(lambda: f.read(1 << 16), b''):
                    digest.update(chunk)
        except OSError as e:
            raise ConfigError('IO', f"Cannot read {path}: {e}")
        return digest.hexdigest()

    def _atomic_write(self, path, write):
        """Run write(file_object) on a temporary file, then rename it over `path`"""
        directory = os.path.dirname(os.path.abspath(path))
        try:
            os.makedirs(directory, exist_ok=True)
            fd, temp_path = tempfile.mkstemp(dir=directory, prefix='.tmp_', suffix=os.path.basename(path))
            try:
                with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
                    write(f)
                os.replace(temp_path, path)
            except BaseException:
                if os.path.exists(temp_path):
                    os.remove(temp_path)
                raise
        except OSError as e:
            raise ConfigError('IO', f"Error writing {path}: {str(e)}")
        return path

    def write_text(self, path, text):
        return self._atomic_write(path, lambda f: f.write(text))

    def write_json(self, path, payload):
        """Write JSON with a trailing newline; floats keep their shortest exact repr"""
        text = json.dumps(payload, indent=2, allow_nan=False) + '\n'
        return self.write_text(path, text)

    def read_json(self, path):
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError('IO', f"Cannot read {path}: {e}")

    def write_frame(self, path, frame):
        """Write a DataFrame as CSV with 17 significant digits and NaN for special values"""
        return self._atomic_write(
            path,
            lambda f: frame.to_csv(f, index=False, float_format='%.17g', na_rep='NaN', lineterminator='\n')
        )

    def write_feature_matrix(self, matrix, features_path, quality_path):
        """Write values and quality codes as two CSV files of identical shape"""
        values = pd.DataFrame(matrix.values, columns=matrix.feature_ids)
        values.insert(0, 'series_id', matrix.series_ids)

        codes = pd.DataFrame(
            [[code.value for code in row] for row in matrix.quality],
            columns=matrix.feature_ids
        )
        codes.insert(0, 'series_id', matrix.series_ids)

        self.write_frame(features_path, values)
        self.write_frame(quality_path, codes)

    def read_feature_matrix(self, features_path, quality_path):
        """
        Rebuild a FeatureMatrix from features.csv and quality.csv

        Returns:
            FeatureMatrix: Exactly the matrix that was written
        """
        try:
            values = pd.read_csv(features_path, dtype={'series_id': str}, float_precision='round_trip')
            codes = pd.read_csv(quality_path, dtype=str, keep_default_na=False)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise ConfigError('IO', f"Cannot read feature matrix: {e}")

        if list(values.columns) != list(codes.columns) or len(values) != len(codes):
            raise ConfigError('IO', 'features.csv and quality.csv do not have the same shape')

        feature_ids = list(values.columns[1:])
        try:
            quality = np.array(
                [[QualityCode(code) for code in row] for row in codes[feature_ids].to_numpy()],
                dtype=object
            ).reshape(len(codes), len(feature_ids))
        except ValueError as e:
            raise ConfigError('IO', f"Unknown quality code in {quality_path}: {e}")

        return FeatureMatrix(
            series_ids=values['series_id'].tolist(),
            feature_ids=feature_ids,
            values=values[feature_ids].to_numpy(dtype=float),
            quality=quality,
        )
