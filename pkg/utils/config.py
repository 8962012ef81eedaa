"""
Configuration Module
Handles project settings for a phenotyping run
"""

import os
import logging

from phenotyper.core import ConfigError


class ProjectConfig:
    """Configuration manager for a phenotyping project"""

    DEFAULT_CONFIG = {
        "input_paths": [],
        "labels_path": "",
        "catalog_path": "",
        "output_dir": "results",
        "n_perm": 1000,
        "k_folds": 10,
        "seed": 42,
        "regularization": 0.01,
        "top_k": 40,
        "q_level": 0.05,
        "max_missing_fraction": 0.15,
        "n_jobs": 4,
        "n_components": 2,
        "max_iter": 5000,
        "normalization": "scaled_robust_sigmoid",
        "normalize_within_folds": False,
        "sampling_rate_hz": 0.0,
        "downsample_window": 1,
        "pairwise": False,
    }

    POSITIVE_KEYS = ("n_perm", "k_folds", "regularization", "top_k", "n_jobs", "n_components", "max_iter",
                     "downsample_window")
    UNIT_INTERVAL_KEYS = ("q_level", "max_missing_fraction")

    def __init__(self, config_path=None, overrides=None):
        """
        Initialize the configuration manager

        Args:
            config_path (str, optional): Path to a `key = value` configuration file
            overrides (dict, optional): Values taking precedence over the file
        """
        self.logger = logging.getLogger('ProjectConfig')
        self.config_path = config_path
        self.config = self.load()
        if overrides:
            self.update(overrides)
        self.validate()

    def load(self):
        """
        Load configuration from file, falling back to the defaults

        Returns:
            dict: Configuration dictionary
        """
        config = {key: (list(value) if isinstance(value, list) else value)
                  for key, value in self.DEFAULT_CONFIG.items()}

        if self.config_path is None:
            return config

        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                lines = f.readlines()
        except OSError as e:
            raise ConfigError('IO', f"Cannot read config file {self.config_path}: {e}")

        for number, line in enumerate(lines, start=1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigError('CONFIG', f"{self.config_path}:{number}: expected 'key = value'")

            key, value = (part.strip() for part in line.split('=', 1))
            config[key] = self._coerce(key, value)

        self.logger.debug(f"Loaded configuration from {self.config_path}")
        return config

    def save(self, path=None):
        """
        Write the configuration as `key = value` lines

        Args:
            path (str, optional): Destination, the loaded file by default
        """
        path = path or self.config_path
        if path is None:
            raise ConfigError('CONFIG', 'No path to save the configuration to')

        try:
            with open(path, 'w', encoding='utf-8') as f:
                for key, value in self.config.items():
                    if isinstance(value, list):
                        value = ', '.join(value)
                    elif isinstance(value, bool):
                        value = 'true' if value else 'false'
                    f.write(f"{key} = {value}\n")
        except OSError as e:
            raise ConfigError('IO', f"Cannot write config file {path}: {e}")

    def set(self, key, value):
        """Set one value, coercing strings to the type of the default"""
        self.config[key] = self._coerce(key, value) if isinstance(value, str) else value

    def update(self, overrides):
        """Apply overrides, skipping entries whose value is None"""
        for key, value in overrides.items():
            if value is not None:
                self.set(key, value)

    def as_dict(self):
        return dict(self.config)

    def __getattr__(self, key):
        config = self.__dict__.get('config')
        if config is not None and key in config:
            return config[key]
        raise AttributeError(key)

    def validate(self):
        """Check that every key is known and every numeric value is in range"""
        unknown = sorted(set(self.config) - set(self.DEFAULT_CONFIG))
        if unknown:
            raise ConfigError('CONFIG', f"Unknown configuration keys: {unknown}")

        for key in self.POSITIVE_KEYS:
            if not self.config[key] > 0:
                raise ConfigError('CONFIG', f"{key} must be positive, got {self.config[key]}")
        if self.config['seed'] < 0:
            raise ConfigError('CONFIG', f"seed must be non-negative, got {self.config['seed']}")
        if self.config['sampling_rate_hz'] < 0:
            raise ConfigError('CONFIG', f"sampling_rate_hz must be non-negative (0 = unknown), "
                                        f"got {self.config['sampling_rate_hz']}")
        for key in self.UNIT_INTERVAL_KEYS:
            if not 0 < self.config[key] < 1:
                raise ConfigError('CONFIG', f"{key} must lie in (0, 1), got {self.config[key]}")
        if self.config['normalization'] not in ('scaled_robust_sigmoid', 'sigmoid'):
            raise ConfigError('CONFIG', f"Unknown normalization {self.config['normalization']!r}")

    def _coerce(self, key, value):
        """Convert a text value to the type of the key's default"""
        if key not in self.DEFAULT_CONFIG:
            raise ConfigError('CONFIG', f"Unknown configuration key {key!r}")

        default = self.DEFAULT_CONFIG[key]
        try:
            if isinstance(default, bool):
                lowered = value.lower()
                if lowered not in ('true', 'false', 'yes', 'no', '1', '0'):
                    raise ValueError(value)
                return lowered in ('true', 'yes', '1')
            if isinstance(default, int):
                return int(value)
            if isinstance(default, float):
                return float(value)
            if isinstance(default, list):
                return [os.path.expanduser(part.strip()) for part in value.split(',') if part.strip()]
            return os.path.expanduser(value) if key.endswith(('_path', '_dir')) else value
        except ValueError:
            raise ConfigError('CONFIG', f"Invalid value for {key}: {value!r}")
