import os
import sys

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))


def ar1_series(coefficient, length, rng, burn_in=200):
    """AR(1) process with unit-variance Gaussian innovations"""
    noise = rng.standard_normal(length + burn_in)
    x = np.empty_like(noise)
    x[0] = noise[0]
    for t in range(1, len(noise)):
        x[t] = coefficient * x[t - 1] + noise[t]
    return x[burn_in:]


def write_series_dir(directory, series, labels=None):
    """Write one-column CSV files (with a header) and an optional labels.csv"""
    os.makedirs(directory, exist_ok=True)
    for series_id, values in series.items():
        pd.DataFrame({'value': values}).to_csv(os.path.join(directory, f"{series_id}.csv"), index=False)
    if labels is not None:
        pd.DataFrame({'series_id': list(labels), 'label': list(labels.values())}).to_csv(
            os.path.join(directory, 'labels.csv'), index=False)
    return directory


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_class_dir(tmp_path):
    """Twelve AR(1) series of length 300: coefficient 0.1 for class 'low', 0.9 for 'high'"""
    generator = np.random.default_rng(7)
    series = {}
    labels = {}
    for i in range(12):
        name = 'low' if i % 2 == 0 else 'high'
        coefficient = 0.1 if name == 'low' else 0.9
        series_id = f"s{i:02d}"
        series[series_id] = ar1_series(coefficient, 300, generator)
        labels[f"{series_id}.csv"] = name
    return write_series_dir(str(tmp_path / 'data'), series, labels)
