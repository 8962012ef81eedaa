"""
Feature Extractors Module
Deterministic time-series feature extractors, one function per method family.

Each extractor takes a 1-D sequence and returns a dict of named values. A whole
extractor failure raises FeatureError; a failure confined to some outputs is
reported by putting a QualityCode in place of the value.
"""

import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats

from .core import FeatureError, QualityCode, zscore


logger = logging.getLogger('FeatureLib')


def _as_series(x, min_length):
    """Convert to a float array and enforce the minimum length"""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError('Extractors take one-dimensional input')
    if len(x) < min_length:
        raise FeatureError(QualityCode.TOO_SHORT, f"need at least {min_length} points, got {len(x)}")
    return x


def _require_variation(x):
    if np.ptp(x) == 0:
        raise FeatureError(QualityCode.DEGENERATE_INPUT, 'constant series')


def autocorrelation(x, max_lag=None):
    """
    Biased sample autocorrelation function

    Args:
        x (np.ndarray): Input series (non-constant)
        max_lag (int, optional): Highest lag returned; all lags up to N-1 by default

    Returns:
        np.ndarray: acf[0..max_lag], acf[0] == 1
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    centred = x - np.mean(x)

    # Zero-padded FFT gives the linear (not circular) correlation
    n_fft = 1 << (2 * n - 1).bit_length()
    spectrum = np.fft.rfft(centred, n_fft)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), n_fft)[:n]
    acf = acov / acov[0]

    if max_lag is None:
        return acf
    if max_lag >= n:
        acf = np.concatenate((acf, np.zeros(max_lag - n + 1)))
    return acf[:max_lag + 1]


def feat_distribution(x):
    """Moments, quantile spread and outlier share of the value distribution"""
    x = _as_series(x, 4)

    values = {
        'mean': float(np.mean(x)),
        'std': float(np.std(x, ddof=1)),
        'median': float(np.median(x)),
    }

    spread_names = ['skewness', 'excess_kurtosis', 'iqr', 'outlier_range_ratio', 'frac_abs_z_gt2']
    if np.ptp(x) == 0:
        values.update({name: QualityCode.DEGENERATE_INPUT for name in spread_names})
        return values

    p1, p25, p75, p99 = np.quantile(x, [0.01, 0.25, 0.75, 0.99])
    iqr = p75 - p25

    values['skewness'] = float(stats.skew(x, bias=True))
    values['excess_kurtosis'] = float(stats.kurtosis(x, fisher=True, bias=True))
    values['iqr'] = float(iqr)
    values['outlier_range_ratio'] = float((p99 - p1) / iqr) if iqr > 0 else QualityCode.NOT_FINITE
    values['frac_abs_z_gt2'] = float(np.mean(np.abs(zscore(x)) > 2))
    return values


def feat_autocorr(x, max_lag=10):
    """
    Autocorrelation at the first lags plus decorrelation times

    Args:
        x (sequence): Input series
        max_lag (int): Number of individual lags reported

    Returns:
        dict: acf_1..acf_<max_lag>, first_zero_lag, first_1e_lag, sum_sq_acf10
    """
    x = _as_series(x, max_lag + 2)
    _require_variation(x)

    n = len(x)
    acf = autocorrelation(x)

    values = {f"acf_{k}": float(acf[k]) for k in range(1, max_lag + 1)}

    below_zero = np.flatnonzero(acf[1:] < 0)
    below_1e = np.flatnonzero(acf[1:] < 1 / np.e)
    values['first_zero_lag'] = float(below_zero[0] + 1) if len(below_zero) else float(n)
    values['first_1e_lag'] = float(below_1e[0] + 1) if len(below_1e) else float(n)

    first_ten = autocorrelation(x, 10)[1:]
    values['sum_sq_acf10'] = float(np.sum(first_ten ** 2))
    return values


def periodogram(x):
    """
    One-sided periodogram of the z-scored series, rectangular window, DC bin dropped

    Returns:
        tuple: (bin indices 1..N//2, power per bin)
    """
    z = zscore(x)
    n = len(z)
    power = np.abs(np.fft.rfft(z)) ** 2 / n
    bins = np.arange(len(power))
    return bins[1:], power[1:]


def feat_spectral(x):
    """Spectral flatness, centroid, band powers and peak location"""
    x = _as_series(x, 16)
    _require_variation(x)

    n = len(x)
    bins, power = periodogram(x)
    total = np.sum(power)

    # Floor exact zeros so the geometric mean stays defined
    floored = np.where(power > 0, power, np.finfo(float).tiny)
    flatness = np.exp(np.mean(np.log(floored))) / np.mean(power)

    frequency = bins / n
    bands = np.array_split(power, 3)

    return {
        'spectral_flatness': float(flatness),
        'spectral_centroid': float(np.sum(frequency * power) / total),
        'power_low_third': float(np.sum(bands[0]) / total),
        'power_mid_third': float(np.sum(bands[1]) / total),
        'power_high_third': float(np.sum(bands[2]) / total),
        'peak_freq_index_fraction': float(bins[np.argmax(power)] / len(power)),
    }


def coarse_grain(x, scale):
    """
    Replace non-overlapping blocks of `scale` points by their means

    Args:
        x (sequence): Input series
        scale (int): Block length, scale 1 returns the input

    Returns:
        np.ndarray: Series of length floor(N / scale)
    """
    if scale < 1:
        raise ValueError(f"scale must be at least 1, got {scale}")

    x = _as_series(x, scale)
    if scale == 1:
        return x.copy()

    n_blocks = len(x) // scale
    return x[:n_blocks * scale].reshape(n_blocks, scale).mean(axis=1)


def _count_template_matches(x, m, r):
    """
    Count template pairs i < j within Chebyshev distance r

    Both lengths use the first N - m templates, so every m-match can be
    tested for extension to m + 1 points.

    Returns:
        tuple: (A, B) = (matches of length m + 1, matches of length m)
    """
    n_templates = len(x) - m
    templates = sliding_window_view(x, m)[:n_templates]
    extension = x[m:]

    matches_m = 0
    matches_m1 = 0
    for i in range(n_templates - 1):
        distance = np.max(np.abs(templates[i + 1:] - templates[i]), axis=1)
        close = distance <= r
        matches_m += int(np.count_nonzero(close))
        extends = np.abs(extension[i + 1:] - extension[i]) <= r
        matches_m1 += int(np.count_nonzero(close & extends))

    return matches_m1, matches_m


def sample_entropy(x, m=2, r_frac=0.15, r=None):
    """
    Sample Entropy SampEn(m, r) by pair counting

    Args:
        x (sequence): Input series
        m (int): Template length
        r_frac (float): Tolerance as a fraction of the sample standard deviation
        r (float, optional): Absolute tolerance; overrides r_frac when given

    Returns:
        float: -ln(A / B)
    """
    x = _as_series(x, m + 2)

    if r is None:
        std = np.std(x, ddof=1)
        if std == 0:
            raise FeatureError(QualityCode.DEGENERATE_INPUT, 'zero standard deviation')
        r = r_frac * std

    matches_m1, matches_m = _count_template_matches(x, m, r)
    if matches_m1 == 0 or matches_m == 0:
        raise FeatureError(QualityCode.NO_CONVERGENCE, 'no template matches')

    return float(-np.log(matches_m1 / matches_m))


def feat_multiscale_entropy(x, scales=(1, 2, 3, 4, 5), m=2, r_frac=0.15):
    """
    Sample Entropy of coarse-grained copies of the series

    The tolerance is fixed once from the original series, so coarser
    scales are compared against the same absolute r.
    """
    x = _as_series(x, m + 2)

    std = np.std(x, ddof=1)
    if std == 0:
        raise FeatureError(QualityCode.DEGENERATE_INPUT, 'zero standard deviation')
    r = r_frac * std

    values = {}
    for scale in scales:
        name = f"sampen_scale{scale}"
        try:
            values[name] = sample_entropy(coarse_grain(x, scale), m=m, r=r)
        except FeatureError as e:
            values[name] = e.quality
    return values


def dfa_window_sizes(n, n_sizes=10, min_size=4):
    """Geometric grid of integer window sizes from min_size to n // 4, duplicates removed"""
    sizes = np.geomspace(min_size, n // 4, n_sizes)
    return np.unique(np.floor(sizes).astype(int))


def dfa_fluctuations(x):
    """
    Detrended RMS fluctuation of the integrated series per window size

    Returns:
        tuple: (window sizes, F(s))
    """
    x = np.asarray(x, dtype=float)
    profile = np.cumsum(x - np.mean(x))
    sizes = dfa_window_sizes(len(x))

    fluctuations = np.empty(len(sizes))
    for idx, size in enumerate(sizes):
        n_windows = len(profile) // size
        windows = profile[:n_windows * size].reshape(n_windows, size)

        # First order polynomial fitted to every window at once
        t = np.arange(size, dtype=float)
        design = np.column_stack((t, np.ones(size)))
        coefs, _, _, _ = np.linalg.lstsq(design, windows.T, rcond=None)
        residuals = windows.T - design @ coefs
        fluctuations[idx] = np.sqrt(np.mean(residuals ** 2))

    return sizes, fluctuations


def feat_dfa(x):
    """Detrended fluctuation analysis scaling exponent and log-log fit quality"""
    x = _as_series(x, 64)
    _require_variation(x)

    sizes, fluctuations = dfa_fluctuations(x)
    if np.any(fluctuations <= 0):
        raise FeatureError(QualityCode.NOT_FINITE, 'zero fluctuation at some window size')

    log_sizes = np.log(sizes)
    log_fluct = np.log(fluctuations)
    slope, intercept = np.polyfit(log_sizes, log_fluct, 1)
    residual = log_fluct - (slope * log_sizes + intercept)

    return {
        'dfa_alpha': float(slope),
        'dfa_fit_residual': float(np.sqrt(np.mean(residual ** 2))),
    }


def levinson_durbin(acov, order):
    """
    Solve the Yule-Walker equations by Levinson-Durbin recursion

    Args:
        acov (np.ndarray): Autocovariances r[0..order]
        order (int): Highest model order

    Returns:
        tuple: (coefficients per order 1..order as a list of arrays,
                innovation variances E[0..order], reflection coefficients)
    """
    acov = np.asarray(acov, dtype=float)
    if len(acov) < order + 1:
        raise ValueError('Need autocovariances up to the model order')

    errors = np.zeros(order + 1)
    reflection = np.zeros(order)
    coefficients = []

    errors[0] = acov[0]
    phi = np.zeros(0)
    for p in range(1, order + 1):
        k = (acov[p] - np.dot(phi, acov[p - 1:0:-1])) / errors[p - 1]
        if not np.isfinite(k) or abs(k) >= 1 - 1e-12:
            raise FeatureError(QualityCode.NO_CONVERGENCE, f"reflection coefficient {k} at order {p}")

        phi = np.concatenate((phi - k * phi[::-1], [k]))
        reflection[p - 1] = k
        errors[p] = (1 - k * k) * errors[p - 1]
        coefficients.append(phi)

    return coefficients, errors, reflection


def feat_ar(x, max_order=8):
    """
    Autoregressive fits of the z-scored series

    Returns:
        dict: AR(2) coefficients, AR(2) residual variance ratio, AIC-best order
              and its residual variance ratio
    """
    x = _as_series(x, 20)
    _require_variation(x)

    n = len(x)
    acf = autocorrelation(zscore(x), max_order)
    coefficients, errors, _ = levinson_durbin(acf, max_order)

    orders = np.arange(1, max_order + 1)
    aic = n * np.log(errors[1:]) + 2 * orders
    best = int(np.argmin(aic))

    return {
        'ar2_coef1': float(coefficients[1][0]),
        'ar2_coef2': float(coefficients[1][1]),
        'ar2_resid_var_ratio': float(errors[2] / errors[0]),
        'ar_best_order_aic': float(orders[best]),
        'ar_best_resid_var_ratio': float(errors[best + 1] / errors[0]),
    }


def feat_local_forecast(x, windows=(1, 3, 5)):
    """Normalized error of predicting each point by the mean of the preceding window"""
    x = _as_series(x, 20)
    _require_variation(x)

    variance = np.var(x, ddof=1)
    values = {}
    for width in windows:
        forecast = sliding_window_view(x[:-1], width).mean(axis=1)
        errors = x[width:] - forecast
        values[f"localmean_nmse_l{width}"] = float(np.mean(errors ** 2) / variance)
    return values


def feat_stationarity(x, n_segments=5):
    """StatAv over fixed segments and spread of sliding-window means and stds"""
    x = _as_series(x, 25)
    _require_variation(x)

    n = len(x)
    global_std = np.std(x, ddof=1)

    seg_len = n // n_segments
    segment_means = x[:seg_len * n_segments].reshape(n_segments, seg_len).mean(axis=1)

    width = n // 10
    n_windows = n // width
    windows = x[:n_windows * width].reshape(n_windows, width)

    return {
        f"statav{n_segments}": float(np.std(segment_means, ddof=1) / global_std),
        'sliding_mean_std_ratio': float(np.std(windows.mean(axis=1), ddof=1) / global_std),
        'sliding_std_std_ratio': float(np.std(windows.std(axis=1, ddof=1), ddof=1) / global_std),
    }


def feat_increments(x):
    """Spread of successive differences of the z-scored series"""
    x = _as_series(x, 3)
    z = zscore(x)
    diffs = np.diff(z)

    return {
        'std_diff_z': float(np.std(diffs, ddof=1)),
        'mean_abs_diff_z': float(np.mean(np.abs(diffs))),
        'diff_var_ratio': float(np.var(diffs, ddof=1) / np.var(z, ddof=1)),
    }


def feat_outlier_timing(x, threshold_z=2.0):
    """
    Frequency of and spacing between points beyond a z-score threshold

    With fewer than two events both interval values are set to N.
    """
    x = _as_series(x, 10)
    z = zscore(x)
    n = len(z)

    events = np.flatnonzero(np.abs(z) > threshold_z)
    values = {'n_events_frac': len(events) / n}

    if len(events) < 2:
        values['mean_interevent'] = float(n)
        values['max_interevent'] = float(n)
    else:
        gaps = np.diff(events)
        values['mean_interevent'] = float(np.mean(gaps))
        values['max_interevent'] = float(np.max(gaps))
    return values


def haar_dwt(x, levels=None):
    """
    Orthonormal Haar discrete wavelet transform

    Args:
        x (np.ndarray): Signal whose length is a power of two
        levels (int, optional): Decomposition depth, full depth by default

    Returns:
        tuple: (approximation coefficients, [detail level 1 (finest), level 2, ...])
    """
    approximation = np.asarray(x, dtype=float)
    n = len(approximation)
    if n < 1 or n & (n - 1):
        raise ValueError('Haar transform needs a power-of-two length')

    max_levels = n.bit_length() - 1
    levels = max_levels if levels is None else min(levels, max_levels)

    details = []
    for _ in range(levels):
        even = approximation[0::2]
        odd = approximation[1::2]
        details.append((even - odd) / np.sqrt(2))
        approximation = (even + odd) / np.sqrt(2)
    return approximation, details


def feat_wavelet(x, n_levels=4):
    """Share of signal energy carried by each of the finest Haar detail levels"""
    x = _as_series(x, 32)
    _require_variation(x)

    length = 1 << (len(x).bit_length() - 1)
    signal = x[:length] - np.mean(x[:length])

    total = np.sum(signal ** 2)
    if total == 0:
        raise FeatureError(QualityCode.DEGENERATE_INPUT, 'truncated series is constant')

    _, details = haar_dwt(signal)
    return {
        f"haar_energy_frac_level{level}": float(np.sum(details[level - 1] ** 2) / total)
        for level in range(1, n_levels + 1)
    }
