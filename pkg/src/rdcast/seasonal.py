"""Seasonal structure: trend/seasonal/remainder splitting and CP factors.

The splitter is the classic inner-loop seasonal-trend decomposition with
two simplifications pinned for determinism: the seasonal smoother is the
periodic variant (per-cycle averaging, centered to zero cycle mean) and
the trend smoother is a degree-1 local regression whose window is the
smallest odd integer >= 1.5 * period.

The seasonal part of a window is modeled as a rank-d_s CP factorization
with one time profile, one keyword weight row and one location weight row
per component; reconstruction is the sum of their outer products.  Time
profiles are unconstrained during fitting; only the periodic extension
used for forecasting assumes the last full cycle repeats.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, RankTooLargeError, WindowTooShortError
from .tensor import unfold

_LOESS_CACHE = {}


@dataclass
class StlResult:
    trend: np.ndarray
    seasonal: np.ndarray
    residual: np.ndarray


@dataclass
class SeasonalParams:
    """CP factors of the seasonal part, all stored components-first.

    time_profiles : (d_s, L) one profile per component.
    key_weights   : (d_s, k); loc_weights : (d_s, l).
    period        : cycle length used for extension beyond the window.
    """

    time_profiles: np.ndarray
    key_weights: np.ndarray
    loc_weights: np.ndarray
    period: int

    def __post_init__(self):
        self.time_profiles = np.asarray(self.time_profiles, dtype=float)
        self.key_weights = np.asarray(self.key_weights, dtype=float)
        self.loc_weights = np.asarray(self.loc_weights, dtype=float)
        self.period = int(self.period)

    @classmethod
    def empty(cls, n_key, n_loc, length, period):
        """Rank-0 parameters: reconstruction is identically zero."""
        return cls(np.zeros((0, length)), np.zeros((0, n_key)), np.zeros((0, n_loc)), period)

    @property
    def n_components(self):
        return self.time_profiles.shape[0]

    @property
    def length(self):
        return self.time_profiles.shape[1]

    def validate(self):
        r = self.time_profiles.shape[0]
        if self.key_weights.shape[0] != r or self.loc_weights.shape[0] != r:
            raise DimensionMismatchError("seasonal factors disagree on the component count")
        if self.period < 1:
            raise DimensionMismatchError(f"period must be positive, got {self.period}")
        return self

    def copy(self):
        return SeasonalParams(self.time_profiles.copy(), self.key_weights.copy(),
                              self.loc_weights.copy(), self.period)


def trend_window(period):
    """Smallest odd integer >= 1.5 * period."""
    n = int(np.ceil(1.5 * period))
    return n if n % 2 == 1 else n + 1


def loess_matrix(length, window):
    """Smoother matrix of a degree-1 local regression on the integer grid.

    Row i holds the weights that produce the smoothed value at position i
    from the whole series; tricube weighting over the ``window`` nearest
    positions.  The map is linear and reproduces affine series exactly.
    """
    window = min(window, length)
    if window % 2 == 0:
        window -= 1
    window = max(window, 1)
    key = (length, window)
    cached = _LOESS_CACHE.get(key)
    if cached is not None:
        return cached

    smoother = np.zeros((length, length))
    half = window // 2
    for i in range(length):
        lo = max(0, min(i - half, length - window))
        idx = np.arange(lo, lo + window)
        dist = np.abs(idx - i).astype(float)
        dmax = dist.max()
        if dmax == 0:
            weights = np.ones(1)
        else:
            weights = (1.0 - (dist / dmax) ** 3) ** 3
            weights = np.clip(weights, 0.0, None)
        dx = idx - float(i)
        sw = weights.sum()
        sx = (weights * dx).sum()
        sxx = (weights * dx * dx).sum()
        denom = sw * sxx - sx * sx
        if abs(denom) < 1e-12 * max(sw * sw, 1.0):
            coeffs = weights / sw
        else:
            coeffs = weights * (sxx - sx * dx) / denom
        smoother[i, idx] = coeffs
    _LOESS_CACHE[key] = smoother
    return smoother


def _split_columns(series, period, n_inner=2):
    """Split (L, F) columns into trend/seasonal/remainder, shared x-grid."""
    length = series.shape[0]
    phases = np.arange(length) % period
    counts = np.bincount(phases, minlength=period).astype(float)[:, None]
    smoother = loess_matrix(length, trend_window(period))

    trend = np.zeros_like(series)
    seasonal = np.zeros_like(series)
    for _ in range(n_inner):
        detrended = series - trend
        phase_sum = np.zeros((period, series.shape[1]))
        np.add.at(phase_sum, phases, detrended)
        phase_mean = phase_sum / counts
        phase_mean -= phase_mean.mean(axis=0, keepdims=True)
        seasonal = phase_mean[phases]
        trend = smoother @ (series - seasonal)
    return trend, seasonal, series - trend - seasonal


def stl_decompose(series, period):
    """Trend/seasonal/remainder split of one series; parts sum exactly.

    The series must cover at least two full cycles.
    """
    y = np.asarray(series, dtype=float)
    if y.ndim != 1:
        raise DimensionMismatchError(f"expected a 1-D series, got shape {y.shape}")
    period = int(period)
    if period < 2:
        raise ValueError(f"period must be at least 2, got {period}")
    if y.shape[0] < 2 * period:
        raise WindowTooShortError(
            f"series of length {y.shape[0]} is shorter than two cycles of period {period}; "
            f"use a window of at least {2 * period} samples"
        )
    trend, seasonal, residual = _split_columns(y[:, None], period)
    return StlResult(trend[:, 0], seasonal[:, 0], residual[:, 0])


def stl_split(window, period):
    """Per-fiber split of a (L, k, l) window; returns three tensors."""
    x = np.asarray(window, dtype=float)
    if x.ndim != 3:
        raise DimensionMismatchError(f"expected a 3-way window, got shape {x.shape}")
    period = int(period)
    if period < 2:
        raise ValueError(f"period must be at least 2, got {period}")
    length = x.shape[0]
    if length < 2 * period:
        raise WindowTooShortError(
            f"window of length {length} is shorter than two cycles of period {period}; "
            f"use a window of at least {2 * period} samples"
        )
    cols = x.reshape(length, -1)
    trend, seasonal, residual = _split_columns(cols, period)
    return (trend.reshape(x.shape), seasonal.reshape(x.shape), residual.reshape(x.shape))


def reconstruct_seasonal(params, time_profiles=None):
    """Expand CP factors to a dense tensor; zero tensor for rank 0."""
    profiles = params.time_profiles if time_profiles is None else time_profiles
    length = profiles.shape[1]
    if params.n_components == 0:
        return np.zeros((length, params.key_weights.shape[1], params.loc_weights.shape[1]))
    return np.einsum("rt,ru,rv->tuv", profiles, params.key_weights, params.loc_weights)


_MODE_FACTORS = {
    "time": ("key_weights", "loc_weights"),
    "key": ("time_profiles", "loc_weights"),
    "loc": ("time_profiles", "key_weights"),
}


def _khatri_rao_rows(a, b):
    # columns ordered with the first argument slowest, matching unfold
    r = a.shape[0]
    return np.einsum("ri,rj->ijr", a, b).reshape(-1, r)


def update_seasonal_factor(target, params, mode):
    """Exact least-squares refresh of one CP factor, the others held fixed.

    Solves unfold(target, mode) ~ factor.T @ khatri_rao(others).T via the
    Gram-Hadamard normal equations; a singular system falls back to the
    pseudoinverse.  Returns new parameters with just that factor replaced.
    """
    if mode not in _MODE_FACTORS:
        raise DimensionMismatchError(f"unknown seasonal mode {mode!r}")
    if params.n_components == 0:
        return params.copy()
    first, second = (getattr(params, name) for name in _MODE_FACTORS[mode])
    kr = _khatri_rao_rows(first, second)
    gram = (first @ first.T) * (second @ second.T)
    unf = unfold(target, mode)
    solution = unf @ kr @ np.linalg.pinv(gram)
    out = params.copy()
    setattr(out, {"time": "time_profiles", "key": "key_weights", "loc": "loc_weights"}[mode],
            solution.T)
    return out


def cp_als(tensor, rank, n_sweeps=50, period=1, seed=0, tol=1e-6):
    """Fit a rank-``rank`` CP model by alternating least squares.

    Factors are seeded from a deterministic generator; sweeps stop early
    once the relative fit change drops below ``tol``.
    """
    x = np.asarray(tensor, dtype=float)
    if x.ndim != 3:
        raise DimensionMismatchError(f"expected a 3-way tensor, got shape {x.shape}")
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}; use SeasonalParams.empty for rank 0")
    if rank > min(x.shape):
        raise RankTooLargeError(
            f"CP rank {rank} exceeds the smallest tensor dimension {min(x.shape)}; reduce the rank"
        )
    rng = np.random.default_rng(seed)
    length, n_key, n_loc = x.shape
    params = SeasonalParams(
        rng.standard_normal((rank, length)),
        rng.standard_normal((rank, n_key)),
        rng.standard_normal((rank, n_loc)),
        period,
    )
    norm = np.linalg.norm(x)
    prev = np.inf
    for _ in range(n_sweeps):
        for mode in ("time", "key", "loc"):
            params = update_seasonal_factor(x, params, mode)
        err = np.linalg.norm(x - reconstruct_seasonal(params))
        if prev - err <= tol * max(norm, 1e-12):
            break
        prev = err
    return params


def profile_columns_at(params, offsets):
    """Time-profile columns at window offsets, periodic past the window.

    Offsets inside [0, L) read the stored profiles; later offsets repeat
    the last full observed cycle.
    """
    offsets = np.asarray(offsets, dtype=int)
    length = params.length
    if params.n_components == 0:
        return np.zeros((0, offsets.size))
    if (offsets < 0).any():
        raise DimensionMismatchError("seasonal profiles are undefined before the fit window")
    period = params.period
    if period > length:
        raise DimensionMismatchError(
            f"period {period} exceeds the fitted window length {length}"
        )
    mapped = np.where(
        offsets < length,
        np.minimum(offsets, length - 1),
        length - period + (offsets - length) % period,
    )
    return params.time_profiles[:, mapped]


def extend_seasonal(params, horizon):
    """Seasonal forecast: repeat the last observed cycle for ``horizon`` steps."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if params.n_components == 0:
        return np.zeros((horizon, params.key_weights.shape[1], params.loc_weights.shape[1]))
    offsets = params.length + np.arange(horizon)
    return reconstruct_seasonal(params, profile_columns_at(params, offsets))
