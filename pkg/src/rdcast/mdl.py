"""Description-length accounting: parameter bits plus residual coding bits.

Costs are measured in bits.  Every stored array pays for its nonzero
entries only: each entry costs its index (log2 of every axis length) plus
a flat float budget, and the entry count itself is sent with a universal
integer code.  Residuals are coded under a quantized Gaussian fitted to
the scored window; per-element costs are clamped at zero so an absurdly
good fit cannot earn negative bits.
"""

import math
from dataclasses import dataclass

import numpy as np

FLOAT_BITS = 32.0
DEFAULT_QUANT = 1e-4
SIGMA_FLOOR = 1e-4
# Normalizer of the universal positive-integer code: sum over n of
# 2**-log_star(n) with this constant is ~1.
_LOG_STAR_CONST = 2.865064

_LOG2E = 1.0 / math.log(2.0)


def log_star(n):
    """Universal code length for a nonnegative integer count."""
    if n < 0:
        raise ValueError(f"count must be nonnegative, got {n}")
    if n == 0:
        return 1.0
    bits = math.log2(_LOG_STAR_CONST)
    term = math.log2(n)
    while term > 0:
        bits += term
        term = math.log2(term)
    return bits


def _structure_cost(count, index_bits):
    if count == 0:
        return log_star(0)
    return count * (index_bits + FLOAT_BITS) + log_star(count)


def model_cost_parts(model, stream_length):
    """Bits per stored structure, keyed by structure name.

    ``stream_length`` is the number of steps observed so far; outlier time
    indices are addressed over the whole stream, so their index cost grows
    as the stream does.
    """
    kf = model.trend.key_factor
    lf = model.trend.loc_factor
    rd = model.trend.rd
    dk, n_key = kf.shape
    dl, n_loc = lf.shape
    parts = {
        "key_factor": _structure_cost(np.count_nonzero(kf), math.log2(dk) + math.log2(n_key)),
        "loc_factor": _structure_cost(np.count_nonzero(lf), math.log2(dl) + math.log2(n_loc)),
        "growth": _structure_cost(np.count_nonzero(rd.growth), math.log2(dk) + math.log2(dl)),
        "diffusion": _structure_cost(np.count_nonzero(rd.diffusion),
                                     math.log2(dk) + 2.0 * math.log2(dl)),
    }
    ds = model.seasonal.n_components
    length = model.window_length
    if ds == 0:
        parts["time_profiles"] = log_star(0)
        parts["key_weights"] = log_star(0)
        parts["loc_weights"] = log_star(0)
    else:
        parts["time_profiles"] = _structure_cost(
            np.count_nonzero(model.seasonal.time_profiles),
            math.log2(ds) + math.log2(length))
        parts["key_weights"] = _structure_cost(
            np.count_nonzero(model.seasonal.key_weights),
            math.log2(ds) + math.log2(n_key))
        parts["loc_weights"] = _structure_cost(
            np.count_nonzero(model.seasonal.loc_weights),
            math.log2(ds) + math.log2(n_loc))
    parts["outliers"] = _structure_cost(
        np.count_nonzero(model.outliers),
        math.log2(stream_length) + math.log2(n_key) + math.log2(n_loc))
    return parts


def model_cost(model, stream_length):
    """Total parameter bits for one model."""
    return float(sum(model_cost_parts(model, stream_length).values()))


@dataclass
class EncodingModel:
    """Quantized Gaussian used to price residual entries."""

    mean: float
    scale: float
    quantization: float = DEFAULT_QUANT


def fit_encoding(values, quantization=DEFAULT_QUANT, exclude=None):
    """Maximum-likelihood Gaussian over a residual array.

    ``exclude`` masks entries (already claimed by the outlier set) out of
    the moment estimates.  The scale is floored so a perfectly explained
    window cannot collapse the code.
    """
    values = np.asarray(values, dtype=float)
    if exclude is not None:
        values = values[~np.asarray(exclude, dtype=bool)]
    if values.size == 0:
        return EncodingModel(0.0, SIGMA_FLOOR, quantization)
    mean = float(values.mean())
    scale = float(values.std())
    return EncodingModel(mean, max(scale, SIGMA_FLOOR), quantization)


def element_bits(values, enc):
    """Per-entry code length, clamped at zero."""
    values = np.asarray(values, dtype=float)
    z = (values - enc.mean) / enc.scale
    log_density = -0.5 * z * z - math.log(enc.scale) - 0.5 * math.log(2.0 * math.pi)
    bits = -(math.log2(enc.quantization) + log_density * _LOG2E)
    return np.maximum(bits, 0.0)


def coding_cost(values, enc):
    """Total bits to code an array under one encoding."""
    return float(element_bits(values, enc).sum())


@dataclass
class CostBreakdown:
    model_bits: float
    coding_bits: float

    @property
    def total_bits(self):
        return self.model_bits + self.coding_bits


def single_model_cost(window, model, stream_length, quantization=DEFAULT_QUANT):
    """Cost of one model against the window ending at ``stream_length``."""
    from .model import residual_on

    window = np.asarray(window, dtype=float)
    start = stream_length - window.shape[0]
    residual = residual_on(model, window, start)
    enc = fit_encoding(residual, quantization)
    return CostBreakdown(model_cost(model, stream_length), coding_cost(residual, enc))


def total_cost(window, params, stream_length, quantization=DEFAULT_QUANT):
    """Cost of the whole model collection: every model's bits are paid,
    but only the active model codes the current window."""
    from .model import residual_on

    window = np.asarray(window, dtype=float)
    start = stream_length - window.shape[0]
    residual = residual_on(params.active_model, window, start)
    enc = fit_encoding(residual, quantization)
    model_bits = float(sum(model_cost(m, stream_length) for m in params.models))
    return CostBreakdown(model_bits, coding_cost(residual, enc))
