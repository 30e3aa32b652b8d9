"""Per-window model bundles and reconstruction on sliding spans.

A fitted model owns three additive parts (latent-dynamics trend, CP
seasonal, sparse outliers) plus bookkeeping that ties it to the absolute
stream timeline: ``window_start`` marks the span it was estimated on and
never changes, while ``anchor`` marks where its initial state currently
applies and advances when the state is re-fitted to a newer window.  The
model collection keeps every model ever accepted; the most recently
appended one is the active model used for scoring and forecasting.
"""

from dataclasses import dataclass, field

import numpy as np

from .diffusion import generate
from .errors import DimensionMismatchError
from .seasonal import SeasonalParams, profile_columns_at, reconstruct_seasonal
from .trend import TrendParams, project_to_observed


@dataclass
class ModelParams:
    """One window's fitted decomposition with absolute-time bookkeeping."""

    trend: TrendParams
    seasonal: SeasonalParams
    outliers: np.ndarray
    ranks: tuple
    window_start: int
    window_length: int
    anchor: int
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.outliers = np.asarray(self.outliers, dtype=float)
        self.ranks = tuple(int(r) for r in self.ranks)

    @property
    def n_key(self):
        return self.trend.key_factor.shape[1]

    @property
    def n_loc(self):
        return self.trend.loc_factor.shape[1]

    def copy(self):
        return ModelParams(self.trend.copy(), self.seasonal.copy(), self.outliers.copy(),
                           self.ranks, self.window_start, self.window_length, self.anchor,
                           dict(self.diagnostics))


def trend_on(model, start, length):
    """Trend reconstruction for absolute span [start, start+length).

    The latent trajectory is regenerated from the anchored initial state,
    so spans may begin at or after the anchor but not before it.
    """
    offset = start - model.anchor
    if offset < 0:
        raise DimensionMismatchError(
            f"span starting at {start} lies before the model anchor {model.anchor}"
        )
    core = generate(model.trend.rd, offset + length)[offset:]
    return project_to_observed(core, model.trend.key_factor, model.trend.loc_factor)


def seasonal_on(model, start, length):
    """Seasonal reconstruction for an absolute span, periodic past the fit window."""
    if model.seasonal.n_components == 0:
        return np.zeros((length, model.n_key, model.n_loc))
    offsets = start - model.window_start + np.arange(length)
    cols = profile_columns_at(model.seasonal, offsets)
    return reconstruct_seasonal(model.seasonal, cols)


def outliers_on(model, start, length):
    """Outlier slices overlapping an absolute span; zero outside the fit window."""
    out = np.zeros((length, model.n_key, model.n_loc))
    fit_start = model.window_start
    fit_end = fit_start + model.window_length
    lo = max(start, fit_start)
    hi = min(start + length, fit_end)
    if lo < hi:
        out[lo - start:hi - start] = model.outliers[lo - fit_start:hi - fit_start]
    return out


def reconstruct_on(model, start, length):
    """Sum of the three parts on an absolute span."""
    return (trend_on(model, start, length)
            + seasonal_on(model, start, length)
            + outliers_on(model, start, length))


def residual_on(model, window, start):
    """Window minus the model's reconstruction aligned at ``start``."""
    window = np.asarray(window, dtype=float)
    return window - reconstruct_on(model, start, window.shape[0])


@dataclass
class FullParamSet:
    """Every accepted model plus the step at which each became active."""

    models: list = field(default_factory=list)
    activations: list = field(default_factory=list)

    @property
    def active_index(self):
        return len(self.models) - 1

    @property
    def active_model(self):
        if not self.models:
            raise IndexError("no model has been accepted yet")
        return self.models[-1]

    def append(self, model, activation_step):
        if self.activations and activation_step <= self.activations[-1]:
            raise ValueError(
                f"activation step {activation_step} does not follow {self.activations[-1]}"
            )
        self.models.append(model)
        self.activations.append(int(activation_step))

    def replace_active(self, model):
        if not self.models:
            raise IndexError("no model to replace")
        self.models[-1] = model

    def __len__(self):
        return len(self.models)
