"""Streaming loop: cost-gated refits over a sliding window.

The stream is consumed one step at a time after an initial window picks
the starting ranks by grid search.  Each step refits a candidate model on
the current window and keeps it only when total description length drops;
a rejected candidate costs nothing but the fit, and the incumbent is
instead re-anchored by refreshing its initial state.  An accepted switch
triggers a local rank walk (every rank changed by one in turn) so the
structure can grow or shrink as the stream drifts.  All timing is
recorded per step so episodic work (switches, rank searches) can be told
apart from the steady per-step cost.
"""

import itertools
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DivergenceError, WindowTooShortError
from .estimator import model_estimation, refresh_init_state
from .mdl import single_model_cost, total_cost
from .model import (FullParamSet, outliers_on, reconstruct_on, seasonal_on,
                    trend_on)
from .tensor import validate_tensor


@dataclass
class StreamConfig:
    window: int = 104
    horizon: int = 13
    period: int = 52
    rank_grid: tuple = ((2, 3), (2, 3), (0, 1, 2))
    refit_stride: int = 1
    seed: int = 0
    max_outer: int = 20
    lm_max_iter: int = 40


@dataclass
class StepRecord:
    step: int
    wall_time: float
    refit: bool
    switched: bool
    rank_search: bool
    diverged: bool
    total_bits: float


@dataclass
class StreamResult:
    params: FullParamSet
    config: StreamConfig
    forecasts: np.ndarray
    forecast_steps: np.ndarray
    fitted: np.ndarray
    init_fit: np.ndarray
    records: list
    events: list
    init_evals: list

    @property
    def switch_steps(self):
        return list(self.params.activations[1:])

    def fitted_series(self):
        """In-sample fit for every observation: the initial window under
        the starting model, later steps under whichever model was active
        when each observation was newest."""
        return np.concatenate([self.init_fit, self.fitted])


def _feasible(ranks, n_key, n_loc, length, period):
    rank_key, rank_loc, rank_seasonal = ranks
    if rank_key < 1 or rank_loc < 1 or rank_seasonal < 0:
        return False
    if rank_key > n_key or rank_loc > n_loc:
        return False
    if rank_seasonal > min(length, n_key, n_loc):
        return False
    if rank_seasonal > 0 and length < 2 * period:
        return False
    return True


def candidate_ranks(config, n_key, n_loc, length):
    """Cartesian grid of starting rank triples, infeasible ones dropped."""
    out = [triple for triple in itertools.product(*config.rank_grid)
           if _feasible(triple, n_key, n_loc, length, config.period)]
    if not out:
        raise ValueError(
            f"no feasible rank triple in the grid for a ({length}, {n_key}, {n_loc}) window"
        )
    return sorted(out)


def neighbor_ranks(ranks, n_key, n_loc, length, period):
    """Rank triples one step away from ``ranks``, feasible ones only."""
    rank_key, rank_loc, rank_seasonal = ranks
    steps = [(rank_key + d, rank_loc, rank_seasonal) for d in (-1, 1)]
    steps += [(rank_key, rank_loc + d, rank_seasonal) for d in (-1, 1)]
    steps += [(rank_key, rank_loc, rank_seasonal + d) for d in (-1, 1)]
    return sorted(t for t in steps if _feasible(t, n_key, n_loc, length, period))


def _estimate(window, ranks, window_start, stream_length, config):
    return model_estimation(
        window, ranks, window_start=window_start, period=config.period,
        seed=config.seed, max_outer=config.max_outer, stream_length=stream_length,
        lm_max_iter=config.lm_max_iter)


def initialize(window, config, window_start=0, stream_length=None):
    """Grid-search the starting ranks on one full window.

    Candidates are scored by single-model total bits; ties go to the
    lexicographically smallest triple because candidates are visited in
    sorted order and only a strict improvement displaces the best.  The
    defaults treat ``window`` as the head of the stream; pass
    ``window_start``/``stream_length`` to fit a window sitting elsewhere.
    """
    window = np.asarray(window, dtype=float)
    validate_tensor(window, "window")
    length, n_key, n_loc = window.shape
    if stream_length is None:
        stream_length = window_start + length
    best_model, best_bits = None, np.inf
    evals = []
    for ranks in candidate_ranks(config, n_key, n_loc, length):
        model = _estimate(window, ranks, window_start, stream_length, config)
        bits = single_model_cost(window, model, stream_length).total_bits
        evals.append({"ranks": ranks, "total_bits": bits})
        if bits < best_bits:
            best_model, best_bits = model, bits
    params = FullParamSet()
    params.append(best_model, stream_length)
    return params, evals


def rank_update(window, params, window_start, stream_length, config):
    """Try every one-step rank change; adopt the best strict improvement.

    Only the active model is rescored, since every model collection under
    comparison shares the same history and those bits cancel.
    """
    active = params.active_model
    length, n_key, n_loc = window.shape
    best_bits = single_model_cost(window, active, stream_length).total_bits
    best_model = None
    for ranks in neighbor_ranks(active.ranks, n_key, n_loc, length, config.period):
        cand = _estimate(window, ranks, window_start, stream_length, config)
        bits = single_model_cost(window, cand, stream_length).total_bits
        if bits < best_bits:
            best_model, best_bits = cand, bits
    if best_model is not None:
        params.replace_active(best_model)
    return best_model


def model_update(window, params, window_start, stream_length, config):
    """One cost-gated refit: keep the collection or add a fresh model.

    The incumbent is first re-anchored on the current window (state-only
    refresh, dynamics frozen) so the comparison pits the candidate
    against the incumbent at its best, not against a stale anchor.
    Returns (switched, breakdown) for the configuration that survived.
    """
    refreshed = refresh_init_state(params.active_model, window, window_start,
                                   lm_max_iter=config.lm_max_iter)
    params.replace_active(refreshed)
    keep = total_cost(window, params, stream_length)
    cand = _estimate(window, refreshed.ranks, window_start, stream_length, config)
    trial = FullParamSet(models=list(params.models) + [cand],
                         activations=list(params.activations) + [stream_length])
    grow = total_cost(window, trial, stream_length)
    if grow.total_bits < keep.total_bits:
        params.append(cand, stream_length)
        return True, grow
    return False, keep


def forecast(params, at_step, horizon, last_observation=None):
    """Project the active model ``horizon`` steps past ``at_step``.

    A diverging trajectory falls back to holding the last observation
    flat; the flag in the returned pair reports that this happened.
    """
    model = params.active_model
    try:
        out = (trend_on(model, at_step, horizon)
               + seasonal_on(model, at_step, horizon)
               + outliers_on(model, at_step, horizon))
        return out, False
    except DivergenceError:
        if last_observation is None:
            raise
        return np.repeat(last_observation[None], horizon, axis=0), True


def run_stream(data, config=None):
    """Consume a whole stream and return models, forecasts, and timings.

    The first ``config.window`` steps only initialize; every later step
    slides the window by one, refits when the stride says so (otherwise
    just re-anchors), and forecasts ``config.horizon`` steps ahead.
    """
    if config is None:
        config = StreamConfig()
    data = np.asarray(data, dtype=float)
    validate_tensor(data, "stream")
    n_steps = data.shape[0]
    window_len = config.window
    if n_steps < window_len:
        raise WindowTooShortError(
            f"stream has {n_steps} steps but one window needs {window_len}"
        )

    tic = time.perf_counter()
    params, init_evals = initialize(data[:window_len], config)
    events = [{"step": window_len, "kind": "initialize",
               "ranks": params.active_model.ranks,
               "seconds": time.perf_counter() - tic}]
    init_fit = reconstruct_on(params.active_model, 0, window_len)

    records = []
    forecasts = []
    forecast_steps = []
    fitted = []
    for step in range(window_len + 1, n_steps + 1):
        tic = time.perf_counter()
        start = step - window_len
        window = data[start:step]
        refit = (step - window_len - 1) % config.refit_stride == 0
        switched = False
        rank_search = False
        if refit:
            switched, cost = model_update(window, params, start, step, config)
            if switched:
                old_ranks = params.active_model.ranks
                events.append({"step": step, "kind": "switch",
                               "ranks": old_ranks,
                               "total_bits": cost.total_bits})
                rank_search = True
                adopted = rank_update(window, params, start, step, config)
                if adopted is not None:
                    events.append({"step": step, "kind": "rank_change",
                                   "from": old_ranks, "to": adopted.ranks})
                cost = total_cost(window, params, step)
        else:
            refreshed = refresh_init_state(params.active_model, window, start,
                                           lm_max_iter=config.lm_max_iter)
            params.replace_active(refreshed)
            cost = total_cost(window, params, step)

        ahead, diverged = forecast(params, step, config.horizon,
                                   last_observation=window[-1])
        if diverged:
            events.append({"step": step, "kind": "divergence_fallback"})
        forecasts.append(ahead)
        forecast_steps.append(step)
        fitted.append(reconstruct_on(params.active_model, step - 1, 1)[0])
        records.append(StepRecord(
            step=step, wall_time=time.perf_counter() - tic, refit=refit,
            switched=switched, rank_search=rank_search, diverged=diverged,
            total_bits=cost.total_bits))

    return StreamResult(
        params=params, config=config,
        forecasts=(np.stack(forecasts) if forecasts
                   else np.zeros((0, config.horizon) + data.shape[1:])),
        forecast_steps=np.array(forecast_steps, dtype=int),
        fitted=(np.stack(fitted) if fitted
                else np.zeros((0,) + data.shape[1:])),
        init_fit=init_fit,
        records=records, events=events, init_evals=init_evals)
