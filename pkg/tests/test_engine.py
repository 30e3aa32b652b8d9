import numpy as np
import pytest

from rdcast.diffusion import RDParams
from rdcast.engine import (StreamConfig, candidate_ranks, forecast, initialize,
                           neighbor_ranks, run_stream)
from rdcast.errors import DivergenceError, WindowTooShortError
from rdcast.model import FullParamSet, ModelParams
from rdcast.seasonal import SeasonalParams
from rdcast.synth import synth_stream
from rdcast.trend import TrendParams


def small_config(**kwargs):
    base = dict(window=24, horizon=6, period=12, rank_grid=((2,), (2,), (0,)),
                refit_stride=1, seed=0, max_outer=8, lm_max_iter=25)
    base.update(kwargs)
    return StreamConfig(**base)


def test_candidate_ranks_filters_infeasible():
    config = StreamConfig(window=20, period=52, rank_grid=((2, 5), (2, 5), (0, 2)))
    assert candidate_ranks(config, 4, 3, 20) == [(2, 2, 0)]


def test_candidate_ranks_empty_grid_raises():
    config = StreamConfig(rank_grid=((9,), (9,), (0,)))
    with pytest.raises(ValueError):
        candidate_ranks(config, 4, 3, 20)


def test_neighbor_ranks_enumeration():
    got = neighbor_ranks((2, 2, 1), 6, 8, 104, 52)
    assert got == [(1, 2, 1), (2, 1, 1), (2, 2, 0), (2, 2, 2), (2, 3, 1), (3, 2, 1)]


def test_neighbor_ranks_respects_bounds():
    # rank one cannot shrink; seasonal cannot grow past a short window
    got = neighbor_ranks((1, 1, 0), 6, 8, 30, 52)
    assert got == [(1, 2, 0), (2, 1, 0)]


def test_initialize_picks_true_ranks():
    s = synth_stream(n_steps=24, n_key=5, n_loc=4, ranks=(2, 2, 0), seed=2,
                     noise_scale=0.005)
    config = small_config(rank_grid=((1, 2), (1, 2), (0,)))
    params, evals = initialize(s.data, config)
    assert len(evals) == 4
    assert params.active_model.ranks == (2, 2, 0)
    assert len(params) == 1
    assert params.activations == [24]


def test_run_stream_stable_instance_never_switches():
    s = synth_stream(n_steps=60, n_key=5, n_loc=4, ranks=(2, 2, 0), seed=4,
                     noise_scale=0.005)
    result = run_stream(s.data, small_config())
    assert result.switch_steps == []
    assert len(result.records) == 36
    assert result.forecasts.shape == (36, 6, 5, 4)
    assert list(result.forecast_steps) == list(range(25, 61))
    assert not any(r.diverged for r in result.records)
    assert all(np.isfinite(r.total_bits) for r in result.records)
    # one-step-ahead forecasts against the clean signal
    clean = s.trend + s.seasonal
    errs = [np.abs(result.forecasts[i, 0] - clean[step])
            for i, step in enumerate(result.forecast_steps) if step < 60]
    assert np.mean(errs) < 0.1


def test_run_stream_flags_regime_shift():
    # growth switches on at step 70; before that only diffusion mixes the
    # state, so the incumbent stays adequate and no false switch fires
    s = synth_stream(n_steps=130, n_key=5, n_loc=4, ranks=(2, 2, 0), seed=7,
                     noise_scale=0.01, shift_step=70, shift_kind="onset",
                     growth_scale=0.02)
    result = run_stream(s.data, small_config(window=36, max_outer=8, lm_max_iter=30))
    assert result.switch_steps
    assert all(step > 70 for step in result.switch_steps)
    assert any(70 < step <= 106 for step in result.switch_steps)
    assert len(result.switch_steps) <= 4
    switched_records = [r.step for r in result.records if r.switched]
    assert switched_records == result.switch_steps
    assert any(e["kind"] == "switch" for e in result.events)


def test_run_stream_refit_stride():
    s = synth_stream(n_steps=40, n_key=5, n_loc=4, ranks=(2, 2, 0), seed=6,
                     noise_scale=0.005)
    result = run_stream(s.data, small_config(refit_stride=5))
    refit_steps = [r.step for r in result.records if r.refit]
    assert refit_steps == [25, 30, 35, 40]
    assert all(not r.switched for r in result.records if not r.refit)


def test_run_stream_rejects_short_stream():
    s = synth_stream(n_steps=10, n_key=4, n_loc=3, ranks=(2, 2, 0), seed=0)
    with pytest.raises(WindowTooShortError):
        run_stream(s.data, small_config())


def test_run_stream_deterministic():
    s = synth_stream(n_steps=40, n_key=5, n_loc=4, ranks=(2, 2, 0), seed=7,
                     noise_scale=0.01)
    a = run_stream(s.data, small_config())
    b = run_stream(s.data, small_config())
    assert a.switch_steps == b.switch_steps
    assert np.array_equal(a.forecasts, b.forecasts)
    assert np.array_equal(a.params.active_model.trend.rd.growth,
                          b.params.active_model.trend.rd.growth)


def exploding_params():
    length = 8
    rd = RDParams(growth=np.full((1, 2), 20.0), diffusion=np.zeros((1, 2, 2)),
                  init_state=np.ones((1, 2)))
    model = ModelParams(
        trend=TrendParams(np.ones((1, 3)), np.ones((2, 2)), rd),
        seasonal=SeasonalParams.empty(3, 2, length, 4),
        outliers=np.zeros((length, 3, 2)),
        ranks=(1, 2, 0), window_start=0, window_length=length, anchor=0)
    params = FullParamSet()
    params.append(model, length)
    return params


def test_forecast_divergence_falls_back_to_last_observation():
    params = exploding_params()
    last = np.full((3, 2), 0.5)
    ahead, diverged = forecast(params, 0, 5, last_observation=last)
    assert diverged
    assert ahead.shape == (5, 3, 2)
    np.testing.assert_allclose(ahead, 0.5)


def test_forecast_divergence_without_fallback_raises():
    params = exploding_params()
    with pytest.raises(DivergenceError):
        forecast(params, 0, 5)
