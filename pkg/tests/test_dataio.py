import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdcast.dataio import (diffusion_edges, evaluate, export_model,
                           export_plotdata, import_model, ingest,
                           read_forecast_log, write_forecast_log, write_stream)
from rdcast.engine import StreamConfig, run_stream
from rdcast.errors import DataFormatError, EvaluationError
from rdcast.model import FullParamSet
from rdcast.synth import synth_stream
from test_model import build_model


def write_pair(tmp_path, rows, keywords=("flu",), locations=("east",), period=4):
    data_path = tmp_path / "stream.csv"
    meta_path = tmp_path / "stream.json"
    meta_path.write_text(json.dumps({"keywords": list(keywords),
                                     "locations": list(locations),
                                     "period": period, "sampling": "weekly"}))
    data_path.write_text("timestamp,keyword,location,value\n"
                         + "".join(r + "\n" for r in rows))
    return str(data_path), str(meta_path)


def test_ingest_normalizes_to_unit_range(tmp_path):
    rows = ["0,flu,east,0", "1,flu,east,50", "2,flu,east,200"]
    data = ingest(*write_pair(tmp_path, rows))
    assert data.values.shape == (3, 1, 1)
    np.testing.assert_allclose(data.values[:, 0, 0], [0.0, 0.25, 1.0], atol=1e-12)
    assert data.offset == 0.0 and data.scale == 200.0
    assert data.period == 4 and data.keywords == ["flu"]


def test_ingest_flat_stream_keeps_unit_scale(tmp_path):
    rows = ["0,flu,east,7", "1,flu,east,7"]
    data = ingest(*write_pair(tmp_path, rows))
    assert data.scale == 1.0 and data.offset == 7.0
    assert np.all(data.values == 0.0)


def test_ingest_duplicate_triple_names_row(tmp_path):
    rows = ["0,flu,east,1", "1,flu,east,2", "1,flu,east,3"]
    with pytest.raises(DataFormatError) as err:
        ingest(*write_pair(tmp_path, rows))
    assert err.value.row == 4
    assert "duplicate" in str(err.value)


def test_ingest_unknown_label_names_row(tmp_path):
    rows = ["0,flu,east,1", "1,flu,west,2"]
    with pytest.raises(DataFormatError) as err:
        ingest(*write_pair(tmp_path, rows))
    assert err.value.row == 3
    assert "west" in str(err.value)


def test_ingest_timestamp_gap_reported(tmp_path):
    rows = ["0,flu,east,1", "2,flu,east,2"]
    with pytest.raises(DataFormatError, match="timestamp 1"):
        ingest(*write_pair(tmp_path, rows))


def test_ingest_missing_cell_named(tmp_path):
    rows = ["0,flu,east,1", "0,flu,west,1", "1,flu,east,2"]
    with pytest.raises(DataFormatError, match="'west'") as err:
        ingest(*write_pair(tmp_path, rows, locations=("east", "west")))
    assert "timestamp 1" in str(err.value)


def test_ingest_rejects_negative_value(tmp_path):
    rows = ["0,flu,east,1", "1,flu,east,-3"]
    with pytest.raises(DataFormatError) as err:
        ingest(*write_pair(tmp_path, rows))
    assert err.value.row == 3


def test_ingest_rejects_bad_header(tmp_path):
    data_path, meta_path = write_pair(tmp_path, ["0,flu,east,1"])
    with open(data_path) as fh:
        body = fh.read().replace("timestamp", "week")
    with open(data_path, "w") as fh:
        fh.write(body)
    with pytest.raises(DataFormatError) as err:
        ingest(data_path, meta_path)
    assert err.value.row == 1


def test_write_then_ingest_round_trips(tmp_path):
    rng = np.random.default_rng(3)
    raw = rng.uniform(0.0, 9.0, size=(6, 2, 3))
    keywords, locations = ["a", "b"], ["x", "y", "z"]
    data_path = str(tmp_path / "out.csv")
    meta_path = str(tmp_path / "out.json")
    write_stream(raw, keywords, locations, 4, data_path, meta_path)
    back = ingest(data_path, meta_path)
    np.testing.assert_allclose(back.denormalize(back.values), raw, atol=1e-9)
    assert back.keywords == keywords and back.locations == locations


def test_evaluate_hand_oracle_symmetric_errors():
    truth = np.full((4, 1, 1), 0.5)
    forecasts = np.zeros((2, 1, 1, 1))
    forecasts[0, 0] = 0.6
    forecasts[1, 0] = 0.4
    report = evaluate(forecasts, [0, 1], truth)
    np.testing.assert_allclose(report.mae, [0.1], atol=1e-12)
    np.testing.assert_allclose(report.rmse, [0.1], atol=1e-12)


def test_evaluate_hand_oracle_uneven_errors():
    truth = np.full((4, 1, 1), 0.5)
    forecasts = np.zeros((2, 1, 1, 1))
    forecasts[0, 0] = 0.5
    forecasts[1, 0] = 0.7
    report = evaluate(forecasts, [0, 1], truth)
    np.testing.assert_allclose(report.mae, [0.1], atol=1e-12)
    np.testing.assert_allclose(report.rmse, [np.sqrt(0.02)], atol=1e-12)


def test_evaluate_matches_scalar_loop():
    rng = np.random.default_rng(11)
    truth = rng.uniform(size=(20, 3, 2))
    steps = [4, 7, 12]
    forecasts = rng.uniform(size=(3, 5, 3, 2))
    report = evaluate(forecasts, steps, truth)
    for h in range(5):
        abs_sum, sq_sum, count = 0.0, 0.0, 0
        for i, s in enumerate(steps):
            for u in range(3):
                for v in range(2):
                    e = forecasts[i, h, u, v] - truth[s + h, u, v]
                    abs_sum += abs(e)
                    sq_sum += e * e
                    count += 1
        assert abs(report.mae[h] - abs_sum / count) <= 1e-12
        assert abs(report.rmse[h] - np.sqrt(sq_sum / count)) <= 1e-12
        assert report.rmse[h] >= report.mae[h]
    assert report.n_forecasts == 3


def test_evaluate_per_keyword_split():
    truth = np.zeros((3, 2, 1))
    forecasts = np.zeros((1, 1, 2, 1))
    forecasts[0, 0, 0, 0] = 0.2
    forecasts[0, 0, 1, 0] = -0.4
    report = evaluate(forecasts, [1], truth)
    np.testing.assert_allclose(report.keyword_mae[0], [0.2, 0.4], atol=1e-12)
    np.testing.assert_allclose(report.mae, [0.3], atol=1e-12)


def test_evaluate_refuses_unrealized_targets():
    truth = np.zeros((10, 1, 1))
    forecasts = np.zeros((2, 4, 1, 1))
    with pytest.raises(EvaluationError, match=r"\[8\]"):
        evaluate(forecasts, [3, 8], truth)


def test_metric_table_uses_percent_scale():
    truth = np.full((2, 1, 1), 0.5)
    forecasts = np.full((1, 1, 1, 1), 0.53)
    report = evaluate(forecasts, [0], truth)
    table = report.format_table()
    assert "x10^-2" in table
    assert "3.000" in table


def model_pair():
    params = FullParamSet()
    params.append(build_model(seed=1, window_start=0, length=12), 12)
    params.append(build_model(seed=5, window_start=8, length=12, n_seasonal=0), 20)
    return params


def test_export_import_restores_arrays(tmp_path):
    params = model_pair()
    path = str(tmp_path / "model.json")
    export_model(params, path, stream_length=24)
    back, stream_length = import_model(path)
    assert stream_length == 24
    assert back.activations == params.activations
    for orig, restored in zip(params.models, back.models):
        assert restored.ranks == orig.ranks
        assert restored.anchor == orig.anchor
        np.testing.assert_array_equal(restored.trend.rd.growth, orig.trend.rd.growth)
        np.testing.assert_array_equal(restored.trend.rd.diffusion,
                                      orig.trend.rd.diffusion)
        np.testing.assert_array_equal(restored.trend.key_factor, orig.trend.key_factor)
        np.testing.assert_array_equal(restored.seasonal.time_profiles,
                                      orig.seasonal.time_profiles)
        np.testing.assert_array_equal(restored.outliers, orig.outliers)
        assert restored.seasonal.time_profiles.shape == orig.seasonal.time_profiles.shape


def test_export_round_trip_is_byte_identical(tmp_path):
    params = model_pair()
    first = str(tmp_path / "a.json")
    second = str(tmp_path / "b.json")
    export_model(params, first, stream_length=24)
    back, stream_length = import_model(first)
    export_model(back, second, stream_length=stream_length)
    with open(first, "rb") as fa, open(second, "rb") as fb:
        assert fa.read() == fb.read()


def test_export_default_stream_length(tmp_path):
    params = model_pair()
    path = str(tmp_path / "model.json")
    export_model(params, path)
    with open(path) as fh:
        payload = json.load(fh)
    assert payload["stream_length"] == 20


def test_diffusion_edges_apply_floor():
    m = build_model(seed=2)
    d = np.zeros((2, 2, 2))
    d[0, 1, 0] = 1.0
    d[1, 0, 1] = 0.5
    d[0, 0, 1] = 0.004
    m.trend.rd.diffusion = d
    edges = diffusion_edges(m)
    got = {(e["key_group"], e["from_group"], e["to_group"]): e["strength"]
           for e in edges}
    assert got == {(0, 0, 1): 1.0, (1, 1, 0): 0.5}


def test_diffusion_edges_empty_for_zero_coupling():
    m = build_model(seed=2)
    m.trend.rd.diffusion = np.zeros((2, 2, 2))
    assert diffusion_edges(m) == []


@pytest.fixture(scope="module")
def streamed():
    s = synth_stream(n_steps=60, n_key=5, n_loc=4, ranks=(2, 2, 0), seed=4,
                     noise_scale=0.005)
    config = StreamConfig(window=24, horizon=6, period=12,
                          rank_grid=((2,), (2,), (0,)), refit_stride=1, seed=0,
                          max_outer=6, lm_max_iter=20)
    return s, run_stream(s.data, config)


def test_plotdata_file_inventory(streamed, tmp_path):
    s, result = streamed
    paths = export_plotdata(result, s.data, str(tmp_path))
    assert sorted(paths) == ["core_trajectories", "diffusion_edges", "factors",
                             "series", "switches"]
    for path in paths.values():
        assert os.path.exists(path)


def test_plotdata_core_rows_cover_each_model(streamed, tmp_path):
    s, result = streamed
    paths = export_plotdata(result, s.data, str(tmp_path))
    with open(paths["core_trajectories"]) as fh:
        n_rows = sum(1 for _ in fh) - 1
    want = sum(m.window_length * m.ranks[0] * m.ranks[1]
               for m in result.params.models)
    assert n_rows == want


def test_plotdata_switch_rows_are_activations(streamed, tmp_path):
    s, result = streamed
    paths = export_plotdata(result, s.data, str(tmp_path))
    with open(paths["switches"]) as fh:
        lines = fh.read().splitlines()[1:]
    steps = [int(line.split(",")[1]) for line in lines]
    assert steps == result.params.activations


def test_plotdata_series_reproduces_truth(streamed, tmp_path):
    s, result = streamed
    paths = export_plotdata(result, s.data, str(tmp_path))
    with open(paths["series"]) as fh:
        lines = fh.read().splitlines()[1:]
    n_forecast_rows = 0
    for line in lines:
        step, kw, loc, truth, fitted, residual, ahead = line.split(",")
        assert abs(float(truth) - (float(fitted) + float(residual))) <= 1e-9
        if ahead:
            n_forecast_rows += 1
    assert len(lines) == 60 * 5 * 4
    assert n_forecast_rows == len(result.forecast_steps) * 5 * 4 - 5 * 4
    # fitted values track the observed series closely on this clean stream
    fit = np.array([float(line.split(",")[4]) for line in lines]).reshape(60, 5, 4)
    assert np.mean(np.abs(fit - s.data)) < 0.05


def test_forecast_log_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    forecasts = rng.uniform(size=(3, 2, 2, 2))
    steps = [10, 11, 12]
    keywords, locations = ["a", "b"], ["x", "y"]
    path = str(tmp_path / "forecasts.csv")
    write_forecast_log(forecasts, steps, keywords, locations, path)
    back, back_steps, back_kw, back_loc = read_forecast_log(path)
    np.testing.assert_array_equal(back, forecasts)
    assert list(back_steps) == steps
    assert back_kw == keywords and back_loc == locations


@given(
    seed=st.integers(min_value=0, max_value=2**16),
    n_forecast=st.integers(min_value=1, max_value=6),
    horizon=st.integers(min_value=1, max_value=5),
)
@settings(max_examples=40, deadline=None)
def test_rmse_dominates_mae_property(seed, n_forecast, horizon):
    rng = np.random.default_rng(seed)
    truth = rng.uniform(size=(n_forecast + horizon + 3, 2, 3))
    steps = list(range(n_forecast))
    forecasts = rng.uniform(size=(n_forecast, horizon, 2, 3))
    report = evaluate(forecasts, steps, truth)
    assert np.all(report.rmse >= report.mae - 1e-12)
    assert np.all(report.mae >= 0.0)
    assert np.all(report.keyword_rmse >= report.keyword_mae - 1e-12)
