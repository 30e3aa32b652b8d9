import json
import os

import numpy as np
import pytest

from rdcast.cli import main
from rdcast.dataio import import_model, read_forecast_log, write_stream
from rdcast.synth import synth_stream

KEYWORDS = [f"kw{u}" for u in range(5)]
LOCATIONS = [f"loc{v}" for v in range(4)]


def write_synth_pair(root, n_steps=60, seed=4):
    s = synth_stream(n_steps=n_steps, n_key=5, n_loc=4, ranks=(2, 2, 0),
                     seed=seed, noise_scale=0.005)
    raw = s.data - s.data.min() + 0.01
    data_path = str(root / "stream.csv")
    meta_path = str(root / "stream.json")
    write_stream(raw, KEYWORDS, LOCATIONS, 12, data_path, meta_path)
    return data_path, meta_path


@pytest.fixture(scope="module")
def streamed_cli(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data_path, meta_path = write_synth_pair(root)
    out_dir = str(root / "out")
    rc = main(["stream", data_path, meta_path, "--window", "24",
               "--horizon", "6", "--rank-grid", "2:2:0", "--out-dir", out_dir])
    assert rc == 0
    return {"data": data_path, "meta": meta_path, "out": out_dir, "root": root}


def test_stream_writes_everything(streamed_cli):
    out = streamed_cli["out"]
    for name in ["model.json", "forecasts.csv", "core_trajectories.csv",
                 "factors.csv", "diffusion_edges.csv", "series.csv",
                 "switches.csv", "fit_vs_truth.png", "latent_trajectories.png",
                 "factor_heatmaps.png", "diffusion_graph.png",
                 "error_by_horizon.png"]:
        assert os.path.exists(os.path.join(out, name)), name


def test_stream_model_reloads(streamed_cli):
    params, stream_length = import_model(os.path.join(streamed_cli["out"],
                                                      "model.json"))
    assert stream_length == 60
    assert params.active_model.n_key == 5


def test_fit_reports_cost(streamed_cli, tmp_path, capsys):
    rc = main(["fit", streamed_cli["data"], streamed_cli["meta"],
               "--window", "24", "--rank-grid", "2:2:0",
               "--out-dir", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "fitted ranks (2, 2, 0)" in out
    assert "coding" in out
    params, stream_length = import_model(str(tmp_path / "model.json"))
    assert stream_length == 60
    assert params.active_model.window_start == 36


def test_forecast_from_saved_model(streamed_cli, tmp_path):
    model_path = os.path.join(streamed_cli["out"], "model.json")
    rc = main(["forecast", model_path, streamed_cli["meta"],
               "--horizon", "4", "--out-dir", str(tmp_path)])
    assert rc == 0
    forecasts, steps, keywords, locations = read_forecast_log(
        str(tmp_path / "forecasts.csv"))
    assert forecasts.shape == (1, 4, 5, 4)
    assert list(steps) == [60]
    assert keywords == KEYWORDS


def test_eval_scores_stream_log(streamed_cli, tmp_path, capsys):
    rc = main(["eval", os.path.join(streamed_cli["out"], "forecasts.csv"),
               streamed_cli["data"], streamed_cli["meta"],
               "--out-dir", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "x10^-2" in out
    assert "dropped" in out
    with open(tmp_path / "metrics.csv") as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "horizon,mae,rmse"
    assert len(lines) == 7


def test_export_regenerates_offline(streamed_cli, tmp_path):
    rc = main(["export", os.path.join(streamed_cli["out"], "model.json"),
               streamed_cli["data"], streamed_cli["meta"],
               "--out-dir", str(tmp_path)])
    assert rc == 0
    assert os.path.exists(tmp_path / "series.csv")
    assert os.path.exists(tmp_path / "fit_vs_truth.png")


def test_missing_file_exits_2(tmp_path, capsys):
    rc = main(["fit", str(tmp_path / "absent.csv"), str(tmp_path / "absent.json")])
    assert rc == 2


def test_malformed_stream_exits_2(tmp_path, capsys):
    meta = tmp_path / "m.json"
    meta.write_text(json.dumps({"keywords": ["a"], "locations": ["x"],
                                "period": 4}))
    data = tmp_path / "d.csv"
    data.write_text("timestamp,keyword,location,value\n0,a,x,1\n0,a,x,2\n")
    rc = main(["fit", str(data), str(meta)])
    assert rc == 2
    assert "row 3" in capsys.readouterr().err


def test_oversized_window_exits_3(streamed_cli, capsys):
    rc = main(["fit", streamed_cli["data"], streamed_cli["meta"],
               "--window", "999"])
    assert rc == 3


def test_bad_rank_grid_rejected(streamed_cli):
    with pytest.raises(SystemExit) as err:
        main(["fit", streamed_cli["data"], streamed_cli["meta"],
              "--rank-grid", "nope"])
    assert err.value.code == 2


def test_env_var_sets_out_dir(streamed_cli, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("RDCAST_OUT_DIR", str(tmp_path / "env_out"))
    rc = main(["fit", streamed_cli["data"], streamed_cli["meta"],
               "--window", "24", "--rank-grid", "2:2:0"])
    assert rc == 0
    assert os.path.exists(tmp_path / "env_out" / "model.json")
