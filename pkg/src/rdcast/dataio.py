"""Delimited-file ingestion, forecast metrics, and model serialization.

Streams travel as long-format comma-separated rows (timestamp, keyword,
location, value) with a JSON sidecar naming the axes; tensors are dense,
so every (timestamp, keyword, location) triple must be present exactly
once and timestamps must run contiguously from zero.  Values are
min-max normalized on ingest with the affine parameters kept for
de-normalized export.  Model collections serialize to a deterministic
JSON document that round-trips bit-exactly.
"""

import csv
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .diffusion import RDParams, generate
from .errors import DataFormatError, EvaluationError
from .mdl import model_cost_parts
from .model import FullParamSet, ModelParams, reconstruct_on
from .seasonal import SeasonalParams
from .trend import TrendParams

_HEADER = ["timestamp", "keyword", "location", "value"]
EDGE_FLOOR_FRACTION = 0.01


@dataclass
class StreamData:
    """Normalized tensor plus the labels and affine scale to undo it."""

    values: np.ndarray
    keywords: list
    locations: list
    period: int
    sampling: str
    offset: float
    scale: float

    def denormalize(self, x):
        return np.asarray(x) * self.scale + self.offset


def _read_meta(meta_path):
    with open(meta_path) as fh:
        meta = json.load(fh)
    for field_name in ("keywords", "locations", "period"):
        if field_name not in meta:
            raise DataFormatError(f"metadata file {meta_path} lacks '{field_name}'")
    return (list(meta["keywords"]), list(meta["locations"]),
            int(meta["period"]), str(meta.get("sampling", "weekly")))


def ingest(path, meta_path):
    """Read one stream file pair into a :class:`StreamData`.

    Row numbers in error messages count file lines, header included.
    """
    keywords, locations, period, sampling = _read_meta(meta_path)
    key_index = {name: i for i, name in enumerate(keywords)}
    loc_index = {name: i for i, name in enumerate(locations)}
    if len(key_index) != len(keywords) or len(loc_index) != len(locations):
        raise DataFormatError(f"metadata file {meta_path} repeats a label")

    entries = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _HEADER:
            raise DataFormatError(
                f"expected header {','.join(_HEADER)}, got {header}", row=1)
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataFormatError(f"expected 4 fields, got {len(row)}", row=row_no)
            try:
                t = int(row[0])
                value = float(row[3])
            except ValueError as exc:
                raise DataFormatError(str(exc), row=row_no) from None
            if t < 0:
                raise DataFormatError(f"negative timestamp {t}", row=row_no)
            if row[1] not in key_index:
                raise DataFormatError(f"unknown keyword {row[1]!r}", row=row_no)
            if row[2] not in loc_index:
                raise DataFormatError(f"unknown location {row[2]!r}", row=row_no)
            if not math.isfinite(value) or value < 0:
                raise DataFormatError(f"value must be finite and >= 0, got {row[3]}",
                                      row=row_no)
            triple = (t, key_index[row[1]], loc_index[row[2]])
            if triple in entries:
                raise DataFormatError(
                    f"duplicate entry for timestamp {t}, keyword {row[1]!r}, "
                    f"location {row[2]!r}", row=row_no)
            entries[triple] = value
    if not entries:
        raise DataFormatError(f"stream file {path} holds no data rows")

    n_steps = max(k[0] for k in entries) + 1
    steps_seen = {k[0] for k in entries}
    for t in range(n_steps):
        if t not in steps_seen:
            raise DataFormatError(f"gap in timestamps: no rows for timestamp {t}")
    raw = np.full((n_steps, len(keywords), len(locations)), np.nan)
    for (t, u, v), value in entries.items():
        raw[t, u, v] = value
    missing = np.argwhere(np.isnan(raw))
    if missing.size:
        t, u, v = missing[0]
        raise DataFormatError(
            f"missing row for timestamp {t}, keyword {keywords[u]!r}, "
            f"location {locations[v]!r}")

    low = float(raw.min())
    high = float(raw.max())
    scale = high - low if high > low else 1.0
    return StreamData(values=(raw - low) / scale, keywords=keywords,
                      locations=locations, period=period, sampling=sampling,
                      offset=low, scale=scale)


def write_stream(values, keywords, locations, period, path, meta_path,
                 sampling="weekly", offset=0.0, scale=1.0):
    """Inverse of :func:`ingest`; values are de-normalized on the way out."""
    values = np.asarray(values, dtype=float)
    with open(meta_path, "w") as fh:
        json.dump({"keywords": list(keywords), "locations": list(locations),
                   "period": int(period), "sampling": sampling},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_HEADER)
        for t in range(values.shape[0]):
            for u, kw in enumerate(keywords):
                for v, loc in enumerate(locations):
                    writer.writerow([t, kw, loc,
                                     repr(float(values[t, u, v]) * scale + offset)])


@dataclass
class MetricReport:
    """Per-horizon forecast errors, overall and split by keyword."""

    horizons: np.ndarray
    mae: np.ndarray
    rmse: np.ndarray
    keyword_mae: np.ndarray
    keyword_rmse: np.ndarray
    n_forecasts: int

    def format_table(self, keywords=None):
        """Render the report with errors scaled by 100 (the x10^-2
        convention used for normalized streams)."""
        lines = ["horizon  MAE(x10^-2)  RMSE(x10^-2)"]
        for i, h in enumerate(self.horizons):
            lines.append(f"{h:7d}  {self.mae[i] * 100:11.3f}  {self.rmse[i] * 100:12.3f}")
        if keywords is not None:
            lines.append("")
            lines.append("per keyword, last horizon:")
            for u, kw in enumerate(keywords):
                lines.append(f"  {kw}: MAE {self.keyword_mae[-1, u] * 100:.3f}"
                             f"  RMSE {self.keyword_rmse[-1, u] * 100:.3f}")
        return "\n".join(lines)


def evaluate(forecasts, forecast_steps, truth):
    """Score a forecast log against realized values.

    Every logged forecast must be fully realized; steps whose targets
    run past the truth tensor are reported, not silently dropped.
    """
    forecasts = np.asarray(forecasts, dtype=float)
    truth = np.asarray(truth, dtype=float)
    steps = np.asarray(forecast_steps, dtype=int)
    if forecasts.ndim != 4 or forecasts.shape[0] != steps.shape[0]:
        raise EvaluationError(
            f"forecast log shape {forecasts.shape} does not match "
            f"{steps.shape[0]} logged steps")
    horizon = forecasts.shape[1]
    gaps = [int(s) for s in steps if s + horizon > truth.shape[0]]
    if gaps:
        raise EvaluationError(
            f"forecasts at steps {gaps} extend past the stream end "
            f"({truth.shape[0]} observations); trim the log or supply more truth")
    targets = np.stack([truth[s:s + horizon] for s in steps])
    err = forecasts - targets
    mae = np.abs(err).mean(axis=(0, 2, 3))
    rmse = np.sqrt((err ** 2).mean(axis=(0, 2, 3)))
    keyword_mae = np.abs(err).mean(axis=(0, 3))
    keyword_rmse = np.sqrt((err ** 2).mean(axis=(0, 3)))
    return MetricReport(horizons=np.arange(1, horizon + 1), mae=mae, rmse=rmse,
                        keyword_mae=keyword_mae, keyword_rmse=keyword_rmse,
                        n_forecasts=len(steps))


def diffusion_edges(model, floor_fraction=EDGE_FLOOR_FRACTION):
    """Location-group flows strong enough to report: entry d[i, to, from]
    is an edge from 'from' to 'to' within keyword group i when it exceeds
    the floor (a fraction of the largest entry; presentation only)."""
    d = model.trend.rd.diffusion
    top = float(d.max())
    if top <= 0.0:
        return []
    floor = floor_fraction * top
    edges = []
    for i, to, frm in np.argwhere(d > floor):
        edges.append({"key_group": int(i), "from_group": int(frm),
                      "to_group": int(to), "strength": float(d[i, to, frm])})
    return edges


def _model_payload(model, stream_length):
    nz = np.argwhere(model.outliers != 0)
    return {
        "ranks": list(model.ranks),
        "window_start": int(model.window_start),
        "window_length": int(model.window_length),
        "anchor": int(model.anchor),
        "growth": model.trend.rd.growth.tolist(),
        "diffusion": model.trend.rd.diffusion.tolist(),
        "init_state": model.trend.rd.init_state.tolist(),
        "key_factor": model.trend.key_factor.tolist(),
        "loc_factor": model.trend.loc_factor.tolist(),
        "seasonal": {
            "period": int(model.seasonal.period),
            "time_profiles": model.seasonal.time_profiles.tolist(),
            "key_weights": model.seasonal.key_weights.tolist(),
            "loc_weights": model.seasonal.loc_weights.tolist(),
        },
        "outliers": [[int(t), int(u), int(v), float(model.outliers[t, u, v])]
                     for t, u, v in nz],
        "cost_parts": model_cost_parts(model, stream_length),
        "diffusion_edges": diffusion_edges(model),
    }


def export_model(params, path, stream_length=None):
    """Serialize a model collection to deterministic JSON."""
    if not params.models:
        raise ValueError("refusing to export an empty model collection")
    if stream_length is None:
        stream_length = max(max(m.window_start + m.window_length for m in params.models),
                            params.activations[-1])
    payload = {
        "format": "rdcast-model",
        "version": 1,
        "stream_length": int(stream_length),
        "activations": [int(a) for a in params.activations],
        "models": [_model_payload(m, stream_length) for m in params.models],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def import_model(path):
    """Rebuild a model collection from :func:`export_model` output.

    Returns (params, stream_length); derived fields in the file (cost
    parts, edge lists) are recomputed on the next export, so the
    round-trip stays byte-identical.
    """
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "rdcast-model":
        raise DataFormatError(f"{path} is not a serialized model collection")
    params = FullParamSet()
    for doc, activation in zip(payload["models"], payload["activations"]):
        key_factor = np.array(doc["key_factor"], dtype=float)
        loc_factor = np.array(doc["loc_factor"], dtype=float)
        sdoc = doc["seasonal"]
        if len(sdoc["time_profiles"]):
            seasonal = SeasonalParams(
                np.array(sdoc["time_profiles"], dtype=float),
                np.array(sdoc["key_weights"], dtype=float),
                np.array(sdoc["loc_weights"], dtype=float),
                sdoc["period"])
        else:
            # rank 0 loses its shape through tolist(); rebuild from context
            seasonal = SeasonalParams.empty(key_factor.shape[1], loc_factor.shape[1],
                                            doc["window_length"], sdoc["period"])
        outliers = np.zeros((doc["window_length"], key_factor.shape[1],
                             loc_factor.shape[1]))
        for t, u, v, value in doc["outliers"]:
            outliers[t, u, v] = value
        rd = RDParams(np.array(doc["growth"], dtype=float),
                      np.array(doc["diffusion"], dtype=float),
                      np.array(doc["init_state"], dtype=float))
        model = ModelParams(trend=TrendParams(key_factor, loc_factor, rd),
                            seasonal=seasonal, outliers=outliers,
                            ranks=tuple(doc["ranks"]),
                            window_start=doc["window_start"],
                            window_length=doc["window_length"],
                            anchor=doc["anchor"])
        params.append(model, activation)
    return params, int(payload["stream_length"])


@dataclass
class OfflineView:
    """Just enough of a stream result to regenerate plot data offline."""

    params: FullParamSet
    fitted: np.ndarray
    forecasts: np.ndarray
    forecast_steps: np.ndarray

    @property
    def switch_steps(self):
        return list(self.params.activations[1:])

    def fitted_series(self):
        return self.fitted


def offline_view(params, stream_length, n_key, n_loc):
    """Approximate fitted series rebuilt from saved models alone.

    Each model covers observations from its final anchor up to the step
    before the next activation.  Anchors move forward with streaming
    refreshes, so observations before the first saved anchor have no
    covering model and stay NaN; only a live stream run records those.
    """
    fitted = np.full((stream_length, n_key, n_loc), np.nan)
    models, acts = params.models, params.activations
    for i, model in enumerate(models):
        lo = model.anchor if i == 0 else max(model.anchor, acts[i] - 1)
        hi = stream_length if i == len(models) - 1 else max(lo, acts[i + 1] - 1)
        hi = min(hi, stream_length)
        if hi > lo:
            fitted[lo:hi] = reconstruct_on(model, lo, hi - lo)
    return OfflineView(params=params, fitted=fitted,
                       forecasts=np.zeros((0, 1, n_key, n_loc)),
                       forecast_steps=np.array([], dtype=int))


def export_plotdata(result, data, out_dir, keywords=None, locations=None):
    """Write the delimited files behind the report figures.

    Files: latent core trajectories per model, factor matrices, diffusion
    edges, the fit/forecast vs truth series, and switch timestamps.
    Returns {name: path}.
    """
    data = np.asarray(data, dtype=float)
    n_steps, n_key, n_loc = data.shape
    if keywords is None:
        keywords = [f"k{u}" for u in range(n_key)]
    if locations is None:
        locations = [f"l{v}" for v in range(n_loc)]
    os.makedirs(out_dir, exist_ok=True)
    params = result.params
    paths = {}

    paths["core_trajectories"] = os.path.join(out_dir, "core_trajectories.csv")
    with open(paths["core_trajectories"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "step", "key_group", "loc_group", "value"])
        for index, model in enumerate(params.models):
            traj = generate(model.trend.rd, model.window_length)
            for t in range(model.window_length):
                for i in range(traj.shape[1]):
                    for j in range(traj.shape[2]):
                        writer.writerow([index, model.anchor + t, i, j,
                                         repr(float(traj[t, i, j]))])

    paths["factors"] = os.path.join(out_dir, "factors.csv")
    with open(paths["factors"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "factor", "group", "label", "weight"])
        for index, model in enumerate(params.models):
            for i, row in enumerate(model.trend.key_factor):
                for u, weight in enumerate(row):
                    writer.writerow([index, "key", i, keywords[u], repr(float(weight))])
            for j, row in enumerate(model.trend.loc_factor):
                for v, weight in enumerate(row):
                    writer.writerow([index, "loc", j, locations[v], repr(float(weight))])

    paths["diffusion_edges"] = os.path.join(out_dir, "diffusion_edges.csv")
    with open(paths["diffusion_edges"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "key_group", "from_group", "to_group", "strength"])
        for index, model in enumerate(params.models):
            for edge in diffusion_edges(model):
                writer.writerow([index, edge["key_group"], edge["from_group"],
                                 edge["to_group"], repr(edge["strength"])])

    fitted = result.fitted_series()
    step_of = {int(s): i for i, s in enumerate(result.forecast_steps)}
    paths["series"] = os.path.join(out_dir, "series.csv")
    with open(paths["series"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "keyword", "location", "truth", "fitted",
                         "residual", "forecast_h1"])
        for t in range(n_steps):
            log_idx = step_of.get(t)
            for u in range(n_key):
                for v in range(n_loc):
                    one_ahead = ("" if log_idx is None
                                 else repr(float(result.forecasts[log_idx, 0, u, v])))
                    fit_value = (float(fitted[t, u, v])
                                 if t < fitted.shape[0] else None)
                    if fit_value is not None and math.isnan(fit_value):
                        fit_value = None
                    writer.writerow([
                        t, keywords[u], locations[v], repr(float(data[t, u, v])),
                        "" if fit_value is None else repr(fit_value),
                        "" if fit_value is None else repr(float(data[t, u, v]) - fit_value),
                        one_ahead,
                    ])

    paths["switches"] = os.path.join(out_dir, "switches.csv")
    with open(paths["switches"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "activation_step", "rank_key", "rank_loc",
                         "rank_seasonal"])
        for index, (model, step) in enumerate(zip(params.models, params.activations)):
            writer.writerow([index, step, *model.ranks])

    return paths


def read_forecast_log(path):
    """Read a forecasts.csv written by the CLI back into arrays."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["step", "horizon", "keyword", "location", "value"]:
            raise DataFormatError(f"unexpected forecast log header {header}", row=1)
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append((int(row[0]), int(row[1]), row[2], row[3], float(row[4])))
            except ValueError as exc:
                raise DataFormatError(str(exc), row=row_no) from None
    if not rows:
        raise DataFormatError(f"forecast log {path} holds no rows")
    steps = sorted({r[0] for r in rows})
    horizons = sorted({r[1] for r in rows})
    if horizons != list(range(1, len(horizons) + 1)):
        raise DataFormatError(f"forecast log horizons {horizons} are not 1..H")
    keywords = sorted({r[2] for r in rows})
    locations = sorted({r[3] for r in rows})
    step_index = {s: i for i, s in enumerate(steps)}
    kw_index = {k: i for i, k in enumerate(keywords)}
    loc_index = {l: i for i, l in enumerate(locations)}
    out = np.full((len(steps), len(horizons), len(keywords), len(locations)), np.nan)
    for s, h, k, l, value in rows:
        out[step_index[s], h - 1, kw_index[k], loc_index[l]] = value
    if np.isnan(out).any():
        raise DataFormatError(f"forecast log {path} is missing cells")
    return out, np.array(steps, dtype=int), keywords, locations


def write_forecast_log(forecasts, forecast_steps, keywords, locations, path):
    """Write forecasts as long-format rows, one per (step, horizon, cell)."""
    forecasts = np.asarray(forecasts, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "horizon", "keyword", "location", "value"])
        for i, step in enumerate(forecast_steps):
            for h in range(forecasts.shape[1]):
                for u, kw in enumerate(keywords):
                    for v, loc in enumerate(locations):
                        writer.writerow([int(step), h + 1, kw, loc,
                                         repr(float(forecasts[i, h, u, v]))])
    return path
