"""Command-line front end.

Subcommands:
  fit       grid-search one model on the most recent window, save it
  stream    consume a whole stream, saving models, forecasts, plot data,
            and report figures
  forecast  project a saved model past the end of its stream
  eval      score a forecast log against realized values
  export    regenerate plot data and figures from a saved model

Exit codes: 0 success, 2 malformed input files, 3 bad dimensions or
ranks, 4 numeric failure (divergence, unusable evaluation), 1 anything
else.  The only environment variable consulted is RDCAST_OUT_DIR, an
output-directory fallback for when --out-dir is not given.
"""

import argparse
import json
import os
import sys

import numpy as np

from .dataio import (evaluate, export_model, export_plotdata, import_model,
                     ingest, offline_view, read_forecast_log,
                     write_forecast_log, _read_meta)
from .engine import StreamConfig, forecast, initialize, run_stream
from .errors import (DataFormatError, DivergenceError, EvaluationError,
                     InitializationError, StreamModelError)
from .figures import render_all
from .mdl import model_cost_parts, single_model_cost


def _parse_rank_grid(text):
    try:
        parts = tuple(tuple(int(x) for x in chunk.split(","))
                      for chunk in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"bad rank grid {text!r}; expected colon-separated integer lists "
            "like 2,3:2,3:0,1,2")
    if len(parts) != 3 or not all(parts):
        raise argparse.ArgumentTypeError(
            f"rank grid needs three non-empty axes, got {text!r}")
    return parts


def _add_model_flags(p):
    p.add_argument("--window", type=int, default=104,
                   help="sliding window length (default 104)")
    p.add_argument("--horizon", type=int, default=13,
                   help="forecast steps ahead (default 13)")
    p.add_argument("--period", type=int, default=None,
                   help="seasonal period; defaults to the sidecar value")
    p.add_argument("--rank-grid", type=_parse_rank_grid, default=None,
                   metavar="GRID", help="starting-rank grid, e.g. 2,3:2,3:0,1,2")
    p.add_argument("--refit-stride", type=int, default=1,
                   help="refit every this many steps (default 1)")
    p.add_argument("--seed", type=int, default=0)


def _add_out_dir(p):
    p.add_argument("--out-dir", default=None,
                   help="output directory (falls back to RDCAST_OUT_DIR, "
                        "then the working directory)")


def _resolve_out_dir(args):
    out = args.out_dir or os.environ.get("RDCAST_OUT_DIR") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _config(args, period):
    kwargs = dict(window=args.window, horizon=args.horizon, period=period,
                  refit_stride=args.refit_stride, seed=args.seed)
    if args.rank_grid is not None:
        kwargs["rank_grid"] = args.rank_grid
    return StreamConfig(**kwargs)


def _print_cost_summary(model, window, stream_length):
    parts = model_cost_parts(model, stream_length)
    breakdown = single_model_cost(window, model, stream_length)
    for name in sorted(parts):
        print(f"  {name:>13}: {parts[name]:12.1f} bits")
    print(f"  model {breakdown.model_bits:.1f} + coding {breakdown.coding_bits:.1f}"
          f" = {breakdown.total_bits:.1f} bits")


def cmd_fit(args):
    data = ingest(args.data, args.meta)
    n = data.values.shape[0]
    if args.window > n:
        raise ValueError(f"window {args.window} exceeds the {n}-step stream")
    config = _config(args, args.period or data.period)
    start = n - args.window
    params, evals = initialize(data.values[start:], config,
                               window_start=start, stream_length=n)
    out_dir = _resolve_out_dir(args)
    path = export_model(params, os.path.join(out_dir, "model.json"),
                        stream_length=n)
    model = params.active_model
    print(f"fitted ranks {model.ranks} on steps [{start}, {n}) "
          f"({len(evals)} candidates)")
    _print_cost_summary(model, data.values[start:], n)
    print(f"model written to {path}")
    return 0


def cmd_stream(args):
    data = ingest(args.data, args.meta)
    config = _config(args, args.period or data.period)
    result = run_stream(data.values, config)
    n = data.values.shape[0]
    out_dir = _resolve_out_dir(args)

    model_path = export_model(result.params, os.path.join(out_dir, "model.json"),
                              stream_length=n)
    forecast_path = write_forecast_log(result.forecasts, result.forecast_steps,
                                       data.keywords, data.locations,
                                       os.path.join(out_dir, "forecasts.csv"))
    plot_paths = export_plotdata(result, data.values, out_dir,
                                 keywords=data.keywords, locations=data.locations)

    covered = [i for i, step in enumerate(result.forecast_steps)
               if step + config.horizon <= n]
    report = None
    if covered:
        report = evaluate(result.forecasts[covered],
                          result.forecast_steps[covered], data.values)
    figure_paths = render_all(result, data.values, out_dir, report=report,
                              keywords=data.keywords, locations=data.locations)

    print(f"streamed {n} steps: {len(result.params.models)} models, "
          f"switches at {result.switch_steps or 'none'}")
    if report is not None:
        print(report.format_table(keywords=data.keywords))
    for path in [model_path, forecast_path, *plot_paths.values(),
                 *figure_paths.values()]:
        print(f"wrote {path}")
    return 0


def cmd_forecast(args):
    params, stream_length = import_model(args.model)
    keywords, locations, _, _ = _read_meta(args.meta)
    model = params.active_model
    if model.n_key != len(keywords) or model.n_loc != len(locations):
        raise ValueError(
            f"model covers {model.n_key} keywords x {model.n_loc} locations "
            f"but the sidecar lists {len(keywords)} x {len(locations)}")
    ahead, _ = forecast(params, stream_length, args.horizon)
    out_dir = _resolve_out_dir(args)
    path = write_forecast_log(ahead[None], [stream_length], keywords, locations,
                              os.path.join(out_dir, "forecasts.csv"))
    print(f"forecast {args.horizon} steps from step {stream_length}")
    print(f"wrote {path}")
    return 0


def cmd_eval(args):
    forecasts, steps, log_keywords, log_locations = read_forecast_log(args.forecasts)
    data = ingest(args.data, args.meta)
    if sorted(log_keywords) != sorted(data.keywords) \
            or sorted(log_locations) != sorted(data.locations):
        raise DataFormatError(
            "forecast log labels do not match the stream sidecar")
    # the log sorts labels; realign to sidecar order before comparing cells
    forecasts = forecasts[:, :, [log_keywords.index(k) for k in data.keywords], :]
    forecasts = forecasts[:, :, :, [log_locations.index(l) for l in data.locations]]

    n = data.values.shape[0]
    horizon = forecasts.shape[1]
    covered = steps + horizon <= n
    if not covered.any():
        raise EvaluationError(
            f"no logged forecast is fully realized within {n} observations")
    dropped = int((~covered).sum())
    report = evaluate(forecasts[covered], steps[covered], data.values)
    if dropped:
        print(f"dropped {dropped} forecast origins with unrealized targets")
    print(report.format_table(keywords=data.keywords))

    out_dir = _resolve_out_dir(args)
    path = os.path.join(out_dir, "metrics.csv")
    with open(path, "w") as fh:
        fh.write("horizon,mae,rmse\n")
        for i, h in enumerate(report.horizons):
            fh.write(f"{h},{report.mae[i]!r},{report.rmse[i]!r}\n")
    print(f"wrote {path}")
    return 0


def cmd_export(args):
    params, stream_length = import_model(args.model)
    data = ingest(args.data, args.meta)
    if data.values.shape[0] < stream_length:
        raise ValueError(
            f"model was fitted on {stream_length} steps but the stream "
            f"holds only {data.values.shape[0]}")
    view = offline_view(params, stream_length,
                        data.values.shape[1], data.values.shape[2])
    truth = data.values[:stream_length]
    out_dir = _resolve_out_dir(args)
    plot_paths = export_plotdata(view, truth, out_dir,
                                 keywords=data.keywords, locations=data.locations)
    figure_paths = render_all(view, truth, out_dir,
                              keywords=data.keywords, locations=data.locations)
    for path in [*plot_paths.values(), *figure_paths.values()]:
        print(f"wrote {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rdcast",
        description="streaming tensor forecasting over (time, keyword, location) counts")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one model on the latest window")
    p.add_argument("data", help="stream rows (csv)")
    p.add_argument("meta", help="stream sidecar (json)")
    _add_model_flags(p)
    _add_out_dir(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("stream", help="run the full streaming loop with reports")
    p.add_argument("data")
    p.add_argument("meta")
    _add_model_flags(p)
    _add_out_dir(p)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("forecast", help="forecast ahead from a saved model")
    p.add_argument("model", help="saved model collection (json)")
    p.add_argument("meta", help="stream sidecar naming the axes")
    p.add_argument("--horizon", type=int, default=13)
    _add_out_dir(p)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("eval", help="score a forecast log against a stream")
    p.add_argument("forecasts", help="forecast log (csv)")
    p.add_argument("data")
    p.add_argument("meta")
    _add_out_dir(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="regenerate plot data and figures")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("meta")
    _add_out_dir(p)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DataFormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, EvaluationError, InitializationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (StreamModelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # pragma: no cover - last resort
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
