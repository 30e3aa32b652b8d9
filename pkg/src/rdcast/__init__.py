"""Streaming tensor forecasting with latent reaction-diffusion trends.

The package decomposes a sliding window of a (time x keyword x location)
count stream into three additive parts: a smooth trend driven by a small
reaction-diffusion system over latent groups, a seasonal low-rank part,
and a sparse outlier tensor.  Model structure (latent ranks, regime
switches, outlier support) is chosen by two-part code length.
"""

__version__ = "0.1.0"

from .dataio import (
    MetricReport,
    StreamData,
    evaluate,
    export_model,
    export_plotdata,
    import_model,
    ingest,
    write_stream,
)
from .diffusion import RDParams, generate
from .engine import StreamConfig, StreamResult, forecast, run_stream
from .errors import (
    DataFormatError,
    DimensionMismatchError,
    DivergenceError,
    EvaluationError,
    InitializationError,
    RankTooLargeError,
    StreamModelError,
    WindowTooShortError,
)
from .estimator import model_estimation
from .figures import render_all
from .model import FullParamSet, ModelParams, reconstruct_on
from .synth import synth_stream

__all__ = [
    "__version__",
    "StreamModelError",
    "DimensionMismatchError",
    "RankTooLargeError",
    "WindowTooShortError",
    "InitializationError",
    "DivergenceError",
    "DataFormatError",
    "EvaluationError",
    "RDParams",
    "generate",
    "ModelParams",
    "FullParamSet",
    "reconstruct_on",
    "model_estimation",
    "StreamConfig",
    "StreamResult",
    "run_stream",
    "forecast",
    "StreamData",
    "MetricReport",
    "ingest",
    "write_stream",
    "evaluate",
    "export_model",
    "import_model",
    "export_plotdata",
    "render_all",
    "synth_stream",
]
