"""Window estimation: alternating refinement of the three additive parts.

One call fits a full model to one window.  The seasonal part is split off
first (periodic decomposition, then CP compression), the trend part is
seeded with a nonnegative Tucker start and refined by alternating
dynamics fits with factor refreshes, and the outlier set is re-chosen
each pass by code-length gain.  Every outer pass must not increase the
unexplained residual; a pass that would is rolled back and the loop
stops, so the recorded fit history is nonincreasing by construction.
"""

import math

import numpy as np

from .diffusion import RDParams, fit_lm, generate
from .errors import RankTooLargeError
from .mdl import DEFAULT_QUANT, FLOAT_BITS, element_bits, fit_encoding, log_star
from .model import ModelParams, outliers_on, seasonal_on
from .seasonal import (SeasonalParams, cp_als, reconstruct_seasonal, stl_split,
                       update_seasonal_factor)
from .tensor import validate_tensor
from .trend import (TrendParams, normalize_key_rows, ntd_init,
                    project_to_observed, update_trend_factor)

# prefix penalties log_star(m) - log_star(0), cached per flattened size
_PENALTY_CACHE = {}


def _count_penalties(size):
    cached = _PENALTY_CACHE.get(size)
    if cached is None:
        base = log_star(0)
        cached = np.array([log_star(m) - base for m in range(1, size + 1)])
        _PENALTY_CACHE[size] = cached
    return cached


def sparsify_outliers(residual, stream_length, prior=None, quantization=DEFAULT_QUANT):
    """Keep the residual cells whose explicit storage shortens the code.

    A stored cell pays its index over the whole stream plus a float, and
    the count itself is sent with the universal integer code; in exchange
    its residual is coded as zero.  Net savings are sorted and the best
    prefix is kept, which is optimal over all subsets because any m-cell
    set is dominated by the m largest savings.  ``prior`` masks the
    previously flagged cells out of the Gaussian fit so old spikes do not
    inflate the scale.
    """
    residual = np.asarray(residual, dtype=float)
    length, n_key, n_loc = residual.shape
    exclude = None if prior is None else np.asarray(prior) != 0
    enc = fit_encoding(residual, quantization, exclude=exclude)
    bits = element_bits(residual, enc)
    zero_bits = float(element_bits(np.zeros(1), enc)[0])
    store = (math.log2(stream_length) + math.log2(n_key) + math.log2(n_loc)
             + FLOAT_BITS)
    net = (bits - zero_bits - store).ravel()
    order = np.argsort(net)[::-1]
    total = np.cumsum(net[order]) - _count_penalties(net.size)
    best = int(np.argmax(total))
    out = np.zeros(residual.size)
    if total[best] > 0.0:
        keep = order[:best + 1]
        out[keep] = residual.ravel()[keep]
    return out.reshape(residual.shape)


def _misfit(window, trend_recon, seasonal_recon, outliers):
    return float(np.linalg.norm(window - trend_recon - seasonal_recon - outliers))


def model_estimation(window, ranks, window_start=0, period=52, seed=0,
                     max_outer=20, tol=1e-4, stream_length=None,
                     quantization=DEFAULT_QUANT, lm_max_iter=40):
    """Fit trend dynamics, seasonal factors, and outliers to one window.

    ranks : (rank_key, rank_loc, rank_seasonal); a zero seasonal rank
        skips the periodic split entirely, so short windows are fine.
    window_start : absolute stream index of the window's first step; the
        fitted model is anchored there.
    stream_length : steps observed so far, used to price outlier indices;
        defaults to the window's end.

    Returns a :class:`ModelParams` whose diagnostics carry the fit
    history (unexplained residual norm per outer pass, nonincreasing),
    iteration counts, and convergence flags.
    """
    window = np.asarray(window, dtype=float)
    validate_tensor(window, "window")
    length, n_key, n_loc = window.shape
    rank_key, rank_loc, rank_seasonal = (int(r) for r in ranks)
    if rank_seasonal > min(length, n_key, n_loc):
        raise RankTooLargeError(
            f"seasonal rank {rank_seasonal} exceeds the smallest window "
            f"dimension {min(length, n_key, n_loc)}; reduce the rank"
        )
    if stream_length is None:
        stream_length = window_start + length

    if rank_seasonal > 0:
        _, seasonal_raw, _ = stl_split(window, period)
        seasonal = cp_als(seasonal_raw, rank_seasonal, period=period, seed=seed)
    else:
        seasonal = SeasonalParams.empty(n_key, n_loc, length, period)
    seasonal_recon = reconstruct_seasonal(seasonal)

    # raises RankTooLargeError when the trend ranks exceed the mode sizes
    key_factor, loc_factor, core0 = ntd_init(window - seasonal_recon,
                                             rank_key, rank_loc, seed=seed)
    rd = RDParams(growth=np.zeros((rank_key, rank_loc)),
                  diffusion=np.zeros((rank_key, rank_loc, rank_loc)),
                  init_state=np.clip(core0[0], 0.0, None))
    outliers = np.zeros_like(window)

    trend_recon = project_to_observed(generate(rd, length), key_factor, loc_factor)
    fit_history = [_misfit(window, trend_recon, seasonal_recon, outliers)]
    lm_iterations = 0
    converged = False
    reverted = False

    for _ in range(max_outer):
        snapshot = (rd.copy(), key_factor.copy(), loc_factor.copy(),
                    seasonal.copy(), outliers.copy(), trend_recon.copy(),
                    seasonal_recon.copy())

        target = window - seasonal_recon - outliers
        fit = fit_lm(target, key_factor, loc_factor, rd, max_iter=lm_max_iter)
        rd = fit.params
        lm_iterations += fit.iterations
        core = generate(rd, length)

        # multiplicative refreshes are heuristic on a signed target, so
        # each factor keeps its update only when the misfit drops
        base = float(np.sum((target - project_to_observed(core, key_factor, loc_factor)) ** 2))
        cand = update_trend_factor(target, core, key_factor, loc_factor, "key")
        err = float(np.sum((target - project_to_observed(core, cand, loc_factor)) ** 2))
        if err < base:
            key_factor, base = cand, err
        cand = update_trend_factor(target, core, key_factor, loc_factor, "loc")
        err = float(np.sum((target - project_to_observed(core, key_factor, cand)) ** 2))
        if err < base:
            loc_factor = cand

        # rescale keyword rows to unit max; the inverse lands on the core
        # and the initial state, exact because each keyword group's state
        # row evolves linearly and independently of the others
        key_factor, core, init_state = normalize_key_rows(key_factor, core, rd.init_state)
        rd = RDParams(rd.growth.copy(), rd.diffusion.copy(), init_state)
        trend_recon = project_to_observed(core, key_factor, loc_factor)

        if rank_seasonal > 0:
            s_target = window - trend_recon - outliers
            for mode in ("time", "key", "loc"):
                seasonal = update_seasonal_factor(s_target, seasonal, mode)
            seasonal_recon = reconstruct_seasonal(seasonal)

        resid = window - trend_recon - seasonal_recon
        outliers = sparsify_outliers(resid, stream_length, prior=outliers,
                                     quantization=quantization)

        err = _misfit(window, trend_recon, seasonal_recon, outliers)
        if err > fit_history[-1] + 1e-12:
            (rd, key_factor, loc_factor, seasonal, outliers,
             trend_recon, seasonal_recon) = snapshot
            reverted = True
            break
        gain = fit_history[-1] - err
        fit_history.append(err)
        if gain <= tol * max(fit_history[0], 1e-12):
            converged = True
            break

    return ModelParams(
        trend=TrendParams(key_factor, loc_factor, rd),
        seasonal=seasonal,
        outliers=outliers,
        ranks=(rank_key, rank_loc, rank_seasonal),
        window_start=window_start,
        window_length=length,
        anchor=window_start,
        diagnostics={
            "fit_history": fit_history,
            "outer_iterations": len(fit_history) - 1,
            "lm_iterations": lm_iterations,
            "converged": converged,
            "reverted": reverted,
        },
    )


def refresh_init_state(model, window, window_start, lm_max_iter=40):
    """Re-anchor a kept model on the current window.

    Only the initial state is refitted; growth, diffusion, factors,
    seasonal weights, and stored outliers stay frozen.  The state
    propagated from the old anchor seeds the fit, so an already accurate
    model converges immediately.
    """
    window = np.asarray(window, dtype=float)
    length = window.shape[0]
    offset = window_start - model.anchor
    if offset < 0:
        raise ValueError(
            f"cannot re-anchor at {window_start}, before current anchor {model.anchor}"
        )
    rd = model.trend.rd
    state0 = generate(rd, offset + 1)[-1]
    target = (window - seasonal_on(model, window_start, length)
              - outliers_on(model, window_start, length))
    fit = fit_lm(target, model.trend.key_factor, model.trend.loc_factor,
                 RDParams(rd.growth.copy(), rd.diffusion.copy(), np.clip(state0, 0.0, None)),
                 free=("init_state",), max_iter=lm_max_iter)
    out = model.copy()
    out.trend = TrendParams(model.trend.key_factor.copy(),
                            model.trend.loc_factor.copy(), fit.params)
    out.anchor = window_start
    out.diagnostics = dict(model.diagnostics, refreshed_at=window_start)
    return out
