"""Synthetic streams with known ground truth.

Builds observed tensors from the same additive structure the estimator
assumes: grouped nonnegative factors over a latent trajectory, a low-rank
periodic part, injected spikes, and Gaussian noise.  An optional regime
shift swaps the growth rates mid-stream while keeping the latent state
continuous, which is the event a stream monitor is expected to flag.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .diffusion import RDParams, generate
from .seasonal import SeasonalParams, reconstruct_seasonal
from .trend import project_to_observed


def grouped_factor(rng, rank, n, base_range=(0.05, 0.25), bump_range=(0.7, 1.0)):
    """Nonnegative (rank, n) factor with one dominant group per column."""
    factor = rng.uniform(*base_range, size=(rank, n))
    for col in range(n):
        factor[col % rank, col] += rng.uniform(*bump_range)
    return factor


@dataclass
class SynthStream:
    data: np.ndarray
    trend: np.ndarray
    seasonal: np.ndarray
    outliers: np.ndarray
    noise: np.ndarray
    shift_step: Optional[int]
    before: RDParams
    after: Optional[RDParams]
    key_factor: np.ndarray
    loc_factor: np.ndarray
    spike_cells: list


def synth_stream(n_steps=300, n_key=6, n_loc=8, ranks=(2, 2, 1), period=52,
                 seed=0, noise_scale=0.01, seasonal_amplitude=0.15,
                 spike_times=(), spike_magnitude=1.0, shift_step=None,
                 shift_kind="flip", growth_scale=0.012, diffusion_scale=0.02,
                 growth=None, diffusion=None, flip_cells=None,
                 factor_base_range=(0.05, 0.25)):
    """Draw one stream; all randomness comes from ``seed``.

    The regime shift at ``shift_step`` keeps the latent state continuous
    and bends the trajectory: kind "flip" negates growth rates (all of
    them, or just ``flip_cells``), kind "onset" starts from zero growth
    (diffusion mixing only) and switches the drawn rates on.  Spikes land
    on one random cell per listed step with alternating sign.  Explicit
    ``growth``/``diffusion`` arrays replace the drawn ones; the draws
    still happen first so a given seed always yields the same stream
    regardless of overrides.
    """
    rank_key, rank_loc, rank_seasonal = ranks
    rng = np.random.default_rng(seed)
    key_factor = grouped_factor(rng, rank_key, n_key, base_range=factor_base_range)
    loc_factor = grouped_factor(rng, rank_loc, n_loc, base_range=factor_base_range)

    drawn_growth = rng.uniform(-1.0, 1.0, size=(rank_key, rank_loc)) * growth_scale
    drawn_diffusion = (rng.uniform(0.0, 1.0, size=(rank_key, rank_loc, rank_loc))
                       * diffusion_scale)
    drawn_diffusion *= 1.0 - np.eye(rank_loc)
    init_state = rng.uniform(0.5, 1.5, size=(rank_key, rank_loc))
    growth = drawn_growth if growth is None else np.asarray(growth, dtype=float)
    diffusion = (drawn_diffusion if diffusion is None
                 else np.asarray(diffusion, dtype=float))
    if shift_kind == "onset":
        before = RDParams(np.zeros_like(growth), diffusion, init_state)
        shifted_growth = growth
    elif shift_kind == "flip":
        before = RDParams(growth, diffusion, init_state)
        shifted_growth = growth.copy()
        if flip_cells is None:
            shifted_growth = -shifted_growth
        else:
            for i, j in flip_cells:
                shifted_growth[i, j] = -shifted_growth[i, j]
    else:
        raise ValueError(f"shift_kind must be 'flip' or 'onset', got {shift_kind!r}")

    after = None
    if shift_step is None:
        core = generate(before, n_steps)
    else:
        head = generate(before, shift_step + 1)
        after = RDParams(shifted_growth, diffusion.copy(), head[-1])
        core = np.concatenate([head[:-1], generate(after, n_steps - shift_step)])
    trend = project_to_observed(core, key_factor, loc_factor)

    if rank_seasonal > 0:
        phases = rng.uniform(0.0, 2.0 * np.pi, size=rank_seasonal)
        t = np.arange(n_steps)
        profiles = seasonal_amplitude * np.sin(
            2.0 * np.pi * t[None, :] / period + phases[:, None])
        seasonal = reconstruct_seasonal(SeasonalParams(
            profiles,
            rng.uniform(0.3, 1.0, size=(rank_seasonal, n_key)),
            rng.uniform(0.3, 1.0, size=(rank_seasonal, n_loc)),
            period,
        ))
    else:
        seasonal = np.zeros((n_steps, n_key, n_loc))

    outliers = np.zeros((n_steps, n_key, n_loc))
    spike_cells = []
    for idx, step in enumerate(spike_times):
        cell = (int(step), int(rng.integers(n_key)), int(rng.integers(n_loc)))
        outliers[cell] = spike_magnitude * (1.0 if idx % 2 == 0 else -1.0)
        spike_cells.append(cell)

    noise = rng.normal(0.0, noise_scale, size=trend.shape)
    return SynthStream(
        data=trend + seasonal + outliers + noise,
        trend=trend, seasonal=seasonal, outliers=outliers, noise=noise,
        shift_step=shift_step, before=before, after=after,
        key_factor=key_factor, loc_factor=loc_factor, spike_cells=spike_cells,
    )
