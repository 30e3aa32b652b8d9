"""Nonnegative observation factors that tie latent dynamics to the data.

The trend part of a window is a latent core (time x key-groups x
loc-groups) expanded through two nonnegative factors, one mapping keyword
groups to observed keywords and one mapping location groups to observed
locations.  Because expansion is linear, projecting the core's time
derivative equals differentiating the projected reconstruction, which is
what makes the latent dynamics readable on the observed side.

Factors are refreshed with multiplicative updates (numerator/denominator
floored at ``EPS``), which keep every entry strictly positive; an exact
reconstruction is a fixed point.  ``ntd_init`` produces the starting
factors with a plain multiplicative nonnegative Tucker-2 decomposition in
which the time mode stays uncompressed.
"""

from dataclasses import dataclass

import numpy as np

from .diffusion import RDParams
from .errors import DimensionMismatchError, RankTooLargeError
from .tensor import mode_product, unfold

EPS = 1e-12


@dataclass
class TrendParams:
    """Latent dynamics plus the two nonnegative expansion factors.

    key_factor : (dk, k); loc_factor : (dl, l); rd carries the dynamics
    whose generated core has matching latent shape.
    """

    key_factor: np.ndarray
    loc_factor: np.ndarray
    rd: RDParams

    def __post_init__(self):
        self.key_factor = np.asarray(self.key_factor, dtype=float)
        self.loc_factor = np.asarray(self.loc_factor, dtype=float)

    def validate(self):
        dk, dl = self.rd.growth.shape
        if self.key_factor.shape[0] != dk or self.loc_factor.shape[0] != dl:
            raise DimensionMismatchError(
                f"factor ranks {self.key_factor.shape[0]}x{self.loc_factor.shape[0]} do not "
                f"match dynamics ranks {dk}x{dl}"
            )
        if (self.key_factor < 0).any() or (self.loc_factor < 0).any():
            raise DimensionMismatchError("trend factors must be nonnegative")
        self.rd.validate()
        return self

    def copy(self):
        return TrendParams(self.key_factor.copy(), self.loc_factor.copy(), self.rd.copy())


def project_to_observed(core, key_factor, loc_factor):
    """Expand a (L, dk, dl) core to the observed (L, k, l) grid."""
    return np.einsum("tij,iu,jv->tuv", np.asarray(core, dtype=float),
                     key_factor, loc_factor, optimize=True)


def update_trend_factor(target, core, key_factor, loc_factor, mode):
    """One multiplicative refresh of the keyword or location factor.

    Minimizes the observed-space misfit of target ~ expand(core) in the
    chosen mode with everything else fixed.  Numerator and denominator are
    floored at ``EPS``, so nonnegative input factors stay strictly
    positive and an exact fit is left unchanged.
    """
    if mode == "key":
        expanded = mode_product(core, loc_factor, "loc", transpose=True)
        factor = key_factor
    elif mode == "loc":
        expanded = mode_product(core, key_factor, "key", transpose=True)
        factor = loc_factor
    else:
        raise DimensionMismatchError(f"mode must be 'key' or 'loc', got {mode!r}")
    basis = unfold(expanded, mode)
    data = unfold(target, mode)
    numer = np.maximum(EPS, basis @ data.T)
    denom = np.maximum(EPS, (basis @ basis.T) @ factor)
    return np.maximum(factor * numer / denom, EPS)


def normalize_key_rows(key_factor, core, init_state):
    """Rescale every keyword-factor row to unit maximum.

    The inverse scale moves into the matching core slice and initial-state
    row, so the observed reconstruction and the generated trajectory are
    unchanged (the dynamics are linear in each keyword group's state row).
    """
    scale = key_factor.max(axis=1)
    scale = np.maximum(scale, EPS)
    return (key_factor / scale[:, None],
            core * scale[None, :, None],
            init_state * scale[:, None])


def _mu_factor_block(target, core, key_factor, loc_factor, mode, inner):
    # per-block subproblem is convex, so a handful of multiplicative steps
    # with the basis gram hoisted pushes it close to its optimum
    if mode == "key":
        basis = unfold(mode_product(core, loc_factor, "loc", transpose=True), "key")
        factor = key_factor
    else:
        basis = unfold(mode_product(core, key_factor, "key", transpose=True), "loc")
        factor = loc_factor
    data = unfold(target, mode)
    gram = basis @ basis.T
    numer = np.maximum(EPS, basis @ data.T)
    for _ in range(inner):
        factor = np.maximum(factor * numer / np.maximum(EPS, gram @ factor), EPS)
    return factor


def ntd_init(window, rank_key, rank_loc, n_iters=200, seed=0, tol=1e-6, inner=10):
    """Nonnegative Tucker-2 start for the trend part.

    The window is clipped at zero; the time mode is not compressed, so the
    fitted core is (L, rank_key, rank_loc).  Each sweep refreshes every
    block with ``inner`` multiplicative steps, which keeps the fit error
    nonincreasing while converging far faster than single steps.  Returns
    ``(key_factor, loc_factor, core)``.
    """
    x = np.clip(np.asarray(window, dtype=float), 0.0, None)
    if x.ndim != 3:
        raise DimensionMismatchError(f"expected a 3-way window, got shape {x.shape}")
    length, n_key, n_loc = x.shape
    if rank_key < 1 or rank_loc < 1:
        raise ValueError(f"ranks must be >= 1, got ({rank_key}, {rank_loc})")
    if rank_key > n_key or rank_loc > n_loc:
        raise RankTooLargeError(
            f"ranks ({rank_key}, {rank_loc}) exceed mode sizes ({n_key}, {n_loc}); "
            "reduce the rank"
        )
    if not x.any():
        return (np.full((rank_key, n_key), EPS), np.full((rank_loc, n_loc), EPS),
                np.zeros((length, rank_key, rank_loc)))

    rng = np.random.default_rng(seed)
    key_factor = rng.uniform(0.1, 1.0, size=(rank_key, n_key))
    loc_factor = rng.uniform(0.1, 1.0, size=(rank_loc, n_loc))
    core = rng.uniform(0.1, 1.0, size=(length, rank_key, rank_loc))
    norm = np.linalg.norm(x)
    prev = np.inf
    for _ in range(n_iters):
        key_factor = _mu_factor_block(x, core, key_factor, loc_factor, "key", inner)
        loc_factor = _mu_factor_block(x, core, key_factor, loc_factor, "loc", inner)
        back = np.maximum(EPS, mode_product(mode_product(x, key_factor, "key"),
                                            loc_factor, "loc"))
        gram_key = key_factor @ key_factor.T
        gram_loc = loc_factor @ loc_factor.T
        for _ in range(inner):
            gram = mode_product(mode_product(core, gram_key, "key"), gram_loc, "loc")
            core = core * back / np.maximum(EPS, gram)
        err = np.linalg.norm(x - project_to_observed(core, key_factor, loc_factor))
        if prev - err <= tol * max(norm, 1e-12):
            break
        prev = err
    return key_factor, loc_factor, core
