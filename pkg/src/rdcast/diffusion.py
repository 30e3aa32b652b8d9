"""Latent trend dynamics and their least-squares fit.

Each latent keyword group i carries one state value per latent location
group j.  The states evolve by a reaction-diffusion rule: a per-cell
exponential growth/decay term plus pairwise diffusion between location
groups of the same keyword group,

    d w[i,j] / dt = growth[i,j] * w[i,j]
                    + sum_j' diffusion[i,j,j'] * (w[i,j'] - w[i,j]).

The system is linear in the state, so the classical fourth-order
Runge-Kutta step with unit step size collapses to one constant matrix per
keyword group (the degree-4 Taylor polynomial of the block generator).
``generate`` iterates that map; ``fit_lm`` fits the parameters to an
observed-space target by Levenberg-Marquardt with forward-difference
Jacobians.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, DivergenceError

STATE_GUARD = 1e12

_FREE_ALL = ("growth", "diffusion", "init_state")


@dataclass
class RDParams:
    """Parameters of the latent reaction-diffusion system.

    growth : (dk, dl) signed rates, one per latent cell.
    diffusion : (dk, dl, dl) nonnegative flow strengths between location
        groups of one keyword group; the diagonal is structurally zero.
    init_state : (dk, dl) nonnegative state at the start of the window.
    """

    growth: np.ndarray
    diffusion: np.ndarray
    init_state: np.ndarray

    def __post_init__(self):
        self.growth = np.asarray(self.growth, dtype=float)
        self.diffusion = np.asarray(self.diffusion, dtype=float)
        self.init_state = np.asarray(self.init_state, dtype=float)

    @property
    def n_key_groups(self):
        return self.growth.shape[0]

    @property
    def n_loc_groups(self):
        return self.growth.shape[1]

    def validate(self):
        dk, dl = self.growth.shape
        if self.diffusion.shape != (dk, dl, dl):
            raise DimensionMismatchError(
                f"diffusion shape {self.diffusion.shape} does not match growth {self.growth.shape}"
            )
        if self.init_state.shape != (dk, dl):
            raise DimensionMismatchError(
                f"init_state shape {self.init_state.shape} does not match growth {self.growth.shape}"
            )
        for name, arr in (("growth", self.growth), ("diffusion", self.diffusion),
                          ("init_state", self.init_state)):
            if not np.isfinite(arr).all():
                raise DimensionMismatchError(f"{name} contains NaN or Inf")
        if (self.diffusion < 0).any():
            raise DimensionMismatchError("diffusion strengths must be nonnegative")
        if (self.init_state < 0).any():
            raise DimensionMismatchError("init_state must be nonnegative")
        diag = np.einsum("ijj->ij", self.diffusion)
        if np.any(diag != 0):
            raise DimensionMismatchError("diffusion diagonal must be zero (no self-flow)")
        return self

    def copy(self):
        return RDParams(self.growth.copy(), self.diffusion.copy(), self.init_state.copy())


@dataclass
class LMFit:
    """Outcome of one Levenberg-Marquardt run."""

    params: RDParams
    residual_norm: float
    iterations: int
    progressed: bool


def rd_derivative(state, params):
    """Time derivative of the latent state under ``params``.

    state : (dk, dl) array.  Returns the same shape.
    """
    w = np.asarray(state, dtype=float)
    if w.shape != params.growth.shape:
        raise DimensionMismatchError(
            f"state shape {w.shape} does not match parameters {params.growth.shape}"
        )
    inflow = np.einsum("ijp,ip->ij", params.diffusion, w)
    outflow = w * params.diffusion.sum(axis=2)
    return params.growth * w + inflow - outflow


def _generator_blocks(growth, diffusion):
    # per keyword group: off-diagonal = flow strengths, diagonal = growth - total
    # outflow; leading axes may carry a batch of parameter settings
    dl = growth.shape[-1]
    blocks = np.array(diffusion, dtype=float, copy=True)
    idx = np.arange(dl)
    blocks[..., idx, idx] = growth - diffusion.sum(axis=-1)
    return blocks


def _step_blocks(growth, diffusion):
    # classical RK4 with unit step on a linear system is the degree-4
    # Taylor polynomial of the generator
    gen = _generator_blocks(growth, diffusion)
    dl = gen.shape[-1]
    eye = np.eye(dl)
    g2 = gen @ gen
    g3 = g2 @ gen
    g4 = g3 @ gen
    return eye + gen + g2 / 2.0 + g3 / 6.0 + g4 / 24.0


def _first_bad_step(traj):
    # traj (..., L, dk, dl); returns index of first non-finite / oversized slice, or -1
    flat = np.abs(traj).reshape(traj.shape[:-2] + (-1,)).max(axis=-1)
    bad = ~np.isfinite(flat) | (flat > STATE_GUARD)
    if bad.ndim > 1:
        bad = bad.any(axis=tuple(range(bad.ndim - 1)))
    hits = np.flatnonzero(bad)
    return int(hits[0]) if hits.size else -1


def generate(params, length):
    """Integrate the system for ``length`` unit steps, first slice = init_state.

    Returns a (length, dk, dl) trajectory.  Raises :class:`DivergenceError`
    with the offending step index once any state magnitude passes
    ``STATE_GUARD``.
    """
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    step = _step_blocks(params.growth, params.diffusion)
    out = np.empty((length,) + params.init_state.shape)
    state = params.init_state.astype(float)
    out[0] = state
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, length):
            state = np.einsum("ijk,ik->ij", step, state)
            out[t] = state
    bad = _first_bad_step(np.moveaxis(out, 0, 0))
    if bad >= 0:
        raise DivergenceError(bad)
    return out


def _batch_generate(growth, diffusion, init_state, length):
    """Trajectories for a stack of parameter settings.

    growth, init_state : (m, dk, dl); diffusion : (m, dk, dl, dl).
    Returns (traj (m, length, dk, dl), ok (m,) bool).
    """
    step = _step_blocks(growth, diffusion)
    m, dk, dl = init_state.shape
    out = np.empty((m, length, dk, dl))
    state = init_state.astype(float)
    out[:, 0] = state
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, length):
            state = np.einsum("mijk,mik->mij", step, state)
            out[:, t] = state
    flat = np.abs(out).reshape(m, -1)
    with np.errstate(invalid="ignore"):
        ok = np.isfinite(flat).all(axis=1) & (flat.max(axis=1) <= STATE_GUARD)
    return out, ok


def _offdiag_index(dl):
    rows, cols = np.nonzero(~np.eye(dl, dtype=bool))
    return rows, cols


def _pack(params, free):
    parts = []
    if "growth" in free:
        parts.append(params.growth.ravel())
    if "diffusion" in free:
        rows, cols = _offdiag_index(params.n_loc_groups)
        parts.append(params.diffusion[:, rows, cols].ravel())
    if "init_state" in free:
        parts.append(params.init_state.ravel())
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def _unpack(vec, template, free, project=False):
    dk, dl = template.growth.shape
    growth = template.growth.copy()
    diffusion = template.diffusion.copy()
    init_state = template.init_state.copy()
    pos = 0
    if "growth" in free:
        growth = vec[pos:pos + dk * dl].reshape(dk, dl).copy()
        pos += dk * dl
    if "diffusion" in free:
        rows, cols = _offdiag_index(dl)
        n = dk * len(rows)
        diffusion = np.zeros((dk, dl, dl))
        diffusion[:, rows, cols] = vec[pos:pos + n].reshape(dk, len(rows))
        pos += n
    if "init_state" in free:
        init_state = vec[pos:pos + dk * dl].reshape(dk, dl).copy()
        pos += dk * dl
    if project:
        np.clip(diffusion, 0.0, None, out=diffusion)
        np.clip(init_state, 0.0, None, out=init_state)
    return RDParams(growth, diffusion, init_state)


def residual_closure(target, key_factor, loc_factor, template, free=_FREE_ALL):
    """Observed-space residual as a function of the packed parameter vector.

    Returns ``(fun, p0)`` where ``fun(vec)`` gives the flattened residual
    (reconstruction minus target) or ``None`` when the trajectory diverges.
    Used both by :func:`fit_lm` and by diagnostic tooling.
    """
    target = np.asarray(target, dtype=float)
    key_factor = np.asarray(key_factor, dtype=float)
    loc_factor = np.asarray(loc_factor, dtype=float)
    length = target.shape[0]
    if target.shape[1] != key_factor.shape[1] or target.shape[2] != loc_factor.shape[1]:
        raise DimensionMismatchError(
            f"target shape {target.shape} does not match factors "
            f"{key_factor.shape}, {loc_factor.shape}"
        )

    def batch_fun(vecs):
        vecs = np.atleast_2d(vecs)
        m = vecs.shape[0]
        growth = np.empty((m,) + template.growth.shape)
        diffusion = np.empty((m,) + template.diffusion.shape)
        init_state = np.empty((m,) + template.init_state.shape)
        for r, v in enumerate(vecs):
            p = _unpack(v, template, free)
            growth[r], diffusion[r], init_state[r] = p.growth, p.diffusion, p.init_state
        traj, ok = _batch_generate(growth, diffusion, init_state, length)
        recon = np.einsum("mtij,iu,jv->mtuv", traj, key_factor, loc_factor, optimize=True)
        res = (recon - target[None]).reshape(m, -1)
        return res, ok

    def fun(vec):
        res, ok = batch_fun(np.asarray(vec, dtype=float)[None])
        return res[0] if ok[0] else None

    return fun, batch_fun, _pack(template, free)


def finite_difference_jacobian(batch_fun, p, rel_step=1e-6):
    """Forward-difference Jacobian; per-parameter step rel_step*(1+|p|).

    Returns ``(J, r0)`` or ``(None, r0)`` when the base point diverges.
    Columns whose perturbed trajectory diverges are zeroed.
    """
    steps = rel_step * (1.0 + np.abs(p))
    vecs = np.tile(p, (len(p) + 1, 1))
    for i in range(len(p)):
        vecs[i + 1, i] += steps[i]
    res, ok = batch_fun(vecs)
    if not ok[0]:
        return None, None
    r0 = res[0]
    jac = np.zeros((r0.size, len(p)))
    for i in range(len(p)):
        if ok[i + 1]:
            jac[:, i] = (res[i + 1] - r0) / steps[i]
    return jac, r0


def fit_lm(target, key_factor, loc_factor, init, free=_FREE_ALL,
           max_iter=100, damping=1e-3, tol=1e-6):
    """Fit the dynamics to an observed-space target window.

    target : (L, k, l) window with seasonal and outlier parts already
        removed; key_factor (dk, k) and loc_factor (dl, l) are held fixed,
        identity factors reduce the fit to core space.
    init : starting :class:`RDParams`.

    Damping is multiplied by 10 on a rejected step and divided by 10 on an
    accepted one; diffusion and the initial state are clipped to [0, inf)
    after every accepted step, and a projected step that does not decrease
    the residual is rejected.  Stops once the relative residual change
    drops below ``tol``.  When no step is ever accepted the initial
    parameters come back with ``progressed=False``.
    """
    fun, batch_fun, _ = residual_closure(target, key_factor, loc_factor, init, free)
    p = _pack(init, free)
    if p.size == 0:
        r = fun(p)
        norm = float(np.linalg.norm(r)) if r is not None else float("inf")
        return LMFit(init.copy(), norm, 0, False)

    r = fun(p)
    if r is None:
        return LMFit(init.copy(), float("inf"), 0, False)
    best_norm = float(np.linalg.norm(r))
    lam = damping
    progressed = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        jac, r0 = finite_difference_jacobian(batch_fun, p)
        if jac is None:
            break
        jtj = jac.T @ jac
        jtr = jac.T @ r0
        diag = np.maximum(np.diag(jtj), 1e-12)
        accepted = False
        for _ in range(20):
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(diag), -jtr)
            except np.linalg.LinAlgError:
                delta, *_ = np.linalg.lstsq(jtj + lam * np.diag(diag), -jtr, rcond=None)
            trial = _pack(_unpack(p + delta, init, free, project=True), free)
            r_trial = fun(trial)
            if r_trial is not None:
                trial_norm = float(np.linalg.norm(r_trial))
                if trial_norm < best_norm:
                    rel_change = (best_norm - trial_norm) / max(best_norm, 1e-300)
                    p = trial
                    best_norm = trial_norm
                    lam = max(lam / 10.0, 1e-12)
                    progressed = True
                    accepted = True
                    if rel_change < tol:
                        return LMFit(_unpack(p, init, free, project=True),
                                     best_norm, iterations, True)
                    break
            lam *= 10.0
            if lam > 1e12:
                break
        if not accepted:
            break

    params = _unpack(p, init, free, project=True) if progressed else init.copy()
    return LMFit(params, best_norm, iterations, progressed)
