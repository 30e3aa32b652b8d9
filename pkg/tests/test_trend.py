import numpy as np
import pytest

from rdcast.diffusion import RDParams, generate, rd_derivative
from rdcast.errors import RankTooLargeError
from rdcast.trend import (
    EPS,
    TrendParams,
    normalize_key_rows,
    ntd_init,
    project_to_observed,
    update_trend_factor,
)


def loop_project(core, key_factor, loc_factor):
    """Independent reference: triple loop over observed cells."""
    length, dk, dl = core.shape
    k = key_factor.shape[1]
    n_loc = loc_factor.shape[1]
    out = np.zeros((length, k, n_loc))
    for t in range(length):
        for u in range(k):
            for v in range(n_loc):
                acc = 0.0
                for i in range(dk):
                    for j in range(dl):
                        acc += core[t, i, j] * key_factor[i, u] * loc_factor[j, v]
                out[t, u, v] = acc
    return out


def positive_instance(seed=0, length=12, dk=2, dl=2, k=4, n_loc=5):
    rng = np.random.default_rng(seed)
    key_factor = rng.uniform(0.2, 1.0, size=(dk, k))
    loc_factor = rng.uniform(0.2, 1.0, size=(dl, n_loc))
    core = rng.uniform(0.1, 2.0, size=(length, dk, dl))
    return core, key_factor, loc_factor


def test_projection_matches_loop_oracle():
    core, key_factor, loc_factor = positive_instance(seed=1)
    np.testing.assert_allclose(project_to_observed(core, key_factor, loc_factor),
                               loop_project(core, key_factor, loc_factor), atol=1e-12)


def test_projection_commutes_with_latent_derivative():
    # projecting the core derivative equals differentiating the projection
    core, key_factor, loc_factor = positive_instance(seed=2)
    diffusion = np.zeros((2, 2, 2))
    diffusion[:, 0, 1] = 0.2
    params = RDParams(np.array([[0.05, -0.02], [0.01, 0.0]]), diffusion, core[0])
    deriv = rd_derivative(core[3], params)
    got = project_to_observed(deriv[None], key_factor, loc_factor)[0]
    np.testing.assert_allclose(got, loop_project(deriv[None], key_factor, loc_factor)[0],
                               atol=1e-12)


def test_update_fixed_point_on_exact_reconstruction():
    core, key_factor, loc_factor = positive_instance(seed=3)
    target = project_to_observed(core, key_factor, loc_factor)
    for mode in ("key", "loc"):
        updated = update_trend_factor(target, core, key_factor, loc_factor, mode)
        reference = key_factor if mode == "key" else loc_factor
        np.testing.assert_allclose(updated, reference, rtol=1e-9)


def test_update_keeps_factors_positive():
    core, key_factor, loc_factor = positive_instance(seed=4)
    signed_target = np.random.default_rng(5).normal(size=(12, 4, 5))
    for mode in ("key", "loc"):
        updated = update_trend_factor(signed_target, core, key_factor, loc_factor, mode)
        assert np.isfinite(updated).all()
        assert updated.min() >= EPS


def test_update_zero_target_stays_finite():
    core, key_factor, loc_factor = positive_instance(seed=6)
    updated = update_trend_factor(np.zeros((12, 4, 5)), core, key_factor, loc_factor, "key")
    assert np.isfinite(updated).all()
    assert updated.min() >= EPS


def test_alternating_updates_descend_on_positive_data():
    rng = np.random.default_rng(7)
    core, key_true, loc_true = positive_instance(seed=8)
    target = project_to_observed(core, key_true, loc_true)
    key_factor = rng.uniform(0.2, 1.0, size=key_true.shape)
    loc_factor = rng.uniform(0.2, 1.0, size=loc_true.shape)
    errors = [np.linalg.norm(target - project_to_observed(core, key_factor, loc_factor))]
    for _ in range(10):
        key_factor = update_trend_factor(target, core, key_factor, loc_factor, "key")
        loc_factor = update_trend_factor(target, core, key_factor, loc_factor, "loc")
        errors.append(np.linalg.norm(target - project_to_observed(core, key_factor, loc_factor)))
    assert (np.diff(errors) <= 1e-9 * errors[0]).all()


def test_gauge_rescaling_preserves_reconstruction():
    core, key_factor, loc_factor = positive_instance(seed=9)
    base = project_to_observed(core, key_factor, loc_factor)
    scale = 3.7
    key_scaled = key_factor.copy()
    key_scaled[1] *= scale
    core_scaled = core.copy()
    core_scaled[:, 1, :] /= scale
    np.testing.assert_allclose(project_to_observed(core_scaled, key_scaled, loc_factor),
                               base, rtol=1e-12)


def test_normalize_key_rows_unit_max_and_invariant_reconstruction():
    core, key_factor, loc_factor = positive_instance(seed=10)
    init_state = core[0].copy()
    base = project_to_observed(core, key_factor, loc_factor)
    kf, new_core, new_state = normalize_key_rows(key_factor, core, init_state)
    np.testing.assert_allclose(kf.max(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(project_to_observed(new_core, kf, loc_factor), base, rtol=1e-12)
    # the dynamics are linear in each keyword group's row, so scaling the
    # initial state reproduces the scaled trajectory
    params = RDParams(np.full((2, 2), 0.02), np.zeros((2, 2, 2)), init_state)
    scaled = RDParams(params.growth, params.diffusion, new_state)
    ratio = key_factor.max(axis=1)
    np.testing.assert_allclose(generate(scaled, 6),
                               generate(params, 6) * ratio[None, :, None], rtol=1e-12)


def grouped_factor(rng, rank, n):
    # each observed column loads mostly on one latent group, like grouped
    # keywords/regions do; rows stay well separated
    base = rng.uniform(0.05, 0.25, size=(rank, n))
    for r in range(rank):
        idx = np.arange(r, n, rank)
        base[r, idx] += rng.uniform(0.7, 1.0, size=idx.size)
    return base


def test_ntd_recovers_exact_instance():
    rng = np.random.default_rng(11)
    key_factor = grouped_factor(rng, 2, 5)
    loc_factor = grouped_factor(rng, 2, 6)
    core = rng.uniform(0.1, 2.0, size=(20, 2, 2))
    x = project_to_observed(core, key_factor, loc_factor)
    kf, lf, fitted_core = ntd_init(x, 2, 2, n_iters=200, seed=0)
    err = np.linalg.norm(x - project_to_observed(fitted_core, kf, lf))
    assert err <= 1e-3 * np.linalg.norm(x)
    assert kf.min() >= 0 and lf.min() >= 0 and fitted_core.min() >= 0


def test_ntd_zero_window():
    kf, lf, core = ntd_init(np.zeros((8, 3, 3)), 2, 2)
    assert np.isfinite(kf).all() and np.isfinite(lf).all()
    np.testing.assert_allclose(project_to_observed(core, kf, lf), 0.0, atol=1e-9)


def test_ntd_rank_errors():
    with pytest.raises(RankTooLargeError):
        ntd_init(np.ones((8, 2, 3)), 3, 2)
    with pytest.raises(ValueError):
        ntd_init(np.ones((8, 2, 3)), 0, 2)


def test_ntd_error_shrinks_with_iterations():
    rng = np.random.default_rng(13)
    x = rng.uniform(0.0, 1.0, size=(15, 4, 4))

    def err(n_iters):
        kf, lf, core = ntd_init(x, 2, 2, n_iters=n_iters, seed=3, tol=0.0)
        return np.linalg.norm(x - project_to_observed(core, kf, lf))

    assert err(50) <= err(5) + 1e-9


def test_trend_params_validate():
    core, key_factor, loc_factor = positive_instance(seed=14)
    rd = RDParams(np.zeros((2, 2)), np.zeros((2, 2, 2)), core[0])
    TrendParams(key_factor, loc_factor, rd).validate()
    with pytest.raises(Exception):
        TrendParams(key_factor[:1], loc_factor, rd).validate()
