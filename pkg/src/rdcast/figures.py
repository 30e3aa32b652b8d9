"""Report figures rendered next to the delimited exports.

Everything draws through matplotlib's object API (no pyplot, no GUI
backend), so rendering works headless.  The diffusion view is an
abstract circular graph over location groups; these figures never place
anything on a geographic map.
"""

import os

import numpy as np
from matplotlib.figure import Figure
from matplotlib.patches import FancyArrowPatch

from .dataio import diffusion_edges
from .diffusion import generate

_DPI = 120


def _save(fig, out_dir, name):
    path = os.path.join(out_dir, name)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    return path


def fit_vs_truth(result, data, out_dir, keywords=None):
    """Observed vs fitted series per keyword, aggregated over locations,
    with vertical markers at model switch steps."""
    data = np.asarray(data, dtype=float)
    n_steps, n_key, _ = data.shape
    if keywords is None:
        keywords = [f"k{u}" for u in range(n_key)]
    fitted = result.fitted_series()
    fig = Figure(figsize=(9, 1.8 * n_key + 1))
    axes = fig.subplots(n_key, 1, sharex=True, squeeze=False)[:, 0]
    for u, ax in enumerate(axes):
        ax.plot(data[:, u].mean(axis=1), color="0.3", lw=1.0, label="observed")
        ax.plot(fitted[:, u].mean(axis=1), color="tab:blue", lw=1.0, label="fitted")
        for step in result.switch_steps:
            ax.axvline(step, color="tab:red", lw=0.8, ls="--")
        ax.set_ylabel(keywords[u], fontsize=8)
    axes[0].legend(loc="upper left", fontsize=7)
    axes[-1].set_xlabel("step")
    fig.suptitle("observed vs fitted (location mean), switches dashed")
    return _save(fig, out_dir, "fit_vs_truth.png")


def latent_trajectories(result, out_dir):
    """Latent core series per model, one panel per model."""
    models = result.params.models
    fig = Figure(figsize=(9, 2.2 * len(models) + 0.5))
    axes = fig.subplots(len(models), 1, squeeze=False)[:, 0]
    for index, (model, ax) in enumerate(zip(models, axes)):
        traj = generate(model.trend.rd, model.window_length)
        steps = model.anchor + np.arange(model.window_length)
        for i in range(traj.shape[1]):
            for j in range(traj.shape[2]):
                ax.plot(steps, traj[:, i, j], lw=1.0, label=f"core[{i},{j}]")
        ax.set_ylabel(f"model {index}", fontsize=8)
        if traj.shape[1] * traj.shape[2] <= 8:
            ax.legend(fontsize=6, ncol=4)
    axes[-1].set_xlabel("step")
    fig.suptitle("latent core trajectories")
    return _save(fig, out_dir, "latent_trajectories.png")


def factor_heatmaps(result, out_dir, keywords=None, locations=None):
    """Key and location factor loadings of the active model."""
    model = result.params.active_model
    if keywords is None:
        keywords = [f"k{u}" for u in range(model.n_key)]
    if locations is None:
        locations = [f"l{v}" for v in range(model.n_loc)]
    fig = Figure(figsize=(10, 3))
    ax_key, ax_loc = fig.subplots(1, 2)
    for ax, factor, labels, title in (
            (ax_key, model.trend.key_factor, keywords, "key factor"),
            (ax_loc, model.trend.loc_factor, locations, "location factor")):
        image = ax.imshow(factor, aspect="auto", cmap="viridis")
        ax.set_yticks(range(factor.shape[0]))
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
        ax.set_ylabel("latent group")
        ax.set_title(title, fontsize=9)
        fig.colorbar(image, ax=ax, shrink=0.8)
    return _save(fig, out_dir, "factor_heatmaps.png")


def diffusion_graph(result, out_dir):
    """Location-group coupling of the active model as arrows on a circle,
    one panel per key group.  Deliberately abstract: groups sit on a unit
    circle, not at any physical coordinates."""
    model = result.params.active_model
    dk, dl = model.trend.rd.growth.shape
    angles = 2 * np.pi * np.arange(dl) / max(dl, 1)
    xy = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    edges = diffusion_edges(model)
    top = max((e["strength"] for e in edges), default=1.0)
    fig = Figure(figsize=(3 * dk, 3))
    axes = np.atleast_1d(fig.subplots(1, dk))
    for i, ax in enumerate(axes):
        ax.scatter(xy[:, 0], xy[:, 1], s=250, color="tab:blue", zorder=3)
        for j in range(dl):
            ax.annotate(str(j), xy[j], color="white", ha="center", va="center",
                        fontsize=9, zorder=4)
        for edge in edges:
            if edge["key_group"] != i:
                continue
            src = xy[edge["from_group"]]
            dst = xy[edge["to_group"]]
            arrow = FancyArrowPatch(src, dst, arrowstyle="-|>",
                                    mutation_scale=12, shrinkA=12, shrinkB=12,
                                    lw=0.5 + 2.5 * edge["strength"] / top,
                                    color="tab:orange",
                                    connectionstyle="arc3,rad=0.15")
            ax.add_patch(arrow)
        ax.set_xlim(-1.5, 1.5)
        ax.set_ylim(-1.5, 1.5)
        ax.set_aspect("equal")
        ax.axis("off")
        ax.set_title(f"key group {i}", fontsize=9)
    fig.suptitle("location-group diffusion (edge width = strength)")
    return _save(fig, out_dir, "diffusion_graph.png")


def error_by_horizon(report, out_dir):
    """MAE and RMSE against forecast horizon, x10^-2 scale."""
    fig = Figure(figsize=(5, 3.2))
    ax = fig.subplots()
    ax.plot(report.horizons, report.mae * 100, marker="o", label="MAE")
    ax.plot(report.horizons, report.rmse * 100, marker="s", label="RMSE")
    ax.set_xlabel("horizon (steps ahead)")
    ax.set_ylabel("error (x10^-2)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.suptitle(f"forecast error over {report.n_forecasts} origins")
    return _save(fig, out_dir, "error_by_horizon.png")


def render_all(result, data, out_dir, report=None, keywords=None, locations=None):
    """Render every report figure; returns {name: path}."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "fit_vs_truth": fit_vs_truth(result, data, out_dir, keywords=keywords),
        "latent_trajectories": latent_trajectories(result, out_dir),
        "factor_heatmaps": factor_heatmaps(result, out_dir, keywords=keywords,
                                           locations=locations),
        "diffusion_graph": diffusion_graph(result, out_dir),
    }
    if report is not None:
        paths["error_by_horizon"] = error_by_horizon(report, out_dir)
    return paths
