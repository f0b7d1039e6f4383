"""Figure rendering for the report path: every plot is written to file
next to the delimited data it visualizes."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import RunMetrics
from .gp import GPModel
from .road import RoadProfile
from .simulation import CollaborativeResult

_SCHEME_STYLE = {
    "kf-only": dict(color="tab:gray", marker="s"),
    "kf-chain": dict(color="tab:orange", marker="^"),
    "gp-psm": dict(color="tab:green", marker="o"),
    "nigp-psm": dict(color="tab:blue", marker="D"),
    "averaged-kf": dict(color="tab:red", marker="v"),
}


def _save(fig, path) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_rmse_by_vehicle(metrics_by_scheme: dict[str, RunMetrics], path,
                         which: str = "smoothed") -> str:
    """Onboard estimation error against vehicle index, one curve per scheme."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for scheme, metrics in metrics_by_scheme.items():
        values = (metrics.rmse_smoothed if which == "smoothed"
                  else metrics.rmse_filtered)
        style = _SCHEME_STYLE.get(scheme, {})
        ax.plot(np.arange(1, len(values) + 1), values, label=scheme,
                markersize=4, **style)
    ax.set_xlabel("vehicle index")
    ax.set_ylabel(f"road RMSE ({which}) [m]")
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, path)


def plot_cloud_rmse(metrics_by_scheme: dict[str, RunMetrics], path) -> str:
    """Cloud-side reconstruction error per refit (or per fused average)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    plotted = False
    for scheme, metrics in metrics_by_scheme.items():
        if np.all(np.isnan(metrics.cloud_rmse)):
            continue
        style = _SCHEME_STYLE.get(scheme, {})
        ax.plot(np.arange(1, metrics.n_vehicles + 1), metrics.cloud_rmse,
                label=scheme, markersize=4, **style)
        plotted = True
    ax.set_xlabel("vehicles contributed")
    ax.set_ylabel("cloud road RMSE [m]")
    ax.grid(alpha=0.3)
    if plotted:
        ax.legend()
    return _save(fig, path)


def plot_gp_band(model: GPModel, truth: RoadProfile | None, path,
                 title: str | None = None, n_grid: int = 400) -> str:
    """Regression mean with a two-sigma band, training points, and truth."""
    if model.n_train:
        lo = float(model.train_inputs.min())
        hi = float(model.train_inputs.max())
    elif truth is not None:
        lo, hi = float(truth.positions[0]), float(truth.positions[-1])
    else:
        lo, hi = 0.0, 1.0
    grid = np.linspace(lo, hi, n_grid)
    mean, var = model.predict(grid)
    std = np.sqrt(var)

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.fill_between(grid, mean - 2 * std, mean + 2 * std, alpha=0.25,
                    color="tab:blue", label="mean ± 2 std")
    ax.plot(grid, mean, color="tab:blue", lw=1.5, label="regression mean")
    if model.n_train:
        ax.plot(model.train_inputs, model.train_targets, ".", ms=2,
                color="0.4", alpha=0.5, label="uploaded estimates")
    if truth is not None:
        ax.plot(truth.positions, truth.elevations, "k--", lw=1.2,
                label="true road")
    ax.set_xlabel("position [m]")
    ax.set_ylabel("elevation [m]")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_posterior_std_comparison(grid: np.ndarray, std_by_label: dict[str, np.ndarray],
                                  path) -> str:
    """Pointwise posterior standard deviation of competing fits."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, std in std_by_label.items():
        ax.plot(grid, std, label=label)
    ax.set_xlabel("position [m]")
    ax.set_ylabel("posterior std [m]")
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, path)


def plot_vehicle_traces(result: CollaborativeResult, path,
                        vehicle_indices: tuple[int, ...] | None = None) -> str:
    """Smoothed road estimates of selected vehicles against the truth."""
    N = len(result.vehicle_runs)
    if vehicle_indices is None:
        vehicle_indices = tuple(sorted({0, N // 2, N - 1}))
    truth = result.ground_truth
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(truth.positions, truth.elevations, "k-", lw=1.5, label="true road")
    cmap = plt.get_cmap("viridis")
    for idx in vehicle_indices:
        run = result.vehicle_runs[idx]
        order = np.argsort(run.trace.positions)
        ax.plot(run.trace.positions[order], run.trace.road_smoothed[order],
                lw=0.9, color=cmap(idx / max(N - 1, 1)),
                label=f"vehicle {idx + 1}")
    ax.set_xlabel("position [m]")
    ax.set_ylabel("elevation [m]")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)
