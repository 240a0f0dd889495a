"""SVG figures for the convergence experiments (log₂ scale)."""

import logging
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

logger = logging.getLogger(__name__)

# fixed ids and no timestamp keep reruns identical
matplotlib.rcParams["svg.hashsalt"] = "roughlab"
SVG_METADATA = {"Date": None}


def _save(fig, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    logger.info(f"🖼️ Figure saved: {path}")
    return path


def plot_decay(frame, slopes, path, n):
    """log₂ moment against m, one panel per level, with the fitted slope line."""
    levels = sorted(frame["j"].unique())
    fig, axes = plt.subplots(1, len(levels), figsize=(5 * len(levels), 4), squeeze=False)
    for ax, j in zip(axes[0], levels):
        rows = frame[frame["j"] == j]
        ax.set_title(f"level {j}, n = {n}")
        ax.set_xlabel("coarse level m")
        ax.set_ylabel("log2 moment")
        positive = rows[rows["moment_l2"] > 0]
        if positive.empty:
            ax.text(0.5, 0.5, "identically zero", ha="center", va="center", transform=ax.transAxes)
            continue
        m = positive["m"].to_numpy()
        moment = positive["moment_l2"].to_numpy()
        se = positive["se_l2"].to_numpy()
        # error bars in log2 units by the delta method
        ax.errorbar(m, np.log2(moment), yerr=se / (moment * np.log(2.0)), fmt="o", color="#1f77b4",
                    capsize=3, label="L2 moment")
        for label, fit in slopes.get(j, {}).items():
            ax.plot(m, fit.intercept + fit.slope * m, linestyle="--",
                    label=f"{label}: slope {fit.slope:.3f} [{fit.ci_low:.3f}, {fit.ci_high:.3f}]")
        if "moment_local_l2" in positive and positive["moment_local_l2"].gt(0).all():
            ax.plot(m, np.log2(positive["moment_local_l2"].to_numpy()), "s", color="#d62728",
                    alpha=0.7, label="cell-local part")
        ax.legend(fontsize=8)
    return _save(fig, path)


def plot_refinement(frame, path):
    """Median sup-distance between consecutive refinements against m."""
    fig, ax = plt.subplots(figsize=(6, 4))
    positive = frame[frame["median_distance"] > 0]
    if positive.empty:
        ax.text(0.5, 0.5, "all distances are zero", ha="center", va="center", transform=ax.transAxes)
    else:
        ax.plot(positive["m"], np.log2(positive["median_distance"]), "o-", label="median")
        ax.plot(positive["m"], np.log2(positive["q90_distance"]), "x--", alpha=0.7, label="90% quantile")
        ax.legend()
    ax.set_xlabel("driver level m")
    ax.set_ylabel("log2 sup-distance")
    ax.set_title("RDE solutions under driver refinement")
    return _save(fig, path)
