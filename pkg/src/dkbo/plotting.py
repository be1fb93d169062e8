"""Optional matplotlib rendering of report curves (``report --figures``)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

KERNEL_STYLE = {"deep": ("tab:blue", "Deep kernel"), "rbf": ("tab:orange", "RBF kernel")}


def _band(ax, x, mean, sd, kernel):
    color, label = KERNEL_STYLE.get(kernel, ("gray", kernel))
    ax.plot(x, mean, color=color, label=label, lw=1.5)
    ax.fill_between(x, mean - sd, mean + sd, color=color, alpha=0.2, lw=0)


def plot_report(summaries, out_dir) -> list:
    """One figure per (variant, feedback): per-step quality, best-so-far and
    HQR sample counts for each kernel. Returns the written paths."""
    out = Path(out_dir) / "figures"
    out.mkdir(parents=True, exist_ok=True)
    panels = sorted({(v, fb) for v, _, fb in summaries})
    written = []
    for variant, feedback in panels:
        fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
        kernels = sorted(k for v, k, fb in summaries if v == variant and fb == feedback)
        for kernel in kernels:
            s = summaries[(variant, kernel, feedback)]
            x = range(1, len(s.quality_mean) + 1)
            _band(axes[0], x, s.quality_mean, s.quality_sd, kernel)
            _band(axes[1], x, s.best_mean, s.best_sd, kernel)
        counts = [summaries[(variant, k, feedback)].total_hqr for k in kernels]
        axes[2].bar(kernels, counts, color=[KERNEL_STYLE.get(k, ("gray",))[0] for k in kernels])
        axes[0].set(xlabel="step", ylabel="quality", title="per-step quality")
        axes[1].set(xlabel="step", ylabel="best so far", title="best quality")
        axes[2].set(ylabel="samples > threshold", title="HQR samples")
        for ax in axes[:2]:
            ax.axhline(0.8, color="k", ls=":", lw=0.8)
            ax.set_ylim(-0.05, 1.05)
        axes[0].legend(loc="lower right", fontsize=8)
        fig.suptitle(f"{variant}, {feedback}")
        fig.tight_layout()
        path = out / f"{variant}_{feedback}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
