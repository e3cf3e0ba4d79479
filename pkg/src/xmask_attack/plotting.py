"""Figures written next to the result tables. Uses the non-interactive Agg backend."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .geometry import render_mask_preview  # noqa: E402


def _save(fig, path) -> None:
    from .runtime import atomic_write_bytes

    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=120, bbox_inches="tight")
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def _chw_to_hwc(x) -> np.ndarray:
    a = x.detach().cpu().numpy() if hasattr(x, "detach") else np.asarray(x)
    return np.clip(np.transpose(a, (1, 2, 0)), 0, 1)


def plot_mask(mask, path) -> None:
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(render_mask_preview(mask), cmap="gray", vmin=0, vmax=1, interpolation="nearest")
    for p in mask.paths:
        ax.plot(p[:, 1], p[:, 0], lw=0.6, color="tab:red")
    cov = mask.support_size / (mask.shape.height * mask.shape.width)
    ax.set_title(f"support {mask.support_size} px ({100 * cov:.2f}%)")
    ax.set_axis_off()
    _save(fig, path)


def plot_sweep(rows, axis: str, path) -> None:
    labels = [str(r.setting) for r in rows]
    xs = np.arange(len(rows))
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    axes[0].plot(xs, [r.asr for r in rows], marker="o")
    axes[0].set_ylabel("attack success rate")
    axes[0].set_ylim(0, 1)
    for name in ("perturbation_magnitude", "smoothness", "line_smoothness"):
        axes[1].plot(xs, [getattr(r, name) for r in rows], marker="s", label=name)
    axes[1].set_yscale("log")
    axes[1].legend(fontsize=7)
    for ax in axes:
        ax.set_xticks(xs, labels, rotation=20 if axis == "smoothness_ablation" else 0, fontsize=8)
        ax.set_xlabel(axis)
        ax.grid(alpha=0.3)
    _save(fig, path)


def plot_loss_histories(histories: dict, path, max_lines: int = 16) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.4))
    for image_id, recs in list(histories.items())[:max_lines]:
        ax.plot([r["t"] for r in recs], [r["weighted_total"] for r in recs], lw=0.8,
                label=image_id)
    ax.set_xlabel("iteration")
    ax.set_ylabel("weighted objective")
    if len(histories) <= 8:
        ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_saliency(pairs, path) -> None:
    """``pairs``: (image_id, clean, adversarial, clean heatmap, adversarial heatmap)."""
    n = len(pairs)
    fig, axes = plt.subplots(n, 4, figsize=(8, 2.1 * n), squeeze=False)
    for row, (image_id, xc, xa, hc, ha) in zip(axes, pairs):
        row[0].imshow(_chw_to_hwc(xc))
        row[1].imshow(_chw_to_hwc(xa))
        row[2].imshow(hc, cmap="inferno", vmin=0, vmax=1)
        row[3].imshow(ha, cmap="inferno", vmin=0, vmax=1)
        row[0].set_ylabel(image_id, fontsize=7)
        for ax in row:
            ax.set_xticks([])
            ax.set_yticks([])
    for ax, title in zip(axes[0], ("clean", "adversarial", "clean saliency", "adv. saliency")):
        ax.set_title(title, fontsize=8)
    _save(fig, path)
