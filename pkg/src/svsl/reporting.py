"""CSV emission and companion matplotlib figures.

CSVs are the machine-readable contract: one header row, numbers at 17
significant digits. Each report also renders a PNG next to its CSV unless
plotting is disabled.
"""

from __future__ import annotations

import csv

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_metrics_csv(path, rows: list[dict], columns: list[str]) -> None:
    write_csv(path, columns, ([row[c] for c in columns] for row in rows))


# -------------------------------------------------------------------- figures


def plot_metrics(path, rows: list[dict]) -> None:
    iters = [r["iter"] for r in rows]
    fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
    axes[0, 0].plot(iters, [r["mean_reward"] for r in rows], lw=0.8)
    axes[0, 0].set_ylabel("mean reward")
    axes[0, 1].plot(iters, [r["expected_entropy"] for r in rows], lw=0.8, color="tab:green")
    axes[0, 1].set_ylabel("expected mixture entropy")
    axes[1, 0].step(iters, [r["n_components"] for r in rows], lw=0.8, color="tab:orange")
    axes[1, 0].set_ylabel("components")
    axes[1, 0].set_xlabel("iteration")
    axes[1, 1].plot(iters, [r["mean_expert_kl"] for r in rows], lw=0.8, label="expert")
    axes[1, 1].plot(iters, [r["mean_ctx_kl"] for r in rows], lw=0.8, label="context")
    axes[1, 1].set_ylabel("update KL")
    axes[1, 1].set_xlabel("iteration")
    axes[1, 1].legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _grid_image(ax, xs, ys, values, label):
    img = values.reshape(ys.shape[0], xs.shape[0])
    pc = ax.pcolormesh(xs, ys, img, shading="nearest")
    ax.set_xlabel("context x")
    ax.set_ylabel("context y")
    plt.colorbar(pc, ax=ax, label=label)


def plot_coverage(path, xs, ys, log_density, argmax) -> None:
    if ys is None:
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.plot(xs, np.exp(log_density), lw=1.0)
        ax.set_xlabel("context")
        ax.set_ylabel("density")
    else:
        fig, axes = plt.subplots(1, 2, figsize=(11, 4.5))
        _grid_image(axes[0], xs, ys, np.exp(log_density), "context density")
        _grid_image(axes[1], xs, ys, argmax.astype(float), "gating argmax")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_heatmap(path, xs, ys, fractions) -> None:
    if ys is None:
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.plot(xs, fractions, lw=1.0)
        ax.set_ylim(-0.05, 1.05)
        ax.set_xlabel("context")
        ax.set_ylabel("success fraction")
    else:
        fig, ax = plt.subplots(figsize=(6.5, 5))
        pc = ax.pcolormesh(xs, ys, fractions.reshape(ys.shape[0], xs.shape[0]),
                           shading="nearest", vmin=0.0, vmax=1.0)
        ax.set_xlabel("context x")
        ax.set_ylabel("context y")
        plt.colorbar(pc, ax=ax, label="success fraction")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_entropy(path, xs, ys, entropies) -> None:
    if ys is None:
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.plot(xs, entropies, lw=1.0)
        ax.set_xlabel("context")
        ax.set_ylabel("mixture entropy")
    else:
        fig, ax = plt.subplots(figsize=(6.5, 5))
        pc = ax.pcolormesh(xs, ys, entropies.reshape(ys.shape[0], xs.shape[0]),
                           shading="nearest")
        ax.set_xlabel("context x")
        ax.set_ylabel("context y")
        plt.colorbar(pc, ax=ax, label="mixture entropy")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
