"""PNG figures for simulated runs and training curves (rendered off-screen)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .gridsim.scenario import Trajectory  # noqa: E402
from .training.loop import HISTORY_COLUMNS  # noqa: E402


def plot_runs(runs: dict[str, Trajectory], path, title: str = "") -> None:
    """Frequency, relative angle and control input per machine, one column per run."""
    labels = list(runs)
    fig, axes = plt.subplots(3, len(labels), figsize=(5.0 * len(labels), 7.5), sharex="col", squeeze=False)
    for j, lab in enumerate(labels):
        tr = runs[lab]
        na = tr.n_angles
        ax_w, ax_d, ax_u = axes[:, j]
        for i in range(tr.x.shape[1] - na):
            ax_w.plot(tr.t, tr.x[:, na + i], lw=1.0, label=f"VSG{i + 1}")
        for i in range(na):
            ax_d.plot(tr.t, tr.x[:, i], lw=1.0, label=f"angle {i + 1}")
        for i in range(tr.u.shape[1]):
            ax_u.plot(tr.t, tr.u[:, i], lw=1.0, label=f"u{i + 1}")
        if tr.t_clear:
            for ax in (ax_w, ax_d, ax_u):
                ax.axvline(tr.t_clear, color="0.6", ls=":", lw=0.8)
        if tr.diverged and tr.diverged_at is not None:
            ax_w.set_title(f"{lab} (lost synchronism at {tr.diverged_at:.2f} s)")
        else:
            ax_w.set_title(lab)
        ax_w.set_ylabel("frequency (p.u.)")
        ax_d.set_ylabel("relative angle (rad)")
        ax_u.set_ylabel("control (p.u.)")
        ax_u.set_xlabel("time (s)")
        for ax in (ax_w, ax_d, ax_u):
            ax.grid(alpha=0.3)
        ax_w.legend(fontsize=7, loc="best")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_history(rows, path) -> None:
    """Per-epoch mean of each loss term on a log scale."""
    a = np.asarray(rows, dtype=float)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if a.size:
        epochs = np.unique(a[:, 0])
        for c, name in enumerate(HISTORY_COLUMNS[2:], start=2):
            means = [a[a[:, 0] == e, c].mean() for e in epochs]
            ax.semilogy(epochs + 1, np.maximum(means, 1e-12), marker="o", ms=3, label=name)
        ax.legend(fontsize=8)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
