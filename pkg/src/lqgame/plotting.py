"""Static PNG renderings of the solution paths and one closed-loop trajectory."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _matrix_panel(ax, t, M, name):
    n = M.shape[1]
    for a in range(n):
        for b in range(n):
            style = "--" if a > b else "-"
            ax.plot(t, M[:, a, b], style, label=f"{name}$_{{{a + 1}{b + 1}}}$")
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)


def _vector_panel(ax, t, V, labels):
    for i, lab in enumerate(labels):
        ax.plot(t, V[:, i], label=lab, lw=1.0)
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)


def render_solution(t, P, p, Sigma, out_dir: str | Path, prefix: str = "") -> list[Path]:
    """``P``, ``p`` and ``Sigma`` against time, one PNG each."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    panels = (
        ("P", lambda ax: _matrix_panel(ax, t, P, "P")),
        ("p", lambda ax: _vector_panel(ax, t, p, [f"p$_{i + 1}$" for i in range(p.shape[1])])),
        ("Sigma", lambda ax: _matrix_panel(ax, t, Sigma, r"$\Sigma$")),
    )
    for name, draw in panels:
        fig, ax = plt.subplots(figsize=(5.5, 4))
        draw(ax)
        path = out / f"{prefix}{name}.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written


def render_trajectory(t, xhat, u, out_dir: str | Path, prefix: str = "", k1: int = 1) -> list[Path]:
    """One filter trajectory and the controls it induces."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    _vector_panel(ax, t, xhat, [rf"$\hat x_{i + 1}$" for i in range(xhat.shape[1])])
    p1 = out / f"{prefix}xhat.png"
    fig.savefig(p1, dpi=120, bbox_inches="tight")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5.5, 4))
    labels = [f"$u_1^{{({i + 1})}}$" if k1 > 1 else "$u_1$" for i in range(k1)]
    labels += [f"$u_2^{{({i + 1})}}$" if u.shape[1] - k1 > 1 else "$u_2$" for i in range(u.shape[1] - k1)]
    _vector_panel(ax, t, u, labels)
    p2 = out / f"{prefix}controls.png"
    fig.savefig(p2, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return [p1, p2]


def render_gap_table(report: dict, out_dir: str | Path) -> Path:
    """Measured vs predicted saddle gaps with 3 paired-SE error bars."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gaps = report["gaps"]
    x = np.arange(len(gaps))
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.errorbar(x, [g["measured"] for g in gaps], yerr=[3 * g["paired_se"] for g in gaps],
                fmt="o", capsize=4, label="measured (3 SE)")
    ax.plot(x, [g["predicted"] for g in gaps], "x", ms=9, label="predicted")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xticks(x, [f"player {g['player']}" for g in gaps])
    ax.set_ylabel("J(perturbed) - J(saddle)")
    ax.legend(fontsize=8)
    path = out / "saddle_gaps.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path
