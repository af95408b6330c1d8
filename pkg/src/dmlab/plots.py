"""Figure rendering for the report paths.

CSV/JSON stay the interchange formats; these PNGs are a convenience layer
written next to them.  Everything is rendered with the Agg backend so the
CLI works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_oscillation(table, lam: float, osc_max: float, path) -> None:
    """Per-direction relative deviation of the composite norm from the scale."""
    idx = [i for i, _ in table]
    rel = [p / lam - 1.0 for _, p in table]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.scatter(idx, rel, s=8, alpha=0.6, linewidths=0)
    ax.axhline(0.0, color="k", lw=0.8)
    for sign in (1.0, -1.0):
        ax.axhline(sign * osc_max, color="tab:red", lw=0.8, ls="--")
    ax.set_xlabel("net direction index")
    ax.set_ylabel("psi(u)/lambda - 1")
    ax.set_title(f"net oscillation (max |dev| = {max(abs(r) for r in rel):.3f})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_diagnostics(rows, path) -> None:
    """Trial-indexed structural diagnostics of the row matrix."""
    trials = [r[0] for r in rows]
    series = {"rho": [r[4] for r in rows], "h_sm": [r[5] for r in rows],
              "rearr_dev": [r[6] for r in rows], "w2_diam": [r[7] for r in rows]}
    fig, axes = plt.subplots(2, 2, figsize=(8, 6), sharex=True)
    for ax, (name, vals) in zip(axes.ravel(), series.items()):
        ax.plot(trials, vals, "o-", ms=3, lw=0.8)
        ax.set_title(name)
        ax.set_xlabel("trial")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_decomposition(rows, path) -> None:
    """Per-direction norms of the three-part split, all trials overlaid."""
    fig, ax = plt.subplots(figsize=(7, 4))
    x = list(range(len(rows)))
    for col, name, color in ((2, "clubs", "tab:blue"), (3, "diamonds", "tab:orange"),
                             (4, "hearts", "tab:green")):
        ax.scatter(x, [r[col] for r in rows], s=10, label=name, color=color, alpha=0.7)
    ax.set_xlabel("record (trial x direction)")
    ax.set_ylabel("norm of part")
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.legend()
    ax.set_title("composite sum split: part norms")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_gap(gaps, path) -> None:
    """Identity-map oscillation ratio per trial."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(range(len(gaps)), gaps, "o-", ms=4, lw=0.8)
    med = sorted(gaps)[len(gaps) // 2]
    ax.axhline(med, color="tab:red", lw=0.8, ls="--", label=f"median {med:.2f}")
    ax.set_xlabel("trial")
    ax.set_ylabel("max/min probe ratio")
    ax.set_title("identity-map baseline gap")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
