"""Figure rendering for the report path.

Figures are written next to their delimited text tables; everything goes
through the Agg backend so runs stay headless, and PNG metadata is pinned so
outputs are byte-stable under a fixed seed.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_PNG_META = {"Software": "satqkd"}


def render_qber_series(windows: np.ndarray, path, threshold: float = 0.11,
                       window_bits: int = 1000) -> None:
    """Live-QBER stability plot: one point per sifted-key window."""
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.plot(np.arange(len(windows)), windows, marker="o", ms=3, lw=1.0, color="tab:blue")
    ax.axhline(threshold, color="tab:red", ls="--", lw=1.0,
               label=f"no-key threshold ({threshold:.2f})")
    ax.set_xlabel(f"window index ({window_bits} sifted bits each)")
    ax.set_ylabel("QBER")
    ax.set_ylim(bottom=0.0)
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def render_link_budget(dt_m: np.ndarray, dr_m: np.ndarray, distance_m: np.ndarray,
                       path, loss_db: float) -> None:
    """Distance-vs-aperture surface at a fixed total link loss."""
    fig, ax = plt.subplots(figsize=(5.6, 4.4))
    mesh = ax.pcolormesh(dt_m, dr_m, distance_m.T / 1e3, shading="auto", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="link distance (km)")
    ax.set_xlabel("transmitter diameter (m)")
    ax.set_ylabel("receiver diameter (m)")
    ax.set_title(f"distance at {loss_db:.1f} dB total loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
