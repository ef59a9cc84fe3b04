"""Log-log figure of attention MACs against feature size."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from scaleformer.fileio import atomic_write_bytes  # noqa: E402

MARKERS = {"original": "o", "spatial_reduction": "s", "axial": "^", "dualaxis": "D"}


def macs_figure_svg(rows) -> bytes:
    """SVG bytes; identical rows give identical bytes (no date, fixed hash salt)."""
    series: dict[str, list[tuple[int, int]]] = {}
    for r in rows:
        series.setdefault(r.variant, []).append((r.H, r.measured_macs))
    with plt.rc_context({"svg.hashsalt": "scaleformer", "svg.fonttype": "none", "font.size": 9}):
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        for name, pts in series.items():
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker=MARKERS.get(name, "x"), label=name)
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel("feature map side H = W")
        ax.set_ylabel("score + aggregation MACs")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(frameon=False)
        fig.tight_layout()
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return buf.getvalue()


def save_macs_figure(rows, path) -> None:
    atomic_write_bytes(path, macs_figure_svg(rows))
