"""SVG efficiency report: track counts (top) and efficiency (bottom) per bin."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluator import EfficiencyBin, EfficiencyTable  # noqa: E402

_TITLES = {"length": "track length [hits]", "pt": "track $p_T$ [GeV]"}


def _labels(rows: list[EfficiencyBin]) -> list[str]:
    out = []
    for r in rows:
        if math.isinf(r.low):
            out.append(f"<{r.high:g}")
        elif math.isinf(r.high):
            out.append(f"≥{r.low:g}")
        elif r.high - r.low == 1 and float(r.low).is_integer():
            out.append(f"{r.low:g}")
        else:
            out.append(f"{r.low:g}-{r.high:g}")
    return out


def write_efficiency_svg(table: EfficiencyTable, path) -> None:
    plt.rcParams["svg.hashsalt"] = "tracksorter"
    fig, axes = plt.subplots(2, 2, figsize=(10, 7), constrained_layout=True)
    for col, kind in enumerate(("length", "pt")):
        rows = table.populated(kind)
        x = list(range(len(rows)))
        labels = _labels(rows)
        top, bottom = axes[0][col], axes[1][col]
        top.bar(x, [r.total for r in rows], color="0.6")
        top.set_ylabel("tracks")
        bottom.bar(x, [r.efficiency for r in rows], color="tab:blue")
        bottom.set_ylim(0, 1.05)
        bottom.set_ylabel("efficiency")
        for ax in (top, bottom):
            ax.set_xticks(x, labels, rotation=45 if len(rows) > 8 else 0)
            ax.set_xlabel(_TITLES[kind])
    overall = table.overall
    fig.suptitle(f"tracking efficiency {overall.efficiency:.3f} ({overall.matched}/{overall.total})")
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
