"""SVG line charts via matplotlib (optional dependency, loaded on first use)."""

from __future__ import annotations

import numpy as np


def line_chart(path, series: dict, title: str = "", xlabel: str = "t", ylabel: str = "",
               logy: bool = False) -> None:
    try:
        import matplotlib
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise OSError("--plot needs matplotlib (pip install 'artifact[plot]')") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed hash salt and no date stamp keep reruns byte-identical
    with matplotlib.rc_context({"svg.hashsalt": "sddelab"}):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for name, (xs, ys) in series.items():
            xs = np.asarray(xs, dtype=float)
            ys = np.asarray(ys, dtype=float)
            keep = np.isfinite(xs) & np.isfinite(ys)
            if logy:
                keep &= ys > 0
            ax.plot(xs[keep], ys[keep], lw=1.2, label=name)
        if logy:
            ax.set_yscale("log")
        ax.set(title=title, xlabel=xlabel, ylabel=ylabel)
        if len(series) > 1:
            ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
