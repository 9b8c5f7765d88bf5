"""Mean +/- std curves over the pollution fraction, one figure per noise type and metric."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .harness import CellSummary


def plot_cells(cells: Sequence[CellSummary], out_dir: str | Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    written = []
    for noise in sorted({c.noise_type for c in cells}):
        mine = [c for c in cells if c.noise_type == noise]
        for metric, ylabel in (("loss", "test loss"), ("acc", "top-1 accuracy")):
            fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharex=True)
            for ax, split, title in ((axes[0], "clean", "clean test set"),
                                     (axes[1], "noisy", "fully corrupted test set")):
                key = f"{split}_{metric}"
                for intensity in sorted({c.intensity for c in mine}):
                    row = sorted((c for c in mine if c.intensity == intensity), key=lambda c: c.fraction)
                    x = np.array([100 * c.fraction for c in row])
                    m = np.array([c.mean[key] for c in row])
                    s = np.array([c.std[key] for c in row])
                    ax.plot(x, m, marker="o", label=f"{intensity:g}")
                    ax.fill_between(x, m - s, m + s, alpha=0.2)
                ax.set_title(title)
                ax.set_xlabel("training pollution (%)")
                ax.set_ylabel(ylabel)
                ax.legend(title="intensity")
            fig.suptitle(noise)
            fig.tight_layout()
            path = out_dir / f"{noise}_{metric}.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            written.append(path)
    return written
