"""
Plotting and Reports
Trajectory preview/residual grids and the lambda-sweep CSV table
"""

import csv
import logging
from typing import Any, Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from engine.errors import InvalidRange
from engine.sampler import TrajectoryRecord

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["lambda", "source_rmse", "target_distance", "scorer", "output"]


def _displayable(image: torch.Tensor) -> np.ndarray:
    """(H, W, C) tensor -> array imshow accepts; latents beyond 3 channels show their first three, min-max scaled."""
    values = image.detach().cpu().to(torch.float32)
    if values.shape[-1] == 1:
        return values[..., 0].clamp(0, 1).numpy()
    if values.shape[-1] == 3:
        return values.clamp(0, 1).numpy()
    values = values[..., :3]
    low, high = values.min(), values.max()
    return ((values - low) / (high - low + 1e-8)).numpy()


def plot_trajectory(record: TrajectoryRecord, out_path: str, panel_size: float = 2.0) -> int:
    """
    Render preview panels over their residual magnitude panels.

    Returns:
        Number of preview columns written
    """
    steps = record.previews()
    if not steps:
        raise InvalidRange("trajectory holds no previews to plot")

    cols = len(steps)
    fig, axs = plt.subplots(nrows=2, ncols=cols, figsize=(panel_size * cols, panel_size * 2), squeeze=False)
    for col, entry in enumerate(steps):
        preview = _displayable(entry.preview)
        axs[0, col].imshow(preview, cmap="gray" if preview.ndim == 2 else None, vmin=0, vmax=1)
        axs[0, col].set_title(f"t={entry.t} {entry.branch}", fontsize=8)
        if entry.residual is not None:
            axs[1, col].imshow(entry.residual.abs().mean(dim=-1).numpy(), cmap="magma")
        axs[1, col].set_title(f"|res|={entry.residual_mean_abs:.3g}", fontsize=8)
        for ax in axs[:, col]:
            ax.set(xticklabels=[], yticklabels=[], xticks=[], yticks=[])
    axs[0, 0].set(ylabel="preview")
    axs[1, 0].set(ylabel="residual")

    plt.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    logger.info(f"✅ Wrote trajectory grid with {cols} panels to {out_path}")
    return cols


def write_sweep_report(rows: Sequence[Dict[str, Any]], out_path: str) -> None:
    with open(out_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=SWEEP_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: ("" if row.get(key) is None else row[key]) for key in SWEEP_COLUMNS})


def read_sweep_report(path: str) -> List[Dict[str, str]]:
    with open(path, "r", newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))
