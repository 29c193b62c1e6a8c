"""Render per-agent cost curves from a trace CSV.

Two figure styles: running average cost per agent with a dashed line at
each agent's bound, and the bound-minus-average gap per agent with one
dashed zero line. Rendering is a pure function of the CSV bytes and the
plot spec: fixed figure geometry, agg backend, no timestamps, so repeated
invocations produce identical files.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd

REQUIRED_COLUMNS = ("iteration", "agent", "z", "beta", "beta_minus_z")

FIGSIZE = (8.0, 4.5)
DPI = 120


class SchemaError(ValueError):
    """The CSV does not carry the trace schema; names the missing columns."""


class PlotMode(enum.Enum):
    COST_VS_BOUND = "cost"
    BOUND_GAP = "gap"


@dataclass(frozen=True)
class PlotSpec:
    csv_path: Path
    output_path: Path
    mode: PlotMode
    agents: Optional[tuple[int, ...]] = None
    freeze_iteration: Optional[int] = None
    max_points: int = 5000


def _load(spec: PlotSpec) -> pd.DataFrame:
    frame = pd.read_csv(spec.csv_path)
    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise SchemaError(
            f"{spec.csv_path} is missing required column(s): {', '.join(missing)}"
        )
    if frame.empty:
        raise SchemaError(f"{spec.csv_path} has a header but no data rows")
    if spec.agents is not None:
        frame = frame[frame["agent"].isin(spec.agents)]
        if frame.empty:
            raise SchemaError(f"no rows left after filtering to agents {spec.agents}")
    return frame


def _stride(length: int, max_points: int) -> int:
    return max(1, math.ceil(length / max_points))


def render(spec: PlotSpec) -> Path:
    """Draw the figure and write it as a PNG; returns the output path."""
    frame = _load(spec)
    fig, ax = plt.subplots(figsize=FIGSIZE, dpi=DPI)
    try:
        for agent, group in frame.groupby("agent", sort=True):
            group = group.sort_values("iteration")
            step = _stride(len(group), spec.max_points)
            thin = group.iloc[::step]
            if spec.mode is PlotMode.COST_VS_BOUND:
                (line,) = ax.plot(thin["iteration"], thin["z"], label=f"agent {agent}")
                ax.axhline(
                    float(group["beta"].iloc[0]),
                    color=line.get_color(),
                    linestyle="--",
                    linewidth=0.9,
                )
            else:
                ax.plot(thin["iteration"], thin["beta_minus_z"], label=f"agent {agent}")
        if spec.mode is PlotMode.BOUND_GAP:
            ax.axhline(0.0, color="red", linestyle="--", linewidth=1.1)
        if spec.freeze_iteration is not None:
            ax.axvline(spec.freeze_iteration, color="gray", linestyle=":", linewidth=1.0)
        ax.set_xlabel("iteration")
        if spec.mode is PlotMode.COST_VS_BOUND:
            ax.set_ylabel("running average cost")
            ax.set_title("per-agent average cost against bounds")
        else:
            ax.set_ylabel("bound minus running average")
            ax.set_title("per-agent bound gap")
        ax.legend(loc="upper right", fontsize=8)
        fig.tight_layout()
        out = Path(spec.output_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out, format="png", metadata={"Software": None})
    finally:
        plt.close(fig)
    return out
