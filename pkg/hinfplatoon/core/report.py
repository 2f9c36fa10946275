from __future__ import annotations

import csv

from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import yaml  # noqa: E402

from .models import getLogger  # noqa: E402
from .types import GainRowPayload  # noqa: E402
from .utils import format_float, vehicle_label  # noqa: E402


__all__ = (
    "HEAD_COLOR",
    "HDV_COLOR",
    "CAV_COLOR",
    "plot_velocity_profiles",
    "write_gamma_series",
    "plot_gamma_series",
    "write_gain_table",
    "read_csv_columns",
    "render_directory",
)


logger = getLogger(__name__)

HEAD_COLOR = "black"
HDV_COLOR = "gray"
CAV_COLOR = "tab:blue"

GAIN_FIELDS = (
    "artifact",
    "outer",
    "certified_gamma",
    "empirical_gamma_approximated",
    "empirical_gamma_exact",
    "peak_deviation_last",
)

# reproducible SVG output
plt.rcParams["svg.hashsalt"] = "hinfplatoon"
_SVG_METADATA = {"Date": None, "Creator": None}


def _save(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=_SVG_METADATA)
    plt.close(fig)
    logger.debug("Wrote %s.", path)
    return path


def plot_velocity_profiles(
    time: np.ndarray,
    velocities: np.ndarray,
    head: np.ndarray,
    v_star: float,
    cav_indices: Iterable[int],
    path: Union[str, Path],
    title: str = "",
) -> Path:
    """
    Absolute velocities over time: head vehicle black, HDVs gray, CAVs blue.

    Parameters
    -----------
    velocities : np.ndarray
        `(T, n)` velocity deviations of the following vehicles.
    head : np.ndarray
        `(T,)` velocity deviation of the head vehicle.
    """
    cavs = set(cav_indices)
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(time, v_star + head, color=HEAD_COLOR, linewidth=1.2, label="head")
    for i in range(velocities.shape[1]):
        vehicle = i + 1
        color = CAV_COLOR if vehicle in cavs else HDV_COLOR
        label = vehicle_label(vehicle, cavs)
        ax.plot(time, v_star + velocities[:, i], color=color, linewidth=1.0, label=label)
    ax.set_xlabel("Time (s)")
    ax.set_ylabel("Velocity (m/s)")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", fontsize="small", ncol=2)
    fig.tight_layout()
    return _save(fig, path)


def write_gamma_series(outer: Sequence[int], gammas: Sequence[float], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["outer", "gamma"])
        for i, g in zip(outer, gammas):
            writer.writerow([str(i), format_float(g)])
    return path


def plot_gamma_series(outer: Sequence[int], gammas: Sequence[float], path: Union[str, Path]) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(outer, gammas, marker="o", color=CAV_COLOR)
    ax.set_xlabel("Outer iteration")
    ax.set_ylabel("Attenuation level")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def _cell(value) -> str:
    if value is None:
        return ""
    return format_float(value) if isinstance(value, float) else str(value)


def write_gain_table(rows: Sequence[GainRowPayload], directory: Union[str, Path]) -> Tuple[Path, Path]:
    """
    Writes `gains.csv` and a YAML summary `gains.yaml` with the same values.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / "gains.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(GAIN_FIELDS)
        for row in rows:
            writer.writerow([_cell(row[k]) for k in GAIN_FIELDS])
    yaml_path = directory / "gains.yaml"
    with yaml_path.open("w", encoding="utf-8") as f:
        yaml.safe_dump({"gains": [dict(row) for row in rows]}, f, sort_keys=False)
    return csv_path, yaml_path


def read_csv_columns(path: Union[str, Path]) -> Tuple[List[str], np.ndarray]:
    """
    Reads a numeric CSV with a header row.
    """
    with Path(path).open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    return header, np.asarray(rows, dtype=float).reshape(-1, len(header))


def render_directory(directory: Union[str, Path], v_star: float, cav_indices: Sequence[int]) -> List[Path]:
    """
    Re-draws every figure from the CSVs of a previous run: `trace_*.csv` into velocity
    profiles and `gamma_series.csv` into the attenuation plot.
    """
    directory = Path(directory)
    written: List[Path] = []
    for trace_path in sorted(directory.glob("trace_*.csv")):
        header, data = read_csv_columns(trace_path)
        vel_cols = [k for k, name in enumerate(header) if name.startswith("v_")]
        time, head = data[:, header.index("t")], data[:, header.index("w")]
        written.append(
            plot_velocity_profiles(
                time,
                data[:, vel_cols],
                head,
                v_star,
                cav_indices,
                trace_path.with_suffix(".svg"),
                trace_path.stem,
            )
        )
    series = directory / "gamma_series.csv"
    if series.is_file():
        _, data = read_csv_columns(series)
        written.append(plot_gamma_series(data[:, 0].astype(int), data[:, 1], series.with_suffix(".svg")))
    return written
