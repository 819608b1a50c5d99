"""
CSV and SVG emission for learning curves and ablation sweeps.
"""

import csv
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from latent_restoration.models import AblationRow, EpochRecord, MetricsReport  # noqa: E402

PathLike = Union[str, Path]

# byte-stable SVG ids
plt.rcParams["svg.hashsalt"] = "latent-restoration"


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[str]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_learning_curve_csv(records: List[EpochRecord], path: PathLike) -> Path:
    return write_csv(path, EpochRecord.CSV_FIELDS, (r.csv_row() for r in records))


def write_metrics_csv(reports: List[MetricsReport], path: PathLike) -> Path:
    return write_csv(path, MetricsReport.CSV_FIELDS, (r.csv_row() for r in reports))


def write_ablation_csv(rows: List[AblationRow], path: PathLike) -> Path:
    return write_csv(path, AblationRow.CSV_FIELDS, (r.csv_row() for r in rows))


def plot_learning_curve(records: List[EpochRecord], path: PathLike) -> Path:
    """Loss terms per epoch on a log axis, validation PSNR on a twin axis."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [r.epoch for r in records]
    for name in ("l2", "lcfm", "mse", "dp"):
        values = [getattr(r, name) for r in records]
        if any(v > 0 for v in values):
            ax.plot(epochs, values, label=name)
    if ax.lines:
        ax.set_yscale("log")
        ax.legend(loc="upper right")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    psnr = [r.val_psnr for r in records]
    if any(p == p for p in psnr):
        twin = ax.twinx()
        twin.plot(epochs, psnr, color="black", linestyle="--", label="val PSNR")
        twin.set_ylabel("val PSNR (dB)")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_ablation(rows: List[AblationRow], path: PathLike) -> Path:
    """Mean PSNR and Frechet score per setting of one swept key."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = list(dict.fromkeys(r.value for r in rows))
    psnr = [sum(r.psnr for r in rows if r.value == v) / sum(1 for r in rows if r.value == v) for v in values]
    score = [sum(r.frechet for r in rows if r.value == v) / sum(1 for r in rows if r.value == v) for v in values]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(values, psnr, marker="o", label="PSNR")
    ax.set_xlabel(rows[0].key if rows else "")
    ax.set_ylabel("PSNR (dB)")
    twin = ax.twinx()
    twin.plot(values, score, marker="s", color="tab:red", label="Frechet")
    twin.set_ylabel("Frechet score")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
