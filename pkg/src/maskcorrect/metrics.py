"""Overlap metrics for binary segmentation and per-experiment CSV reports.

Scores are per-image (macro aggregation: the report mean averages image
scores, it does not pool pixels), computed on hard masks obtained by
thresholding. The empty-vs-empty case scores 1.0 for both metrics so an
all-background patch predicted as all-background counts as agreement.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from maskcorrect import autodiff as ad, nets

__all__ = [
    "CSV_HEADER",
    "ImageRow",
    "MetricsReport",
    "Split",
    "binarize",
    "dice",
    "evaluate",
    "iou",
    "read_csv",
    "write_csv",
]

CSV_HEADER = ("method", "noise", "proportion", "seed", "split",
              "image_id", "dice", "iou", "p_pixels", "g_pixels")


class Split(NamedTuple):
    """One dataset split: images [N,1,H,W] in [0,1], masks [N,1,H,W] in {0,1}."""

    ids: tuple[str, ...]
    images: np.ndarray
    masks: np.ndarray


class ImageRow(NamedTuple):
    image_id: str
    dice: float
    iou: float
    p_pixels: int
    g_pixels: int


def binarize(soft, tau: float = 0.5) -> np.ndarray:
    """Hard mask from a soft one: pixel >= tau maps to 1, else 0."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0,1), got {tau}")
    a = soft.data if isinstance(soft, ad.Tensor) else np.asarray(soft, dtype=np.float64)
    if a.size and (a.min() < 0.0 or a.max() > 1.0):
        raise ValueError("soft mask has values outside [0,1]")
    return (a >= tau).astype(np.uint8)


def _counts(pred, gold) -> tuple[int, int, int]:
    pred = np.asarray(pred) != 0
    gold = np.asarray(gold) != 0
    if pred.shape != gold.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gold.shape}")
    inter = int(np.count_nonzero(pred & gold))
    return inter, int(np.count_nonzero(pred)), int(np.count_nonzero(gold))


def iou(pred, gold) -> float:
    inter, p, g = _counts(pred, gold)
    union = p + g - inter
    return 1.0 if union == 0 else inter / union


def dice(pred, gold) -> float:
    inter, p, g = _counts(pred, gold)
    return 1.0 if p + g == 0 else 2.0 * inter / (p + g)


@dataclass
class MetricsReport:
    method: str
    noise: str
    proportion: float
    seed: int
    split: str
    rows: list[ImageRow]

    @property
    def mean_dice(self) -> float:
        return float(np.mean([r.dice for r in self.rows]))

    @property
    def mean_iou(self) -> float:
        return float(np.mean([r.iou for r in self.rows]))

    def csv_rows(self) -> list[tuple]:
        meta = (self.method, self.noise, self.proportion, self.seed, self.split)
        out = [meta + tuple(row) for row in self.rows]
        out.append(meta + ("MEAN", self.mean_dice, self.mean_iou,
                           float(np.mean([r.p_pixels for r in self.rows])),
                           float(np.mean([r.g_pixels for r in self.rows]))))
        return out


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def evaluate(params, split, tau: float = 0.5, batch_size: int = 32,
             method: str = "", noise: str = "", proportion: float = 0.0,
             seed: int = 0, split_name: str = "") -> MetricsReport:
    """Score a parameter set on a split, one row per image plus the mean."""
    n = len(split.images)
    if n == 0:
        raise ValueError("empty split")
    ids = list(getattr(split, "ids", None) or (f"{i:05d}" for i in range(n)))
    rows: list[ImageRow] = []
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        with ad.no_grad():
            logits = nets.seg_forward(params, split.images[start:stop]).logits.data
        pred = binarize(_stable_sigmoid(logits), tau)
        for j in range(stop - start):
            p, g = pred[j, 0], split.masks[start + j, 0]
            inter, np_, ng = _counts(p, g)
            rows.append(ImageRow(
                ids[start + j],
                1.0 if np_ + ng == 0 else 2.0 * inter / (np_ + ng),
                1.0 if np_ + ng == 0 else inter / (np_ + ng - inter),
                np_, ng,
            ))
    return MetricsReport(method, noise, proportion, seed, split_name, rows)


def write_csv(reports: Iterable[MetricsReport] | MetricsReport, path) -> None:
    if isinstance(reports, MetricsReport):
        reports = [reports]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for report in reports:
            writer.writerows(report.csv_rows())


def read_csv(path) -> list[dict]:
    """Rows as dicts with numeric fields parsed; MEAN rows included."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected metrics CSV header")
        out = []
        for row in reader:
            row["proportion"] = float(row["proportion"])
            row["seed"] = int(row["seed"])
            row["dice"] = float(row["dice"])
            row["iou"] = float(row["iou"])
            row["p_pixels"] = float(row["p_pixels"])
            row["g_pixels"] = float(row["g_pixels"])
            out.append(row)
        return out
