"""Annotation corruption for binary nuclei masks.

Three procedures, all operating on an instance labeling and leaving the
image untouched: deleting a proportion of instances, replacing surviving
instances by expanded bounding rectangles, and dilating surviving
instances. The two weak-annotation procedures delete first and corrupt
the survivors.

Randomness contract: one uniform instance-subset draw, then one integer
draw per surviving instance in ascending id order. Given the same
instance labeling and generator state the output is bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

__all__ = [
    "NOISE_KINDS",
    "InstanceBox",
    "NoiseSpec",
    "apply_noise",
    "bbox_noise",
    "connected_components",
    "dilate",
    "dilation_noise",
    "instance_box",
    "partial_gold",
]

NOISE_KINDS = ("partial", "bbox", "dilation")

# plus-shaped structuring element: 4-connectivity everywhere in this module
_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def connected_components(mask) -> np.ndarray:
    """4-connected components, ids 1..n in raster-scan discovery order.

    The scipy labeling already scans row-major, but the id order is its
    implementation detail, so labels are remapped by first occurrence.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"expected a 2-D mask, got shape {mask.shape}")
    raw, n = ndimage.label(mask != 0, structure=_CROSS)
    if n == 0:
        return raw.astype(np.int32)
    flat = raw.ravel()
    _, first = np.unique(flat, return_index=True)
    order = flat[np.sort(first)]
    lut = np.zeros(n + 1, dtype=np.int32)
    lut[order[order > 0]] = np.arange(1, n + 1, dtype=np.int32)
    return lut[raw]


def dilate(mask, r: int) -> np.ndarray:
    """r rounds of 4-connected binary dilation, clipped at the borders."""
    if r < 0:
        raise ValueError(f"dilation radius must be >= 0, got {r}")
    mask = np.asarray(mask) != 0
    if r == 0:
        return mask.astype(np.uint8)
    # iterations=0 would mean "until convergence" to scipy, hence the guard
    return ndimage.binary_dilation(mask, structure=_CROSS, iterations=r).astype(np.uint8)


class InstanceBox(NamedTuple):
    """Tight inclusive bounding rectangle of one instance."""

    instance_id: int
    min_row: int
    min_col: int
    max_row: int
    max_col: int


def instance_box(instances, instance_id: int) -> InstanceBox:
    rows, cols = np.nonzero(np.asarray(instances) == instance_id)
    if rows.size == 0:
        raise ValueError(f"instance {instance_id} not present in the labeling")
    return InstanceBox(int(instance_id), int(rows.min()), int(cols.min()),
                       int(rows.max()), int(cols.max()))


@dataclass(frozen=True)
class NoiseSpec:
    """Which corruption to run and its draw ranges (inclusive integers)."""

    kind: str
    proportion: float = 0.4
    bbox_expand: tuple[int, int] = (1, 3)
    dilate_radius: tuple[int, int] = (1, 5)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.proportion <= 1.0:
            raise ValueError(f"proportion must be in [0,1], got {self.proportion}")
        for name, (lo, hi) in (("bbox_expand", self.bbox_expand),
                               ("dilate_radius", self.dilate_radius)):
            if not (1 <= lo <= hi):
                raise ValueError(f"{name} must satisfy 1 <= lo <= hi, got {lo}..{hi}")


def _present_ids(instances: np.ndarray) -> np.ndarray:
    ids = np.unique(instances)
    return ids[ids > 0]


def partial_gold(instances, p: float, rng) -> tuple[np.ndarray, tuple[int, ...]]:
    """Erase round(p*n) uniformly chosen instances (half rounds away from
    zero); returns the remaining mask and the surviving ids, ascending."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"proportion must be in [0,1], got {p}")
    instances = np.asarray(instances)
    ids = _present_ids(instances)
    k = int(math.floor(p * ids.size + 0.5))
    removed = rng.choice(ids, size=k, replace=False)
    kept = np.setdiff1d(ids, removed)
    mask = np.isin(instances, kept).astype(np.uint8)
    return mask, tuple(int(i) for i in kept)


def bbox_noise(instances, p: float, rng,
               expand: tuple[int, int] = (1, 3)) -> tuple[np.ndarray, dict[int, int]]:
    """Survivors of the partial deletion become their tight bounding
    rectangles grown by e ~ U{expand} on every side, filled and clipped;
    returns the union mask and the per-instance draw."""
    instances = np.asarray(instances)
    _, kept = partial_gold(instances, p, rng)
    h, w = instances.shape
    out = np.zeros((h, w), dtype=np.uint8)
    draws: dict[int, int] = {}
    for iid in kept:
        e = int(rng.integers(expand[0], expand[1] + 1))
        box = instance_box(instances, iid)
        out[max(box.min_row - e, 0): box.max_row + e + 1,
            max(box.min_col - e, 0): box.max_col + e + 1] = 1
        draws[iid] = e
    return out, draws


def dilation_noise(instances, p: float, rng,
                   radius: tuple[int, int] = (1, 5)) -> tuple[np.ndarray, dict[int, int]]:
    """Survivors of the partial deletion are each dilated by their own
    r ~ U{radius}; returns the union mask and the per-instance draw."""
    instances = np.asarray(instances)
    _, kept = partial_gold(instances, p, rng)
    out = np.zeros(instances.shape, dtype=bool)
    draws: dict[int, int] = {}
    for iid in kept:
        r = int(rng.integers(radius[0], radius[1] + 1))
        out |= dilate(instances == iid, r).astype(bool)
        draws[iid] = r
    return out.astype(np.uint8), draws


def apply_noise(instances, spec: NoiseSpec, rng=None) -> tuple[np.ndarray, dict]:
    """Dispatch on spec.kind; returns (noisy mask, manifest info).

    The info dict records everything needed to audit the corruption:
    the kind, the proportion, and either the kept ids (partial) or the
    per-instance draws (weak kinds, keys stringified for JSON).
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    info: dict = {"kind": spec.kind, "proportion": spec.proportion}
    if spec.kind == "partial":
        mask, kept = partial_gold(instances, spec.proportion, rng)
        info["kept"] = [int(i) for i in kept]
    elif spec.kind == "bbox":
        mask, draws = bbox_noise(instances, spec.proportion, rng, spec.bbox_expand)
        info["draws"] = {str(k): v for k, v in draws.items()}
    else:
        mask, draws = dilation_noise(instances, spec.proportion, rng, spec.dilate_radius)
        info["draws"] = {str(k): v for k, v in draws.items()}
    return mask, info
