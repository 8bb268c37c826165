"""Synthetic nuclei data: ellipse rendering, patch extraction, persistence.

Generated images are grayscale [1,H,W] float64 in [0,1], quantized to the
8-bit grid at generation time so a save/load round trip through the PGM
layout reproduces the in-memory arrays exactly. Instance labelings use
ids 1..k in draw order; later instances overwrite earlier ones where they
overlap, and a placement that would occlude an existing instance beyond
the configured fraction is redrawn.

Every sample gets its own RNG substream derived from (seed, split, index),
so datasets are reproducible byte for byte and generation order is free.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from maskcorrect import metrics, noise, pgm, train

__all__ = [
    "DatasetSplits",
    "SamplePair",
    "SynthConfig",
    "build_splits",
    "corrupt_dataset",
    "load_dataset",
    "multi_nuclei_patches",
    "sample_id",
    "save_dataset",
    "single_nuclei_patches",
    "synth_sample",
    "to_train_data",
]

SPLIT_NAMES = ("train", "meta", "test")

_PLACE_RETRIES = 50


@dataclass(frozen=True)
class SynthConfig:
    """Canvas, nuclei geometry, and intensity model for one sample."""

    height: int = 64
    width: int = 64
    count_range: tuple[int, int] = (3, 6)
    radius_range: tuple[float, float] = (4.0, 10.0)
    nucleus_mean: float = 0.70
    nucleus_sigma: float = 0.06
    background_mean: float = 0.30
    background_sigma: float = 0.06
    texture_sigma: float = 0.03
    max_occlusion: float = 0.25

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ValueError("canvas must be at least 8x8")
        nmin, nmax = self.count_range
        if not 1 <= nmin <= nmax:
            raise ValueError(f"count_range must satisfy 1 <= lo <= hi, got {nmin}..{nmax}")
        rmin, rmax = self.radius_range
        if not 2.0 <= rmin <= rmax:
            raise ValueError(f"radius_range must satisfy 2 <= lo <= hi, got {rmin}..{rmax}")
        for name in ("nucleus_mean", "background_mean"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0,1]")
        for name in ("nucleus_sigma", "background_sigma", "texture_sigma"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.max_occlusion < 1.0:
            raise ValueError("max_occlusion must be in [0,1)")


class SamplePair(NamedTuple):
    """image [1,H,W] in [0,1]; clean_mask [H,W] 0/1; optional noisy mask;
    instance labeling [H,W] with ids 1..k."""

    image: np.ndarray
    clean_mask: np.ndarray
    noisy_mask: np.ndarray | None
    instances: np.ndarray


class DatasetSplits(NamedTuple):
    train: list[SamplePair]
    meta: list[SamplePair]
    test: list[SamplePair]
    info: dict


def sample_id(split: str, index: int) -> str:
    return f"{split}_{index:05d}"


def _ellipse_pixels(h, w, cy, cx, a, b, phi) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    u = (dx * math.cos(phi) + dy * math.sin(phi)) / a
    v = (-dx * math.sin(phi) + dy * math.cos(phi)) / b
    return u * u + v * v <= 1.0


def synth_sample(cfg: SynthConfig, rng: np.random.Generator) -> SamplePair:
    """Render one clean sample: textured ellipses on a noisy background."""
    h, w = cfg.height, cfg.width
    n_goal = int(rng.integers(cfg.count_range[0], cfg.count_range[1] + 1))
    instances = np.zeros((h, w), dtype=np.int32)
    placed = 0
    for _ in range(n_goal):
        accepted = False
        for _ in range(_PLACE_RETRIES):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            a, b = rng.uniform(*cfg.radius_range, size=2)
            phi = rng.uniform(0.0, math.pi)
            cand = _ellipse_pixels(h, w, cy, cx, a, b, phi)
            if cand.sum() < 4:
                continue
            # the newcomer overwrites; reject it if any earlier instance
            # would lose more than the allowed fraction of its pixels
            ok = True
            for j in range(1, placed + 1):
                pix_j = instances == j
                lost = int((cand & pix_j).sum())
                if lost > cfg.max_occlusion * int(pix_j.sum()):
                    ok = False
                    break
            if ok:
                placed += 1
                instances[cand] = placed
                accepted = True
                break
        if not accepted:
            if placed >= cfg.count_range[0]:
                break
            raise RuntimeError(
                f"could not place {cfg.count_range[0]} instances on a "
                f"{h}x{w} canvas after {_PLACE_RETRIES} retries each"
            )
    fg = instances > 0
    background = cfg.background_mean + cfg.background_sigma * rng.standard_normal((h, w))
    nucleus = cfg.nucleus_mean + cfg.nucleus_sigma * rng.standard_normal((h, w))
    texture = cfg.texture_sigma * rng.standard_normal((h, w))
    raw = np.where(fg, nucleus, background) + texture
    image = np.rint(np.clip(raw, 0.0, 1.0) * 255.0) / 255.0
    return SamplePair(image[None], fg.astype(np.uint8), None, instances)


def _nn_rescale(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resample of the last two axes (pure gather)."""
    src_h, src_w = a.shape[-2:]
    ri = np.minimum((np.floor((np.arange(out_h) + 0.5) * src_h / out_h)).astype(int), src_h - 1)
    ci = np.minimum((np.floor((np.arange(out_w) + 0.5) * src_w / out_w)).astype(int), src_w - 1)
    return a[..., ri[:, None], ci[None, :]]


def single_nuclei_patches(sample: SamplePair,
                          out_size: int = 64) -> tuple[list[SamplePair], int]:
    """One centered square patch per instance, rescaled to out_size.

    The crop window is centered on the instance centroid with a margin
    around its bounding box, shifted (not shrunk) where it overruns the
    canvas. The patch mask keeps only the center instance. Instances of
    one pixel or less cannot anchor a patch; they are skipped and counted
    in the second return value.
    """
    h, w = sample.instances.shape
    patches: list[SamplePair] = []
    skipped = 0
    for iid in range(1, int(sample.instances.max()) + 1):
        pix = sample.instances == iid
        count = int(pix.sum())
        if count <= 1:
            skipped += 1
            continue
        rows, cols = np.nonzero(pix)
        cy, cx = float(rows.mean()), float(cols.mean())
        box_h = int(rows.max() - rows.min() + 1)
        box_w = int(cols.max() - cols.min() + 1)
        side_half = max(box_h, box_w) / 2.0
        margin = max(2, int(round(0.1 * max(box_h, box_w))))
        side = 2 * (int(math.ceil(side_half)) + margin)
        # window midpoint lands within half a pixel of the centroid; the
        # rescale then keeps the instance centered in the patch
        y0 = int(round(cy - (side - 1) / 2.0))
        x0 = int(round(cx - (side - 1) / 2.0))
        y0 = min(max(y0, 0), max(h - side, 0))
        x0 = min(max(x0, 0), max(w - side, 0))
        side_y = min(side, h)
        side_x = min(side, w)
        img = sample.image[:, y0 : y0 + side_y, x0 : x0 + side_x]
        mask = pix[y0 : y0 + side_y, x0 : x0 + side_x]
        img = _nn_rescale(img, out_size, out_size)
        mask = _nn_rescale(mask, out_size, out_size).astype(np.uint8)
        noisy = None
        if sample.noisy_mask is not None:
            noisy = _nn_rescale(
                sample.noisy_mask[y0 : y0 + side_y, x0 : x0 + side_x] != 0,
                out_size, out_size,
            ).astype(np.uint8)
        patches.append(SamplePair(img, mask, noisy, mask.astype(np.int32)))
    return patches, skipped


def multi_nuclei_patches(sample: SamplePair, size: int = 128,
                         stride: int | None = None) -> list[SamplePair]:
    """Regular sliding-window crops; instances relabeled per patch."""
    h, w = sample.instances.shape
    if h < size or w < size:
        raise ValueError(f"canvas {h}x{w} smaller than patch size {size}")
    stride = size if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be >= 1")
    patches: list[SamplePair] = []
    for y0 in range(0, h - size + 1, stride):
        for x0 in range(0, w - size + 1, stride):
            mask = sample.clean_mask[y0 : y0 + size, x0 : x0 + size]
            noisy = None
            if sample.noisy_mask is not None:
                noisy = np.ascontiguousarray(
                    sample.noisy_mask[y0 : y0 + size, x0 : x0 + size])
            patches.append(SamplePair(
                np.ascontiguousarray(sample.image[:, y0 : y0 + size, x0 : x0 + size]),
                np.ascontiguousarray(mask),
                noisy,
                noise.connected_components(mask),
            ))
    return patches


def _sample_rng(seed: int, split_index: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, split_index, index)))


def build_splits(cfg: SynthConfig, counts: tuple[int, int, int], seed: int,
                 scheme: str = "canvas", out_size: int = 64,
                 patch_size: int = 128) -> DatasetSplits:
    """Generate train/meta/test splits of the requested sizes.

    scheme "canvas" takes each rendered sample as-is; "single" and "multi"
    render source canvases and harvest their patches until the split is
    full. Counts are (train, meta, test).
    """
    if scheme not in ("canvas", "single", "multi"):
        raise ValueError(f"unknown scheme {scheme!r}")
    splits: list[list[SamplePair]] = []
    skipped_total = 0
    for split_index, want in enumerate(counts):
        if want < 1:
            raise ValueError("every split needs at least one sample")
        samples: list[SamplePair] = []
        source = 0
        while len(samples) < want:
            rng = _sample_rng(seed, split_index, source)
            source += 1
            sample = synth_sample(cfg, rng)
            if scheme == "canvas":
                samples.append(sample)
            elif scheme == "single":
                patches, skipped = single_nuclei_patches(sample, out_size)
                skipped_total += skipped
                samples.extend(patches)
            else:
                samples.extend(multi_nuclei_patches(sample, patch_size))
        del samples[want:]
        splits.append(samples)
    info = {
        "config": asdict(cfg),
        "seed": seed,
        "scheme": scheme,
        "counts": {name: len(s) for name, s in zip(SPLIT_NAMES, splits)},
        "skipped_degenerate": skipped_total,
    }
    return DatasetSplits(splits[0], splits[1], splits[2], info)


def corrupt_dataset(splits: DatasetSplits, spec: noise.NoiseSpec) -> DatasetSplits:
    """Attach noisy masks to the training split; meta and test stay clean.

    Each sample is corrupted under its own substream of spec.seed. The
    returned info gains a noise record with the per-sample audit trail.
    """
    corrupted: list[SamplePair] = []
    per_sample: dict[str, dict] = {}
    for i, sample in enumerate(splits.train):
        rng = np.random.default_rng(np.random.SeedSequence((spec.seed, i)))
        mask, rec = noise.apply_noise(sample.instances, spec, rng)
        corrupted.append(sample._replace(noisy_mask=mask))
        per_sample[sample_id("train", i)] = rec
    info = dict(splits.info)
    info["noise"] = {
        "kind": spec.kind,
        "proportion": spec.proportion,
        "bbox_expand": list(spec.bbox_expand),
        "dilate_radius": list(spec.dilate_radius),
        "seed": spec.seed,
        "per_sample": per_sample,
    }
    return splits._replace(train=corrupted, info=info)


# ---------------------------------------------------------------------------
# persistence


def save_dataset(splits: DatasetSplits, root) -> None:
    """Write the PGM layout: {split}/{images,masks,instances[,noisy_masks]}
    plus a meta.json manifest with config, seed, and counts."""
    root = Path(root)
    for name, samples in zip(SPLIT_NAMES, splits[:3]):
        for sub in ("images", "masks", "instances"):
            (root / name / sub).mkdir(parents=True, exist_ok=True)
        if any(s.noisy_mask is not None for s in samples):
            (root / name / "noisy_masks").mkdir(parents=True, exist_ok=True)
        for i, s in enumerate(samples):
            sid = sample_id(name, i)
            pgm.write_pgm(root / name / "images" / f"{sid}.pgm",
                          np.rint(s.image[0] * 255.0))
            pgm.write_pgm(root / name / "masks" / f"{sid}.pgm",
                          (s.clean_mask != 0) * np.uint8(255))
            pgm.write_pgm16(root / name / "instances" / f"{sid}.pgm16", s.instances)
            if s.noisy_mask is not None:
                pgm.write_pgm(root / name / "noisy_masks" / f"{sid}.pgm",
                              (s.noisy_mask != 0) * np.uint8(255))
    with open(root / "meta.json", "w") as fh:
        json.dump(splits.info, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_binary_mask(path) -> np.ndarray:
    a = pgm.read_pgm(path)
    bad = np.setdiff1d(np.unique(a), [0, 255])
    if bad.size:
        raise ValueError(f"{path}: mask values must be 0 or 255, found {bad[0]}")
    return (a == 255).astype(np.uint8)


def load_dataset(root) -> DatasetSplits:
    """Read a dataset directory back; validates masks, shapes, and the
    mask/instances correspondence, naming the offending file."""
    root = Path(root)
    manifest = root / "meta.json"
    if not manifest.exists():
        raise ValueError(f"{manifest}: manifest missing")
    info = json.loads(manifest.read_text())
    # a corruption pass records itself in a separate file so the original
    # manifest is never rewritten; merge it back here
    noise_manifest = root / "noise.json"
    if noise_manifest.exists():
        info["noise"] = json.loads(noise_manifest.read_text())
    out: list[list[SamplePair]] = []
    for name in SPLIT_NAMES:
        img_dir = root / name / "images"
        if not img_dir.is_dir():
            raise ValueError(f"{root / name}: split directory missing")
        samples: list[SamplePair] = []
        for img_path in sorted(img_dir.glob("*.pgm")):
            sid = img_path.stem
            image = pgm.read_pgm(img_path).astype(np.float64) / 255.0
            mask_path = root / name / "masks" / f"{sid}.pgm"
            if not mask_path.exists():
                raise ValueError(f"{mask_path}: mask file missing")
            mask = _load_binary_mask(mask_path)
            if mask.shape != image.shape:
                raise ValueError(f"{mask_path}: shape {mask.shape} does not "
                                 f"match image {image.shape}")
            inst_path = root / name / "instances" / f"{sid}.pgm16"
            if not inst_path.exists():
                raise ValueError(f"{inst_path}: instance file missing")
            instances = pgm.read_pgm(inst_path).astype(np.int32)
            if not np.array_equal(instances > 0, mask != 0):
                raise ValueError(f"{inst_path}: instance foreground does not "
                                 f"match the mask")
            noisy_path = root / name / "noisy_masks" / f"{sid}.pgm"
            noisy = _load_binary_mask(noisy_path) if noisy_path.exists() else None
            samples.append(SamplePair(image[None], mask, noisy, instances))
        if not samples:
            raise ValueError(f"{img_dir}: no samples found")
        out.append(samples)
    return DatasetSplits(out[0], out[1], out[2], info)


def _as_split(name: str, samples: list[SamplePair], which: str) -> metrics.Split:
    ids = tuple(sample_id(name, i) for i in range(len(samples)))
    images = np.stack([s.image for s in samples])
    masks = []
    for i, s in enumerate(samples):
        if which == "noisy":
            if s.noisy_mask is None:
                raise ValueError(f"{ids[i]}: no noisy mask; run the corruption first")
            masks.append(s.noisy_mask)
        else:
            masks.append(s.clean_mask)
    return metrics.Split(ids, images, np.stack(masks).astype(np.float64)[:, None])


def to_train_data(splits: DatasetSplits, noisy_train: bool = True) -> train.TrainData:
    """Stack the splits into the trainer's array bundle. The training split
    uses its noisy masks when requested; clean labels ride along when the
    clean baseline needs them."""
    return train.TrainData(
        train_noisy=_as_split("train", splits.train, "noisy" if noisy_train else "clean"),
        meta_clean=_as_split("meta", splits.meta, "clean"),
        test_clean=_as_split("test", splits.test, "clean"),
        train_clean=_as_split("train", splits.train, "clean"),
    )
