"""Synthetic nuclei data and the three label corruptions.

Renders a few ellipse-nuclei canvases, then corrupts one clean labeling
three ways: deleting a share of the instances, swelling the survivors to
padded bounding rectangles, and dilating the survivor shapes. Writes
side-by-side PGM panels to demos/out/02_noise/ and prints the audit trail
each corruption leaves behind.

Run from the repository root:  python3 demos/02_data_and_noise.py
"""

from pathlib import Path

import numpy as np

from maskcorrect import data, noise, pgm

OUT = Path(__file__).resolve().parent / "out" / "02_noise"
OUT.mkdir(parents=True, exist_ok=True)

cfg = data.SynthConfig()
splits = data.build_splits(cfg, counts=(4, 1, 1), seed=11)
sample = splits.train[0]
n = int(sample.instances.max())
print(f"rendered {len(splits.train)} train canvases of "
      f"{cfg.height}x{cfg.width}; sample 0 has {n} nuclei")

# corrupt the same labeling three ways, each under its own generator so
# the partial-deletion draw is identical across kinds
partial, kept = noise.partial_gold(sample.instances, 0.4, np.random.default_rng(99))
boxes, box_draws = noise.bbox_noise(sample.instances, 0.4, np.random.default_rng(99))
fat, dil_draws = noise.dilation_noise(sample.instances, 0.4, np.random.default_rng(99))

print(f"partial deletion kept instances {list(kept)} of 1..{n}")
print(f"bbox expansion per survivor: {box_draws}")
print(f"dilation radius per survivor: {dil_draws}")
clean_px = int(sample.clean_mask.sum())
for name, m in (("partial", partial), ("bbox", boxes), ("dilation", fat)):
    print(f"  {name:8s} foreground {int(np.asarray(m).sum()):5d} px "
          f"(clean {clean_px})")

def _u8(m):
    return (np.asarray(m) != 0).astype(np.uint8) * 255

img = np.clip(np.round(sample.image[0] * 255), 0, 255).astype(np.uint8)
sep = np.full((cfg.height, 2), 128, dtype=np.uint8)
panel = np.hstack([img, sep, _u8(sample.clean_mask), sep, _u8(partial),
                   sep, _u8(boxes), sep, _u8(fat)])
pgm.write_pgm(OUT / "sample0_image_clean_partial_bbox_dilation.pgm", panel)
print(f"wrote panel {panel.shape[0]}x{panel.shape[1]} to {OUT}")

# the dataset-level pass stores a manifest entry per corrupted sample, so
# a saved dataset can be audited (and replayed) later
spec = noise.NoiseSpec("dilation", proportion=0.4, seed=5)
corrupted = data.corrupt_dataset(splits, spec)
record = corrupted.info["noise"]
first = data.sample_id("train", 0)
print(f"dataset corruption: kind={record['kind']} "
      f"proportion={record['proportion']}")
print(f"  audit for {first}: {record['per_sample'][first]}")
