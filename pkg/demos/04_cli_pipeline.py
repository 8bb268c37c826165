"""The whole pipeline through the command-line front door.

Drives synth -> corrupt -> train -> eval -> gradcheck in-process with
cli.run, the same entry point `python3 -m maskcorrect.cli` uses, then
walks the run directory to show what each stage left behind: resolved
config, history and metrics CSVs, checkpoints, and overlay triptychs
(image | ground truth | prediction) for eyeballing.

Everything lands under demos/out/04_cli/. Takes a few seconds.
Run from the repository root:  python3 demos/04_cli_pipeline.py
"""

import csv
from pathlib import Path

from maskcorrect import cli

OUT = Path(__file__).resolve().parent / "out" / "04_cli"
OUT.mkdir(parents=True, exist_ok=True)
DATA = str(OUT / "dataset")
RUNS = str(OUT / "runs")

COMMON = [
    "--seed", "7", "--height", "32", "--width", "32",
    "--count_min", "2", "--count_max", "3",
    "--radius_min", "3", "--radius_max", "6",
    "--train_count", "20", "--meta_count", "2", "--test_count", "4",
]

stages = [
    ("synth", ["synth", "--out", DATA] + COMMON),
    ("corrupt", ["corrupt", "--data", DATA, "--kind", "bbox", "--p", "0.4",
                 "--seed", "7"]),
    ("train", ["train", "--data", DATA, "--runs_dir", RUNS, "--name", "demo",
               "--method", "mmc", "--arch_levels", "2", "--arch_channels", "4",
               "--cnet_hidden", "2", "--total_epochs", "2",
               "--alpha_drop_epoch", "2", "--batch_size", "4",
               "--meta_batch_size", "2", "--checkpoint_every", "2",
               "--seed", "7"]),
    ("eval", ["eval", "--data", DATA, "--runs_dir", RUNS, "--name", "demo-eval",
              "--checkpoint", str(Path(RUNS) / "demo" / "checkpoints" / "final.main.ckpt"),
              "--split", "test", "--seed", "7"]),
    ("gradcheck", ["gradcheck", "--seed", "7"]),
]

for name, argv in stages:
    print(f"$ maskcorrect {' '.join(argv)}")
    status = cli.run(argv)
    print(f"  -> exit {status}\n")
    assert status == cli.OK, f"{name} failed"

print("run directory after train + eval:")
for p in sorted(Path(RUNS).rglob("*")):
    if p.is_file():
        print(f"  {p.relative_to(OUT)}")

print("\nper-image test metrics from the eval run:")
with open(Path(RUNS) / "demo-eval" / "metrics.csv") as fh:
    for row in csv.DictReader(fh):
        print(f"  {row['image_id']:12s} dice {float(row['dice']):.4f} "
              f"iou {float(row['iou']):.4f}")
print("\n(two epochs only exercises the plumbing; see demo 03 for learning)")
