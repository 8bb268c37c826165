"""Flat run configuration: `key = value` lines plus command-line overrides.

One global namespace of known keys with typed defaults; anything else is
a hard error so typos cannot silently fall back to defaults. Values keep
the type of their default. Every command writes the fully resolved
mapping next to its outputs so a run can be reproduced from its artifacts
alone.
"""

from __future__ import annotations

from pathlib import Path

from maskcorrect import data, nets, noise, train

__all__ = [
    "DEFAULTS",
    "format_config",
    "load_config",
    "noise_spec",
    "parse_line",
    "resolve",
    "seg_arch",
    "synth_config",
    "train_config",
    "write_config",
]

# key -> default; the default's type is the caster
DEFAULTS: dict[str, object] = {
    # shared
    "seed": 0,
    "data": "data",
    "name": "run",
    "runs_dir": "runs",
    # synthesis
    "out": "data",
    "scheme": "canvas",
    "train_count": 40,
    "meta_count": 4,
    "test_count": 16,
    "height": 64,
    "width": 64,
    "count_min": 3,
    "count_max": 6,
    "radius_min": 4.0,
    "radius_max": 10.0,
    "nucleus_mean": 0.70,
    "nucleus_sigma": 0.06,
    "background_mean": 0.30,
    "background_sigma": 0.06,
    "texture_sigma": 0.03,
    "max_occlusion": 0.25,
    "out_size": 64,
    "patch_size": 128,
    # corruption
    "kind": "dilation",
    "p": 0.4,
    "bbox_min": 1,
    "bbox_max": 3,
    "dilate_min": 1,
    "dilate_max": 5,
    # training
    "method": "mmc",
    "alpha": 1e-3,
    "alpha_drop_epoch": 300,
    "alpha_drop_factor": 0.1,
    "total_epochs": 500,
    "beta": 1e-4,
    "batch_size": 8,
    "meta_batch_size": 8,
    "main_optimizer": "sgd",
    "meta_optimizer": "adam",
    "adam_beta1": 0.9,
    "adam_beta2": 0.999,
    "adam_eps": 1e-8,
    "checkpoint_every": 10,
    "cnet_variant": "k3k1",
    "cnet_hidden": 8,
    "arch_levels": 3,
    "arch_channels": 8,
    # evaluation
    "checkpoint": "",
    "split": "test",
    "tau": 0.5,
    "overlay_limit": 64,
}


def parse_line(line: str) -> tuple[str, str] | None:
    """One `key = value` line; None for blanks and # comments."""
    stripped = line.strip()
    if not stripped or stripped.startswith("#"):
        return None
    if "=" not in stripped:
        raise ValueError(f"expected 'key = value', got {line.strip()!r}")
    key, value = stripped.split("=", 1)
    return key.strip(), value.strip()


def _cast(key: str, text: str):
    if key not in DEFAULTS:
        raise ValueError(f"unknown config key {key!r}")
    default = DEFAULTS[key]
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ValueError(
            f"config key {key!r} expects {type(default).__name__}, got {text!r}"
        ) from None


def load_config(path) -> dict:
    """Parse a config file into a {key: typed value} dict (no defaults)."""
    out: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        try:
            parsed = parse_line(line)
            if parsed is not None:
                key, value = parsed
                if key in out:
                    raise ValueError(f"duplicate config key {key!r}")
                out[key] = _cast(key, value)
        except ValueError as e:
            raise ValueError(f"{path}:{lineno}: {e}") from None
    return out


def resolve(path=None, overrides: list[tuple[str, str]] = ()) -> dict:
    """Defaults, then the config file, then overrides; fully typed."""
    cfg = dict(DEFAULTS)
    if path is not None:
        cfg.update(load_config(path))
    for key, value in overrides:
        cfg[key] = _cast(key, value)
    return cfg


def format_config(cfg: dict) -> str:
    lines = [f"{key} = {cfg[key]}" for key in sorted(cfg)]
    return "\n".join(lines) + "\n"


def write_config(cfg: dict, path) -> None:
    Path(path).write_text(format_config(cfg))


# ---------------------------------------------------------------------------
# materializers for the module-level configs


def synth_config(cfg: dict) -> data.SynthConfig:
    return data.SynthConfig(
        height=cfg["height"],
        width=cfg["width"],
        count_range=(cfg["count_min"], cfg["count_max"]),
        radius_range=(cfg["radius_min"], cfg["radius_max"]),
        nucleus_mean=cfg["nucleus_mean"],
        nucleus_sigma=cfg["nucleus_sigma"],
        background_mean=cfg["background_mean"],
        background_sigma=cfg["background_sigma"],
        texture_sigma=cfg["texture_sigma"],
        max_occlusion=cfg["max_occlusion"],
    )


def noise_spec(cfg: dict) -> noise.NoiseSpec:
    return noise.NoiseSpec(
        kind=cfg["kind"],
        proportion=cfg["p"],
        bbox_expand=(cfg["bbox_min"], cfg["bbox_max"]),
        dilate_radius=(cfg["dilate_min"], cfg["dilate_max"]),
        seed=cfg["seed"],
    )


def train_config(cfg: dict) -> train.TrainConfig:
    return train.TrainConfig(
        alpha=cfg["alpha"],
        alpha_drop_epoch=cfg["alpha_drop_epoch"],
        alpha_drop_factor=cfg["alpha_drop_factor"],
        total_epochs=cfg["total_epochs"],
        beta=cfg["beta"],
        batch_size=cfg["batch_size"],
        meta_batch_size=cfg["meta_batch_size"],
        seed=cfg["seed"],
        main_optimizer=cfg["main_optimizer"],
        meta_optimizer=cfg["meta_optimizer"],
        adam_beta1=cfg["adam_beta1"],
        adam_beta2=cfg["adam_beta2"],
        adam_eps=cfg["adam_eps"],
        checkpoint_every=cfg["checkpoint_every"],
        cnet_variant=cfg["cnet_variant"],
        cnet_hidden=cfg["cnet_hidden"],
    )


def seg_arch(cfg: dict) -> nets.SegArch:
    return nets.SegArch(e_levels=cfg["arch_levels"], base_channels=cfg["arch_channels"])


if __name__ == "__main__":
    print(format_config(DEFAULTS), end="")
