"""Command-line front door.

    maskcorrect synth     [--config FILE] [--key value ...]
    maskcorrect corrupt   [--config FILE] [--key value ...]
    maskcorrect train     [--config FILE] [--key value ...]
    maskcorrect eval      [--config FILE] [--key value ...]
    maskcorrect gradcheck [--config FILE] [--key value ...]

Overrides accept ``--key value``, ``--key=value``, or ``key=value``; keys
are the flat config namespace (see config.DEFAULTS). Exit codes: 0 ok,
2 configuration error, 3 data or checkpoint error, 4 numerical
divergence during training, 5 gradient check failure.

Every command drops the fully resolved configuration next to its
outputs. Apart from ``timing.csv`` (wall-clock measurements), all
artifacts are reproducible byte for byte from the config alone.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from maskcorrect import autodiff as ad
from maskcorrect import config, data, metrics, nets, noise, pgm, train

__all__ = ["main", "run"]

_COMMANDS = ("synth", "corrupt", "train", "eval", "gradcheck")

_USAGE = """\
usage: maskcorrect COMMAND [--config FILE] [--key value | key=value ...]

commands:
  synth      generate a synthetic nuclei dataset (out, seed, scheme, ...)
  corrupt    add noisy training masks to a dataset (data, kind, p, seed)
  train      fit a model (data, method {mmc,noisy,clean,finetune}, name)
  eval       score a checkpoint on a split (data, checkpoint, split, name)
  gradcheck  finite-difference audit of gradients and hypergradients

keys and defaults: python3 -m maskcorrect.config (or see config.DEFAULTS)
"""

OK, CONFIG_ERROR, DATA_ERROR, DIVERGED, GRADCHECK_FAILED = 0, 2, 3, 4, 5

_TRAIN_METHODS = ("mmc", "noisy", "clean", "finetune")


def _parse_argv(argv: list[str]) -> tuple[str, str | None, list[tuple[str, str]]]:
    """(command, config path, overrides); raises ValueError on bad shape."""
    if not argv:
        raise ValueError("missing command")
    command, rest = argv[0], list(argv[1:])
    if command not in _COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    config_path: str | None = None
    overrides: list[tuple[str, str]] = []
    i = 0
    while i < len(rest):
        arg = rest[i]
        if arg == "--config":
            if config_path is not None:
                raise ValueError("--config given twice")
            if i + 1 >= len(rest):
                raise ValueError("--config needs a file argument")
            config_path = rest[i + 1]
            i += 2
        elif arg.startswith("--"):
            body = arg[2:]
            if "=" in body:
                key, value = body.split("=", 1)
                i += 1
            else:
                if i + 1 >= len(rest):
                    raise ValueError(f"option --{body} needs a value")
                key, value = body, rest[i + 1]
                i += 2
            overrides.append((key.strip(), value.strip()))
        elif "=" in arg:
            key, value = arg.split("=", 1)
            overrides.append((key.strip(), value.strip()))
            i += 1
        else:
            raise ValueError(f"unexpected argument {arg!r}")
    return command, config_path, overrides


def _noise_meta(info: dict) -> tuple[str, float]:
    rec = info.get("noise") or {}
    return rec.get("kind", "none"), float(rec.get("proportion", 0.0))


def _run_dir(cfg: dict) -> Path:
    out = Path(cfg["runs_dir"]) / cfg["name"]
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_overlays(out_dir: Path, params, split: metrics.Split, tau: float,
                    limit: int) -> None:
    """Side-by-side PGM per image: input | ground truth | prediction."""
    n = min(max(limit, 0), len(split.images))
    if n == 0:
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    for start in range(0, n, 32):
        stop = min(start + 32, n)
        with ad.no_grad():
            out = nets.seg_forward(params, split.images[start:stop])
        z = out.logits.data[:, 0]
        prob = 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))
        pred = metrics.binarize(prob, tau)
        for j in range(stop - start):
            img = np.rint(split.images[start + j, 0] * 255.0)
            gold = (split.masks[start + j, 0] >= 0.5) * 255.0
            hyp = pred[j] * 255.0
            sep = np.full((img.shape[0], 1), 128.0)
            panel = np.hstack([img, sep, gold, sep, hyp])
            pgm.write_pgm(out_dir / f"{split.ids[start + j]}.pgm", panel)


# ---------------------------------------------------------------------------
# commands


def _cmd_synth(cfg: dict) -> int:
    scfg = config.synth_config(cfg)
    counts = (cfg["train_count"], cfg["meta_count"], cfg["test_count"])
    splits = data.build_splits(scfg, counts, cfg["seed"], scheme=cfg["scheme"],
                               out_size=cfg["out_size"],
                               patch_size=cfg["patch_size"])
    out = Path(cfg["out"])
    data.save_dataset(splits, out)
    config.write_config(cfg, out / "config.txt")
    got = splits.info["counts"]
    print(f"wrote {got['train']}/{got['meta']}/{got['test']} "
          f"train/meta/test samples to {out}")
    return OK


def _cmd_corrupt(cfg: dict) -> int:
    root = Path(cfg["data"])
    spec = config.noise_spec(cfg)
    splits = data.load_dataset(root)
    corrupted = data.corrupt_dataset(splits, spec)
    mask_dir = root / "train" / "noisy_masks"
    mask_dir.mkdir(parents=True, exist_ok=True)
    for i, sample in enumerate(corrupted.train):
        pgm.write_pgm(mask_dir / f"{data.sample_id('train', i)}.pgm",
                      (sample.noisy_mask != 0) * np.uint8(255))
    with open(root / "noise.json", "w") as fh:
        json.dump(corrupted.info["noise"], fh, indent=2, sort_keys=True)
        fh.write("\n")
    config.write_config(cfg, root / "corrupt_config.txt")
    print(f"wrote {len(corrupted.train)} noisy masks "
          f"({spec.kind}, p={spec.proportion}) under {root}")
    return OK


def _cmd_train(cfg: dict) -> int:
    method = cfg["method"]
    tcfg = config.train_config(cfg)
    arch = config.seg_arch(cfg)
    splits = data.load_dataset(cfg["data"])
    bundle = data.to_train_data(splits, noisy_train=(method != "clean"))
    run_dir = _run_dir(cfg)
    config.write_config(cfg, run_dir / "config.txt")
    # the trainer writes checkpoints/ (and any divergence dump) under here
    if method == "mmc":
        state, history = train.mmc_train(tcfg, bundle, out_dir=run_dir, arch=arch)
    else:
        state, history = train.baseline_train(tcfg, bundle, method,
                                              out_dir=run_dir, arch=arch)
    # history.csv is deterministic under the seed; the wall clock is not,
    # so the measured times go to a separate file
    train.write_history([r._replace(wall_ms=0.0) for r in history],
                        run_dir / "history.csv")
    train.write_history(history, run_dir / "timing.csv")
    kind, proportion = _noise_meta(splits.info)
    report = metrics.evaluate(state.W, bundle.test_clean, tau=cfg["tau"],
                              method=method, noise=kind, proportion=proportion,
                              seed=cfg["seed"], split_name="test")
    metrics.write_csv(report, run_dir / "metrics.csv")
    _write_overlays(run_dir / "overlays", state.W, bundle.test_clean,
                    cfg["tau"], cfg["overlay_limit"])
    print(f"{method}: {tcfg.total_epochs} epochs, test dice "
          f"{report.mean_dice:.4f}, iou {report.mean_iou:.4f}; "
          f"artifacts in {run_dir}")
    return OK


def _cmd_eval(cfg: dict) -> int:
    splits = data.load_dataset(cfg["data"])
    bundle = data.to_train_data(splits, noisy_train=False)
    split = {"train": bundle.train_clean, "meta": bundle.meta_clean,
             "test": bundle.test_clean}[cfg["split"]]
    params = nets.load_checkpoint(cfg["checkpoint"])
    run_dir = _run_dir(cfg)
    config.write_config(cfg, run_dir / "config.txt")
    kind, proportion = _noise_meta(splits.info)
    report = metrics.evaluate(params, split, tau=cfg["tau"],
                              method=cfg["method"], noise=kind,
                              proportion=proportion, seed=cfg["seed"],
                              split_name=cfg["split"])
    metrics.write_csv(report, run_dir / "metrics.csv")
    _write_overlays(run_dir / "overlays", params, split, cfg["tau"],
                    cfg["overlay_limit"])
    print(f"{cfg['split']}: dice {report.mean_dice:.4f}, "
          f"iou {report.mean_iou:.4f} over {len(report.rows)} images; "
          f"artifacts in {run_dir}")
    return OK


# ---------------------------------------------------------------------------
# gradcheck: self-contained finite-difference audit


def _fd_max_rel_err(fn, arrays: dict[str, np.ndarray], eps: float = 1e-6) -> float:
    """Worst relative error of reverse-mode gradients vs central differences.

    fn maps a {name: Tensor} dict to a scalar Tensor and is re-run from
    scratch for every probe, so it must be deterministic.
    """
    leaves = {k: ad.tensor(a, requires_grad=True) for k, a in arrays.items()}
    exact = ad.grad(fn(leaves), leaves)

    def value() -> float:
        with ad.no_grad():
            return float(fn({k: ad.tensor(a) for k, a in arrays.items()}).data)

    worst = 0.0
    for name, a in arrays.items():
        fd = np.zeros(a.shape)
        flat, fd_flat = a.reshape(-1), fd.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            up = value()
            flat[i] = saved - eps
            down = value()
            flat[i] = saved
            fd_flat[i] = (up - down) / (2.0 * eps)
        g = np.asarray(exact[name].data)
        denom = max(float(np.max(np.abs(fd))), float(np.max(np.abs(g))), 1.0)
        worst = max(worst, float(np.max(np.abs(fd - g))) / denom)
    return worst


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.2):
    """Values with |x| >= margin so relu kinks stay out of FD reach."""
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return sign * rng.uniform(margin, 1.0, shape)


def _distinct_windows(rng: np.random.Generator, shape, gap: float = 1e-3):
    """Random values whose 2x2 pooling windows have no near-ties."""
    while True:
        a = rng.standard_normal(shape)
        n, c, h, w = a.shape
        windows = a.reshape(n, c, h // 2, 2, w // 2, 2)
        windows = windows.transpose(0, 1, 2, 4, 3, 5).reshape(-1, 4)
        spread = np.sort(windows, axis=1)
        if np.min(np.diff(spread, axis=1)) > gap:
            return a


def _op_cases(rng: np.random.Generator) -> list[tuple[str, object, dict]]:
    x = rng.standard_normal((2, 2, 6, 6))
    k = rng.standard_normal((3, 2, 3, 3)) * 0.5
    b = rng.standard_normal(3) * 0.1
    a4 = rng.standard_normal((2, 2, 4, 4))
    logits = rng.standard_normal((2, 1, 4, 4))
    targets = rng.uniform(0.1, 0.9, (2, 1, 4, 4))
    return [
        ("conv2d", lambda p: (lambda o: (o * o).mean())(
            ad.conv2d(p["x"], p["k"], p["b"], 1)),
         {"x": x, "k": k, "b": b}),
        ("relu", lambda p: (lambda o: (o * o).mean())(ad.relu(p["x"])),
         {"x": _away_from_zero(rng, (2, 3, 4, 4))}),
        ("sigmoid", lambda p: (lambda o: (o * o).mean())(ad.sigmoid(p["x"])),
         {"x": rng.standard_normal((2, 3, 4, 4))}),
        ("softplus", lambda p: (lambda o: (o * o).mean())(ad.softplus(p["x"])),
         {"x": rng.standard_normal((2, 3, 4, 4))}),
        ("maxpool2", lambda p: (lambda o: (o * o).mean())(ad.maxpool2(p["x"])),
         {"x": _distinct_windows(rng, (2, 2, 4, 4))}),
        ("upsample_nearest2",
         lambda p: (lambda o: (o * o).mean())(ad.upsample_nearest2(p["x"])),
         {"x": a4}),
        ("concat_channels",
         lambda p: (lambda o: (o * o).mean())(ad.concat_channels(p["a"], p["b"])),
         {"a": rng.standard_normal((2, 2, 4, 4)),
          "b": rng.standard_normal((2, 3, 4, 4))}),
        ("bce_with_logits",
         lambda p: ad.bce_with_logits(p["z"], p["t"]),
         {"z": logits, "t": targets}),
        ("arithmetic",
         lambda p: (lambda c: (c * c).mean())(
             p["a"] * p["b"] + (1.0 - p["a"]) - p["b"] * 0.25),
         {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((3, 4))}),
    ]


def _flat_grads(gm, keys) -> np.ndarray:
    return np.concatenate([np.asarray(gm[k].data).reshape(-1) for k in keys])


def _cmd_gradcheck(cfg: dict) -> int:
    failures: list[str] = []

    op_limit = 1e-5
    ops_worst = 0.0
    for seed in range(3):
        for name, fn, arrays in _op_cases(np.random.default_rng(cfg["seed"] + seed)):
            err = _fd_max_rel_err(fn, arrays)
            ops_worst = max(ops_worst, err)
            if err > op_limit:
                failures.append(f"op {name} (seed {cfg['seed'] + seed})")
            if seed == 0:
                print(f"  op {name:<18} max rel err {err:.3e}")
    status = "ok" if ops_worst <= op_limit else "FAIL"
    print(f"suite ops: max rel err {ops_worst:.3e} (limit {op_limit:.0e}) {status}")

    # closed-form scalar bilevel toy: inner L=(w-t)^2/2, outer L=w'^2/2,
    # so d(outer)/dt = alpha * (w - alpha*(w - t))
    w0, t0, alpha = 1.0, 0.0, 0.1
    W = {"w": ad.tensor(np.array(w0), requires_grad=True)}
    th = {"t": ad.tensor(np.array(t0), requires_grad=True)}
    diff = W["w"] - th["t"]
    inner = (diff * diff) * 0.5
    w_prime = ad.functional_sgd_step(W, ad.grad(inner, W, create_graph=True), alpha)
    outer = (w_prime["w"] * w_prime["w"]) * 0.5
    hyper = float(ad.grad(outer, th)["t"].data)
    expect = alpha * (w0 - alpha * (w0 - t0))
    toy_err = abs(hyper - expect)
    status = "ok" if toy_err <= 1e-10 else "FAIL"
    if toy_err > 1e-10:
        failures.append("hypergradient scalar toy")
    print(f"suite hypergrad toy: abs err {toy_err:.3e} (limit 1e-10) {status}")

    # small net: exact double-backward hypergradient vs the FD oracle
    rng = np.random.default_rng(cfg["seed"] + 7)
    W = nets.init_seg(nets.SegArch(e_levels=1, base_channels=2), seed=cfg["seed"])
    th = nets.init_cnet("k3k1", hidden=2, seed=cfg["seed"])
    # nudge the corrector off its pass-through point, which sits exactly
    # on a relu kink where central differences straddle two slopes
    th = {k: ad.tensor(p.data + 0.1 * rng.standard_normal(p.shape),
                       requires_grad=True) for k, p in th.items()}
    nb = (rng.random((2, 1, 8, 8)), (rng.random((2, 1, 8, 8)) < 0.5).astype(float))
    mb = (rng.random((2, 1, 8, 8)), (rng.random((2, 1, 8, 8)) < 0.5).astype(float))
    alpha = 1e-2
    w_prime, _ = train.temp_update(W, th, nb, alpha)
    meta = ad.bce_with_logits(nets.seg_forward(w_prime, mb[0]).logits,
                              ad.as_tensor(mb[1]))
    exact = _flat_grads(ad.grad(meta, th), sorted(th))
    fd = _flat_grads(train.hypergrad_fd(th, W, nb, mb, alpha, 1e-4), sorted(th))
    cos = float(np.dot(exact, fd) / (np.linalg.norm(exact) * np.linalg.norm(fd)))
    rel = float(np.linalg.norm(exact - fd) / np.linalg.norm(fd))
    status = "ok" if cos >= 0.999 and rel <= 1e-3 else "FAIL"
    if status == "FAIL":
        failures.append("hypergradient small net")
    print(f"suite hypergrad net: cosine {cos:.7f} rel L2 {rel:.3e} "
          f"(limits 0.999, 1e-03) {status}")

    if failures:
        print("gradcheck FAILED: " + ", ".join(failures))
        return GRADCHECK_FAILED
    print("gradcheck: all suites passed")
    return OK


# ---------------------------------------------------------------------------
# dispatch


def run(argv: list[str]) -> int:
    if not argv or argv[0] in ("-h", "--help", "help"):
        print(_USAGE, end="")
        return OK if argv else CONFIG_ERROR
    try:
        command, config_path, overrides = _parse_argv(argv)
        cfg = config.resolve(config_path, overrides)
        if command == "train" and cfg["method"] not in _TRAIN_METHODS:
            raise ValueError(
                f"config key 'method' must be one of {_TRAIN_METHODS}, "
                f"got {cfg['method']!r}")
        if command == "eval":
            if not cfg["checkpoint"]:
                raise ValueError("config key 'checkpoint' is required for eval")
            if cfg["split"] not in data.SPLIT_NAMES:
                raise ValueError(
                    f"config key 'split' must be one of {data.SPLIT_NAMES}, "
                    f"got {cfg['split']!r}")
        # materialize early so value errors surface as config errors
        if command == "synth":
            config.synth_config(cfg)
        elif command == "corrupt":
            config.noise_spec(cfg)
        elif command == "train":
            config.train_config(cfg)
            config.seg_arch(cfg)
    except (ValueError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return CONFIG_ERROR

    handler = {"synth": _cmd_synth, "corrupt": _cmd_corrupt, "train": _cmd_train,
               "eval": _cmd_eval, "gradcheck": _cmd_gradcheck}[command]
    try:
        return handler(cfg)
    except ad.DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return DIVERGED
    except (ValueError, OSError, RuntimeError) as e:
        # RuntimeError covers generation failures (unplaceable instances)
        print(f"error: {e}", file=sys.stderr)
        return DATA_ERROR


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
