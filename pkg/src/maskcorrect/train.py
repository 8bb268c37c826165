"""Bi-level training loop and baselines.

Each training step runs three phases on one noisy batch plus one small
clean batch: a temporary plain-SGD update of the main net whose loss uses
the corrector output as a live graph node (so the updated weights are a
differentiable function of the corrector parameters), a corrector update
driven by the clean-batch loss of those temporary weights (gradient flows
through the update itself, which needs double backward), and finally the
persistent main-net update against the freshly corrected, detached mask.

The temporary update is always plain SGD: differentiating through a
stateful optimizer would entangle the corrector gradient with moment
buffers. The persistent updates use the configured optimizers.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, NamedTuple

import numpy as np

from maskcorrect import autodiff as ad, metrics, nets
from maskcorrect.autodiff import GradMap, Tensor

__all__ = [
    "Adam",
    "HISTORY_HEADER",
    "HistoryRow",
    "TrainConfig",
    "TrainData",
    "TrainerState",
    "baseline_train",
    "hypergrad_fd",
    "lr_at_epoch",
    "main_update",
    "meta_update",
    "mmc_train",
    "read_history",
    "temp_update",
    "write_history",
]

HISTORY_HEADER = ("epoch", "split", "dice", "iou", "loss", "lr", "wall_ms")

_EVAL_BATCH = 32


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for both the bi-level loop and the baselines.

    Defaults are the reference scale (500 epochs, drop at 300); desk runs
    pass total_epochs=60 with alpha_drop_epoch=60 so no drop occurs.
    """

    alpha: float = 1e-3
    alpha_drop_epoch: int = 300
    alpha_drop_factor: float = 0.1
    total_epochs: int = 500
    beta: float = 1e-4
    batch_size: int = 8
    meta_batch_size: int = 8
    seed: int = 0
    main_optimizer: str = "sgd"
    meta_optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 10
    cnet_variant: str = "k3k1"
    cnet_hidden: int = 8

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("learning rates must be positive")
        if self.total_epochs < 1 or self.alpha_drop_epoch > self.total_epochs:
            raise ValueError("need 1 <= alpha_drop_epoch <= total_epochs")
        if not 0 < self.alpha_drop_factor <= 1:
            raise ValueError("alpha_drop_factor must be in (0,1]")
        if self.batch_size < 1 or self.meta_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.main_optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown main_optimizer {self.main_optimizer!r}")
        if self.meta_optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown meta_optimizer {self.meta_optimizer!r}")
        if self.cnet_variant not in nets.CNET_VARIANTS:
            raise ValueError(f"unknown cnet_variant {self.cnet_variant!r}")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")


class TrainData(NamedTuple):
    """Split bundle for training: noisy-labeled bulk, small clean meta set,
    clean test set, and (when ground truth exists) clean bulk labels."""

    train_noisy: metrics.Split
    meta_clean: metrics.Split
    test_clean: metrics.Split
    train_clean: metrics.Split | None = None


class HistoryRow(NamedTuple):
    epoch: int
    split: str
    dice: float
    iou: float
    loss: float
    lr: float
    wall_ms: float


class StepStats(NamedTuple):
    loss: float
    dice: float
    iou: float


class Adam:
    """Adam with bias correction; step() returns fresh leaf tensors."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, Tensor], grads: GradMap) -> dict[str, Tensor]:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        out: dict[str, Tensor] = {}
        for name, p in params.items():
            g = grads[name].data
            m = self.m.get(name)
            if m is None:
                m = np.zeros(p.shape)
                v = np.zeros(p.shape)
            else:
                v = self.v[name]
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            step = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            out[name] = ad.tensor(p.data - step, requires_grad=True)
        return out

    def clone(self) -> "Adam":
        other = Adam(self.lr, self.beta1, self.beta2, self.eps)
        other.t = self.t
        other.m = {k: m.copy() for k, m in self.m.items()}
        other.v = {k: v.copy() for k, v in self.v.items()}
        return other


@dataclass
class TrainerState:
    config: TrainConfig
    W: dict[str, Tensor]
    theta: dict[str, Tensor]
    t: int = 0
    epoch: int = 0
    adam_w: Adam | None = None
    adam_theta: Adam | None = None
    last_step: StepStats | None = None


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Main-net learning rate schedule: one multiplicative drop."""
    if epoch >= config.alpha_drop_epoch:
        return config.alpha * config.alpha_drop_factor
    return config.alpha


def _as_batch(batch) -> tuple[Tensor, Tensor]:
    x, y = batch
    x = ad.as_tensor(x)
    y = ad.as_tensor(y)
    if len(x.data) == 0:
        raise ValueError("empty batch")
    return x, y


def _train_loss(W, theta, noisy_batch) -> tuple[Tensor, Tensor, Tensor]:
    """(loss, logits, corrected) with the corrected mask kept in the graph."""
    x, y_noisy = _as_batch(noisy_batch)
    logits = nets.seg_forward(W, x).logits
    corrected = nets.cnet_forward(theta, logits, y_noisy)
    return ad.bce_with_logits(logits, corrected), logits, corrected


def _meta_loss(W, meta_batch) -> Tensor:
    x, y = _as_batch(meta_batch)
    return ad.bce_with_logits(nets.seg_forward(W, x).logits, y)


def temp_update(W, theta, noisy_batch, alpha: float):
    """One differentiable SGD step of the main net against the corrected
    mask; returns (updated weights still wired to theta, loss)."""
    loss, _, _ = _train_loss(W, theta, noisy_batch)
    grads = ad.grad(loss, W, create_graph=True)
    return ad.functional_sgd_step(W, grads, alpha), loss


def _reaches_params(root: Tensor, params: Mapping[str, Tensor]) -> bool:
    ids = {id(p) for p in params.values()}
    seen: set[int] = set()
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in ids:
            return True
        op = t.node
        if op is None or id(op) in seen:
            continue
        seen.add(id(op))
        stack.extend(op.inputs)
    return False


def meta_update(theta, w_prime, meta_batch, beta: float,
                optimizer: Adam | None = None):
    """Corrector update from the clean-batch loss of the temporary weights.

    The gradient reaches theta only through the temporary update, so this
    is where double backward happens. With optimizer=None the raw step
    theta - beta * grad is applied; otherwise the Adam state is advanced.
    """
    loss = _meta_loss(w_prime, meta_batch)
    if not _reaches_params(loss, theta):
        raise ValueError(
            "meta loss does not depend on the corrector parameters; "
            "was the temporary update built with create_graph?"
        )
    hyper = ad.grad(loss, theta)
    if optimizer is None:
        return {
            name: ad.tensor(p.data - beta * hyper[name].data, requires_grad=True)
            for name, p in theta.items()
        }
    optimizer.lr = beta
    return optimizer.step(theta, hyper)


def _apply_main_step(state: TrainerState, grads: GradMap) -> None:
    lr = lr_at_epoch(state.config, state.epoch)
    if state.config.main_optimizer == "adam":
        state.adam_w.lr = lr
        state.W = state.adam_w.step(state.W, grads)
    else:
        state.W = {
            name: ad.tensor(p.data - lr * grads[name].data, requires_grad=True)
            for name, p in state.W.items()
        }
    state.t += 1


def _batch_overlap(logits_data: np.ndarray, targets: np.ndarray) -> tuple[float, float]:
    """Mean per-image dice/iou of thresholded logits against the targets."""
    pred = logits_data >= 0.0
    gold = targets >= 0.5
    inter = (pred & gold).sum(axis=(1, 2, 3))
    p = pred.sum(axis=(1, 2, 3))
    g = gold.sum(axis=(1, 2, 3))
    denom = p + g
    union = denom - inter
    d = np.where(denom == 0, 1.0, 2.0 * inter / np.maximum(denom, 1))
    i = np.where(denom == 0, 1.0, inter / np.maximum(union, 1))
    return float(d.mean()), float(i.mean())


def main_update(state: TrainerState, noisy_batch) -> TrainerState:
    """Persistent main-net step against the freshly corrected mask, which
    is recomputed with the current corrector and detached (the corrector
    is fixed within the step)."""
    x, y_noisy = _as_batch(noisy_batch)
    logits = nets.seg_forward(state.W, x).logits
    with ad.no_grad():
        corrected = nets.cnet_forward(state.theta, ad.tensor(logits.data), y_noisy)
    target = ad.tensor(corrected.data)
    loss = ad.bce_with_logits(logits, target)
    assert not _reaches_params(loss, state.theta), "corrected mask not detached"
    grads = ad.grad(loss, state.W)
    d, i = _batch_overlap(logits.data, y_noisy.data)
    _apply_main_step(state, grads)
    state.last_step = StepStats(float(loss.data), d, i)
    return state


def hypergrad_fd(theta, W, noisy_batch, meta_batch, alpha: float,
                 epsilon: float = 1e-4, train_loss=None, meta_loss=None) -> GradMap:
    """Central-difference oracle for the corrector gradient: perturb each
    theta coordinate, redo the temporary update and the clean-batch loss
    from scratch, and difference. Quadratic in nothing but patience."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    train_loss = train_loss or (lambda W, th, b: _train_loss(W, th, b)[0])
    meta_loss = meta_loss or _meta_loss

    def value(theta_arrays: dict[str, np.ndarray]) -> float:
        th = {k: ad.tensor(a, requires_grad=True) for k, a in theta_arrays.items()}
        loss = train_loss(W, th, noisy_batch)
        grads = ad.grad(loss, W)
        with ad.no_grad():
            w_prime = {
                name: ad.tensor(p.data - alpha * grads[name].data)
                for name, p in W.items()
            }
        with ad.no_grad():
            return float(meta_loss(w_prime, meta_batch).data)

    arrays = {k: np.array(p.data) for k, p in theta.items()}
    out: dict[str, Tensor] = {}
    for name in theta:
        g = np.zeros(arrays[name].shape)
        flat = arrays[name].reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + epsilon
            up = value(arrays)
            flat[i] = saved - epsilon
            down = value(arrays)
            flat[i] = saved
            gflat[i] = (up - down) / (2.0 * epsilon)
        out[name] = ad.tensor(g)
    return GradMap(out)


# --------------------------------------------------------------------------
# training loops


def _shuffled_batches(rng: np.random.Generator, n: int, batch: int):
    order = rng.permutation(n)
    return [order[s : s + batch] for s in range(0, n, batch)]


class _MetaCycler:
    """Sequential pass over the clean set, reshuffled once per epoch and
    wrapping around mid-epoch without reshuffling."""

    def __init__(self, rng: np.random.Generator, n: int, batch: int):
        self._rng = rng
        self._n = n
        self._batch = min(batch, n)
        self._order = np.arange(n)
        self._ptr = 0

    def reshuffle(self) -> None:
        self._order = self._rng.permutation(self._n)
        self._ptr = 0

    def next_indices(self) -> np.ndarray:
        take = []
        need = self._batch
        while need > 0:
            grab = min(need, self._n - self._ptr)
            take.append(self._order[self._ptr : self._ptr + grab])
            self._ptr = (self._ptr + grab) % self._n
            need -= grab
        return np.concatenate(take)


def _evaluate_split(W, split: metrics.Split) -> tuple[float, float, float]:
    """(mean dice, mean iou, mean bce loss) over a split, macro per image."""
    n = len(split.images)
    dices, ious, losses = [], [], []
    for start in range(0, n, _EVAL_BATCH):
        stop = min(start + _EVAL_BATCH, n)
        with ad.no_grad():
            logits = nets.seg_forward(W, split.images[start:stop]).logits
            loss = ad.bce_with_logits(logits, ad.tensor(split.masks[start:stop]))
        losses.append(float(loss.data) * (stop - start))
        pred = logits.data >= 0.0
        gold = split.masks[start:stop] >= 0.5
        inter = (pred & gold).sum(axis=(1, 2, 3))
        p = pred.sum(axis=(1, 2, 3))
        g = gold.sum(axis=(1, 2, 3))
        denom = p + g
        dices.extend(np.where(denom == 0, 1.0, 2.0 * inter / np.maximum(denom, 1)))
        ious.extend(np.where(denom == 0, 1.0, inter / np.maximum(denom - inter, 1)))
    return float(np.mean(dices)), float(np.mean(ious)), sum(losses) / n


def _validate_data(data: TrainData, config: TrainConfig, need_clean: bool) -> None:
    for name, split in (("train_noisy", data.train_noisy),
                        ("meta_clean", data.meta_clean),
                        ("test_clean", data.test_clean)):
        if len(split.images) == 0:
            raise ValueError(f"empty split {name}")
        if split.images.shape != split.masks.shape:
            raise ValueError(f"{name}: image/mask shape mismatch")
    m, big = len(data.meta_clean.images), len(data.train_noisy.images)
    if m * 10 > big:
        raise ValueError(f"meta split too large: {m} clean vs {big} noisy samples")
    if need_clean and data.train_clean is None:
        raise ValueError("this mode needs clean labels for the training split")


def _dump_divergence(out_dir, state: TrainerState, batch) -> None:
    if out_dir is None:
        return
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    x, y = batch
    np.savez(out_dir / "divergence_dump.npz",
             x=np.asarray(x.data if isinstance(x, Tensor) else x),
             y=np.asarray(y.data if isinstance(y, Tensor) else y),
             t=state.t, epoch=state.epoch)
    nets.save_checkpoint(state.W, out_dir / "divergence_main.ckpt")
    if state.theta:
        nets.save_checkpoint(state.theta, out_dir / "divergence_meta.ckpt")


def _write_checkpoints(out_dir, state: TrainerState, tag: str) -> None:
    if out_dir is None:
        return
    ckpt = Path(out_dir) / "checkpoints"
    ckpt.mkdir(parents=True, exist_ok=True)
    nets.save_checkpoint(state.W, ckpt / f"{tag}.main.ckpt")
    if state.theta:
        nets.save_checkpoint(state.theta, ckpt / f"{tag}.meta.ckpt")


def _epoch_eval_rows(state: TrainerState, data: TrainData, train_stats,
                     wall_ms: float, splits=("test",)) -> list[HistoryRow]:
    lr = lr_at_epoch(state.config, state.epoch)
    rows = [HistoryRow(state.epoch, "train", train_stats[0], train_stats[1],
                       train_stats[2], lr, wall_ms)]
    named = {"test": data.test_clean, "meta": data.meta_clean}
    for split_name in splits:
        t0 = time.perf_counter()
        d, i, loss = _evaluate_split(state.W, named[split_name])
        rows.append(HistoryRow(state.epoch, split_name, d, i, loss, lr,
                               (time.perf_counter() - t0) * 1e3))
    return rows


def mmc_train(config: TrainConfig, data: TrainData, out_dir=None,
              on_epoch: Callable[[TrainerState], None] | None = None,
              corrector=None,
              arch: nets.SegArch = nets.SegArch()) -> tuple[TrainerState, list[HistoryRow]]:
    """Full bi-level run; returns the final state and the epoch history.

    ``corrector``, when given, replaces the corrector network everywhere:
    it is called as corrector(logits, noisy_mask, indices) and must return
    the corrected-mask tensor. Because the corrector parameters are then
    absent from every graph, the corrector update is skipped (their
    gradient would be identically zero), which keeps the main-net
    trajectory exactly comparable to a plain supervised run.
    """
    _validate_data(data, config, need_clean=False)
    rng_main, rng_meta = _spawn_rngs(config.seed, 2)
    state = TrainerState(
        config=config,
        W=nets.init_seg(arch, seed=config.seed),
        theta=nets.init_cnet(config.cnet_variant, config.cnet_hidden, seed=config.seed),
        adam_w=_make_adam(config) if config.main_optimizer == "adam" else None,
        adam_theta=_make_adam(config) if config.meta_optimizer == "adam" else None,
    )
    train, meta = data.train_noisy, data.meta_clean
    cycler = _MetaCycler(rng_meta, len(meta.images), config.meta_batch_size)
    history: list[HistoryRow] = []
    for epoch in range(config.total_epochs):
        state.epoch = epoch
        cycler.reshuffle()
        t0 = time.perf_counter()
        losses, dices, ious = [], [], []
        for idx in _shuffled_batches(rng_main, len(train.images), config.batch_size):
            batch = (train.images[idx], train.masks[idx])
            mi = cycler.next_indices()
            meta_batch = (meta.images[mi], meta.masks[mi])
            try:
                _mmc_step(state, batch, meta_batch, idx, corrector)
            except ad.DivergenceError:
                _dump_divergence(out_dir, state, batch)
                raise
            losses.append(state.last_step.loss)
            dices.append(state.last_step.dice)
            ious.append(state.last_step.iou)
        wall = (time.perf_counter() - t0) * 1e3
        stats = (float(np.mean(dices)), float(np.mean(ious)), float(np.mean(losses)))
        history.extend(_epoch_eval_rows(state, data, stats, wall))
        if (epoch + 1) % config.checkpoint_every == 0:
            _write_checkpoints(out_dir, state, f"epoch_{epoch:04d}")
        if on_epoch is not None:
            on_epoch(state)
    _write_checkpoints(out_dir, state, "final")
    return state, history


def _mmc_step(state: TrainerState, batch, meta_batch, idx, corrector) -> None:
    """temp -> meta -> main on one batch, sharing the forward graph.

    The main phase reuses the logits graph built for the temporary phase;
    recomputing it would produce bit-identical values at double the cost,
    which the fused-equals-composed test pins down.
    """
    cfg = state.config
    x, y_noisy = _as_batch(batch)
    logits = nets.seg_forward(state.W, x).logits
    if corrector is None:
        corrected = nets.cnet_forward(state.theta, logits, y_noisy)
    else:
        corrected = ad.as_tensor(corrector(logits, y_noisy, idx))
    temp_loss = ad.bce_with_logits(logits, corrected)
    grads = ad.grad(temp_loss, state.W, create_graph=True)
    w_prime = ad.functional_sgd_step(state.W, grads, cfg.alpha)
    if corrector is None:
        state.theta = meta_update(state.theta, w_prime, meta_batch, cfg.beta,
                                  state.adam_theta)
    with ad.no_grad():
        if corrector is None:
            corrected2 = nets.cnet_forward(state.theta, ad.tensor(logits.data), y_noisy)
        else:
            corrected2 = ad.as_tensor(corrector(ad.tensor(logits.data), y_noisy, idx))
    main_loss = ad.bce_with_logits(logits, ad.tensor(corrected2.data))
    main_grads = ad.grad(main_loss, state.W)
    d, i = _batch_overlap(logits.data, y_noisy.data)
    _apply_main_step(state, main_grads)
    state.last_step = StepStats(float(main_loss.data), d, i)


def baseline_train(config: TrainConfig, data: TrainData, mode: str,
                   out_dir=None,
                   on_epoch: Callable[[TrainerState], None] | None = None,
                   warm_start: tuple[TrainerState, list[HistoryRow]] | None = None,
                   arch: nets.SegArch = nets.SegArch()) -> tuple[TrainerState, list[HistoryRow]]:
    """Supervised baselines: plain noisy training, the clean upper bound,
    or noisy training followed by a short fine-tune on the clean set.

    ``warm_start`` lets the fine-tune mode resume from a finished noisy
    run's (state, history) instead of repeating the identical first phase;
    the fine-tune phase draws from its own RNG stream, so the result is
    bit-identical either way.
    """
    if mode not in ("noisy", "clean", "finetune"):
        raise ValueError(f"unknown baseline mode {mode!r}")
    _validate_data(data, config, need_clean=(mode == "clean"))
    rng_main, _, rng_ft = _spawn_rngs(config.seed, 3)
    if mode == "clean":
        train = data.train_clean
    else:
        train = data.train_noisy

    if warm_start is not None:
        if mode != "finetune":
            raise ValueError("warm_start only applies to finetune mode")
        prev_state, prev_history = warm_start
        if prev_state.config != config:
            raise ValueError("warm_start config differs from the requested one")
        state = TrainerState(
            config=config,
            W={k: ad.tensor(p.data, requires_grad=True) for k, p in prev_state.W.items()},
            theta={},
            t=prev_state.t,
            epoch=prev_state.epoch,
            adam_w=prev_state.adam_w.clone() if prev_state.adam_w else None,
        )
        history = list(prev_history)
    else:
        state = TrainerState(
            config=config,
            W=nets.init_seg(arch, seed=config.seed),
            theta={},
            adam_w=_make_adam(config) if config.main_optimizer == "adam" else None,
        )
        history = []
        for epoch in range(config.total_epochs):
            state.epoch = epoch
            wall, stats = _supervised_epoch(
                state, train, rng_main, lr_at_epoch(config, epoch), out_dir)
            history.extend(_epoch_eval_rows(state, data, stats, wall))
            if (epoch + 1) % config.checkpoint_every == 0:
                _write_checkpoints(out_dir, state, f"epoch_{epoch:04d}")
            if on_epoch is not None:
                on_epoch(state)

    if mode == "finetune":
        ft_epochs = max(1, round(0.1 * config.total_epochs))
        ft_lr = 0.1 * config.alpha
        # meta-set score before any fine-tuning, for the improvement check
        d, i, loss = _evaluate_split(state.W, data.meta_clean)
        history.append(HistoryRow(config.total_epochs - 1, "meta", d, i, loss,
                                  ft_lr, 0.0))
        for epoch in range(config.total_epochs, config.total_epochs + ft_epochs):
            state.epoch = epoch
            wall, stats = _supervised_epoch(
                state, data.meta_clean, rng_ft, ft_lr, out_dir)
            history.extend(_epoch_eval_rows(state, data, stats, wall,
                                            splits=("test", "meta")))
            if on_epoch is not None:
                on_epoch(state)
    _write_checkpoints(out_dir, state, "final")
    return state, history


def _supervised_epoch(state: TrainerState, train: metrics.Split,
                      rng: np.random.Generator, lr: float, out_dir):
    t0 = time.perf_counter()
    losses, dices, ious = [], [], []
    for idx in _shuffled_batches(rng, len(train.images), state.config.batch_size):
        x = ad.tensor(train.images[idx])
        y = ad.tensor(train.masks[idx])
        try:
            logits = nets.seg_forward(state.W, x).logits
            loss = ad.bce_with_logits(logits, y)
            grads = ad.grad(loss, state.W)
        except ad.DivergenceError:
            _dump_divergence(out_dir, state, (x, y))
            raise
        d, i = _batch_overlap(logits.data, y.data)
        if state.config.main_optimizer == "adam":
            state.adam_w.lr = lr
            state.W = state.adam_w.step(state.W, grads)
        else:
            state.W = {
                name: ad.tensor(p.data - lr * grads[name].data, requires_grad=True)
                for name, p in state.W.items()
            }
        state.t += 1
        losses.append(float(loss.data))
        dices.append(d)
        ious.append(i)
    wall = (time.perf_counter() - t0) * 1e3
    return wall, (float(np.mean(dices)), float(np.mean(ious)), float(np.mean(losses)))


def _spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _make_adam(config: TrainConfig) -> Adam:
    return Adam(config.alpha, config.adam_beta1, config.adam_beta2, config.adam_eps)


# --------------------------------------------------------------------------
# history CSV


def write_history(history: list[HistoryRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_HEADER)
        writer.writerows(history)


def read_history(path) -> list[HistoryRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != HISTORY_HEADER:
            raise ValueError(f"{path}: unexpected history header")
        return [
            HistoryRow(int(e), s, float(d), float(i), float(lo), float(lr), float(w))
            for e, s, d, i, lo, lr, w in reader
        ]
