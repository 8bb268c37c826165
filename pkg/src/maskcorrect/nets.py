"""The two networks, expressed as pure functions over named parameter dicts.

The main segmentation net is a small encoder-decoder with skip connections:
E levels of conv-relu-pool, a middle conv, then E levels of upsample-concat-
conv-relu, closed by a 1x1 conv to a single logit channel. The corrector is
a two- or three-layer fully convolutional net that reads (logits, noisy
mask) and emits a soft corrected mask.

Parameters live in insertion-ordered dicts mapping names like "enc1.k" to
tensors, so a plain mapping works everywhere gradients or optimizer states
need to be keyed, and checkpoints are just named arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import BinaryIO, Mapping, NamedTuple

import numpy as np

from maskcorrect import autodiff as ad
from maskcorrect.autodiff import Tensor

__all__ = [
    "SegArch",
    "SegOutput",
    "CNET_VARIANTS",
    "init_seg",
    "seg_forward",
    "init_cnet",
    "cnet_forward",
    "count_params",
    "save_checkpoint",
    "load_checkpoint",
]

CNET_VARIANTS = ("k3k1", "k3k3k1", "k3k5k1")

# Gain of the engineered pass-through path at init: the corrector starts out
# mapping noisy-mask values {0,1} to sigmoid(-gain/2), sigmoid(+gain/2), so
# its output is within 0.02 of the noisy mask before any meta step.
PASS_THROUGH_GAIN = 8.0

_CKPT_MAGIC = b"MCKPT1"


@dataclass(frozen=True)
class SegArch:
    """Encoder-decoder hyperparameters: depth, base width, input channels."""

    e_levels: int = 3
    base_channels: int = 8
    in_channels: int = 1


class SegOutput(NamedTuple):
    logits: Tensor


def _he_kernel(rng: np.random.Generator, cout: int, cin: int, k: int) -> np.ndarray:
    return rng.standard_normal((cout, cin, k, k)) * np.sqrt(2.0 / (cin * k * k))


def init_seg(arch: SegArch = SegArch(), seed: int = 0) -> dict[str, Tensor]:
    """Fan-in scaled random kernels, zero biases, deterministic under seed."""
    if arch.e_levels < 1 or arch.base_channels < 1 or arch.in_channels < 1:
        raise ValueError(f"invalid architecture {arch}")
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}

    def add(name: str, cout: int, cin: int, k: int) -> None:
        params[f"{name}.k"] = ad.tensor(_he_kernel(rng, cout, cin, k), requires_grad=True)
        params[f"{name}.b"] = ad.tensor(np.zeros(cout), requires_grad=True)

    chans = [arch.in_channels] + [arch.base_channels * (1 << i) for i in range(arch.e_levels)]
    for i in range(1, arch.e_levels + 1):
        add(f"enc{i}", chans[i], chans[i - 1], 3)
    add("mid", chans[-1], chans[-1], 3)
    for i in range(arch.e_levels, 0, -1):
        # decoder input is upsampled features concatenated with the skip
        cout = chans[i - 1] if i > 1 else arch.base_channels
        add(f"dec{i}", cout, 2 * chans[i], 3)
    add("out", 1, arch.base_channels, 1)
    return params


def _seg_levels(params: Mapping[str, Tensor]) -> int:
    levels = sum(1 for name in params if name.startswith("enc") and name.endswith(".k"))
    if levels < 1 or f"enc{levels}.k" not in params:
        raise ValueError("parameter dict is not a segmentation net")
    return levels


def seg_forward(params: Mapping[str, Tensor], image) -> SegOutput:
    """Logits for a batch of images, same spatial size as the input."""
    image = ad.as_tensor(image)
    if image.data.ndim != 4:
        raise ValueError(f"expected NCHW input, got shape {image.shape}")
    levels = _seg_levels(params)
    _, c, h, w = image.shape
    cin = params["enc1.k"].shape[1]
    if c != cin:
        raise ValueError(f"net expects {cin} input channels, image has {c}")
    if h % (1 << levels) or w % (1 << levels):
        raise ValueError(f"spatial dims {h}x{w} not divisible by {1 << levels}")
    x = image
    skips = []
    for i in range(1, levels + 1):
        a = ad.activation(ad.conv2d(x, params[f"enc{i}.k"], params[f"enc{i}.b"], 1), "relu")
        skips.append(a)
        x = ad.spatial_resample(a, "maxpool2")
    x = ad.activation(ad.conv2d(x, params["mid.k"], params["mid.b"], 1), "relu")
    for i in range(levels, 0, -1):
        x = ad.spatial_resample(x, "upsample_nearest2")
        x = ad.concat_channels(x, skips[i - 1])
        x = ad.activation(ad.conv2d(x, params[f"dec{i}.k"], params[f"dec{i}.b"], 1), "relu")
    return SegOutput(ad.conv2d(x, params["out.k"], params["out.b"], 0))


def init_cnet(variant: str = "k3k1", hidden: int = 8, seed: int = 0) -> dict[str, Tensor]:
    """Corrector parameters with an engineered near-pass-through start.

    Hidden channel 0 of the first layer copies the noisy mask (center tap,
    unit weight); any middle layer forwards that channel unchanged; the
    final 1x1 layer reads only that channel, scaled by PASS_THROUGH_GAIN and
    centered so mask values {0,1} land symmetric around logit 0. Everything
    else is fan-in scaled random, as in init_seg.
    """
    if variant not in CNET_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {CNET_VARIANTS}")
    if hidden < 1:
        raise ValueError("hidden width must be >= 1")
    rng = np.random.default_rng(seed)
    kernel_sizes = {"k3k1": (3, 1), "k3k3k1": (3, 3, 1), "k3k5k1": (3, 5, 1)}[variant]
    params: dict[str, Tensor] = {}
    cin = 2
    for li, k in enumerate(kernel_sizes, start=1):
        last = li == len(kernel_sizes)
        cout = 1 if last else hidden
        kern = _he_kernel(rng, cout, cin, k)
        bias = np.zeros(cout)
        if li == 1:
            kern[0] = 0.0
            kern[0, 1, k // 2, k // 2] = 1.0  # channel 1 of the input is the noisy mask
        elif not last:
            kern[0] = 0.0
            kern[0, 0, k // 2, k // 2] = 1.0
        else:
            kern[:] = 0.0
            kern[0, 0, 0, 0] = PASS_THROUGH_GAIN
            bias[0] = -PASS_THROUGH_GAIN / 2.0
        params[f"c{li}.k"] = ad.tensor(kern, requires_grad=True)
        params[f"c{li}.b"] = ad.tensor(bias, requires_grad=True)
        cin = cout
    return params


def cnet_forward(theta: Mapping[str, Tensor], logits, noisy_mask) -> Tensor:
    """Soft corrected mask in (0,1), differentiable in all inputs."""
    logits, noisy_mask = ad.as_tensor(logits), ad.as_tensor(noisy_mask)
    if logits.shape != noisy_mask.shape:
        raise ValueError(f"shape mismatch: logits {logits.shape} vs mask {noisy_mask.shape}")
    if logits.data.ndim != 4 or logits.shape[1] != 1:
        raise ValueError(f"expected [N,1,H,W] inputs, got {logits.shape}")
    n_layers = sum(1 for name in theta if name.endswith(".k"))
    x = ad.concat_channels(logits, noisy_mask)
    for li in range(1, n_layers + 1):
        kern = theta[f"c{li}.k"]
        x = ad.conv2d(x, kern, theta[f"c{li}.b"], (kern.shape[2] - 1) // 2)
        x = ad.activation(x, "sigmoid" if li == n_layers else "relu")
    return x


def count_params(params: Mapping[str, Tensor]) -> int:
    return sum(p.size for p in params.values())


# --------------------------------------------------------------------------
# checkpoint format: text header (magic, count, one "name dims..." line per
# tensor) followed by the raw float64 little-endian buffers in header order


def save_checkpoint(params: Mapping[str, Tensor], path) -> None:
    lines = [_CKPT_MAGIC, str(len(params)).encode()]
    for name, p in params.items():
        if any(ch.isspace() for ch in name):
            raise ValueError(f"tensor name {name!r} contains whitespace")
        lines.append(" ".join([name, *map(str, p.shape)]).encode())
    with open(path, "wb") as fh:
        fh.write(b"\n".join(lines) + b"\n")
        for p in params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def _read_header_line(fh: BinaryIO, path) -> bytes:
    line = bytearray()
    while True:
        ch = fh.read(1)
        if not ch:
            raise ValueError(f"{path}: truncated checkpoint header")
        if ch == b"\n":
            return bytes(line)
        line.extend(ch)


def load_checkpoint(path) -> dict[str, Tensor]:
    with open(path, "rb") as fh:
        if _read_header_line(fh, path) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        try:
            count = int(_read_header_line(fh, path))
        except ValueError:
            raise ValueError(f"{path}: bad tensor count") from None
        entries = []
        for _ in range(count):
            fields = _read_header_line(fh, path).decode().split()
            if not fields:
                raise ValueError(f"{path}: empty header entry")
            name, dims = fields[0], tuple(int(d) for d in fields[1:])
            if any(d < 1 for d in dims):
                raise ValueError(f"{path}: bad shape {dims} for {name!r}")
            entries.append((name, dims))
        params: dict[str, Tensor] = {}
        for name, dims in entries:
            n_bytes = int(np.prod(dims, dtype=np.int64)) * 8 if dims else 8
            buf = fh.read(n_bytes)
            if len(buf) != n_bytes:
                raise ValueError(f"{path}: truncated data for {name!r}")
            arr = np.frombuffer(buf, dtype="<f8").reshape(dims)
            params[name] = ad.tensor(arr, requires_grad=True)
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after last tensor")
    if len(params) != count:
        raise ValueError(f"{path}: duplicate tensor names in header")
    return params
