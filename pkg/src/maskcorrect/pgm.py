"""Binary PGM (P5) reading and writing.

The dataset interchange format: 8-bit files for images and masks, 16-bit
big-endian files (extension .pgm16) for instance labelings. Chosen because
the format is a three-token header plus a raw raster, so round trips are
bit-exact and inspectable with any image viewer or a hex dump.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["read_pgm", "write_pgm", "write_pgm16"]


def _validate(a, maxval: int, path) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"{path}: expected a 2-D array, got shape {a.shape}")
    if a.size and (np.any(a < 0) or np.any(a > maxval)):
        raise ValueError(f"{path}: values outside [0, {maxval}]")
    if not np.issubdtype(a.dtype, np.integer):
        if np.any(a != np.rint(a)):
            raise ValueError(f"{path}: non-integer pixel values")
    return a


def write_pgm(path, a) -> None:
    """Write an 8-bit grayscale array as binary PGM (maxval 255)."""
    a = _validate(a, 255, path)
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(a.astype(np.uint8).tobytes())


def write_pgm16(path, a) -> None:
    """Write a 16-bit array as binary PGM, maxval 65535, big-endian raster."""
    a = _validate(a, 65535, path)
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(a.astype(">u2").tobytes())


def _read_tokens(data: bytes, path, n: int = 4) -> tuple[list[bytes], int]:
    """First n whitespace-separated header tokens, skipping # comments.

    Returns the tokens and the offset one byte past the single whitespace
    that terminates the last one (where the raster starts).
    """
    tokens: list[bytes] = []
    i = 0
    current = bytearray()
    while i < len(data):
        c = data[i : i + 1]
        if c == b"#" and not current:
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        if c in (b" ", b"\t", b"\n", b"\r", b"\x0b", b"\x0c"):
            if current:
                tokens.append(bytes(current))
                current = bytearray()
                if len(tokens) == n:
                    return tokens, i + 1
        else:
            current += c
        i += 1
    raise ValueError(f"{path}: truncated PGM header")


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM; uint8 for maxval <= 255, uint16 (big-endian) above."""
    data = Path(path).read_bytes()
    tokens, offset = _read_tokens(data, path)
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ValueError(f"{path}: non-numeric PGM header fields") from None
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad PGM dimensions {w}x{h} maxval {maxval}")
    itemsize = 1 if maxval <= 255 else 2
    raster = data[offset:]
    if len(raster) != w * h * itemsize:
        raise ValueError(
            f"{path}: raster is {len(raster)} bytes, expected {w * h * itemsize}"
        )
    dt = np.uint8 if itemsize == 1 else np.dtype(">u2")
    a = np.frombuffer(raster, dtype=dt).reshape(h, w)
    if a.max(initial=0) > maxval:
        raise ValueError(f"{path}: pixel value exceeds stated maxval {maxval}")
    return a.astype(np.uint16) if itemsize == 2 else a.copy()
