"""Dense grid containers and elementwise arithmetic.

Latent fields are ``(C, H, W)`` float64 arrays; energy and omega maps are
``(H, W)`` arrays. Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

PathLike = Union[str, Path]

LFLD_MAGIC = b"LFLD"
LTRJ_MAGIC = b"LTRJ"
_HEADER = struct.Struct("<4sIII")


class FieldError(ValueError):
    """Raised when a field or map violates its shape or finiteness contract."""


def as_field(data, channels: int | None = None, height: int | None = None,
             width: int | None = None) -> np.ndarray:
    """Validate and return a ``(C, H, W)`` float64 latent field.

    A flat array is accepted when all three dimensions are given; it is
    interpreted channel-major, row-major.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        if None in (channels, height, width):
            raise FieldError("flat data needs explicit channels, height and width")
        if arr.size != channels * height * width:
            raise FieldError(
                f"data length {arr.size} != {channels}*{height}*{width}")
        arr = arr.reshape(channels, height, width)
    if arr.ndim != 3 or 0 in arr.shape:
        raise FieldError(f"latent field must be (C, H, W), got shape {arr.shape}")
    for name, want, got in zip(("channels", "height", "width"),
                               (channels, height, width), arr.shape):
        if want is not None and want != got:
            raise FieldError(f"{name} mismatch: expected {want}, got {got}")
    if not np.all(np.isfinite(arr)):
        raise FieldError("latent field contains non-finite values")
    return arr


def as_map(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or 0 in arr.shape:
        raise FieldError(f"map must be (H, W), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise FieldError("map contains non-finite values")
    return arr


def channel_mean_square(f: np.ndarray) -> np.ndarray:
    """Per-pixel guidance energy ``(1/C) * sum_c f[c]**2``."""
    f = as_field(f)
    return np.mean(f * f, axis=0)


def minmax_normalize(e: np.ndarray, tau: float = 1e-8) -> np.ndarray:
    """Rescale a single map to ``[0, 1)`` using its own spatial min and max."""
    if not tau > 0:
        raise FieldError(f"tau must be positive, got {tau}")
    e = as_map(e)
    lo = e.min()
    return (e - lo) / (e.max() - lo + tau)


def broadcast_scale(f: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Multiply every channel of ``f`` by the spatial map ``m``."""
    f = as_field(f)
    m = as_map(m)
    if f.shape[1:] != m.shape:
        raise FieldError(f"spatial mismatch: field {f.shape[1:]} vs map {m.shape}")
    return f * m[None, :, :]


def box_smooth(e: np.ndarray, k: int) -> np.ndarray:
    """Uniform ``k x k`` mean filter.

    Borders use half-sample symmetric reflection (the edge pixel is
    repeated: ``c b a | a b c``). ``k == 1`` returns an exact copy.
    """
    if isinstance(k, bool) or int(k) != k or k < 1 or k % 2 == 0:
        raise FieldError(f"kernel size must be a positive odd integer, got {k}")
    e = as_map(e)
    k = int(k)
    if k == 1:
        return e.copy()
    r = k // 2
    padded = np.pad(e, r, mode="symmetric")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k))
    return windows.mean(axis=(-2, -1))


# -- export ---------------------------------------------------------------

def map_to_bytes(m: np.ndarray) -> np.ndarray:
    """Rescale a map to uint8 over its own [min, max]; constant maps give zeros."""
    m = as_map(m)
    lo, hi = m.min(), m.max()
    if hi <= lo:
        return np.zeros(m.shape, dtype=np.uint8)
    scaled = np.rint((m - lo) / (hi - lo) * 255.0)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def write_pgm(path: PathLike, m: np.ndarray) -> None:
    """Write a map as an 8-bit binary PGM (P5)."""
    img = map_to_bytes(m)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path: PathLike) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise FieldError(f"not a binary PGM: magic {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FieldError(f"unsupported maxval {maxval}")
    pos += 1
    return np.frombuffer(raw[pos:pos + w * h], dtype=np.uint8).reshape(h, w)


def field_to_bytes(f: np.ndarray) -> bytes:
    f = as_field(f)
    c, h, w = f.shape
    return _HEADER.pack(LFLD_MAGIC, c, h, w) + f.astype("<f8").tobytes(order="C")


def field_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one LFLD record starting at ``offset``; returns (field, next offset)."""
    if len(buf) - offset < _HEADER.size:
        raise FieldError("truncated LFLD header")
    magic, c, h, w = _HEADER.unpack_from(buf, offset)
    if magic != LFLD_MAGIC:
        raise FieldError(f"bad magic {magic!r}")
    start = offset + _HEADER.size
    end = start + 8 * c * h * w
    if end > len(buf):
        raise FieldError("truncated LFLD payload")
    data = np.frombuffer(buf[start:end], dtype="<f8").astype(np.float64)
    return as_field(data, c, h, w), end


def write_field(path: PathLike, f: np.ndarray) -> None:
    Path(path).write_bytes(field_to_bytes(f))


def read_field(path: PathLike) -> np.ndarray:
    buf = Path(path).read_bytes()
    f, end = field_from_bytes(buf)
    if end != len(buf):
        raise FieldError("trailing bytes after LFLD record")
    return f


def write_sequence(path: PathLike, states, steps) -> None:
    """Write a trajectory: ``LTRJ`` + u32 count, then (u32 step, LFLD record)*."""
    states = list(states)
    steps = list(steps)
    if len(states) != len(steps):
        raise FieldError("states and step indices differ in length")
    with open(path, "wb") as fh:
        fh.write(LTRJ_MAGIC + struct.pack("<I", len(states)))
        for step, z in zip(steps, states):
            fh.write(struct.pack("<I", int(step)))
            fh.write(field_to_bytes(z))


def read_sequence(path: PathLike) -> tuple[list[int], list[np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:4] != LTRJ_MAGIC:
        raise FieldError(f"bad magic {buf[:4]!r}")
    (n,) = struct.unpack_from("<I", buf, 4)
    pos = 8
    steps, states = [], []
    for _ in range(n):
        (step,) = struct.unpack_from("<I", buf, pos)
        z, pos = field_from_bytes(buf, pos + 4)
        steps.append(step)
        states.append(z)
    return steps, states
