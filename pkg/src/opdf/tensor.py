"""Dense float64 tensors: reshape, permute, unfold, contract, norms, TNSR files.

Tensors are plain C-ordered ``numpy.ndarray`` objects of dtype float64.
Every function here returns a new array and never writes into its inputs.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ExtentMismatch, FormatError, InvalidPermutation

TNSR_MAGIC = b"TNSR"
TNSR_VERSION = 0x01
TNSR_DTYPE_F64 = 0x00


def as_tensor(x) -> np.ndarray:
    """Copy ``x`` into a fresh C-contiguous float64 array."""
    t = np.array(x, dtype=np.float64, order="C", copy=True)
    if any(d < 1 for d in t.shape):
        raise ExtentMismatch(f"extents must be >= 1, got {t.shape}")
    return t


def numel(shape: Sequence[int]) -> int:
    return math.prod(int(d) for d in shape)


def reshape(t: np.ndarray, new_shape: Sequence[int]) -> np.ndarray:
    new_shape = tuple(int(d) for d in new_shape)
    if any(d < 1 for d in new_shape):
        raise ExtentMismatch(f"extents must be >= 1, got {new_shape}")
    if numel(new_shape) != t.size:
        raise ExtentMismatch(
            f"cannot reshape {t.shape} ({t.size} elements) into {new_shape} "
            f"({numel(new_shape)} elements)"
        )
    return np.ascontiguousarray(t).reshape(new_shape).copy()


def _check_permutation(axes: Sequence[int], order: int) -> tuple[int, ...]:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(order)):
        raise InvalidPermutation(f"{axes} is not a permutation of 0..{order - 1}")
    return axes


def permute(t: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Reorder axes so that ``out.shape[p] == t.shape[axes[p]]``."""
    axes = _check_permutation(axes, t.ndim)
    return np.asarray(np.transpose(t, axes), order="C")


def inverse_permutation(axes: Sequence[int]) -> tuple[int, ...]:
    inv = [0] * len(axes)
    for p, a in enumerate(axes):
        inv[a] = p
    return tuple(inv)


def unfold(t: np.ndarray, row_axes: Sequence[int], col_axes: Sequence[int]) -> np.ndarray:
    """Matricize ``t``: rows index ``row_axes``, columns index ``col_axes`` (row-major)."""
    row_axes, col_axes = list(row_axes), list(col_axes)
    axes = _check_permutation(row_axes + col_axes, t.ndim)
    rows = numel(t.shape[a] for a in row_axes)
    cols = numel(t.shape[a] for a in col_axes)
    return permute(t, axes).reshape(rows, cols)


def contract(
    a: np.ndarray,
    b: np.ndarray,
    axes_a: Sequence[int] = (),
    axes_b: Sequence[int] = (),
) -> np.ndarray:
    """Sum over paired axes; result carries free axes of ``a`` then free axes of ``b``.

    Empty axis lists give the outer (tensor) product.
    """
    axes_a = [int(x) for x in axes_a]
    axes_b = [int(x) for x in axes_b]
    if len(axes_a) != len(axes_b):
        raise ExtentMismatch(f"paired axis lists differ in length: {axes_a} vs {axes_b}")
    if len(set(axes_a)) != len(axes_a) or len(set(axes_b)) != len(axes_b):
        raise InvalidPermutation("repeated contraction axis")
    for x, y in zip(axes_a, axes_b):
        if not (0 <= x < a.ndim and 0 <= y < b.ndim):
            raise InvalidPermutation(f"axis pair ({x}, {y}) out of range")
        if a.shape[x] != b.shape[y]:
            raise ExtentMismatch(
                f"paired extents differ: a axis {x} has {a.shape[x]}, b axis {y} has {b.shape[y]}"
            )
    free_a = [i for i in range(a.ndim) if i not in axes_a]
    free_b = [i for i in range(b.ndim) if i not in axes_b]
    am = unfold(a, free_a, axes_a)
    bm = unfold(b, axes_b, free_b)
    out_shape = [a.shape[i] for i in free_a] + [b.shape[i] for i in free_b]
    return (am @ bm).reshape(out_shape)


def frobenius_norm(t: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.square(t, dtype=np.float64))))


def write_tnsr(path, t: np.ndarray) -> None:
    t = np.asarray(t, dtype=np.float64, order="C")
    if t.ndim > 255:
        raise FormatError(f"order {t.ndim} does not fit the TNSR header")
    header = TNSR_MAGIC + bytes([TNSR_VERSION, TNSR_DTYPE_F64, t.ndim])
    header += struct.pack(f"<{t.ndim}Q", *t.shape)
    Path(path).write_bytes(header + t.astype("<f8").tobytes(order="C"))


def read_tnsr(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 7 or raw[:4] != TNSR_MAGIC:
        raise FormatError(f"{path}: bad magic")
    if raw[4] != TNSR_VERSION:
        raise FormatError(f"{path}: unsupported version {raw[4]}")
    if raw[5] != TNSR_DTYPE_F64:
        raise FormatError(f"{path}: unsupported dtype {raw[5]}")
    order = raw[6]
    end = 7 + 8 * order
    if len(raw) < end:
        raise FormatError(f"{path}: truncated header")
    shape = struct.unpack(f"<{order}Q", raw[7:end])
    if any(d < 1 for d in shape):
        raise FormatError(f"{path}: zero extent in {shape}")
    count = numel(shape)
    if len(raw) - end != 8 * count:
        raise FormatError(f"{path}: payload has {len(raw) - end} bytes, expected {8 * count}")
    return np.frombuffer(raw, dtype="<f8", count=count, offset=end).astype(np.float64).reshape(shape)
