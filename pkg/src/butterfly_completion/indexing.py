"""Index bijections between flat matrix indices and tensorized multi-indices.

A flat index ``i`` of an ``n = c * 2**L`` dimensional axis is split into ``L``
binary digits ``i_0 .. i_{L-1}`` (``i_0`` is the top split of the cluster tree)
followed by a leaf digit ``i_L`` in ``{0 .. c-1}``.  Slices of a core are
addressed by a flattened block key built from binary digits with the first
digit least significant.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np


def _check_shape(levels: int, leaf: int) -> None:
    if levels < 0:
        raise ValueError(f"levels must be >= 0, got {levels}")
    if leaf < 1:
        raise ValueError(f"leaf size must be >= 1, got {leaf}")


def index_to_tuple(i: int, levels: int, leaf: int) -> tuple[int, ...]:
    """Split flat index ``i`` into ``(i_0, ..., i_{L-1}, i_L)``."""
    _check_shape(levels, leaf)
    n = leaf << levels
    if not 0 <= i < n:
        raise IndexError(f"index {i} out of range for n={n}")
    prefix, low = divmod(int(i), leaf)
    bits = tuple((prefix >> (levels - 1 - l)) & 1 for l in range(levels))
    return bits + (low,)


def tuple_to_flat(digits: Sequence[int], levels: int, leaf: int) -> int:
    """Inverse of :func:`index_to_tuple`."""
    _check_shape(levels, leaf)
    if len(digits) != levels + 1:
        raise ValueError(f"expected {levels + 1} digits, got {len(digits)}")
    prefix = 0
    for d in digits[:-1]:
        if d not in (0, 1):
            raise ValueError(f"binary digit out of range: {d}")
        prefix = 2 * prefix + int(d)
    low = int(digits[-1])
    if not 0 <= low < leaf:
        raise ValueError(f"leaf digit {low} out of range for leaf size {leaf}")
    return prefix * leaf + low


def psi(i: int, nbits: int) -> tuple[int, ...]:
    """Binary expansion ``(b_0, .., b_{nbits-1})`` of ``i``, least significant first."""
    if nbits < 0 or not 0 <= i < (1 << nbits):
        raise ValueError(f"{i} is not representable with {nbits} bits")
    return tuple((int(i) >> m) & 1 for m in range(nbits))


def psi_inv(bits: Sequence[int]) -> int:
    """Integer with binary digits ``bits`` (first digit least significant)."""
    out = 0
    for m, b in enumerate(bits):
        if b not in (0, 1):
            raise ValueError(f"binary digit out of range: {b}")
        out |= int(b) << m
    return out


def block_key(factor: int, digits: Sequence[int], levels: int) -> int:
    """Slice key of butterfly core ``factor`` (1-based) for its binary prefix digits.

    Outer cores (``factor`` 1 and ``L+2``) take ``L`` digits; the inner core
    ``m+1`` takes ``(i_0..i_{L-m}, j_0..j_{m-1})``, i.e. ``L+1`` digits.
    """
    if not 1 <= factor <= levels + 2:
        raise ValueError(f"factor {factor} out of range 1..{levels + 2}")
    arity = levels if factor in (1, levels + 2) else levels + 1
    if len(digits) != arity:
        raise ValueError(f"core {factor} expects {arity} prefix digits, got {len(digits)}")
    return psi_inv(digits)


# Vectorized helpers used by the contraction kernels.

def bit_reverse(x: np.ndarray, nbits: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    out = np.zeros_like(x)
    for m in range(nbits):
        out |= ((x >> m) & 1) << (nbits - 1 - m)
    return out


def split_flat(flat: np.ndarray, levels: int, leaf: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(prefix_key, leaf_digit)`` arrays; the key is ``psi_inv(i_0..i_{L-1})``."""
    flat = np.asarray(flat, dtype=np.int64)
    prefix, low = np.divmod(flat, leaf)
    return bit_reverse(prefix, levels), low


def inner_keys(row_key: np.ndarray, col_key: np.ndarray, levels: int, m: int) -> np.ndarray:
    """Slice keys of inner core ``m+1`` from outer prefix keys of rows and columns."""
    ni = levels - m + 1
    return (row_key & ((1 << ni) - 1)) | ((col_key & ((1 << m) - 1)) << ni)
