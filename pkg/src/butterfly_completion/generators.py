"""Test matrices: Helmholtz Green's function with KD reordering, 1D Radon transform, synthetic data.

Formulas use 1-based grid indices internally; all returned matrices and
entry functions use 0-based indices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import (DENSE_LIMIT, ButterflyNetwork, QttNetwork, evaluate_entries, random_network,
                      random_qtt_network, reconstruct_dense)

KINDS = ("green_helmholtz", "radon", "synthetic_butterfly", "synthetic_qtt")


def _levels_for(n: int, leaf: int) -> int:
    if leaf < 1 or n % leaf:
        raise ValueError(f"n={n} is not a multiple of leaf size {leaf}")
    blocks = n // leaf
    L = blocks.bit_length() - 1
    if blocks != 1 << L:
        raise ValueError(f"n / leaf = {blocks} is not a power of two")
    return L


# -- KD reordering ---------------------------------------------------------

def kd_reorder(points, leaf: int) -> np.ndarray:
    """Permutation from recursive median bisection of 2D points.

    Each node is split at the median along its axis of larger coordinate
    spread (x on ties); points with equal coordinates are ordered by original
    index.  Leaves hold ``leaf`` points and the permutation lists them in
    depth-first order, so ``perm[k]`` is the original index at position ``k``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must have shape (m, 2)")
    L = _levels_for(len(pts), leaf)

    def split(idx, depth):
        if depth == L:
            return [idx]
        sub = pts[idx]
        spread = sub.max(axis=0) - sub.min(axis=0)
        axis = 1 if spread[1] > spread[0] else 0
        order = idx[np.lexsort((idx, sub[:, axis]))]
        half = len(idx) // 2
        return split(order[:half], depth + 1) + split(order[half:], depth + 1)

    return np.concatenate(split(np.arange(len(pts)), 0)).astype(np.int64)


def permute(T: np.ndarray, perm) -> np.ndarray:
    """``P T P^T`` with ``(P T P^T)[a, b] = T[perm[a], perm[b]]``."""
    perm = np.asarray(perm)
    return T[np.ix_(perm, perm)]


# -- Helmholtz Green's function --------------------------------------------

def green_points(n: int) -> np.ndarray:
    m = math.isqrt(n)
    if m * m != n:
        raise ValueError(f"n={n} is not a perfect square")
    i = np.arange(n)
    return np.stack([i // m, i % m], axis=1).astype(float) / m


def green_omega(n: int) -> float:
    return math.sqrt(n) * math.pi / 5.0


@dataclass
class GreenOperator:
    """Entry access to the reordered Green's function matrix without densifying it."""

    n: int
    leaf: int
    omega: float
    perm: np.ndarray = field(repr=False)

    def raw(self, rows, cols) -> np.ndarray:
        m = math.isqrt(self.n)
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        i1, i2 = np.divmod(rows, m)
        j1, j2 = np.divmod(cols, m)
        rho = np.sqrt(((i1 - j1) ** 2 + (i2 - j2) ** 2) / self.n + 1.0)
        return np.exp(-1j * self.omega * rho) / rho

    def __call__(self, rows, cols) -> np.ndarray:
        return self.raw(self.perm[np.asarray(rows)], self.perm[np.asarray(cols)])


def green_operator(n: int, leaf: int, omega: float | None = None) -> GreenOperator:
    perm = kd_reorder(green_points(n), leaf)
    return GreenOperator(n, leaf, green_omega(n) if omega is None else float(omega), perm)


def green_helmholtz(n: int, leaf: int, omega: float | None = None, max_n: int = DENSE_LIMIT):
    """Reordered Green's function matrix ``P Tbar P^T`` and the permutation."""
    if n > max_n:
        raise MemoryError(f"refusing to densify n={n} > {max_n}")
    op = green_operator(n, leaf, omega)
    idx = np.arange(n)
    return op(idx[:, None], idx[None, :]), op.perm


def green_unordered(n: int, omega: float | None = None) -> np.ndarray:
    op = GreenOperator(n, 1, green_omega(n) if omega is None else float(omega), np.arange(n))
    idx = np.arange(n)
    return op.raw(idx[:, None], idx[None, :])


# -- Radon transform -------------------------------------------------------

def radon_entries(n: int):
    """Entry function of the 1D generalized Radon transform matrix."""
    if n < 2 or n % 2:
        raise ValueError(f"n must be even, got {n}")

    def f(rows, cols):
        x = (np.asarray(rows, dtype=float) + 1.0) / n
        y = np.asarray(cols, dtype=float) + 1.0 - n / 2
        phase = x * y + (2.0 + np.sin(2 * np.pi * x)) / 8.0 * np.abs(y)
        return np.exp(2j * np.pi * phase)

    return f


def radon_matrix(n: int, max_n: int = DENSE_LIMIT) -> np.ndarray:
    if n > max_n:
        raise MemoryError(f"refusing to densify n={n} > {max_n}")
    idx = np.arange(n)
    return radon_entries(n)(idx[:, None], idx[None, :])


# -- synthetic data --------------------------------------------------------

def synthetic_butterfly_network(levels: int, leaf: int, rank: int, seed=None) -> ButterflyNetwork:
    return random_network(levels, leaf, rank, seed)


def synthetic_butterfly(levels: int, leaf: int, rank: int, seed=None) -> np.ndarray:
    return reconstruct_dense(random_network(levels, leaf, rank, seed))


def synthetic_qtt_network(levels: int, leaf: int, rank: int, seed=None) -> QttNetwork:
    return random_qtt_network(levels, leaf, rank, seed)


def synthetic_qtt(levels: int, leaf: int, rank: int, seed=None) -> np.ndarray:
    return reconstruct_dense(random_qtt_network(levels, leaf, rank, seed))


def network_entries(net):
    """Entry function backed by a network."""
    return lambda rows, cols: evaluate_entries(net, np.asarray(rows).ravel(), np.asarray(cols).ravel()).reshape(np.shape(rows))


# -- dispatch --------------------------------------------------------------

@dataclass
class GeneratorSpec:
    kind: str
    n: int
    leaf: int
    seed: int | None = None
    omega: float | None = None
    rank: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown generator {self.kind!r}; choose from {', '.join(KINDS)}")
        self.levels = _levels_for(self.n, self.leaf)

    def entry_function(self):
        if self.kind == "green_helmholtz":
            return green_operator(self.n, self.leaf, self.omega)
        if self.kind == "radon":
            return radon_entries(self.n)
        if self.kind == "synthetic_butterfly":
            return network_entries(synthetic_butterfly_network(self.levels, self.leaf, self.rank, self.seed))
        return network_entries(synthetic_qtt_network(self.levels, self.leaf, self.rank, self.seed))

    def dense(self, max_n: int = DENSE_LIMIT) -> np.ndarray:
        if self.n > max_n:
            raise MemoryError(f"refusing to densify n={self.n} > {max_n}")
        idx = np.arange(self.n)
        rows, cols = np.meshgrid(idx, idx, indexing="ij")
        return self.entry_function()(rows, cols)
