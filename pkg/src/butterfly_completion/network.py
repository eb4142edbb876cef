"""Butterfly, QTT and low-rank network types, reconstruction and mat-vec."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import chain
from .indexing import bit_reverse, inner_keys, psi_inv, split_flat

DENSE_LIMIT = 1 << 13


def _as_complex(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.complex128)


def _complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@dataclass(eq=False)
class ButterflyNetwork:
    """Tensorized butterfly decomposition of an ``n x n`` matrix, ``n = leaf * 2**levels``.

    ``cores[0]`` has shape ``(2**L, c, r)``, ``cores[1..L]`` have shape
    ``(2**(L+1), r, r)`` and ``cores[L+1]`` has shape ``(2**L, c, r)``.  The
    leading axis is the flattened block key, see :func:`indexing.block_key`.
    The last core's slices hold ``(j_L, r_{L+1})``, i.e. it is a right factor
    stored untransposed.
    """

    levels: int
    leaf: int
    rank: int
    cores: list

    format = "butterfly"

    def __post_init__(self):
        L, c, r = self.levels, self.leaf, self.rank
        if L < 0 or c < 1 or r < 1:
            raise ValueError(f"invalid butterfly sizes L={L}, c={c}, r={r}")
        self.cores = [_as_complex(s) for s in self.cores]
        if len(self.cores) != L + 2:
            raise ValueError(f"butterfly with L={L} needs {L + 2} cores, got {len(self.cores)}")
        for pos, core in enumerate(self.cores):
            if core.shape != self.core_shape(pos):
                raise ValueError(f"core {pos + 1} has shape {core.shape}, expected {self.core_shape(pos)}")

    def core_shape(self, pos: int) -> tuple:
        L, c, r = self.levels, self.leaf, self.rank
        if pos in (0, L + 1):
            return (1 << L, c, r)
        return (1 << (L + 1), r, r)

    @property
    def n(self) -> int:
        return self.leaf << self.levels

    def zcores(self) -> list:
        return self.cores

    def copy(self) -> "ButterflyNetwork":
        return ButterflyNetwork(self.levels, self.leaf, self.rank, [s.copy() for s in self.cores])

    def index(self, rows, cols) -> chain.ChainIndex:
        return butterfly_index(rows, cols, self.levels, self.leaf)

    def num_params(self) -> int:
        return sum(s.size for s in self.cores)

    @classmethod
    def ones(cls, levels: int, leaf: int) -> "ButterflyNetwork":
        shapes = [(1 << levels, leaf, 1)] + [(1 << (levels + 1), 1, 1)] * levels + [(1 << levels, leaf, 1)]
        return cls(levels, leaf, 1, [np.ones(s, dtype=complex) for s in shapes])


@dataclass(eq=False)
class QttNetwork:
    """Quantized tensor train of the same tensorization.

    Core shapes: ``(2, 2, r)`` indexed ``(i_0, j_0, r_1)``; ``(2, 2, r, r)``
    indexed ``(i_{l-1}, j_{l-1}, r_{l-1}, r_l)`` for cores ``2..L``; and
    ``(c, c, r)`` indexed ``(i_L, j_L, r_L)``.
    """

    levels: int
    leaf: int
    rank: int
    cores: list

    format = "qtt"

    def __post_init__(self):
        L, c, r = self.levels, self.leaf, self.rank
        if L < 1 or c < 1 or r < 1:
            raise ValueError(f"invalid QTT sizes L={L}, c={c}, r={r} (QTT needs L >= 1)")
        self.cores = [_as_complex(s) for s in self.cores]
        if len(self.cores) != L + 1:
            raise ValueError(f"QTT with L={L} needs {L + 1} cores, got {len(self.cores)}")
        for pos, core in enumerate(self.cores):
            if core.shape != self.core_shape(pos):
                raise ValueError(f"core {pos + 1} has shape {core.shape}, expected {self.core_shape(pos)}")

    def core_shape(self, pos: int) -> tuple:
        L, c, r = self.levels, self.leaf, self.rank
        if pos == 0:
            return (2, 2, r)
        if pos == L:
            return (c, c, r)
        return (2, 2, r, r)

    @property
    def n(self) -> int:
        return self.leaf << self.levels

    def zcores(self) -> list:
        # views: writes through them update the cores
        r = self.rank
        return [self.cores[0]] + [s.reshape(4, r, r) for s in self.cores[1:-1]] + [self.cores[-1]]

    def copy(self) -> "QttNetwork":
        return QttNetwork(self.levels, self.leaf, self.rank, [s.copy() for s in self.cores])

    def index(self, rows, cols) -> chain.ChainIndex:
        return qtt_index(rows, cols, self.levels, self.leaf)


@dataclass(eq=False)
class LowRankPair:
    """Rank-``R`` factorization ``X = A @ B.T`` with ``A, B`` of shape ``(n, R)``."""

    A: np.ndarray
    B: np.ndarray

    format = "lowrank"

    def __post_init__(self):
        self.A = _as_complex(self.A)
        self.B = _as_complex(self.B)
        if self.A.ndim != 2 or self.A.shape != self.B.shape:
            raise ValueError(f"factor shapes do not conform: {self.A.shape} vs {self.B.shape}")
        if self.A.shape[1] < 1:
            raise ValueError("rank must be >= 1")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def cores(self) -> list:
        return [self.A, self.B]

    def zcores(self) -> list:
        return [self.A[None], self.B[None]]

    def copy(self) -> "LowRankPair":
        return LowRankPair(self.A.copy(), self.B.copy())

    def index(self, rows, cols) -> chain.ChainIndex:
        return butterfly_index(rows, cols, 0, self.n)

    def to_dense(self) -> np.ndarray:
        return self.A @ self.B.T


Network = Union[ButterflyNetwork, QttNetwork, LowRankPair]


# -- per-entry slice keys --------------------------------------------------

def butterfly_index(rows, cols, levels: int, leaf: int) -> chain.ChainIndex:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    rk, rl = split_flat(rows, levels, leaf)
    ck, cl = split_flat(cols, levels, leaf)
    inner = [inner_keys(rk, ck, levels, m) for m in range(1, levels + 1)]
    return chain.ChainIndex(rk, rl, inner, ck, cl, leaf, leaf)


def qtt_index(rows, cols, levels: int, leaf: int) -> chain.ChainIndex:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    rp, rl = np.divmod(rows, leaf)
    cp, cl = np.divmod(cols, leaf)

    def digit(p, k):
        return (p >> (levels - 1 - k)) & 1

    inner = [2 * digit(rp, k) + digit(cp, k) for k in range(1, levels)]
    return chain.ChainIndex(digit(rp, 0), digit(cp, 0), inner, rl, cl, 2, leaf)


# -- construction ----------------------------------------------------------

def random_network(levels: int, leaf: int, rank: int, seed=None, scale: float = 1.0) -> ButterflyNetwork:
    """Butterfly network with i.i.d. complex Gaussian core entries times ``scale``."""
    rng = np.random.default_rng(seed)
    shapes = [(1 << levels, leaf, rank)] + [(1 << (levels + 1), rank, rank)] * levels + [(1 << levels, leaf, rank)]
    return ButterflyNetwork(levels, leaf, rank, [scale * _complex_gaussian(rng, s) for s in shapes])


def random_qtt_network(levels: int, leaf: int, rank: int, seed=None, scale: float = 1.0) -> QttNetwork:
    rng = np.random.default_rng(seed)
    shapes = [(2, 2, rank)] + [(2, 2, rank, rank)] * (levels - 1) + [(leaf, leaf, rank)]
    return QttNetwork(levels, leaf, rank, [scale * _complex_gaussian(rng, s) for s in shapes])


# -- reconstruction --------------------------------------------------------

def reconstruct_entry(net: Network, i: int, j: int) -> complex:
    n = net.n
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"entry ({i}, {j}) out of range for n={n}")
    return complex(chain.evaluate_exact(net.zcores(), net.index([i], [j]))[0])


def reconstruct_dense(net: Network, max_n: int = DENSE_LIMIT) -> np.ndarray:
    """Dense ``n x n`` matrix of the network, built entry-wise."""
    n = net.n
    if n > max_n:
        raise MemoryError(f"refusing to densify n={n} > {max_n}")
    rows, cols = np.divmod(np.arange(n * n, dtype=np.int64), n)
    return chain.evaluate_exact(net.zcores(), net.index(rows, cols)).reshape(n, n)


def evaluate_entries(net: Network, rows, cols) -> np.ndarray:
    return chain.evaluate(net.zcores(), net.index(rows, cols))


def matvec(net: ButterflyNetwork, v) -> np.ndarray:
    """``X(S) @ v`` by level-wise contractions, ``O(n r^2 L)`` without forming ``X``."""
    v = np.asarray(v, dtype=np.complex128)
    L, c, r, n = net.levels, net.leaf, net.rank, net.n
    if v.shape != (n,):
        raise ValueError(f"vector of length {v.shape} does not match n={n}")
    cores = net.cores
    if L == 0:
        return cores[0][0] @ (cores[1][0].T @ v)
    rev = bit_reverse(np.arange(1 << L), L)
    # w is indexed by the (i-prefix, j-prefix) state between two cores, flattened
    # with the earliest digit least significant.
    w = np.einsum("kcr,kc->kr", cores[L + 1], v.reshape(1 << L, c)[rev])
    for m in range(L, 0, -1):
        s = cores[m].reshape(2, 1 << (m - 1), 2, 1 << (L - m), r, r)
        wm = w.reshape(2, 1 << (m - 1), 1 << (L - m), r)
        w = np.einsum("bJaIpq,bJIq->JaIp", s, wm).reshape(1 << L, r)
    u = np.einsum("kcr,kr->kc", cores[0], w)
    return u[rev].reshape(n)


def assemble_block_sparse_oracle(net: ButterflyNetwork, max_n: int = 512) -> np.ndarray:
    """Dense product of the ``L+2`` block-sparse butterfly factor matrices.

    Test oracle.  Each factor is assembled explicitly by placing core slices
    into a sparse block pattern: the space between factors ``m+1`` and ``m+2``
    is indexed by ``(i_0..i_{L-m-1}, j_0..j_{m-1}, bond)``, and a factor block
    is nonzero only where the digits shared by its row and column states agree.
    """
    L, c, r, n = net.levels, net.leaf, net.rank, net.n
    if n > max_n:
        raise MemoryError(f"oracle limited to n <= {max_n}")
    cores = net.cores

    def state(ibits, jbits, bond):
        a = 0
        for d in ibits:
            a = 2 * a + d
        b = 0
        for d in jbits:
            b = 2 * b + d
        return ((a << len(jbits)) + b) * r + bond

    width = r << L
    factors = []
    first = np.zeros((n, width), dtype=complex)
    for ib in itertools.product((0, 1), repeat=L):
        key = psi_inv(ib)
        for low in range(c):
            i = state(ib, (), 0) // r * c + low
            for p in range(r):
                first[i, state(ib, (), p)] = cores[0][key, low, p]
    factors.append(first)
    for m in range(1, L + 1):
        f = np.zeros((width, width), dtype=complex)
        for ib in itertools.product((0, 1), repeat=L - m + 1):
            for jb in itertools.product((0, 1), repeat=m):
                key = psi_inv(ib + jb)
                for p in range(r):
                    for q in range(r):
                        f[state(ib, jb[:-1], p), state(ib[:-1], jb, q)] = cores[m][key, p, q]
        factors.append(f)
    last = np.zeros((width, n), dtype=complex)
    for jb in itertools.product((0, 1), repeat=L):
        key = psi_inv(jb)
        for low in range(c):
            j = state(jb, (), 0) // r * c + low
            for q in range(r):
                last[state((), jb, q), j] = cores[L + 1][key, low, q]
    factors.append(last)
    out = factors[0]
    for f in factors[1:]:
        out = out @ f
    return out
