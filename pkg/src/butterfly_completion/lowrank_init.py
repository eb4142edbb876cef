"""Initial guesses: low-rank completion followed by randomized conversion to butterfly cores.

The converter builds nested orthonormal bases.  On the row side, every leaf
row block ``A_P B^T`` is sketched and its leading ``r`` pivoted-QR columns
become the first core's slice; the block's coefficients ``V = Q^H A_P`` are
carried upward.  At each further level the coefficient blocks of two sibling
row nodes are stacked, restricted to one column node of the complementary
level, sketched and compressed again, which yields ``r x r`` transfer slices.
The column side mirrors this with ``A`` and ``B`` exchanged, and the two
halves meet in the middle level where ``V W^T`` is folded into the last
row-side transfer slice.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .als import AlsConfig, als_lowrank
from .data import EvalSplit, ObservedEntries
from .indexing import bit_reverse
from .network import ButterflyNetwork, LowRankPair

log = logging.getLogger(__name__)

DEFAULT_OVERSAMPLING = 10


@dataclass
class QrcpResult:
    Q: np.ndarray
    V: np.ndarray | None
    pivots: np.ndarray


def qrcp_truncate(M, r: int, project=None) -> QrcpResult:
    """Leading ``r`` columns of a column-pivoted Householder QR of ``M``.

    When ``project`` is given, ``V = Q^H @ project`` is returned alongside.
    """
    M = np.asarray(M, dtype=np.complex128)
    if r < 1 or r > min(M.shape):
        raise ValueError(f"truncation rank {r} must be in 1..{min(M.shape)} for a {M.shape} block")
    Q, _, piv = scipy.linalg.qr(M, mode="economic", pivoting=True)
    Q = np.ascontiguousarray(Q[:, :r])
    V = None if project is None else Q.conj().T @ project
    return QrcpResult(Q, V, piv)


def _gaussian(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def default_oversampling(rank: int) -> int:
    """``min(10, r)``: inner blocks stack two children, so they have ``2r`` rows."""
    return min(DEFAULT_OVERSAMPLING, rank)


def _one_side(F, G, levels, leaf, rank, width, rng):
    """Nested bases for the factorization ``F G^T`` along the rows of ``F``.

    Returns the leaf bases ``(2**L, c, r)``, the transfer blocks per level
    ``l = 1..H`` as arrays ``(2**(L-l), 2**l, 2r, r)`` indexed
    ``[parent row node, column node]``, and the final coefficients
    ``(2**(L-H), 2**H, r, R)``.
    """
    n, R = F.shape
    half = levels // 2
    nleaf = 1 << levels
    sk = G.T @ _gaussian(rng, (n, width))
    bases = np.empty((nleaf, leaf, rank), dtype=complex)
    coef = np.empty((nleaf, 1, rank, R), dtype=complex)
    # a leaf spans at most ``leaf`` directions; surplus rank columns stay zero
    k = min(rank, leaf, width)
    bases[:, :, k:] = 0.0
    coef[:, :, k:] = 0.0
    for P in range(nleaf):
        Fp = F[P * leaf:(P + 1) * leaf]
        res = qrcp_truncate(Fp @ sk, k, Fp)
        bases[P, :, :k], coef[P, 0, :k] = res.Q, res.V
    transfers = []
    for l in range(1, half + 1):
        size = n >> l
        omega = _gaussian(rng, (size, width))
        nparent, ncol = nleaf >> l, 1 << l
        trans = np.empty((nparent, ncol, 2 * rank, rank), dtype=complex)
        new = np.empty((nparent, ncol, rank, R), dtype=complex)
        for q in range(ncol):
            gsk = G[q * size:(q + 1) * size].T @ omega
            for p in range(nparent):
                stack = np.concatenate([coef[2 * p, q >> 1], coef[2 * p + 1, q >> 1]])
                res = qrcp_truncate(stack @ gsk, rank, stack)
                trans[p, q], new[p, q] = res.Q, res.V
        transfers.append(trans)
        coef = new
    return bases, transfers, coef


def lr_to_butterfly(pair: LowRankPair, levels: int, rank: int, oversampling: int | None = None,
                    seed=None) -> ButterflyNetwork:
    """Randomized conversion of ``X = A @ B.T`` to an ``L``-level butterfly of rank ``r`` (``L`` even)."""
    n, R = pair.A.shape
    if levels < 0 or levels % 2:
        raise ValueError(f"conversion needs an even number of levels, got {levels}")
    if n % (1 << levels):
        raise ValueError(f"n={n} is not divisible by 2**{levels}")
    leaf = n >> levels
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    p = default_oversampling(rank) if oversampling is None else int(oversampling)
    if p < 0:
        raise ValueError(f"oversampling must be >= 0, got {p}")
    rng = np.random.default_rng(seed)
    L, r, half = levels, rank, levels // 2
    width = r + p

    rbases, rtrans, V = _one_side(pair.A, pair.B, L, leaf, r, width, rng)
    cbases, ctrans, W = _one_side(pair.B, pair.A, L, leaf, r, width, rng)

    cores = [np.empty((1 << L, leaf, r), dtype=complex)]
    cores += [np.empty((1 << (L + 1), r, r), dtype=complex) for _ in range(L)]
    cores.append(np.empty((1 << L, leaf, r), dtype=complex))
    leaves = bit_reverse(np.arange(1 << L), L)
    cores[0][leaves] = rbases
    cores[L + 1][leaves] = cbases

    for l in range(1, half + 1):
        nparent, ncol = (1 << L) >> l, 1 << l
        ni = L - l + 1
        for a in (0, 1):
            child = 2 * np.arange(nparent)[:, None] + a
            other = np.arange(ncol)[None, :]
            # row side: core l+1, digits (i_0..i_{L-l}, j_0..j_{l-1})
            key = bit_reverse(child, ni) + (bit_reverse(other, l) << ni)
            cores[l][key] = rtrans[l - 1][:, :, a * r:(a + 1) * r]
            # column side: core L+2-l, digits (i_0..i_{l-1}, j_0..j_{L-l})
            key = bit_reverse(other, l) + (bit_reverse(child, ni) << l)
            cores[L + 1 - l][key] = np.swapaxes(ctrans[l - 1][:, :, a * r:(a + 1) * r], -1, -2)

    # middle coupling V W^T between row node p and column node q of level H
    mid = V @ np.swapaxes(W, 0, 1).swapaxes(-1, -2)
    if half == 0:
        cores[0][0] = cores[0][0] @ mid[0, 0]
    else:
        ni = L - half + 1
        nparent, ncol = (1 << L) >> half, 1 << half
        for a in (0, 1):
            child = 2 * np.arange(nparent)[:, None] + a
            key = bit_reverse(child, ni) + (bit_reverse(np.arange(ncol)[None, :], half) << ni)
            cores[half][key] = cores[half][key] @ mid
    return ButterflyNetwork(L, leaf, r, cores)


def random_lowrank(n: int, rank: int, scale: float = 1.0, seed=None) -> LowRankPair:
    rng = np.random.default_rng(seed)
    return LowRankPair(scale * _gaussian(rng, (n, rank)), scale * _gaussian(rng, (n, rank)))


def lowrank_start(entries: ObservedEntries, rank: int, seed=None) -> LowRankPair:
    """Random pair whose product has entry magnitudes comparable to the observed data."""
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    tau = entries.norm() / np.sqrt(max(len(entries), 1))
    return random_lowrank(entries.n, rank, np.sqrt(tau / np.sqrt(rank)), seed)


def generate_initial_guess(split, levels: int, leaf: int, rank: int, init_rank: int | None = None,
                           iters: int = 10, oversampling: int | None = None, seed=None,
                           reg: float | None = None, threads: int = 1):
    """Low-rank ALS from a seeded start, then conversion to a butterfly network.

    ``split`` may be an :class:`EvalSplit` or plain training entries.
    Returns ``(network, lowrank_report)``; the low-rank train error is also
    stored as ``metadata["lowrank_train_err"]`` of the report.
    """
    if isinstance(split, ObservedEntries):
        split = EvalSplit(split)
    R = rank if init_rank is None else int(init_rank)
    ss = np.random.SeedSequence(seed)
    s_start, s_sketch = ss.spawn(2)
    start = lowrank_start(split.train, R, np.random.default_rng(s_start))
    cfg = AlsConfig(max_iters=iters, tol=1e-14, reg=reg, threads=threads)
    A, B, report = als_lowrank(start.A, start.B, split, cfg)
    log.info("low-rank init: rank %d, train error %.3e after %d sweeps", R, report.final_train_error, report.iterations)
    net = lr_to_butterfly(LowRankPair(A, B), levels, rank, oversampling, np.random.default_rng(s_sketch))
    if net.leaf != leaf:
        raise ValueError(f"leaf size {leaf} inconsistent with n={split.train.n} and levels={levels}")
    report.metadata["lowrank_train_err"] = report.final_train_error
    return net, report
