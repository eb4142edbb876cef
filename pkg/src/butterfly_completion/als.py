"""Alternating least squares completion for butterfly, QTT and low-rank networks.

All three formats are chains of cores in the flattened layout, so one engine
serves them.  Solving core ``pos`` splits every observed entry into

    x_e = a_e . s_key(e)

where ``a_e`` is the design row built from the partial products of the other
cores: the right partial for the first core, the left partial for the last
core and ``kron(u_e, v_e)`` for an inner core, matching a row-major flattening
of the ``r x r`` slice.  Each group of entries sharing a slice (or fiber) key
gives an independent ridge-regularized least-squares problem solved through
its normal equations.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from . import chain
from .data import EvalSplit, ObservedEntries, relative_error
from .errors import NonFiniteError
from .network import ButterflyNetwork, LowRankPair, QttNetwork
from .report import CONVERGED, MAX_ITERS, ConvergenceReport, IterationRecord

log = logging.getLogger(__name__)

PIVOT_CUTOFF = 1e-9
RANK_CUTOFF = 1e-11
DEFAULT_REG_SCALE = 1e-10


@dataclass
class AlsConfig:
    max_iters: int = 20
    tol: float = 1e-3
    reg: float | None = None
    record_test: bool = True
    threads: int = 1
    track_objective: bool = False
    convergence_metric: str = "train_relative_error"

    def __post_init__(self):
        if isinstance(self.max_iters, bool) or int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.reg is not None and not self.reg >= 0:
            raise ValueError(f"reg must be nonnegative, got {self.reg}")
        if int(self.threads) < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")
        if self.convergence_metric != "train_relative_error":
            raise ValueError(f"unsupported convergence metric {self.convergence_metric!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def default_reg(entries: ObservedEntries) -> float:
    """Scale-aware ridge ``1e-10 * ||P_Omega T||^2 / |Omega|``."""
    if len(entries) == 0:
        return 0.0
    return DEFAULT_REG_SCALE * entries.norm() ** 2 / len(entries)


# -- normal equations ------------------------------------------------------

def _min_norm_solve(K, y, reg):
    """Ridge solution restricted to the numerical range of ``K``.

    A rank-revealing pivoted Cholesky ``P^T K P = L L^H`` (``L`` with ``k``
    columns) gives ``s = P L G^{-1} (G + reg I)^{-1} L^H P^T y`` with
    ``G = L^H L``, which is ``(K + reg I)^{-1} y`` on the range of ``K`` and
    zero on its null space.
    """
    tol = RANK_CUTOFF * float(np.max(K.diagonal().real))
    c, piv, rank, info = scipy.linalg.lapack.zpstrf(K, lower=1, tol=tol)
    if info < 0:
        raise np.linalg.LinAlgError(f"pivoted Cholesky failed (info={info})")
    s = np.zeros_like(y)
    if rank == 0:
        return s
    perm = piv - 1
    Lk = np.tril(c)[:, :rank]
    G = Lk.conj().T @ Lk
    w = scipy.linalg.solve(G + reg * np.eye(rank), Lk.conj().T @ y[perm], assume_a="pos")
    s[perm] = Lk @ scipy.linalg.solve(G, w, assume_a="pos")
    return s


def _solve(K: np.ndarray, y: np.ndarray, reg: float):
    """Cholesky solve of ``(K + reg I) s = y``; near-singular systems get the minimum-norm solution.

    Rank-deficient ``K`` arises whenever some bond directions cannot influence
    the observed entries (for instance a rank larger than the leaf size).
    Solving such systems with a tiny ridge amplifies rounding noise along the
    null space, so they are detected through the Cholesky pivots and solved on
    the numerically nonzero eigenspace instead.
    """
    try:
        c, lower = scipy.linalg.cho_factor(K + reg * np.eye(K.shape[0]), lower=True)
    except np.linalg.LinAlgError:
        return _min_norm_solve(K, y, reg), "min_norm"
    piv = np.abs(np.diag(c)) ** 2
    if piv.min() < PIVOT_CUTOFF * piv.max():
        return _min_norm_solve(K, y, reg), "min_norm"
    return scipy.linalg.cho_solve((c, lower), y), None


def normal_solve(K, y, reg: float = 0.0) -> np.ndarray:
    """Solve ``(K + reg I) s = y`` for Hermitian positive semi-definite ``K`` by Cholesky.

    If ``K + reg I`` is numerically singular, the minimum-norm solution over
    the eigenspace of ``K`` above a relative cutoff is returned instead.
    """
    K = np.atleast_2d(np.asarray(K, dtype=np.complex128))
    y = np.asarray(y, dtype=np.complex128)
    if K.shape[0] != K.shape[1] or K.shape[0] != y.shape[0]:
        raise ValueError(f"system shapes do not conform: K {K.shape}, y {y.shape}")
    return _solve(K, y, reg)[0]


# -- one factor ------------------------------------------------------------

@dataclass
class FactorStats:
    factor: int
    groups: int = 0
    min_norm_keys: list = field(default_factory=list)
    gram_macs: int = 0
    solve_flops: int = 0

    def flags(self) -> list:
        out = []
        if self.min_norm_keys:
            out.append(f"factor{self.factor}:min_norm:{len(self.min_norm_keys)}")
        return out


def _design(pos: int, ncores: int, u, v, rows) -> np.ndarray:
    """Design rows of core ``pos`` from the left partial ``u`` and right partial ``v``.

    ``rows`` selects the group's entries (an index array or a slice).
    """
    if pos == 0:
        return v[rows]
    if pos == ncores - 1:
        return u[rows]
    um = u[rows]
    vm = v[rows]
    return (um[:, :, None] * vm[:, None, :]).reshape(um.shape[0], -1)


def _flat_core(core: np.ndarray, pos: int, ncores: int) -> np.ndarray:
    if pos in (0, ncores - 1):
        return core.reshape(-1, core.shape[-1])
    return core.reshape(core.shape[0], -1)


def _group_system(pos, ncores, u, v, t, rows):
    A = _design(pos, ncores, u, v, rows)
    Ah = A.conj().T
    return Ah @ A, Ah @ t[rows]


def _sorted_operands(grouping, u, v, t):
    """Partials and targets permuted into group order so every group is a contiguous slice."""
    order = grouping.order
    u = None if u is None else chain.gather(u, order)
    v = None if v is None else chain.gather(v, order)
    return u, v, chain.gather(t, order)


def _solve_core(cores, pos, index, u, v, t, reg, pool=None, group_order=None) -> FactorStats:
    ncores = len(cores)
    grouping = index.grouping(pos)
    target = _flat_core(cores[pos], pos, ncores)
    stats = FactorStats(pos + 1, groups=len(grouping))

    us, vs, ts = _sorted_operands(grouping, u, v, t)

    def work(g):
        a, b = grouping.starts[g], grouping.starts[g + 1]
        K, y = _group_system(pos, ncores, us, vs, ts, slice(a, b))
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(y))):
            raise NonFiniteError(f"non-finite normal equations for core {pos + 1}, key {int(grouping.keys[g])}")
        s, flag = _solve(K, y, reg)
        target[grouping.keys[g]] = s
        return g, int(b - a), K.shape[0], flag

    order = range(len(grouping)) if group_order is None else group_order
    results = pool.map(work, order) if pool is not None else map(work, order)
    for g, m, d, flag in sorted(results):
        stats.gram_macs += m * d * (d + 1)
        stats.solve_flops += d ** 3 // 3 + 2 * d * d
        if flag == "min_norm":
            stats.min_norm_keys.append(int(grouping.keys[g]))
    return stats


def _left_partial(cores, index, pos):
    """Product of cores ``0..pos-1`` for every entry (``None`` for ``pos == 0``)."""
    if pos == 0:
        return None
    u = chain.first_vectors(cores, index)
    for p in range(1, pos):
        u = chain.apply_left(cores[p], index.grouping(p), u)
    return u


def _partials_around(cores, index, pos):
    """Left partial of core ``pos`` and right partial of core ``pos + 1``."""
    v = chain.right_partials(cores, index)[pos + 1] if pos < len(cores) - 1 else None
    return _left_partial(cores, index, pos), v


def _network_of(net):
    if not isinstance(net, (ButterflyNetwork, QttNetwork, LowRankPair)):
        raise TypeError(f"unsupported network type {type(net).__name__}")
    return net


def solve_factor(net, entries: ObservedEntries, factor: int, reg: float = 0.0,
                 threads: int = 1, group_order=None) -> FactorStats:
    """Solve core ``factor`` (1-based) in place with all other cores fixed.

    Groups without observations keep their current values.
    ``group_order`` optionally permutes the processing order of the groups;
    the result does not depend on it.
    """
    _network_of(net)
    cores = net.zcores()
    if not 1 <= factor <= len(cores):
        raise ValueError(f"factor {factor} out of range 1..{len(cores)}")
    index = entries.index_for(net)
    pos = factor - 1
    u, v = _partials_around(cores, index, pos)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return _solve_core(cores, pos, index, u, v, entries.values, reg, pool, group_order)
    return _solve_core(cores, pos, index, u, v, entries.values, reg, None, group_order)


def normal_systems(net, entries: ObservedEntries, factor: int) -> dict:
    """Assembled ``(K, y)`` per group key of core ``factor``, for inspection."""
    cores = net.zcores()
    index = entries.index_for(net)
    pos = factor - 1
    u, v = _partials_around(cores, index, pos)
    grouping = index.grouping(pos)
    return {int(grouping.keys[g]): _group_system(pos, len(cores), u, v, entries.values, grouping.members(g))
            for g in range(len(grouping))}


# -- sweeps ----------------------------------------------------------------

def _objective(x, t, cores, reg) -> float:
    res = 0.5 * float(np.vdot(x - t, x - t).real)
    return res + 0.5 * reg * sum(float(np.vdot(c, c).real) for c in cores)


def _sweep(cores, index, t, reg, pool, objective_trace):
    """One ascending pass over all cores; returns model values on the entries, stats and op counts.

    Right partials are computed once up front (the cores they involve are not
    yet updated); left partials are extended after every solve.
    """
    ncores = len(cores)
    r2 = len(index) * cores[1].shape[-1] ** 2 if ncores > 2 else 0
    chain_macs = (ncores - 2) * r2
    all_stats = []
    x = None
    right = chain.right_partials(cores, index)
    u = None
    for pos in range(ncores):
        v = right[pos + 1] if pos < ncores - 1 else None
        all_stats.append(_solve_core(cores, pos, index, u, v, t, reg, pool))
        if pos == 0:
            u = chain.first_vectors(cores, index)
        elif pos < ncores - 1:
            u = chain.apply_left(cores[pos], index.grouping(pos), u)
            chain_macs += r2
        if pos == ncores - 1:
            x = np.einsum("ep,ep->e", u, chain.last_vectors(cores, index))
        elif objective_trace is not None:
            x = np.einsum("ep,ep->e", u, v)
        if objective_trace is not None:
            objective_trace.append(_objective(x, t, cores, reg))
    ops = {
        "chain_macs": chain_macs,
        "gram_macs": sum(s.gram_macs for s in all_stats),
        "solve_flops": sum(s.solve_flops for s in all_stats),
    }
    return x, all_stats, ops


def _run_als(net, split: EvalSplit, cfg: AlsConfig, algorithm: str, extra_config: dict):
    net = _network_of(net).copy()
    train = split.train
    if len(train) == 0:
        raise ValueError("no training entries")
    index = train.index_for(net)
    cores = net.zcores()
    t = train.values
    tnorm = train.norm()
    reg = default_reg(train) if cfg.reg is None else float(cfg.reg)
    test = split.test if cfg.record_test else None
    config = {**cfg.to_dict(), "reg": reg, **extra_config}
    report = ConvergenceReport(algorithm, config)
    trace = [] if cfg.track_objective else None
    if trace is not None:
        x0 = chain.evaluate(cores, index)
        report.metadata["initial_objective"] = _objective(x0, t, cores, reg)
        report.metadata["objective"] = trace

    def test_err():
        return relative_error(net, test) if test is not None and len(test) else None

    report.add(IterationRecord(0, relative_error(net, train), test_err()))
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for it in range(1, int(cfg.max_iters) + 1):
            start = time.perf_counter()
            x, stats, ops = _sweep(cores, index, t, reg, pool, trace)
            train_err = float(np.linalg.norm(t - x) / tnorm)
            if not np.isfinite(train_err):
                raise NonFiniteError(f"training error became non-finite in sweep {it}")
            te = test_err()
            flags = [f for s in stats for f in s.flags()]
            report.add(IterationRecord(it, train_err, te, time.perf_counter() - start, flags, ops))
            log.info("%s sweep %d: train %.3e test %s", algorithm, it, train_err, te)
            if train_err < cfg.tol:
                report.termination = CONVERGED
                break
        else:
            report.termination = MAX_ITERS
    finally:
        if pool is not None:
            pool.shutdown()
    return net, report


def als_butterfly(net: ButterflyNetwork, split: EvalSplit, cfg: AlsConfig | None = None):
    """Complete with butterfly ALS; returns ``(new_network, report)``."""
    if not isinstance(net, ButterflyNetwork):
        raise TypeError("als_butterfly expects a ButterflyNetwork")
    cfg = cfg or AlsConfig()
    return _run_als(net, split, cfg, "als_butterfly",
                    {"format": "butterfly", "levels": net.levels, "leaf": net.leaf, "rank": net.rank})


def als_qtt(net: QttNetwork, split: EvalSplit, cfg: AlsConfig | None = None):
    """Complete with QTT ALS; returns ``(new_network, report)``."""
    if not isinstance(net, QttNetwork):
        raise TypeError("als_qtt expects a QttNetwork")
    cfg = cfg or AlsConfig()
    return _run_als(net, split, cfg, "als_qtt",
                    {"format": "qtt", "levels": net.levels, "leaf": net.leaf, "rank": net.rank})


def als_lowrank(A, B, split: EvalSplit, cfg: AlsConfig | None = None):
    """Rank-``R`` completion ``X = A @ B.T``; returns ``(A, B, report)``."""
    pair = LowRankPair(A, B)
    cfg = cfg or AlsConfig()
    out, report = _run_als(pair, split, cfg, "als_lowrank", {"format": "lowrank", "rank": pair.rank})
    return out.A, out.B, report
