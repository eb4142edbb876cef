"""Gradients of the completion objective and ADAM optimization of chain networks."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import chain
from .data import EvalSplit, ObservedEntries, relative_error
from .errors import DivergenceError, NonFiniteError
from .report import CONVERGED, DIVERGED, MAX_ITERS, ConvergenceReport, IterationRecord

log = logging.getLogger(__name__)


@dataclass
class AdamConfig:
    max_iters: int = 100
    tol: float = 1e-3
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    sigma: float = 1e-8
    record_test: bool = True
    divergence_factor: float = 1e3

    def __post_init__(self):
        if isinstance(self.max_iters, bool) or int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.lr < 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.sigma <= 0:
            raise ValueError("invalid ADAM hyperparameters")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    """First and second moments per core and the step counter."""

    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, cores) -> "AdamState":
        return cls([np.zeros_like(c) for c in cores], [np.zeros(c.shape) for c in cores], 0)


@dataclass
class GradientSet:
    grads: list
    residual: np.ndarray = field(repr=False)


def adam_update(param, grad, m, v, t: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                sigma: float = 1e-8):
    """One ADAM step; returns ``(param, m, v)`` as new arrays.

    Complex entries update their real and imaginary parts with a shared
    second moment ``|g|^2``.
    """
    if t < 1:
        raise ValueError("ADAM step counter must be >= 1 for bias correction")
    grad = np.asarray(grad)
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * (grad.real ** 2 + grad.imag ** 2 if np.iscomplexobj(grad) else grad ** 2)
    mhat = m / (1 - beta1 ** t)
    vhat = v / (1 - beta2 ** t)
    return param - lr * mhat / (np.sqrt(vhat) + sigma), m, v


def residual_on_omega(net, entries: ObservedEntries) -> np.ndarray:
    """``z_e = X(S)_e - t_e`` on every observed entry."""
    return chain.evaluate(net.zcores(), entries.index_for(net)) - entries.values


def _core_gradient(core, pos, ncores, grouping, u, v, z) -> np.ndarray:
    """Gradient slices ``sum_e z_e conj(a_e)`` grouped by key; zero where nothing is observed."""
    grad = np.zeros_like(core)
    flat = grad.reshape(-1, core.shape[-1]) if pos in (0, ncores - 1) else grad
    for g, key in enumerate(grouping.keys):
        members = grouping.members(g)
        zg = z[members]
        if pos == 0:
            flat[key] = v[members].conj().T @ zg
        elif pos == ncores - 1:
            flat[key] = u[members].conj().T @ zg
        else:
            flat[key] = (u[members].conj() * zg[:, None]).T @ v[members].conj()
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError(f"non-finite gradient for core {pos + 1}")
    return grad


def _model_at(cores, pos, index, u, v):
    """Model values on the entries from the partials around core ``pos``."""
    ncores = len(cores)
    if pos == 0:
        return np.einsum("ep,ep->e", chain.first_vectors(cores, index), v)
    if pos == ncores - 1:
        return np.einsum("ep,ep->e", u, chain.last_vectors(cores, index))
    return np.einsum("ep,ep->e", u, chain.apply_right(cores[pos], index.grouping(pos), v))


def butterfly_gradients(net, entries: ObservedEntries) -> GradientSet:
    """Gradients of ``1/2 ||P_Omega(X(S) - T)||^2`` with respect to every core.

    For complex cores the returned ``g`` satisfies ``d phi = Re <g, dS>``, so
    ``-g`` is the steepest-descent direction.  Works for any chain network.
    """
    cores = net.zcores()
    index = entries.index_for(net)
    z = residual_on_omega(net, entries)
    right = chain.right_partials(cores, index)
    ncores = len(cores)
    grads = []
    u = None
    for pos in range(ncores):
        v = right[pos + 1] if pos < ncores - 1 else None
        grads.append(_core_gradient(cores[pos], pos, ncores, index.grouping(pos), u, v, z))
        if pos == 0:
            u = chain.first_vectors(cores, index)
        elif pos < ncores - 1:
            u = chain.apply_left(cores[pos], index.grouping(pos), u)
    # QTT inner cores are handled through flattened views
    return GradientSet([g.reshape(c.shape) for c, g in zip(net.cores, grads)], z)


def adam_butterfly(net, split: EvalSplit, cfg: AdamConfig | None = None, state: AdamState | None = None):
    """ADAM completion; returns ``(new_network, report)``.

    Within an iteration the cores are visited in ascending order and each
    core's gradient is evaluated at the current parameters, immediately
    before that core is updated.  Raises :class:`DivergenceError` (with the
    report attached) if the train error exceeds ``divergence_factor`` times
    ``max(initial error, 1)``.
    """
    cfg = cfg or AdamConfig()
    net = net.copy()
    train = split.train
    if len(train) == 0:
        raise ValueError("no training entries")
    index = train.index_for(net)
    cores = net.zcores()
    ncores = len(cores)
    t = train.values
    tnorm = train.norm()
    state = state or AdamState.zeros_like(cores)
    test = split.test if cfg.record_test else None
    config = {**cfg.to_dict(), "format": net.format, "update_scheme": "per_factor"}
    for key in ("levels", "leaf", "rank"):
        if hasattr(net, key):
            config[key] = getattr(net, key)
    report = ConvergenceReport("adam_" + net.format, config)

    def test_err():
        return relative_error(net, test) if test is not None and len(test) else None

    initial = relative_error(net, train)
    # relative errors above 1 are worse than the zero model, so that is the floor
    limit = cfg.divergence_factor * max(initial, 1.0)
    report.add(IterationRecord(0, initial, test_err()))
    for it in range(1, int(cfg.max_iters) + 1):
        start = time.perf_counter()
        state.t += 1
        right = chain.right_partials(cores, index)
        u = None
        for pos in range(ncores):
            v = right[pos + 1] if pos < ncores - 1 else None
            z = _model_at(cores, pos, index, u, v) - t
            g = _core_gradient(cores[pos], pos, ncores, index.grouping(pos), u, v, z)
            cores[pos][...], state.m[pos], state.v[pos] = adam_update(
                cores[pos], g, state.m[pos], state.v[pos], state.t, cfg.lr, cfg.beta1, cfg.beta2, cfg.sigma)
            if pos == 0:
                u = chain.first_vectors(cores, index)
            elif pos < ncores - 1:
                u = chain.apply_left(cores[pos], index.grouping(pos), u)
        x = np.einsum("ep,ep->e", u, chain.last_vectors(cores, index))
        train_err = float(np.linalg.norm(t - x) / tnorm)
        report.add(IterationRecord(it, train_err, test_err(), time.perf_counter() - start))
        log.info("adam iteration %d: train %.3e", it, train_err)
        if not np.isfinite(train_err) or train_err > limit:
            report.termination = DIVERGED
            raise DivergenceError(
                f"train error {train_err:.3e} exceeded the divergence limit {limit:.3e}"
                f" at iteration {it}; try a smaller learning rate", report)
        if train_err < cfg.tol:
            report.termination = CONVERGED
            break
    else:
        report.termination = MAX_ITERS
    report.metadata["adam_steps"] = state.t
    return net, report
