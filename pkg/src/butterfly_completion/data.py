"""Observed-entry storage, sampling, triplet files and the relative-error metric."""
from __future__ import annotations

import csv
import gzip
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import chain
from .errors import DataFormatError, DuplicateEntryError
from .network import butterfly_index, qtt_index

log = logging.getLogger(__name__)

HEADER = ["i", "j", "re", "im"]
_DENSE_SAMPLING_LIMIT = 1 << 26


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class ObservedEntries:
    """Immutable set of observed entries ``(row, col, value)`` of an ``n x n`` matrix.

    Entries are kept sorted by ``(row, col)``.  An optional tensorization
    ``(levels, leaf)`` with ``n = leaf * 2**levels`` enables per-factor
    groupings; slice-key indices are computed lazily and cached per format.
    """

    def __init__(self, n: int, rows, cols, values, levels: int | None = None, leaf: int | None = None):
        n = int(n)
        if n < 1:
            raise ValueError(f"matrix size must be positive, got {n}")
        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(cols, dtype=np.int64).reshape(-1)
        values = np.asarray(values, dtype=np.complex128).reshape(-1)
        if not (rows.shape == cols.shape == values.shape):
            raise DataFormatError("rows, cols and values must have equal length")
        if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n):
            raise DataFormatError(f"entry index out of range for n={n}")
        flat = rows * n + cols
        order = np.argsort(flat, kind="stable")
        flat = flat[order]
        if flat.size > 1:
            dup = np.flatnonzero(flat[1:] == flat[:-1])
            if dup.size:
                r, c = divmod(int(flat[dup[0]]), n)
                raise DuplicateEntryError(f"duplicate observed entry ({r}, {c})")
        self.n = n
        self.rows = _readonly(rows[order])
        self.cols = _readonly(cols[order])
        self.values = _readonly(values[order])
        self._flat = _readonly(flat)
        self.levels = None
        self.leaf = None
        if levels is not None or leaf is not None:
            self._set_shape(levels, leaf)
        self._index_cache: dict = {}

    def _set_shape(self, levels, leaf):
        if levels is None or leaf is None or levels < 0 or leaf < 1 or leaf << levels != self.n:
            raise ValueError(f"tensorization levels={levels}, leaf={leaf} does not match n={self.n}")
        self.levels, self.leaf = int(levels), int(leaf)

    @classmethod
    def empty(cls, n: int, levels=None, leaf=None) -> "ObservedEntries":
        z = np.zeros(0, dtype=np.int64)
        return cls(n, z, z, np.zeros(0, dtype=complex), levels, leaf)

    def __len__(self) -> int:
        return self.rows.size

    def __repr__(self) -> str:
        return f"ObservedEntries(n={self.n}, count={len(self)}, levels={self.levels}, leaf={self.leaf})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, ObservedEntries):
            return NotImplemented
        return (self.n == other.n and np.array_equal(self._flat, other._flat)
                and np.array_equal(self.values, other.values))

    __hash__ = None

    @property
    def flat(self) -> np.ndarray:
        return self._flat

    def pairs(self) -> np.ndarray:
        return np.stack([self.rows, self.cols], axis=1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def retensorize(self, levels: int, leaf: int) -> "ObservedEntries":
        """Same entries viewed under another tensorization (arrays are shared)."""
        out = object.__new__(ObservedEntries)
        out.__dict__.update(self.__dict__)
        out._index_cache = {}
        out._set_shape(levels, leaf)
        return out

    def subset(self, mask) -> "ObservedEntries":
        if not isinstance(mask, slice):
            mask = np.asarray(mask)
        return ObservedEntries(self.n, self.rows[mask], self.cols[mask], self.values[mask], self.levels, self.leaf)

    def scaled(self, alpha: complex) -> "ObservedEntries":
        return ObservedEntries(self.n, self.rows, self.cols, alpha * self.values, self.levels, self.leaf)

    # -- slice-key indices -------------------------------------------------

    def chain_index(self, fmt: str, levels: int | None = None, leaf: int | None = None) -> chain.ChainIndex:
        """Per-entry slice keys for a network of format ``fmt`` ("butterfly", "qtt", "lowrank")."""
        if fmt == "lowrank":
            levels, leaf = 0, self.n
        else:
            levels = self.levels if levels is None else levels
            leaf = self.leaf if leaf is None else leaf
            if levels is None or leaf is None or leaf << levels != self.n:
                raise ValueError(f"entries are not tensorized for {fmt} (levels={levels}, leaf={leaf})")
        key = (fmt, levels, leaf)
        idx = self._index_cache.get(key)
        if idx is None:
            if fmt in ("butterfly", "lowrank"):
                idx = butterfly_index(self.rows, self.cols, levels, leaf)
            elif fmt == "qtt":
                idx = qtt_index(self.rows, self.cols, levels, leaf)
            else:
                raise ValueError(f"unknown network format {fmt!r}")
            self._index_cache[key] = idx
        return idx

    def index_for(self, net) -> chain.ChainIndex:
        if net.n != self.n:
            raise ValueError(f"network size {net.n} does not match entries n={self.n}")
        if net.format == "lowrank":
            return self.chain_index("lowrank")
        return self.chain_index(net.format, net.levels, net.leaf)

    def group_for_factor(self, factor: int) -> chain.Grouping:
        """Partition of entry positions by the slice (or fiber) key of butterfly core ``factor`` (1-based).

        Groups come in ascending key order; entries inside a group keep the
        ascending ``(row, col)`` order of the store.
        """
        if self.levels is None:
            raise ValueError("entries have no tensorization; call retensorize first")
        if not 1 <= factor <= self.levels + 2:
            raise ValueError(f"factor {factor} out of range 1..{self.levels + 2}")
        return self.chain_index("butterfly").grouping(factor - 1)


@dataclass(frozen=True)
class EvalSplit:
    train: ObservedEntries
    test: ObservedEntries | None = None

    def __post_init__(self):
        if self.test is not None:
            if self.test.n != self.train.n:
                raise ValueError("train and test sets have different matrix sizes")
            if np.intersect1d(self.train.flat, self.test.flat).size:
                raise ValueError("train and test sets overlap")

    def retensorize(self, levels: int, leaf: int) -> "EvalSplit":
        test = None if self.test is None else self.test.retensorize(levels, leaf)
        return EvalSplit(self.train.retensorize(levels, leaf), test)


# -- sampling --------------------------------------------------------------

def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_omega(n: int, count: int, seed=None, exclude=None) -> np.ndarray:
    """Uniformly sample ``count`` distinct ``(row, col)`` pairs, shape ``(count, 2)``.

    ``exclude`` is an optional ``(k, 2)`` array of pairs (or an
    :class:`ObservedEntries`) that must not be drawn.
    """
    rng = _rng(seed)
    total = n * n
    if isinstance(exclude, ObservedEntries):
        excl = exclude.flat
    elif exclude is None:
        excl = np.zeros(0, dtype=np.int64)
    else:
        e = np.asarray(exclude, dtype=np.int64).reshape(-1, 2)
        excl = np.unique(e[:, 0] * n + e[:, 1])
    if count < 0 or count > total - excl.size:
        raise ValueError(f"cannot sample {count} pairs from {total - excl.size} available")
    if total <= _DENSE_SAMPLING_LIMIT:
        mask = np.ones(total, dtype=bool)
        mask[excl] = False
        flat = rng.choice(np.flatnonzero(mask), size=count, replace=False)
    else:
        taken = set(excl.tolist())
        picked: list = []
        while len(picked) < count:
            for x in rng.integers(0, total, size=2 * (count - len(picked)) + 16).tolist():
                if x not in taken:
                    taken.add(x)
                    picked.append(x)
                    if len(picked) == count:
                        break
        flat = np.asarray(picked, dtype=np.int64)
    flat = np.asarray(flat, dtype=np.int64)
    return np.stack(np.divmod(flat, n), axis=1)


def omega_size(n: int, factor: float) -> int:
    """``round(factor * n * log2(n))``, the usual sample-size prescription."""
    return int(round(factor * n * math.log2(n)))


def observe(source, pairs, n: int | None = None, levels=None, leaf=None) -> ObservedEntries:
    """Build entries from a dense matrix or an entry function ``f(rows, cols)``."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    rows, cols = pairs[:, 0], pairs[:, 1]
    if callable(source):
        if n is None:
            raise ValueError("n is required with an entry function")
        vals = source(rows, cols)
    else:
        source = np.asarray(source)
        n = source.shape[0] if n is None else n
        vals = source[rows, cols]
    return ObservedEntries(n, rows, cols, vals, levels, leaf)


def make_split(source, n: int, train_count: int, test_count: int = 0, seed=None,
               levels=None, leaf=None) -> EvalSplit:
    """Draw test pairs first, then disjoint train pairs, and observe ``source`` on both."""
    ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    s_test, s_train = ss.spawn(2)
    test_pairs = sample_omega(n, test_count, np.random.default_rng(s_test))
    train_pairs = sample_omega(n, train_count, np.random.default_rng(s_train), exclude=test_pairs)
    train = observe(source, train_pairs, n, levels, leaf)
    test = observe(source, test_pairs, n, levels, leaf) if test_count else None
    return EvalSplit(train, test)


# -- error metric ----------------------------------------------------------

def relative_error(model, entries: ObservedEntries) -> float:
    """``||P_Omega(T - X)||_F / ||P_Omega(T)||_F`` for a network or dense matrix ``X``."""
    denom = entries.norm()
    if len(entries) == 0 or denom == 0.0:
        raise ZeroDivisionError("observed entries have zero norm")
    if isinstance(model, np.ndarray):
        x = model[entries.rows, entries.cols]
    else:
        x = chain.evaluate(model.zcores(), entries.index_for(model))
    return float(np.linalg.norm(entries.values - x) / denom)


# -- triplet files ---------------------------------------------------------

def _open(path: Path, mode: str):
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, mode + "b"), encoding="utf-8", newline="")
    return open(path, mode, encoding="utf-8", newline="")


def save_triplets(entries: ObservedEntries, path) -> None:
    path = Path(path)
    with _open(path, "w") as fh:
        fh.write(",".join(HEADER) + "\n")
        for i, j, v in zip(entries.rows.tolist(), entries.cols.tolist(), entries.values.tolist()):
            fh.write(f"{i},{j},{v.real!r},{v.imag!r}\n")


def load_triplets(path, n: int | None = None, levels=None, leaf=None) -> ObservedEntries:
    """Read a triplet file; ``n`` defaults to ``leaf * 2**levels`` or the largest index + 1."""
    path = Path(path)
    rows, cols, vals = [], [], []
    with _open(path, "r") as fh:
        reader = csv.reader(fh)
        for lineno, rec in enumerate(reader, start=1):
            if lineno == 1 and rec and rec[0].strip() == "i":
                if [s.strip() for s in rec] != HEADER:
                    raise DataFormatError(f"bad header {rec}", lineno)
                continue
            if not rec or all(not s.strip() for s in rec):
                continue
            if len(rec) != 4:
                raise DataFormatError(f"expected 4 fields, got {len(rec)}", lineno)
            try:
                i, j = int(rec[0]), int(rec[1])
                v = complex(float(rec[2]), float(rec[3]))
            except ValueError as exc:
                raise DataFormatError(str(exc), lineno) from None
            if i < 0 or j < 0:
                raise DataFormatError(f"negative index ({i}, {j})", lineno)
            rows.append(i)
            cols.append(j)
            vals.append(v)
    if n is None:
        if levels is not None and leaf is not None:
            n = leaf << levels
        else:
            n = max(max(rows, default=0), max(cols, default=0)) + 1
    return ObservedEntries(n, rows, cols, vals, levels, leaf)
