"""On-disk container for networks: a JSON manifest plus one raw complex128 file per core."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .network import ButterflyNetwork, LowRankPair, QttNetwork

MANIFEST = "manifest.json"
_DTYPE = np.dtype("<c16")


def save_network(net, directory) -> Path:
    """Write ``net`` into ``directory``; returns the manifest path.

    Every core is stored in the flattened slice layout ``(slices, rows, cols)``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = ["A", "B"] if isinstance(net, LowRankPair) else [f"core{k + 1}" for k in range(len(net.cores))]
    entries = []
    for name, core in zip(names, net.zcores()):
        fname = f"{name}.bin"
        np.ascontiguousarray(core, dtype=_DTYPE).tofile(directory / fname)
        slices, rows, cols = core.shape
        entries.append({"file": fname, "slices": slices, "rows": rows, "cols": cols})
    if isinstance(net, LowRankPair):
        shape = {"levels": 0, "leaf": net.n, "rank": net.rank}
    else:
        shape = {"levels": net.levels, "leaf": net.leaf, "rank": net.rank}
    manifest = {"format": net.format, **shape, "cores": entries}
    path = directory / MANIFEST
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _manifest_path(path) -> Path:
    path = Path(path)
    return path / MANIFEST if path.is_dir() else path


def load_network(path):
    """Read a network from a container directory or its manifest file."""
    mpath = _manifest_path(path)
    try:
        manifest = json.loads(mpath.read_text())
        fmt = manifest["format"]
        L, c, r = int(manifest["levels"]), int(manifest["leaf"]), int(manifest["rank"])
        specs = manifest["cores"]
    except FileNotFoundError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise DataFormatError(f"invalid network manifest {mpath}: {exc}") from None
    arrays = []
    for spec in specs:
        fpath = mpath.parent / spec["file"]
        data = np.fromfile(fpath, dtype=_DTYPE)
        count = spec["slices"] * spec["rows"] * spec["cols"]
        if data.size != count:
            raise DataFormatError(f"{fpath}: expected {count} values, found {data.size}")
        arrays.append(data.astype(np.complex128).reshape(spec["slices"], spec["rows"], spec["cols"]))
    try:
        if fmt == "butterfly":
            return ButterflyNetwork(L, c, r, arrays)
        if fmt == "qtt":
            cores = [arrays[0]] + [a.reshape(2, 2, r, r) for a in arrays[1:-1]] + [arrays[-1]]
            return QttNetwork(L, c, r, cores)
        if fmt == "lowrank":
            if len(arrays) != 2:
                raise ValueError("low-rank container needs exactly two factors")
            return LowRankPair(arrays[0][0], arrays[1][0])
    except ValueError as exc:
        raise DataFormatError(f"{mpath}: {exc}") from None
    raise DataFormatError(f"{mpath}: unknown format {fmt!r}")
