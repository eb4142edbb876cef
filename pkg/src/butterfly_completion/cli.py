"""Command-line driver: generate data, sample entries, complete, convert, evaluate, mat-vec."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adam import AdamConfig, adam_butterfly
from .als import AlsConfig, als_butterfly, als_lowrank, als_qtt
from .container import load_network, save_network
from .data import EvalSplit, ObservedEntries, load_triplets, omega_size, relative_error, sample_omega, save_triplets
from .errors import DataFormatError, DivergenceError
from .generators import KINDS, GeneratorSpec
from .lowrank_init import generate_initial_guess, lowrank_start, lr_to_butterfly
from .network import LowRankPair, matvec, random_network, random_qtt_network, reconstruct_dense

log = logging.getLogger("butterfly_completion")

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_INTERNAL = 70


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _shape_args(p, rank=True):
    p.add_argument("--levels", type=int, help="butterfly levels L (n = leaf * 2**L)")
    p.add_argument("--leaf", type=int, help="leaf block size c")
    if rank:
        p.add_argument("--rank", type=int, default=None, help="network rank r")


def _sampling_args(p):
    p.add_argument("--count", type=int, help="number of training entries")
    p.add_argument("--factor", type=float, help="training entries as factor * n * log2(n)")
    p.add_argument("--test-count", type=int, default=0)
    p.add_argument("--test-factor", type=float)
    p.add_argument("--test-out", type=Path)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bfcomplete", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="JSON file with option values; command-line flags win")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=_positive_int, default=1)
        p.add_argument("--out", type=Path)
        return p

    p = add("generate", "build a test matrix and write it as triplets or .npy")
    p.add_argument("--kind", choices=KINDS)
    _shape_args(p)
    p.add_argument("--omega", type=float, help="wavenumber override for the Green's function")
    p.add_argument("--dense", action="store_true", help="write the full matrix as .npy instead of triplets")
    p.add_argument("--save-network", type=Path, help="also save the generating network (synthetic kinds)")
    _sampling_args(p)

    p = add("sample", "sample observed entries from a full matrix (.npy) or triplet file")
    p.add_argument("input", type=Path)
    _shape_args(p, rank=False)
    _sampling_args(p)

    p = add("complete", "run completion on observed entries")
    p.add_argument("--train", type=Path)
    p.add_argument("--test", type=Path)
    p.add_argument("--algo", choices=("als", "adam"), default="als")
    p.add_argument("--format", choices=("butterfly", "qtt", "lowrank"), default="butterfly")
    _shape_args(p)
    p.add_argument("--init", choices=("lowrank", "random"), default="lowrank")
    p.add_argument("--init-rank", type=int, help="rank R of the low-rank initial guess (default: rank)")
    p.add_argument("--init-iters", type=int, default=10)
    p.add_argument("--oversampling", type=int)
    p.add_argument("--max-iters", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--reg", type=float)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--sigma", type=float, default=1e-8)
    p.add_argument("--csv", action="store_true", help="also write iteration,train,test,seconds as CSV")

    p = add("convert", "convert a low-rank container to butterfly cores, or any network to a dense .npy")
    p.add_argument("input", type=Path)
    p.add_argument("--to", choices=("butterfly", "dense"), default="butterfly")
    _shape_args(p)
    p.add_argument("--oversampling", type=int)

    p = add("eval", "relative error of a network on triplets")
    p.add_argument("network", type=Path)
    p.add_argument("triplets", type=Path)

    p = add("matvec", "multiply a butterfly network with a vector (.npy)")
    p.add_argument("network", type=Path)
    p.add_argument("vector", type=Path)
    return parser


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        if name in action.choices:
            return action.choices[name]
    raise KeyError(name)


def parse_args(argv) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` become defaults that flags override."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        cfg = json.loads(args.config.read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    sp = _subparser(parser, args.command)
    actions = {a.dest: a for a in sp._actions if a.dest not in ("help", "config")}
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(cfg) - set(actions))
    if unknown:
        raise UsageError(f"unknown config keys for '{args.command}': {', '.join(unknown)}")
    for key, value in cfg.items():
        action = actions[key]
        if action.type is not None and value is not None and not isinstance(value, bool):
            try:
                value = action.type(str(value))
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config key {key}: {value!r} not in {sorted(action.choices)}")
        cfg[key] = value
    sp.set_defaults(**cfg)
    return parser.parse_args(argv)


# -- helpers ---------------------------------------------------------------

def _shape(args, n=None):
    if args.levels is None or args.leaf is None:
        raise UsageError("--levels and --leaf are required")
    if args.levels < 0 or args.leaf < 1:
        raise UsageError("--levels must be >= 0 and --leaf >= 1")
    size = args.leaf << args.levels
    if n is not None and n != size:
        raise UsageError(f"leaf * 2**levels = {size} does not match matrix size {n}")
    return args.levels, args.leaf, size


def _count(n, count, factor, what):
    if count is not None and factor is not None:
        raise UsageError(f"give either a {what} count or a factor, not both")
    if factor is not None:
        return omega_size(n, factor)
    return count


def _require_out(args):
    if args.out is None:
        raise UsageError("--out is required")
    return args.out


def _write_samples(source, n, args, levels, leaf):
    train_count = _count(n, args.count, args.factor, "training")
    test_count = _count(n, args.test_count or None, args.test_factor, "test") or 0
    out = _require_out(args)
    if test_count and args.test_out is None:
        raise UsageError("--test-out is required with a test set")
    ss = np.random.SeedSequence(args.seed)
    s_test, s_train = ss.spawn(2)
    if train_count is None:
        idx = np.arange(n * n, dtype=np.int64)
        train_pairs = np.stack(np.divmod(idx, n), axis=1)
        if test_count:
            raise UsageError("a test set needs an explicit training count")
        test_pairs = np.zeros((0, 2), dtype=np.int64)
    else:
        test_pairs = sample_omega(n, test_count, np.random.default_rng(s_test))
        train_pairs = sample_omega(n, train_count, np.random.default_rng(s_train), exclude=test_pairs)

    def entries(pairs):
        return ObservedEntries(n, pairs[:, 0], pairs[:, 1], source(pairs[:, 0], pairs[:, 1]), levels, leaf)

    save_triplets(entries(train_pairs), out)
    log.info("wrote %d training entries to %s", len(train_pairs), out)
    if test_count:
        save_triplets(entries(test_pairs), args.test_out)
        log.info("wrote %d test entries to %s", test_count, args.test_out)


# -- commands --------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.kind is None:
        raise UsageError("--kind is required")
    L, c, n = _shape(args)
    spec = GeneratorSpec(args.kind, n, c, seed=args.seed, omega=args.omega, rank=args.rank or 1)
    if args.save_network is not None:
        if args.kind == "synthetic_butterfly":
            save_network(random_network(L, c, spec.rank, args.seed), args.save_network)
        elif args.kind == "synthetic_qtt":
            save_network(random_qtt_network(L, c, spec.rank, args.seed), args.save_network)
        else:
            raise UsageError("--save-network applies to synthetic kinds only")
    if args.dense:
        np.save(_require_out(args), spec.dense())
        return EXIT_OK
    _write_samples(spec.entry_function(), n, args, L, c)
    return EXIT_OK


def cmd_sample(args) -> int:
    if args.input.suffix == ".npy":
        T = np.load(args.input)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise DataFormatError(f"{args.input}: expected a square matrix, got shape {T.shape}")
        n = T.shape[0]

        def source(rows, cols):
            return T[rows, cols]
    else:
        full = load_triplets(args.input)
        n = full.n
        lookup = dict(zip(full.flat.tolist(), full.values.tolist()))

        def source(rows, cols):
            try:
                return np.array([lookup[int(i) * n + int(j)] for i, j in zip(rows, cols)], dtype=complex)
            except KeyError as exc:
                raise DataFormatError(f"{args.input}: entry {divmod(exc.args[0], n)} is not available") from None
    levels = leaf = None
    if args.levels is not None or args.leaf is not None:
        levels, leaf, _ = _shape(args, n)
    _write_samples(source, n, args, levels, leaf)
    return EXIT_OK


def _random_start(fmt, L, c, r, entries, seed):
    tau = entries.norm() / math.sqrt(len(entries))
    if fmt == "qtt":
        scale = (tau / r ** (L / 2)) ** (1.0 / (L + 1))
        return random_qtt_network(L, c, r, seed, scale)
    scale = (tau / r ** ((L + 1) / 2)) ** (1.0 / (L + 2))
    return random_network(L, c, r, seed, scale)


def cmd_complete(args) -> int:
    out = _require_out(args)
    if args.train is None:
        raise UsageError("--train is required")
    L, c, n = _shape(args)
    r = args.rank
    if r is None or r < 1:
        raise UsageError("--rank must be a positive integer")
    if args.max_iters is None or args.max_iters < 1:
        raise UsageError("--max-iters must be >= 1")
    if not args.tol > 0:
        raise UsageError("--tol must be positive")
    train = load_triplets(args.train, n=n, levels=L, leaf=c)
    test = load_triplets(args.test, n=n, levels=L, leaf=c) if args.test else None
    split = EvalSplit(train, test)
    init_report = None
    if args.format == "lowrank":
        net = lowrank_start(train, r, args.seed)
    elif args.format == "qtt" or args.init == "random":
        if args.format == "qtt" and L < 1:
            raise UsageError("QTT needs --levels >= 1")
        net = _random_start(args.format, L, c, r, train, args.seed)
    else:
        if L % 2:
            raise UsageError("the low-rank initial guess needs an even number of levels; use --init random")
        net, init_report = generate_initial_guess(split, L, c, r, args.init_rank, args.init_iters,
                                                  args.oversampling, args.seed, args.reg, args.threads)
    try:
        if args.algo == "als":
            cfg = AlsConfig(max_iters=args.max_iters, tol=args.tol, reg=args.reg, threads=args.threads)
            if args.format == "butterfly":
                result, report = als_butterfly(net, split, cfg)
            elif args.format == "qtt":
                result, report = als_qtt(net, split, cfg)
            else:
                A, B, report = als_lowrank(net.A, net.B, split, cfg)
                result = LowRankPair(A, B)
        else:
            cfg = AdamConfig(max_iters=args.max_iters, tol=args.tol, lr=args.lr, beta1=args.beta1,
                             beta2=args.beta2, sigma=args.sigma)
            result, report = adam_butterfly(net, split, cfg)
    except DivergenceError as exc:
        log.error("%s", exc)
        exc.report.config["seed"] = args.seed
        exc.report.write(out, csv_too=args.csv)
        return EXIT_NOT_CONVERGED
    report.config.update(seed=args.seed, threads=args.threads, init=args.init if args.format == "butterfly" else "random",
                         train_file=str(args.train), test_file=str(args.test) if args.test else None)
    if init_report is not None:
        report.metadata["init"] = {"rank": init_report.config["rank"], "iterations": init_report.iterations,
                                   "train_err": init_report.final_train_error}
    save_network(result, out / "network")
    report.write(out, csv_too=args.csv)
    print(f"{report.termination}: train error {report.final_train_error:.6e} after {report.iterations} iterations")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_convert(args) -> int:
    out = _require_out(args)
    net = load_network(args.input)
    if args.to == "dense":
        np.save(out, reconstruct_dense(net))
        return EXIT_OK
    if not isinstance(net, LowRankPair):
        raise DataFormatError(f"{args.input}: conversion to butterfly needs a low-rank container, got {net.format}")
    if args.levels is None or args.rank is None:
        raise UsageError("--levels and --rank are required")
    try:
        bf = lr_to_butterfly(net, args.levels, args.rank, args.oversampling, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    save_network(bf, out)
    return EXIT_OK


def cmd_eval(args) -> int:
    net = load_network(args.network)
    levels, leaf = (0, net.n) if isinstance(net, LowRankPair) else (net.levels, net.leaf)
    entries = load_triplets(args.triplets, n=net.n, levels=levels, leaf=leaf)
    err = relative_error(net, entries)
    print(repr(err))
    return EXIT_OK


def cmd_matvec(args) -> int:
    out = _require_out(args)
    net = load_network(args.network)
    v = np.load(args.vector)
    if v.ndim != 1 or v.shape[0] != net.n:
        raise DataFormatError(f"{args.vector}: vector of shape {v.shape} does not match n={net.n}")
    if isinstance(net, LowRankPair):
        u = net.A @ (net.B.T @ v)
    elif net.format == "butterfly":
        u = matvec(net, v)
    else:
        u = reconstruct_dense(net) @ v
    np.save(out, u)
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "sample": cmd_sample,
    "complete": cmd_complete,
    "convert": cmd_convert,
    "eval": cmd_eval,
    "matvec": cmd_matvec,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"bfcomplete {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"bfcomplete {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # invalid parameter combinations surface as ValueError from the library
        print(f"bfcomplete {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        log.exception("internal error")
        print(f"bfcomplete {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
