"""Command-line front end.

Every subcommand writes its primary output to files named by flags, prints a
short summary to stdout, and appends one benchmark record to ``--stats-out``
when given. Exit status: 0 on success, 2 on parse or configuration errors,
3 when a solver diverges.
"""
from __future__ import annotations

import argparse
import itertools
import logging
import sys
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .consistency import ConsistencyModel
from .errors import DegeneratePotentialError, DivergenceError, GraphError, UpdateFunctionError
from .graph import SharedDataTable
from .io import (BenchmarkRecord, FormatError, read_bipartite, read_mrf, read_pgm, read_seeds, read_sparse,
                 read_vector, write_matrix_tsv, write_pgm, write_records)
from .scheduling import SchedulerKind

log = logging.getLogger("scopegraph")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

SCHEDULERS = [k.value for k in SchedulerKind if k is not SchedulerKind.SET]
MODELS = ["full", "edge", "vertex"]


class ConfigError(ValueError):
    pass


def _parse_dims(spec: str, what: str) -> tuple[int, int]:
    try:
        a, b = spec.lower().split("x")
        a, b = int(a), int(b)
    except ValueError:
        raise ConfigError(f"{what} must look like HxW, got {spec!r}") from None
    if a <= 0 or b <= 0:
        raise ConfigError(f"{what} must be positive, got {spec!r}")
    return a, b


def _floats(spec: str) -> list[float]:
    try:
        return [float(x) for x in spec.split(",")]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {spec!r}") from None


def _settings(args, scheduler: str, model: str, sweeps: int):
    sched = SchedulerKind(args.scheduler or scheduler)
    mdl = ConsistencyModel.parse(args.model or model)
    return sched, mdl, (args.sweeps if args.sweeps is not None else sweeps)


def _record(args, algorithm, dataset, stats_list, value, sched, model) -> BenchmarkRecord:
    stats_list = stats_list if isinstance(stats_list, list) else [stats_list]
    return BenchmarkRecord(
        algorithm=algorithm, dataset=dataset, workers=args.workers, scheduler=sched.value,
        model=model.name.lower(), updates=sum(s.updates_applied for s in stats_list),
        wall_time_s=sum(s.wall_time for s in stats_list), objective_or_residual=float(value),
        seed=args.seed)


# --- denoise -----------------------------------------------------------------

def cmd_denoise(args) -> BenchmarkRecord:
    from .algorithms import bp

    k = args.labels
    if k < 2:
        raise ConfigError("--labels must be at least 2")
    if args.noise < 0:
        raise ConfigError("--noise must be non-negative")
    sched, model, sweeps = _settings(args, "priority", "edge", 100)
    rng = np.random.default_rng(args.seed)
    clean = None
    if args.synthetic:
        h, w = _parse_dims(args.synthetic, "--synthetic")
        clean = bp.synthetic_image(h, w, k, rng)
        obs = clean + rng.normal(0.0, args.noise, clean.shape) if args.noise > 0 else clean.astype(float)
        maxval = k - 1
        dataset = f"synthetic:{h}x{w}"
    elif args.input:
        img, maxval = read_pgm(args.input)
        obs = img * (k - 1) / maxval
        dataset = Path(args.input).name
    else:
        raise ConfigError("denoise needs --input or --synthetic")

    graph = bp.grid_bp_graph(obs, k, args.noise)
    lam0 = np.array(_floats(args.lam) * (2 if len(_floats(args.lam)) == 1 else 1))
    if len(lam0) != 2:
        raise ConfigError("--lambda takes one value or one per axis")
    if args.learn_params:
        empirical = bp.proxy_edge_stats(obs, k)
        res = bp.learn_concurrent(graph, empirical, lam0=lam0, step=args.step, period=args.sync_period,
                                  sync_every=args.sync_every, workers=args.workers, model=model)
        lam = res.lam
        print("lambda\t" + "\t".join(repr(float(x)) for x in lam))
        # finish inference at the learned parameters
        table = SharedDataTable({bp.LAMBDA_KEY: lam})
        stats = [bp.run_bp(graph, table, args.workers, sched, model, args.bound, sweeps)]
        stats[0].updates_applied += res.updates
        stats[0].wall_time += res.wall_time
    else:
        table = SharedDataTable({bp.LAMBDA_KEY: lam0})
        stats = [bp.run_bp(graph, table, args.workers, sched, model, args.bound, sweeps)]

    b = bp.beliefs(graph)
    if args.estimate == "argmax":
        labels = b.argmax(axis=1)
    else:
        labels = np.clip(np.rint(b @ np.arange(k)), 0, k - 1)
    labels = labels.reshape(obs.shape)
    out_img = np.rint(labels * maxval / (k - 1)).astype(int)
    if args.output:
        write_pgm(args.output, out_img, maxval)
    if args.beliefs_out:
        write_matrix_tsv(args.beliefs_out, b)
    if clean is not None:
        noisy_mae = float(np.abs(np.clip(np.rint(obs), 0, k - 1) - clean).mean())
        mae = float(np.abs(labels - clean).mean())
        print(f"mae_noisy\t{noisy_mae!r}\nmae_denoised\t{mae!r}")
    residual = bp.max_residual(graph, table)
    print(f"residual\t{residual!r}")
    return _record(args, "denoise", dataset, stats, residual, sched, model)


# --- gibbs -------------------------------------------------------------------

def _synthetic_mrf(spec: str, k: int, rng: np.random.Generator):
    kind, _, rest = spec.partition(":")
    if kind == "triangle":
        n, edges = 3, [(0, 1), (1, 2), (0, 2)]
    elif kind == "chain":
        n = int(rest)
        edges = [(i, i + 1) for i in range(n - 1)]
    elif kind == "grid":
        from .algorithms.mrf import grid_edges
        h, w = _parse_dims(rest, "grid size")
        n, edges = h * w, [(u, v) for u, v, _ in grid_edges(h, w)]
    elif kind == "random":
        try:
            n_s, p_s = rest.split(":")
            n, p = int(n_s), float(p_s)
        except ValueError:
            raise ConfigError(f"random MRF spec is random:N:P, got {spec!r}") from None
        edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    else:
        raise ConfigError(f"unknown synthetic MRF {spec!r} (triangle, chain:N, grid:HxW, random:N:P)")
    if n <= 0:
        raise ConfigError("synthetic MRF needs at least one vertex")
    pots = [rng.uniform(0.5, 2.0, size=k) for _ in range(n)]
    return pots, edges


def cmd_gibbs(args) -> BenchmarkRecord:
    from .algorithms import gibbs
    from .algorithms.mrf import laplace_potential

    rng = np.random.default_rng(args.seed)
    if args.graph:
        pots, edges = read_mrf(args.graph)
        dataset = Path(args.graph).name
    elif args.synthetic:
        if args.labels < 2:
            raise ConfigError("--labels must be at least 2")
        pots, edges = _synthetic_mrf(args.synthetic, args.labels, rng)
        dataset = args.synthetic
    else:
        raise ConfigError("gibbs needs --graph or --synthetic")
    k = len(pots[0])
    _, _, sweeps = _settings(args, "set", "vertex", 1000)
    graph = gibbs.build_gibbs_graph(pots, edges, laplace_potential(k, args.lam), seed=args.seed)
    cstats = gibbs.color_graph(graph, args.workers)
    hist = gibbs.color_histogram(graph)
    stats = gibbs.chromatic_gibbs(graph, sweeps, workers=args.workers)
    print("colors\t" + " ".join(f"{c}:{n}" for c, n in hist.items()))
    if args.colors_out:
        Path(args.colors_out).write_text("".join(f"{c}\t{n}\n" for c, n in hist.items()))
    if args.marginals_out:
        write_matrix_tsv(args.marginals_out, gibbs.empirical_marginals(graph))
    return _record(args, "gibbs", dataset, [cstats] + stats, len(hist), SchedulerKind.SET,
                   ConsistencyModel.VERTEX)


# --- coem --------------------------------------------------------------------

def cmd_coem(args) -> BenchmarkRecord:
    from .algorithms import coem

    rng = np.random.default_rng(args.seed)
    sched, model, sweeps = _settings(args, "multiqueue", "edge", 100)
    if args.graph:
        if not args.seeds:
            raise ConfigError("coem --graph also needs --seeds")
        edges = read_bipartite(args.graph)
        seeds = read_seeds(args.seeds)
        n_np = 1 + max((a for a, _, _ in edges), default=-1)
        n_ct = 1 + max((c for _, c, _ in edges), default=-1)
        n_classes = args.classes or 1 + max(seeds.values(), default=0)
        dataset = Path(args.graph).name
    elif args.synthetic:
        n_np, n_ct = _parse_dims(args.synthetic, "--synthetic")
        n_classes = args.classes or 2
        edges, seeds = coem.synthetic_coem(n_np, n_ct, n_classes, args.degree, args.seed_fraction, rng)
        dataset = f"synthetic:{n_np}x{n_ct}"
    else:
        raise ConfigError("coem needs --graph or --synthetic")
    bad = [v for v, c in seeds.items() if not (0 <= v < n_np + n_ct and 0 <= c < n_classes)]
    if bad:
        raise ConfigError(f"seed entries out of range: {bad[:5]}")
    graph = coem.build_coem_graph(n_np, n_ct, edges, n_classes, seeds)
    stats = coem.run_coem(graph, args.workers, sched, model, args.threshold, sweeps)
    residual = coem.fixed_point_residual(graph)
    if args.beliefs_out:
        write_matrix_tsv(args.beliefs_out, coem.beliefs(graph))
    print(f"residual\t{residual!r}")
    return _record(args, "coem", dataset, stats, residual, sched, model)


# --- lasso -------------------------------------------------------------------

def cmd_lasso(args) -> BenchmarkRecord:
    from .algorithms import lasso

    rng = np.random.default_rng(args.seed)
    sched, model, sweeps = _settings(args, "round-robin", "full", 10000)
    if args.matrix:
        if not args.targets:
            raise ConfigError("lasso --matrix also needs --targets")
        X = read_sparse(args.matrix)
        y = read_vector(args.targets)
        dataset = Path(args.matrix).name
    elif args.synthetic:
        n, d = _parse_dims(args.synthetic, "--synthetic")
        X, y, _ = lasso.synthetic_lasso(n, d, args.density, rng)
        dataset = f"synthetic:{n}x{d}"
    else:
        raise ConfigError("lasso needs --matrix or --synthetic")
    if X.shape[0] != len(y):
        raise ConfigError(f"X has {X.shape[0]} rows but there are {len(y)} targets")
    lam = args.lam if args.lam is not None else args.lambda_frac * lasso.lambda_max(X, y)
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    res = lasso.shooting(X, y, lam, workers=args.workers, model=model, scheduler=sched, max_sweeps=sweeps)
    if args.weights_out:
        write_matrix_tsv(args.weights_out, res.w)
    print(f"lambda\t{lam!r}\nobjective\t{res.objective!r}\nkkt\t{res.kkt!r}\nnonzero\t{int(np.count_nonzero(res.w))}")
    return _record(args, "lasso", dataset, res.stats, res.objective, sched, model)


# --- gabp --------------------------------------------------------------------

def cmd_gabp(args) -> BenchmarkRecord:
    from .algorithms import gabp

    rng = np.random.default_rng(args.seed)
    sched, model, sweeps = _settings(args, "priority", "edge", 1000)
    if args.matrix:
        if not args.rhs:
            raise ConfigError("gabp --matrix also needs --rhs")
        A = read_sparse(args.matrix)
        b = read_vector(args.rhs)
        dataset = Path(args.matrix).name
    elif args.synthetic:
        n = int(args.synthetic)
        A = sp.csr_matrix(gabp.random_diagonally_dominant(n, rng, args.density))
        b = rng.normal(size=n)
        dataset = f"synthetic:{n}"
    else:
        raise ConfigError("gabp needs --matrix or --synthetic")
    if A.shape[0] != A.shape[1]:
        raise ConfigError(f"A must be square, got {A.shape}")
    if A.shape[0] != len(b):
        raise ConfigError(f"A is {A.shape[0]}x{A.shape[0]} but b has {len(b)} entries")
    if abs(A - A.T).max() > 1e-12 * max(1.0, abs(A).max()):
        raise ConfigError("A must be symmetric")
    graph = gabp.build_gabp_graph(A, b)
    stats = gabp.GabpSolver(graph, args.workers, sched, model, args.bound, sweeps=sweeps).solve()
    x = gabp.means(graph)
    residual = float(np.abs(A @ x - b).max())
    if args.solution_out:
        write_matrix_tsv(args.solution_out, x)
    print(f"residual\t{residual!r}")
    if args.check:
        if A.shape[0] > 500:
            log.warning("--check skipped: n = %d exceeds 500", A.shape[0])
        else:
            err = float(np.abs(x - np.linalg.solve(A.toarray(), b)).max())
            print(f"error\t{err!r}")
    return _record(args, "gabp", dataset, stats, residual, sched, model)


# --- bench -------------------------------------------------------------------

BENCH_DEFAULT_SIZE = {"denoise": "32x32", "gibbs": "grid:16x16", "coem": "100x100", "lasso": "500x200",
                      "gabp": "50"}


def cmd_bench(args, parser) -> list[BenchmarkRecord]:
    if not args.stats_out:
        raise ConfigError("bench needs --stats-out")
    workers = [int(w) for w in args.workers_list.split(",")]
    schedulers = args.schedulers.split(",")
    models = args.models.split(",")
    size = args.size or BENCH_DEFAULT_SIZE[args.algorithm]
    records = []
    for w, s, m in itertools.product(workers, schedulers, models):
        argv = ["--seed", str(args.seed), "--workers", str(w), "--scheduler", s, "--model", m]
        if args.sweeps is not None:
            argv += ["--sweeps", str(args.sweeps)]
        sub = parser.parse_args(argv + [args.algorithm, "--synthetic", size])
        rec = HANDLERS[args.algorithm](sub)
        log.info("bench %s workers=%d scheduler=%s model=%s: %.3fs", args.algorithm, w, s, m, rec.wall_time_s)
        records.append(rec)
    write_records(args.stats_out, records)
    return records


HANDLERS: dict[str, Callable] = {"denoise": cmd_denoise, "gibbs": cmd_gibbs, "coem": cmd_coem,
                                 "lasso": cmd_lasso, "gabp": cmd_gabp}


def _global_flags(p: argparse.ArgumentParser, defaults: bool):
    # registered on the top-level parser and again on every subcommand, so
    # they may appear on either side of the subcommand name
    kw = (lambda v: {"default": v}) if defaults else (lambda v: {"default": argparse.SUPPRESS})
    p.add_argument("--seed", type=int, **kw(0))
    p.add_argument("--stats-out", help="append a benchmark record (CSV) here", **kw(None))
    p.add_argument("--scheduler", choices=SCHEDULERS, **kw(None))
    p.add_argument("--model", choices=MODELS, **kw(None))
    p.add_argument("--workers", type=int, **kw(1))
    p.add_argument("--sweeps", type=int, help="sweep limit for generated schedules", **kw(None))
    p.add_argument("-v", "--verbose", action="store_true", **kw(False))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scopegraph", description=__doc__.splitlines()[0])
    _global_flags(p, defaults=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, defaults=False)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    d = add("denoise", help="grid MRF denoising with residual BP")
    src = d.add_mutually_exclusive_group()
    src.add_argument("--input", help="plain PGM (P2) image")
    src.add_argument("--synthetic", metavar="HxW")
    d.add_argument("--grid", dest="synthetic", metavar="HxW", help="alias of --synthetic")
    d.add_argument("--labels", type=int, default=5)
    d.add_argument("--noise", type=float, default=0.5, help="observation noise sigma in label units")
    d.add_argument("--lambda", dest="lam", default="1.0", help="smoothing per axis: L or Lx,Ly")
    d.add_argument("--learn-params", action="store_true")
    d.add_argument("--sync-period", type=float, help="seconds between learning syncs (default: per sweep)")
    d.add_argument("--sync-every", type=int, default=1, help="sweeps between learning syncs")
    d.add_argument("--step", type=float, default=1.0)
    d.add_argument("--bound", type=float, default=1e-5)
    d.add_argument("--estimate", choices=["argmax", "expectation"], default="argmax")
    d.add_argument("--output", help="denoised PGM")
    d.add_argument("--beliefs-out")

    g = add("gibbs", help="colouring plus chromatic Gibbs sampling")
    src = g.add_mutually_exclusive_group()
    src.add_argument("--graph", help="MRF file with 'node' and 'edge' lines")
    src.add_argument("--synthetic", metavar="SPEC", help="triangle | chain:N | grid:HxW | random:N:P")
    g.add_argument("--labels", type=int, default=2)
    g.add_argument("--lambda", dest="lam", type=float, default=0.5, help="Laplace pairwise strength")
    g.add_argument("--marginals-out")
    g.add_argument("--colors-out")

    c = add("coem", help="Co-EM on a bipartite graph")
    src = c.add_mutually_exclusive_group()
    src.add_argument("--graph", help="TSV 'np ct weight' edges")
    src.add_argument("--synthetic", metavar="NPxCT")
    c.add_argument("--seeds", help="TSV 'vertex class' seed labels")
    c.add_argument("--classes", type=int)
    c.add_argument("--degree", type=int, default=3)
    c.add_argument("--seed-fraction", type=float, default=0.1)
    c.add_argument("--threshold", type=float, default=1e-5)
    c.add_argument("--beliefs-out")

    l = add("lasso", help="shooting Lasso")
    src = l.add_mutually_exclusive_group()
    src.add_argument("--matrix", help="MatrixMarket design matrix")
    src.add_argument("--synthetic", metavar="NxD")
    l.add_argument("--targets", help="MatrixMarket or one-per-line targets")
    l.add_argument("--density", type=float, default=0.05)
    lam = l.add_mutually_exclusive_group()
    lam.add_argument("--lambda", dest="lam", type=float)
    lam.add_argument("--lambda-frac", type=float, default=0.1, help="lambda as a fraction of lambda_max")
    l.add_argument("--weights-out")

    s = add("gabp", help="Gaussian BP linear solver")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--matrix", help="MatrixMarket symmetric matrix")
    src.add_argument("--synthetic", metavar="N")
    s.add_argument("--rhs", help="MatrixMarket or one-per-line right-hand side")
    s.add_argument("--density", type=float, default=0.3)
    s.add_argument("--bound", type=float, default=1e-10)
    s.add_argument("--check", action="store_true", help="compare with a direct solve (n <= 500)")
    s.add_argument("--solution-out")

    b = add("bench", help="cartesian sweep over workers x schedulers x models")
    b.add_argument("--algorithm", choices=sorted(HANDLERS), default="denoise")
    b.add_argument("--workers-list", default="1,2,4")
    b.add_argument("--schedulers", default="priority")
    b.add_argument("--models", default="edge")
    b.add_argument("--size", help="synthetic size passed to the algorithm")
    return p


def _diverged(exc: BaseException) -> bool:
    if isinstance(exc, UpdateFunctionError):
        exc = exc.cause
    return isinstance(exc, (DivergenceError, DegeneratePotentialError))


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        if args.command == "bench":
            cmd_bench(args, parser)
        else:
            rec = HANDLERS[args.command](args)
            if args.stats_out:
                write_records(args.stats_out, [rec])
    except (ConfigError, FormatError, GraphError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, DegeneratePotentialError, UpdateFunctionError) as exc:
        if not _diverged(exc):
            raise
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
