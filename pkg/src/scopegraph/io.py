"""File formats: plain PGM, TSV edge lists and beliefs, MatrixMarket, benchmark CSV."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.io
import scipy.sparse as sp


class FormatError(ValueError):
    """Raised for malformed input files."""


# --- PGM (plain, P2) ---------------------------------------------------------

def _pgm_tokens(text: str):
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        yield from line.split()


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Return (pixels as an int array of shape (h, w), maxval)."""
    toks = list(_pgm_tokens(Path(path).read_text()))
    if not toks or toks[0] != "P2":
        raise FormatError(f"{path}: not a plain PGM (expected magic P2)")
    try:
        w, h, maxval = int(toks[1]), int(toks[2]), int(toks[3])
        vals = [int(t) for t in toks[4:]]
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: bad PGM header or pixel value") from exc
    if w <= 0 or h <= 0 or maxval <= 0:
        raise FormatError(f"{path}: non-positive PGM dimensions")
    if len(vals) != w * h:
        raise FormatError(f"{path}: expected {w * h} pixels, found {len(vals)}")
    img = np.array(vals, dtype=np.int64).reshape(h, w)
    if img.min() < 0 or img.max() > maxval:
        raise FormatError(f"{path}: pixel outside [0, {maxval}]")
    return img, maxval


def write_pgm(path, img: np.ndarray, maxval: int) -> None:
    img = np.asarray(img, dtype=np.int64)
    h, w = img.shape
    lines = ["P2", f"{w} {h}", str(int(maxval))]
    lines += [" ".join(str(int(x)) for x in row) for row in img]
    Path(path).write_text("\n".join(lines) + "\n")


# --- TSV ---------------------------------------------------------------------

def write_rows_tsv(path_or_file, rows: Iterable[tuple[int, Iterable[float]]]) -> None:
    """``id<TAB>value...`` lines; floats printed with repr precision."""
    out = io.StringIO()
    for i, vals in rows:
        vals = np.atleast_1d(np.asarray(vals, dtype=float))
        out.write(str(int(i)) + "\t" + "\t".join(repr(float(x)) for x in vals) + "\n")
    if hasattr(path_or_file, "write"):
        path_or_file.write(out.getvalue())
    else:
        Path(path_or_file).write_text(out.getvalue())


def write_matrix_tsv(path_or_file, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    write_rows_tsv(path_or_file, enumerate(values))


def read_matrix_tsv(path) -> np.ndarray:
    rows = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        try:
            rows[int(parts[0])] = [float(x) for x in parts[1:]]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    if sorted(rows) != list(range(len(rows))):
        raise FormatError(f"{path}: ids must be 0..n-1")
    return np.array([rows[i] for i in range(len(rows))])


def _int_fields(parts, n, path, lineno):
    try:
        return [int(p) for p in parts[:n]]
    except ValueError as exc:
        raise FormatError(f"{path}:{lineno}: expected integer ids") from exc


def read_mrf(path) -> tuple[list[np.ndarray], list[tuple[int, int]]]:
    """Discrete MRF: ``node<TAB>id<TAB>phi_0...phi_{K-1}`` and ``edge<TAB>u<TAB>v`` lines.

    Node ids must be 0..n-1 and every node needs the same number of labels.
    """
    nodes: dict[int, np.ndarray] = {}
    edges = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "node" and len(parts) >= 3:
            (v,) = _int_fields(parts[1:], 1, path, lineno)
            try:
                phi = np.array([float(x) for x in parts[2:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad potential value") from exc
            if np.any(phi < 0) or not np.isfinite(phi).all():
                raise FormatError(f"{path}:{lineno}: potentials must be finite and non-negative")
            nodes[v] = phi
        elif parts[0] == "edge" and len(parts) == 3:
            edges.append(tuple(_int_fields(parts[1:], 2, path, lineno)))
        else:
            raise FormatError(f"{path}:{lineno}: unrecognised line {raw!r}")
    if sorted(nodes) != list(range(len(nodes))):
        raise FormatError(f"{path}: node ids must be 0..n-1")
    if len({len(p) for p in nodes.values()}) > 1:
        raise FormatError(f"{path}: nodes disagree on the number of labels")
    for u, v in edges:
        if u not in nodes or v not in nodes:
            raise FormatError(f"{path}: edge ({u}, {v}) references an unknown node")
    return [nodes[i] for i in range(len(nodes))], edges


def write_mrf(path, potentials, edges) -> None:
    lines = ["node\t%d\t%s" % (i, "\t".join(repr(float(x)) for x in p)) for i, p in enumerate(potentials)]
    lines += [f"edge\t{u}\t{v}" for u, v in edges]
    Path(path).write_text("\n".join(lines) + "\n")


def read_bipartite(path) -> list[tuple[int, int, float]]:
    """``np<TAB>ct<TAB>weight`` lines (ids local to each side)."""
    edges = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 'np ct weight'")
        a, c = _int_fields(parts, 2, path, lineno)
        try:
            w = float(parts[2])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: bad weight") from exc
        if a < 0 or c < 0 or not w > 0:
            raise FormatError(f"{path}:{lineno}: ids must be >= 0 and weights > 0")
        edges.append((a, c, w))
    return edges


def read_seeds(path) -> dict[int, int]:
    seeds = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'vertex class'")
        v, k = _int_fields(parts, 2, path, lineno)
        seeds[v] = k
    return seeds


# --- MatrixMarket ------------------------------------------------------------

def read_matrix_market(path):
    try:
        m = scipy.io.mmread(str(path))
    except (ValueError, OSError, IndexError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return m


def read_sparse(path) -> sp.csr_matrix:
    m = read_matrix_market(path)
    return sp.csr_matrix(m)


def read_vector(path) -> np.ndarray:
    """A dense vector stored as MatrixMarket (n x 1 array) or one value per line."""
    p = Path(path)
    head = p.read_text()[:14]
    if head.startswith("%%MatrixMarket"):
        m = read_matrix_market(p)
        m = m.toarray() if sp.issparse(m) else np.asarray(m)
        return m.ravel().astype(float)
    try:
        return np.loadtxt(p, dtype=float, ndmin=1)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_matrix_market(path, m) -> None:
    scipy.io.mmwrite(str(path), m if sp.issparse(m) else np.asarray(m))


# --- benchmark CSV -----------------------------------------------------------

BENCH_SCHEMA = "benchmark-record/1"


@dataclass(frozen=True)
class BenchmarkRecord:
    algorithm: str
    dataset: str
    workers: int
    scheduler: str
    model: str
    updates: int
    wall_time_s: float
    objective_or_residual: float
    seed: int


BENCH_HEADER = tuple(f.name for f in fields(BenchmarkRecord))
_BENCH_TYPES = {f.name: f.type for f in fields(BenchmarkRecord)}
_CASTS = {"int": int, "float": float, "str": str}


def _header_line() -> str:
    return f"# {BENCH_SCHEMA}\n"


def write_records(path, records: Iterable[BenchmarkRecord], append: bool = True) -> None:
    """Write rows, adding the schema line and header when the file is new or empty."""
    p = Path(path)
    fresh = not append or not p.exists() or p.stat().st_size == 0
    if not fresh:
        check_schema(p)
    with open(p, "w" if fresh else "a", newline="") as fh:
        if fresh:
            fh.write(_header_line())
        w = csv.writer(fh)
        if fresh:
            w.writerow(BENCH_HEADER)
        for r in records:
            d = asdict(r)
            w.writerow([repr(d[k]) if isinstance(d[k], float) else d[k] for k in BENCH_HEADER])


def check_schema(path) -> None:
    with open(path, newline="") as fh:
        first = fh.readline()
        header = next(csv.reader([fh.readline()]), None)
    if first != _header_line() or tuple(header or ()) != BENCH_HEADER:
        raise FormatError(f"{path}: not a {BENCH_SCHEMA} file")


def read_records(path) -> list[BenchmarkRecord]:
    check_schema(path)
    with open(path, newline="") as fh:
        fh.readline()
        reader = csv.DictReader(fh)
        out = []
        for row in reader:
            try:
                out.append(BenchmarkRecord(**{k: _CASTS[_BENCH_TYPES[k]](row[k]) for k in BENCH_HEADER}))
            except (KeyError, ValueError) as exc:
                raise FormatError(f"{path}: bad row {row}") from exc
    return out


def record_to_text(records: Iterable[BenchmarkRecord]) -> str:
    buf = io.StringIO()
    buf.write(_header_line())
    w = csv.writer(buf)
    w.writerow(BENCH_HEADER)
    for r in records:
        d = asdict(r)
        w.writerow([repr(d[k]) if isinstance(d[k], float) else d[k] for k in BENCH_HEADER])
    return buf.getvalue()
