"""Command-line front end.

Reads a raw little-endian scalar volume (x fastest), runs the distributed
pipeline with the requested rank count and transport, and writes the diagram
("dim birth death" per line, death "inf" for essential classes) plus a run
statistics file (key-value lines and a per-rank table; `time_*` keys carry
wall-clock seconds and are the only nondeterministic content).

Exit codes: 0 success, 2 configuration error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import traceback
from dataclasses import dataclass

import numpy as np

from .diagram import Diagram
from .errors import ConfigError
from .filtration import Coords, Grid
from .pipeline import PHASES, PipelineOptions, RunStats, choose_blocks, compute_diagram

DTYPES = {"u8": "u1", "u16": "<u2", "f32": "<f4", "f64": "<f8"}


@dataclass(frozen=True)
class RunConfig:
    input: str
    dims: Coords
    dtype: str = "f64"
    ranks: int = 1
    blocks: Coords | None = None
    max_dim: int = 3
    transport: str = "inproc"
    use_clearing: bool = True
    use_sparsify: bool = True
    seed: int = 0
    oversample: int = 32
    output: str | None = None
    stats: str | None = None


def parse_triple(text: str, what: str) -> Coords:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"{what} must be three comma-separated integers, got {text!r}")
    try:
        triple = tuple(int(p) for p in parts)
    except ValueError as e:
        raise ConfigError(f"bad {what} {text!r}: {e}") from e
    return triple


def read_grid(cfg: RunConfig) -> Grid:
    """Raw volume ingestion: little-endian samples, x varying fastest."""
    if cfg.dtype not in DTYPES:
        raise ConfigError(f"unknown dtype {cfg.dtype!r}, expected one of {sorted(DTYPES)}")
    n1, n2, n3 = cfg.dims
    dt = np.dtype(DTYPES[cfg.dtype])
    expected = n1 * n2 * n3 * dt.itemsize
    try:
        actual = os.path.getsize(cfg.input)
    except OSError as e:
        raise ConfigError(f"cannot stat input {cfg.input!r}: {e}") from e
    if actual != expected:
        raise ConfigError(
            f"input size mismatch for dims {cfg.dims} dtype {cfg.dtype}: "
            f"expected {expected} bytes, found {actual}"
        )
    flat = np.fromfile(cfg.input, dtype=dt)
    arr = flat.reshape((n3, n2, n1)).transpose(2, 1, 0)
    return Grid(cfg.dims, arr.astype(np.float64))


def format_value(v: float) -> str:
    return "inf" if v == math.inf else repr(v)


def write_diagram(diagram: Diagram, path: str) -> None:
    """Canonically ordered text lines 'dim birth death'; deterministic bytes."""
    lines = [f"{p.dim} {format_value(p.birth)} {format_value(p.death)}\n" for p in diagram]
    try:
        with open(path, "w") as f:
            f.writelines(lines)
    except OSError as e:
        raise ConfigError(f"cannot write diagram to {path!r}: {e}") from e


def read_diagram(path: str):
    out = []
    with open(path) as f:
        for line in f:
            d, b, dth = line.split()
            out.append((int(d), float(b), math.inf if dth == "inf" else float(dth)))
    return out


def write_stats(stats: RunStats, path: str) -> None:
    lines = []
    add = lines.append
    add(f"ranks {stats.n_ranks}")
    add(f"dims {stats.dims[0]} {stats.dims[1]} {stats.dims[2]}")
    add(f"max_dim {stats.max_dim}")
    add(f"seed {stats.seed}")
    add(f"clearing {int(stats.use_clearing)}")
    add(f"sparsify {int(stats.use_sparsify)}")
    add(f"transport {stats.transport}")
    add(f"rounds_per_dim {' '.join(map(str, stats.rounds_per_dim))}")
    add(f"iterations_per_dim {' '.join(map(str, stats.iterations_per_dim))}")
    add(f"cleared_local {sum(stats.per_rank_cleared_local)}")
    add(f"cleared_global {stats.cleared_global}")
    add(f"columns_sent {stats.columns_sent}")
    add(f"routing_violations {stats.routing_violations}")
    add(f"finite_pairs {stats.n_finite}")
    add(f"essential_pairs {stats.n_essential}")
    add(f"diagonal_pairs {stats.n_diagonal}")
    add(f"columns_total {stats.total_columns}")
    add(f"columns_max_mean_ratio {stats.max_mean_ratio:.6f}")
    for ph in PHASES:
        add(f"time_{ph}_max {stats.phase_max(ph):.6f}")
    add(f"time_reduction {stats.reduction_seconds:.6f}")
    header = ["rank", "columns", "cleared_local"] + [f"time_{ph}" for ph in PHASES]
    add("per_rank " + " ".join(header))
    for r in range(stats.n_ranks):
        row = [
            str(r),
            str(stats.per_rank_columns[r]),
            str(stats.per_rank_cleared_local[r]),
        ] + [f"{stats.phase_seconds[ph][r]:.6f}" for ph in PHASES]
        add("per_rank " + " ".join(row))
    try:
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")
    except OSError as e:
        raise ConfigError(f"cannot write stats to {path!r}: {e}") from e


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gridcoh",
        description="Distributed persistent cohomology of scalar grids.",
    )
    ap.add_argument("--input", required=True, help="raw little-endian volume file")
    ap.add_argument("--dims", required=True, help="grid vertex counts X,Y,Z")
    ap.add_argument("--dtype", default="f64", choices=sorted(DTYPES))
    ap.add_argument("--ranks", type=int, default=1)
    ap.add_argument("--blocks", default=None, help="blocks per axis X,Y,Z (default: derived)")
    ap.add_argument("--max-dim", type=int, default=3, dest="max_dim")
    ap.add_argument("--transport", default="inproc", choices=("inproc", "proc"))
    ap.add_argument("--no-clearing", action="store_true")
    ap.add_argument("--no-sparsify", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--oversample", type=int, default=32)
    ap.add_argument("--output", default=None, help="diagram output path")
    ap.add_argument("--stats", default=None, help="statistics output path")
    return ap


def config_from_args(args) -> RunConfig:
    return RunConfig(
        input=args.input,
        dims=parse_triple(args.dims, "--dims"),
        dtype=args.dtype,
        ranks=args.ranks,
        blocks=parse_triple(args.blocks, "--blocks") if args.blocks else None,
        max_dim=args.max_dim,
        transport=args.transport,
        use_clearing=not args.no_clearing,
        use_sparsify=not args.no_sparsify,
        seed=args.seed,
        oversample=args.oversample,
        output=args.output,
        stats=args.stats,
    )


def run(cfg: RunConfig) -> tuple[Diagram, RunStats]:
    if cfg.ranks < 1:
        raise ConfigError(f"--ranks must be positive, got {cfg.ranks}")
    blocks = cfg.blocks or choose_blocks(cfg.ranks, cfg.dims)
    if blocks[0] * blocks[1] * blocks[2] != cfg.ranks:
        raise ConfigError(
            f"--ranks {cfg.ranks} must equal the product of --blocks {blocks} (one block per rank)"
        )
    grid = read_grid(cfg)
    opts = PipelineOptions(
        ranks=cfg.ranks,
        blocks_per_axis=blocks,
        max_dim=cfg.max_dim,
        use_clearing=cfg.use_clearing,
        use_sparsify=cfg.use_sparsify,
        seed=cfg.seed,
        oversample=cfg.oversample,
        transport=cfg.transport,
    )
    diagram, stats = compute_diagram(grid, opts)
    if cfg.output:
        write_diagram(diagram, cfg.output)
    if cfg.stats:
        write_stats(stats, cfg.stats)
    return diagram, stats


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = config_from_args(args)
        diagram, stats = run(cfg)
    except ConfigError as e:
        print(f"gridcoh: configuration error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:
        return int(e.code) if e.code else 0
    except BaseException:
        traceback.print_exc()
        return 3
    n_fin = sum(1 for p in diagram if not p.essential)
    print(
        f"gridcoh: {len(diagram)} diagram points ({n_fin} finite), "
        f"{stats.total_columns} final columns on {stats.n_ranks} ranks"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
