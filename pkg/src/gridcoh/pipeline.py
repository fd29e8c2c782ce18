"""Per-rank pipeline driver and the front-door compute_diagram entry point.

One rank runs: build local matrices -> local reduction -> ultrasparsification
-> splitter sample sort -> redistribution by column value -> global reduction
loop.  Rank 0 gathers (owner, low) summaries from everyone, extracts the
diagram and merges run statistics.
"""

from __future__ import annotations

import pickle
import time
from dataclasses import dataclass, field

from .cover import Cover, build_local_matrices, make_cover, reduce_local, sparsify
from .diagram import Diagram, pairs_from_summaries
from .errors import ConfigError, InternalError
from .filtration import Coords, Grid
from .global_reduce import GlobalState, run_global_loop
from .redistribution import compute_splitters, redistribute_columns
from .runtime import RankContext, blob_message, run_ranks

PHASES = ("build", "local_reduce", "sparsify", "redistribute", "global_loop")


@dataclass(frozen=True)
class PipelineOptions:
    ranks: int = 1
    blocks_per_axis: Coords | None = None
    max_dim: int = 3
    use_clearing: bool = True
    use_sparsify: bool = True
    seed: int = 0
    oversample: int = 32
    transport: str = "inproc"


@dataclass
class RunStats:
    n_ranks: int
    dims: Coords
    max_dim: int
    seed: int
    use_clearing: bool
    use_sparsify: bool
    transport: str
    per_rank_columns: list = field(default_factory=list)
    per_rank_cleared_local: list = field(default_factory=list)
    phase_seconds: dict = field(default_factory=dict)  # phase -> per-rank list
    rounds_per_dim: list = field(default_factory=list)
    iterations_per_dim: list = field(default_factory=list)
    cleared_global: int = 0
    routing_violations: int = 0
    columns_sent: int = 0
    n_finite: int = 0
    n_essential: int = 0
    n_diagonal: int = 0

    @property
    def total_columns(self) -> int:
        return sum(self.per_rank_columns)

    @property
    def max_mean_ratio(self) -> float:
        total = self.total_columns
        if total == 0:
            return 1.0
        return max(self.per_rank_columns) * self.n_ranks / total

    def phase_max(self, phase: str) -> float:
        return max(self.phase_seconds.get(phase, [0.0]))

    @property
    def reduction_seconds(self) -> float:
        """Paper-style timing: the reduction phases only, build and IO excluded."""
        return sum(self.phase_max(p) for p in PHASES[1:])


def choose_blocks(ranks: int, dims: Coords) -> Coords:
    """Deterministic factorization of the rank count into per-axis block counts."""
    best = None
    for b1 in range(1, ranks + 1):
        if ranks % b1:
            continue
        rest = ranks // b1
        for b2 in range(1, rest + 1):
            if rest % b2:
                continue
            b3 = rest // b2
            if b1 > dims[0] or b2 > dims[1] or b3 > dims[2]:
                continue
            ext = tuple(-(-n // b) for n, b in zip(dims, (b1, b2, b3)))
            cand = (max(ext), ext[0] * ext[1] * ext[2], (b1, b2, b3))
            if best is None or cand < best:
                best = cand
    if best is None:
        raise ConfigError(f"cannot split dims {dims} into {ranks} axis-aligned blocks")
    return best[2]


def _rank_program(ctx: RankContext, grid: Grid, cover: Cover, opts: PipelineOptions):
    rank = ctx.rank
    block = cover.blocks[rank]
    times = {}

    t0 = time.perf_counter()
    bm = build_local_matrices(cover, block, grid, opts.max_dim)
    times["build"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    reduce_local(bm, use_clearing=opts.use_clearing)
    times["local_reduce"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if opts.use_sparsify:
        sparsify(bm)
    times["sparsify"] = time.perf_counter() - t0

    local_keys = _block_cell_keys(grid, block, opts.max_dim)
    splitters = compute_splitters(ctx, local_keys, opts.oversample, opts.seed)

    t0 = time.perf_counter()
    chunk = redistribute_columns(ctx, bm, splitters, grid, use_clearing=opts.use_clearing)
    times["redistribute"] = time.perf_counter() - t0
    cleared_local = bm.n_cleared + chunk.n_cleared

    st = GlobalState(
        rank=rank,
        n_ranks=ctx.n_ranks,
        splitters=splitters,
        stores=chunk.columns,
        pivots=chunk.pivots,
        use_clearing=opts.use_clearing,
    )
    t0 = time.perf_counter()
    run_global_loop(ctx, st, opts.max_dim)
    times["global_loop"] = time.perf_counter() - t0

    summaries = [
        (owner, entries[-1])
        for store in st.stores.values()
        for owner, entries in store.items()
    ]
    local = {
        "summaries": summaries,
        "columns": len(summaries),
        "cleared_local": cleared_local,
        "cleared_global": st.stats.cleared_global,
        "violations": st.stats.routing_violations,
        "columns_sent": st.stats.columns_sent,
        "rounds": st.stats.rounds_per_dim,
        "iterations": st.stats.iterations_per_dim,
        "times": times,
    }
    inbox = ctx.exchange([blob_message(rank, 0, pickle.dumps(local))])
    if rank != 0:
        return None

    parts = [pickle.loads(m.blob) for m in inbox]
    all_summaries = [s for part in parts for s in part["summaries"]]
    diagram = pairs_from_summaries(all_summaries, grid, opts.max_dim)
    stats = RunStats(
        n_ranks=ctx.n_ranks,
        dims=grid.dims,
        max_dim=opts.max_dim,
        seed=opts.seed,
        use_clearing=opts.use_clearing,
        use_sparsify=opts.use_sparsify,
        transport=opts.transport,
    )
    stats.per_rank_columns = [p["columns"] for p in parts]
    stats.per_rank_cleared_local = [p["cleared_local"] for p in parts]
    stats.phase_seconds = {ph: [p["times"][ph] for p in parts] for ph in PHASES}
    stats.rounds_per_dim = parts[0]["rounds"]
    stats.iterations_per_dim = parts[0]["iterations"]
    stats.cleared_global = sum(p["cleared_global"] for p in parts)
    stats.routing_violations = sum(p["violations"] for p in parts)
    stats.columns_sent = sum(p["columns_sent"] for p in parts)
    stats.n_diagonal = sum(1 for (b, d) in all_summaries if b[0] == d[0])
    stats.n_finite = sum(1 for p in diagram if not p.essential)
    stats.n_essential = len(diagram) - stats.n_finite
    if stats.total_columns != len(all_summaries):
        raise InternalError("per-rank column counts inconsistent with gathered totals")
    return {"diagram": diagram, "stats": stats, "summaries": all_summaries}


def _block_cell_keys(grid: Grid, block, max_dim: int) -> list:
    import numpy as np

    (l1, h1), (l2, h2), (l3, h3) = block.doubled_range()
    box = grid.doubled_values[l1 : h1 + 1, l2 : h2 + 1, l3 : h3 + 1]
    s1, s2, s3 = grid.strides
    c1 = np.arange(l1, h1 + 1) * s1
    c2 = np.arange(l2, h2 + 1) * s2
    c3 = np.arange(l3, h3 + 1)
    uids = c1[:, None, None] + c2[None, :, None] + c3[None, None, :]
    if max_dim >= 3:
        return list(zip(box.ravel().tolist(), uids.ravel().tolist()))
    par1 = np.arange(l1, h1 + 1) % 2
    par2 = np.arange(l2, h2 + 1) % 2
    par3 = np.arange(l3, h3 + 1) % 2
    dims = par1[:, None, None] + par2[None, :, None] + par3[None, None, :]
    keep = (dims <= max_dim).ravel()
    vals = box.ravel()[keep]
    us = uids.ravel()[keep]
    return list(zip(vals.tolist(), us.tolist()))


def compute_diagram(grid: Grid, opts: PipelineOptions) -> tuple[Diagram, RunStats]:
    """Run the full distributed pipeline and return rank 0's diagram and stats."""
    blocks_per_axis = opts.blocks_per_axis or choose_blocks(opts.ranks, grid.dims)
    b1, b2, b3 = blocks_per_axis
    if b1 * b2 * b3 != opts.ranks:
        raise ConfigError(
            f"rank count {opts.ranks} must equal the block count {b1 * b2 * b3} (one block per rank)"
        )
    cover = make_cover(grid.dims, blocks_per_axis)
    results = run_ranks(
        opts.ranks, lambda ctx: _rank_program(ctx, grid, cover, opts), transport=opts.transport
    )
    out = results[0]
    return out["diagram"], out["stats"]
