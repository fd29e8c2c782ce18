"""Sample-sort splitters and the value-keyed rearrangement of columns.

Splitter boundaries are full (value, uid) keys, strictly decreasing in
(value, uid) so that segment indices increase down the matrix order; uid
disambiguation keeps the boundaries strict even when filtration values tie.
Every rank contributes a fixed number of sampled local keys, the gathered
sample is deduplicated, and p-1 evenly spaced quantile keys become the
boundaries on every rank identically.

redistribute_columns ships every nonzero column (interior and recombined
shared fragments) to the rank owning the column's own key, merges fragments
per owner (they are entry-disjoint by construction), and reduces the
assembled chunk once.
"""

from __future__ import annotations

import pickle
import random
from bisect import bisect_right
from dataclasses import dataclass

from .cover import BlockMatrices
from .errors import ConfigError, DataCorruptionError
from .filtration import CellKey, Grid, cell_dim_of_uid, skey
from .reduction import ReducedChunk, reduce_chunk
from .runtime import RankContext, blob_message


@dataclass(frozen=True)
class Splitters:
    boundaries: tuple  # p-1 CellKeys, strictly decreasing in (value, uid)

    def __post_init__(self):
        for a, b in zip(self.boundaries, self.boundaries[1:]):
            if not a > b:
                raise ConfigError(f"splitter boundaries not strictly decreasing at {a!r}, {b!r}")
        object.__setattr__(self, "_sk", tuple(skey(b) for b in self.boundaries))

    @property
    def n_ranks(self) -> int:
        return len(self.boundaries) + 1


def rank_by_value(key: CellKey, splitters: Splitters) -> int:
    """Segment index of a key; total on the whole key space."""
    return bisect_right(splitters._sk, skey(key))


def sample_local_keys(local_keys, oversample: int, rng: random.Random) -> list:
    keys = list(local_keys)
    if len(keys) <= oversample:
        return keys
    return rng.sample(keys, oversample)


def splitters_from_samples(samples, p: int) -> Splitters:
    """p-1 evenly spaced quantiles of the deduplicated sample, in matrix order."""
    if p < 1:
        raise ConfigError(f"need a positive rank count, got {p}")
    if p == 1:
        return Splitters(())
    uniq = sorted(set(samples), reverse=True)
    if len(uniq) < p:
        raise ConfigError(
            f"cannot split {len(uniq)} distinct keys into {p} segments; "
            "rank count exceeds the sampled key population"
        )
    boundaries = tuple(uniq[(i * len(uniq)) // p] for i in range(1, p))
    return Splitters(boundaries)


def compute_splitters(ctx: RankContext, local_keys, oversample: int, seed: int) -> Splitters:
    """Collective: sample local keys, all-gather, build identical splitters."""
    rng = random.Random(f"splitters:{seed}:{ctx.rank}")
    sample = sample_local_keys(local_keys, oversample, rng)
    payload = pickle.dumps(sample)
    out = [blob_message(ctx.rank, r, payload) for r in range(ctx.n_ranks)]
    inbox = ctx.exchange(out)
    gathered = []
    for m in inbox:  # already sorted by source rank
        gathered.extend(pickle.loads(m.blob))
    return splitters_from_samples(gathered, ctx.n_ranks)


def merge_disjoint(a: list, b: list) -> list:
    """Union of two sorted entry lists that must not share an entry."""
    out = []
    i, j = 0, 0
    la, lb = len(a), len(b)
    while i < la and j < lb:
        x, y = a[i], b[j]
        if x == y:
            raise DataCorruptionError(f"column fragments share entry {x}")
        if x > y:
            out.append(x)
            i += 1
        else:
            out.append(y)
            j += 1
    out.extend(a[i:])
    out.extend(b[j:])
    return out


def shared_columns(bm: BlockMatrices):
    """Recombined (r_si union r_ss) column per shared owner, zero columns skipped."""
    for owner, si in bm.r_si.items():
        ss = bm.r_ss.get(owner, [])
        if si or ss:
            yield owner, merge_disjoint(si, ss)


def nonzero_owner_keys(bm: BlockMatrices) -> list:
    keys = [owner for store in bm.r_ii.values() for owner in store]
    keys.extend(owner for owner, _ in shared_columns(bm))
    return keys


def redistribute_columns(
    ctx: RankContext,
    bm: BlockMatrices,
    splitters: Splitters,
    grid: Grid,
    use_clearing: bool = True,
) -> ReducedChunk:
    """Ship every nonzero column to the rank owning its column key, merge
    fragments per owner, and reduce the assembled chunk once."""
    from .runtime import column_message

    out = []
    for store in bm.r_ii.values():
        for owner, entries in store.items():
            out.append(column_message(ctx.rank, rank_by_value(owner, splitters), owner, entries))
    for owner, entries in shared_columns(bm):
        out.append(column_message(ctx.rank, rank_by_value(owner, splitters), owner, entries))
    inbox = ctx.exchange(out)

    merged: dict[CellKey, list] = {}
    for m in inbox:
        cur = merged.get(m.owner)
        merged[m.owner] = merge_disjoint(cur, m.entries) if cur is not None else list(m.entries)

    chunk = ReducedChunk()
    dd = grid.doubled_dims
    for owner, entries in merged.items():
        chunk.store(cell_dim_of_uid(owner[1], dd))[owner] = entries
    reduce_chunk(chunk, use_clearing=use_clearing)
    return chunk
