"""Domain partition into axis-aligned blocks and the per-block local phase.

Blocks are products of per-axis vertex ranges; consecutive ranges overlap in
exactly one vertex plane, so every cell (which spans at most two vertex
coordinates per axis) lies in at least one block.  A cell is Shared iff all of
its vertices lie in two or more blocks, equivalently iff on some axis every
vertex coordinate it spans sits on an internal cut plane.

The local phase builds the block's coboundary fragments:
  * interior columns (complete in this block) go to r_ii, split by dimension;
  * shared columns are split by row class into r_si (interior rows) and r_ss
    (shared rows).  A shared row is recorded only by the lowest-id block that
    contains the row's cell, so fragments of one column gathered from
    different blocks are entry-disjoint and their union is exact.
reduce_local reduces r_ii only; sparsify then shrinks every nonzero interior
column to its pivot entry via bottom-up row additions mirrored into r_si, and
finally cancels r_si entries whose pivot column lies to the left.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InternalError
from .filtration import Cell, CellKey, Coords, Grid, skey, vertices_of
from .reduction import PivotTable, ReducedChunk, reduce_chunk


@dataclass(frozen=True)
class Block:
    block_id: int
    vertex_range: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]

    def contains_vertex(self, v: Coords) -> bool:
        return all(lo <= c <= hi for c, (lo, hi) in zip(v, self.vertex_range))

    def doubled_range(self):
        return tuple((2 * lo, 2 * hi) for lo, hi in self.vertex_range)


class CellClass(enum.Enum):
    INTERIOR = "interior"
    SHARED = "shared"


@dataclass(frozen=True)
class Cover:
    dims: Coords
    blocks_per_axis: Coords
    cuts: tuple[tuple[int, ...], ...]  # per axis, length blocks_per_axis[a] + 1
    blocks: tuple[Block, ...] = field(default=())

    @property
    def n_blocks(self) -> int:
        b1, b2, b3 = self.blocks_per_axis
        return b1 * b2 * b3

    def block_coords(self, block_id: int) -> Coords:
        b1, b2, b3 = self.blocks_per_axis
        return (block_id // (b2 * b3), (block_id // b3) % b2, block_id % b3)


def axis_cuts(n: int, b: int) -> tuple[int, ...]:
    if b < 1:
        raise ConfigError(f"need at least one block per axis, got {b}")
    if b > n:
        raise ConfigError(f"{b} blocks on an axis with only {n} vertices")
    return tuple(round(i * (n - 1) / b) for i in range(b + 1))


def make_cover(dims: Coords, blocks_per_axis: Coords) -> Cover:
    cuts = tuple(axis_cuts(n, b) for n, b in zip(dims, blocks_per_axis))
    b1, b2, b3 = blocks_per_axis
    blocks = []
    for i1 in range(b1):
        for i2 in range(b2):
            for i3 in range(b3):
                bid = (i1 * b2 + i2) * b3 + i3
                rng = (
                    (cuts[0][i1], cuts[0][i1 + 1]),
                    (cuts[1][i2], cuts[1][i2 + 1]),
                    (cuts[2][i3], cuts[2][i3 + 1]),
                )
                blocks.append(Block(bid, rng))
    return Cover(tuple(dims), tuple(blocks_per_axis), cuts, tuple(blocks))


def partition_grid(grid: Grid, blocks_per_axis: Coords) -> list[Block]:
    return list(make_cover(grid.dims, blocks_per_axis).blocks)


def classify_cell(cell: Cell, blocks) -> CellClass:
    """Shared iff every vertex of the cell lies in two or more blocks."""
    for v in vertices_of(cell):
        count = sum(1 for b in blocks if b.contains_vertex(v))
        if count == 0:
            raise InternalError(f"vertex {v} of cell {cell.coords} lies in no block")
        if count < 2:
            return CellClass.INTERIOR
    return CellClass.SHARED


class _AxisInfo:
    """Per-axis tables over one block's doubled range, indexed by local coord."""

    def __init__(self, cuts, n, dlo, dhi, block_index):
        vs = np.arange(n)
        lower = np.asarray(cuts[:-1])
        upper = np.asarray(cuts[1:])
        first = np.searchsorted(upper, vs, side="left")
        last = np.searchsorted(lower, vs, side="right") - 1
        mult = last - first + 1
        cs = np.arange(dlo, dhi + 1)
        odd = cs % 2 == 1
        lo_v = np.where(odd, (cs - 1) // 2, cs // 2)
        hi_v = np.where(odd, (cs + 1) // 2, cs // 2)
        self.all_shared = (mult[lo_v] >= 2) & (mult[hi_v] >= 2)
        self.first_block = np.maximum(first[lo_v], first[hi_v])
        self.min_is_here = self.first_block == block_index


@dataclass
class BlockMatrices:
    block: Block
    r_ii: dict[int, dict] = field(default_factory=dict)  # dim -> {owner: entries}
    r_si: dict = field(default_factory=dict)  # owner -> entries over interior rows
    r_ss: dict = field(default_factory=dict)  # owner -> entries over shared rows
    pivots: PivotTable = field(default_factory=dict)
    n_cleared: int = 0

    def interior_store(self, dim: int) -> dict:
        return self.r_ii.setdefault(dim, {})

    def n_interior_columns(self) -> int:
        return sum(len(s) for s in self.r_ii.values())


def build_local_matrices(cover: Cover, block: Block, grid: Grid, max_dim: int = 3) -> BlockMatrices:
    """Coboundary fragments of the block's sub-complex, split by Fig-1 roles."""
    drange = block.doubled_range()
    dlos = tuple(lo for lo, _ in drange)
    dhis = tuple(hi for _, hi in drange)
    box = grid.doubled_values[
        dlos[0] : dhis[0] + 1, dlos[1] : dhis[1] + 1, dlos[2] : dhis[2] + 1
    ]
    bc = cover.block_coords(block.block_id)
    ax = [
        _AxisInfo(cover.cuts[a], cover.dims[a], dlos[a], dhis[a], bc[a]) for a in range(3)
    ]
    bm = BlockMatrices(block)
    for p1 in (0, 1):
        for p2 in (0, 1):
            for p3 in (0, 1):
                dim = p1 + p2 + p3
                if dim > max_dim:
                    continue
                _build_class(bm, (p1, p2, p3), dim, max_dim, box, grid.strides, dlos, dhis, ax)
    return bm


def _build_class(bm, parity, dim, max_dim, box, strides, dlos, dhis, ax):
    lens = [dhis[a] - dlos[a] + 1 for a in range(3)]
    local = []  # local coords of this parity class per axis
    for a in range(3):
        start = (parity[a] - dlos[a]) & 1
        local.append(np.arange(start, lens[a], 2))
    if any(lc.size == 0 for lc in local):
        return
    csl = tuple(slice(int(lc[0]), int(lc[-1]) + 1, 2) for lc in local)
    vals = box[csl]
    shape = vals.shape

    gcoords = [local[a] + dlos[a] for a in range(3)]
    uids = (
        gcoords[0][:, None, None] * strides[0]
        + gcoords[1][None, :, None] * strides[1]
        + gcoords[2][None, None, :]
    )
    shared3 = np.broadcast_to(
        ax[0].all_shared[local[0]][:, None, None]
        | ax[1].all_shared[local[1]][None, :, None]
        | ax[2].all_shared[local[2]][None, None, :],
        shape,
    )

    dirs = []
    if dim + 1 <= max_dim:
        for a in range(3):
            if parity[a] == 1:
                continue
            for step in (-1, 1):
                dirs.append(
                    _direction(a, step, csl, local, gcoords, lens, box, strides, ax, shape)
                )

    cell_vals = vals.ravel().tolist()
    cell_uids = uids.ravel().tolist()
    cell_shared = shared3.ravel().tolist()
    dir_data = [
        (
            v.ravel().tolist(),
            u.ravel().tolist(),
            ok.ravel().tolist(),
            sh.ravel().tolist(),
            mo.ravel().tolist(),
        )
        for (v, u, ok, sh, mo) in dirs
    ]

    store = bm.interior_store(dim)
    r_si, r_ss = bm.r_si, bm.r_ss
    for i in range(len(cell_vals)):
        key = (cell_vals[i], cell_uids[i])
        if not cell_shared[i]:
            entries = [(dvs[i], dus[i]) for (dvs, dus, ok, _sh, _mo) in dir_data if ok[i]]
            if entries:
                entries.sort(reverse=True)
                store[key] = entries
        else:
            si = []
            ss = []
            for dvs, dus, ok, sh, mo in dir_data:
                if not ok[i]:
                    continue
                if sh[i]:
                    if mo[i]:
                        ss.append((dvs[i], dus[i]))
                else:
                    si.append((dvs[i], dus[i]))
            si.sort(reverse=True)
            ss.sort(reverse=True)
            r_si[key] = si
            r_ss[key] = ss


def _direction(axis, step, csl, local, gcoords, lens, box, strides, ax, shape):
    """Neighbour values, uids, validity and row class for one cofacet move."""
    nloc = local[axis] + step
    valid1 = (nloc >= 0) & (nloc <= lens[axis] - 1)
    clipped = np.clip(nloc, 0, lens[axis] - 1)

    other = list(csl)
    other[axis] = slice(None)
    partial = box[tuple(other)]
    nvals = np.take(partial, clipped, axis=axis)

    ng = [gcoords[0], gcoords[1], gcoords[2]]
    ng[axis] = gcoords[axis] + step
    nuids = (
        ng[0][:, None, None] * strides[0]
        + ng[1][None, :, None] * strides[1]
        + ng[2][None, None, :]
    )

    fl_sh = []
    fl_mo = []
    for a in range(3):
        idx = clipped if a == axis else local[a]
        fl_sh.append(ax[a].all_shared[idx])
        fl_mo.append(ax[a].min_is_here[idx])
    nshared = (
        fl_sh[0][:, None, None] | fl_sh[1][None, :, None] | fl_sh[2][None, None, :]
    )
    nmin = fl_mo[0][:, None, None] & fl_mo[1][None, :, None] & fl_mo[2][None, None, :]

    ok = np.zeros(shape, dtype=bool)
    if axis == 0:
        ok |= valid1[:, None, None]
    elif axis == 1:
        ok |= valid1[None, :, None]
    else:
        ok |= valid1[None, None, :]
    return (
        np.broadcast_to(nvals, shape),
        np.broadcast_to(nuids, shape),
        ok,
        np.broadcast_to(nshared, shape),
        np.broadcast_to(nmin, shape),
    )


def reduce_local(bm: BlockMatrices, use_clearing: bool = True) -> BlockMatrices:
    """Reduce r_ii dimension by dimension; r_si and r_ss stay untouched."""
    chunk = ReducedChunk(columns=bm.r_ii, pivots=bm.pivots)
    reduce_chunk(chunk, use_clearing=use_clearing)
    bm.n_cleared += chunk.n_cleared
    return bm


def sparsify(bm: BlockMatrices) -> BlockMatrices:
    """Ultrasparsification: every nonzero interior column shrinks to its pivot.

    Pivot rows are processed from the latest matrix position upward; for each
    non-pivot entry e of the pivot column, the row addition row[e] += row[ell]
    is applied to r_si.  Afterwards an r_si entry e is cancelled whenever the
    interior pivot column for row e lies strictly earlier in matrix order.
    """
    ii_cols = {}
    for store in bm.r_ii.values():
        ii_cols.update(store)

    col_sets = {owner: set(entries) for owner, entries in bm.r_si.items()}
    rowidx: dict[CellKey, set] = {}
    for owner, entries in col_sets.items():
        for e in entries:
            rowidx.setdefault(e, set()).add(owner)

    # ascending (value, uid) = latest matrix position first (bottom-up)
    for ell in sorted(bm.pivots.keys()):
        t = bm.pivots[ell]
        entries = ii_cols.get(t)
        if entries is None:
            raise InternalError(f"pivot table references missing column {t}")
        if len(entries) > 1:
            src = rowidx.get(ell)
            if src:
                for e in entries:
                    if e == ell:
                        continue
                    tgt = rowidx.setdefault(e, set())
                    for owner in list(src):
                        cs = col_sets[owner]
                        if e in cs:
                            cs.discard(e)
                            tgt.discard(owner)
                        else:
                            cs.add(e)
                            tgt.add(owner)
            entries.clear()
            entries.append(ell)

    pivots = bm.pivots
    for owner, cs in col_sets.items():
        sj = skey(owner)
        kept = [e for e in cs if (p := pivots.get(e)) is None or not (skey(p) < sj)]
        kept.sort(reverse=True)
        bm.r_si[owner] = kept
    return bm
