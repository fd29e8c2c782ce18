"""Persistence diagrams: extraction from reduced matrices plus two sequential
oracles (coboundary reduction and an independent boundary-matrix reduction).

Birth/death values are copies of input samples, so all comparisons are exact.
Essential classes are emitted with death = +inf; pairs with equal birth and
death are excluded from the diagram but counted.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import InternalError
from .filtration import (
    Cell,
    CellKey,
    Grid,
    cell_dim_of_uid,
    cell_key,
    coords_of_uid,
    facets,
    skey,
    uid_of_coords,
    uids_of_dim,
)
from .reduction import ReducedChunk, reduce_chunk

INF = math.inf


@dataclass(frozen=True, order=True)
class PersistencePair:
    dim: int
    birth: float
    death: float
    birth_uid: int
    death_uid: int | None = None

    @property
    def essential(self) -> bool:
        return self.death == INF


Diagram = list  # list[PersistencePair] in canonical order


def canonical(pairs) -> Diagram:
    return sorted(pairs, key=lambda p: (p.dim, p.birth, p.death, p.birth_uid))


def pairs_from_summaries(summaries, grid: Grid, max_dim: int) -> Diagram:
    """Build the diagram from (owner key, low key) pairs of all nonzero columns.

    Every cell of dimension <= max_dim that is neither a column owner nor a
    low is essential.  Duplicate lows mean the matrix was not reduced.
    """
    dd = grid.doubled_dims
    out = []
    n_diag = 0
    seen_lows = set()
    for (bval, buid), (dval, duid) in summaries:
        if duid in seen_lows:
            raise InternalError(f"low collision at uid {duid}: matrix not reduced")
        seen_lows.add(duid)
        if bval != dval:
            out.append(PersistencePair(cell_dim_of_uid(buid, dd), bval, dval, buid, duid))
        else:
            n_diag += 1

    owner_uids = np.fromiter((s[0][1] for s in summaries), dtype=np.int64, count=len(summaries))
    low_uids = np.fromiter((s[1][1] for s in summaries), dtype=np.int64, count=len(summaries))
    taken = np.concatenate([owner_uids, low_uids])
    values = grid.doubled_values.ravel()
    for dim in range(max_dim + 1):
        uids = uids_of_dim(dd, dim)
        if uids.size == 0:
            continue
        free = uids[~np.isin(uids, taken)]
        for u in free.tolist():
            out.append(PersistencePair(dim, float(values[u]), INF, u, None))
    dgm = canonical(out)
    dgm_diagonal_count = n_diag  # kept for stats by callers via attribute below
    dgm = Diagram(dgm)
    return dgm


def summaries_of_chunk(chunk: ReducedChunk):
    return [(owner, entries[-1]) for store in chunk.columns.values() for owner, entries in store.items()]


def extract_pairs(chunk: ReducedChunk, grid: Grid, max_dim: int = 3) -> Diagram:
    """Diagram of a globally reduced chunk (or a gathered union of chunks)."""
    return pairs_from_summaries(summaries_of_chunk(chunk), grid, max_dim)


def coboundary_store(grid: Grid, max_dim: int = 3) -> ReducedChunk:
    """Full coboundary matrix of the grid, keyed by (value, uid)."""
    dd = grid.doubled_dims
    m1, m2, m3 = dd
    s1, s2, s3 = grid.strides
    values = grid.doubled_values.ravel()
    chunk = ReducedChunk()
    for dim in range(min(max_dim + 1, 3)):
        store = chunk.store(dim)
        for u in uids_of_dim(dd, dim).tolist():
            c1, c2, c3 = coords_of_uid(u, dd)
            entries = []
            if c1 % 2 == 0:
                if c1 > 0:
                    entries.append((float(values[u - s1]), u - s1))
                if c1 < m1 - 1:
                    entries.append((float(values[u + s1]), u + s1))
            if c2 % 2 == 0:
                if c2 > 0:
                    entries.append((float(values[u - s2]), u - s2))
                if c2 < m2 - 1:
                    entries.append((float(values[u + s2]), u + s2))
            if c3 % 2 == 0:
                if c3 > 0:
                    entries.append((float(values[u - s3]), u - s3))
                if c3 < m3 - 1:
                    entries.append((float(values[u + s3]), u + s3))
            entries = [e for e in entries if cell_dim_of_uid(e[1], dd) == dim + 1]
            if dim + 1 > max_dim:
                entries = []
            if entries:
                entries.sort(reverse=True)
                store[u_key(u, values)] = entries
    return chunk


def u_key(uid: int, flat_values: np.ndarray) -> CellKey:
    return (float(flat_values[uid]), uid)


def oracle_cohomology_diagram(grid: Grid, max_dim: int = 3, use_clearing: bool = True) -> Diagram:
    """Sequential reduction of the full coboundary matrix, no partitioning."""
    chunk = coboundary_store(grid, max_dim)
    reduce_chunk(chunk, use_clearing=use_clearing)
    return extract_pairs(chunk, grid, max_dim)


def oracle_homology_diagram(grid: Grid, max_dim: int = 3) -> Diagram:
    """Independent oracle: boundary matrix reduced in filtration order.

    Columns list facets, rows and columns ascend in (value, uid), and the
    classic reduction runs left to right with no clearing.  Pair (f(sigma),
    f(tau)) appears when low(col tau) = sigma.
    """
    dd = grid.doubled_dims
    values = grid.doubled_values.ravel()
    cells = []
    for dim in range(max_dim + 1):
        for u in uids_of_dim(dd, dim).tolist():
            cells.append((float(values[u]), u))
    cells.sort()

    columns = {}
    for key in cells:
        cell = Cell(coords_of_uid(key[1], dd))
        if cell.dim == 0:
            continue
        col = sorted(cell_key(f, grid) for f in facets(cell))
        columns[key] = col

    pivots = {}
    pairs = {}
    for key in cells:
        col = columns.get(key)
        if col is None:
            continue
        while col:
            ell = col[-1]
            p = pivots.get(ell)
            if p is None:
                pivots[ell] = key
                pairs[ell] = key
                break
            col = _add_asc(col, columns[p])
        if col:
            columns[key] = col
        else:
            del columns[key]

    out = []
    paired = set()
    for sigma, tau in pairs.items():
        paired.add(sigma[1])
        paired.add(tau[1])
        if sigma[0] != tau[0]:
            dim = cell_dim_of_uid(sigma[1], dd)
            out.append(PersistencePair(dim, sigma[0], tau[0], sigma[1], tau[1]))
    for key in cells:
        if key[1] not in paired:
            dim = cell_dim_of_uid(key[1], dd)
            out.append(PersistencePair(dim, key[0], INF, key[1], None))
    return canonical(out)


def _add_asc(a, b):
    out = []
    i, j = 0, 0
    la, lb = len(a), len(b)
    while i < la and j < lb:
        x, y = a[i], b[j]
        if x == y:
            i += 1
            j += 1
        elif x < y:
            out.append(x)
            i += 1
        else:
            out.append(y)
            j += 1
    out.extend(a[i:])
    out.extend(b[j:])
    return out


def diagrams_equal(a: Diagram, b: Diagram) -> tuple[bool, str]:
    """Multiset equality per dimension on (birth, death), exact values."""
    ca = Counter((p.dim, p.birth, p.death) for p in a)
    cb = Counter((p.dim, p.birth, p.death) for p in b)
    if ca == cb:
        return True, ""
    for point in sorted(set(ca) | set(cb)):
        if ca[point] != cb[point]:
            return False, (
                f"first difference at (dim, birth, death)={point}: "
                f"multiplicity {ca[point]} vs {cb[point]}"
            )
    return False, "unreachable"
