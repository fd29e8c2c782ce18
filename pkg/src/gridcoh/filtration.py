"""Cubical complex of a 3D scalar grid with lower-star filtration values.

Cells are addressed in the "doubled grid": a cell with doubled coordinates
(c1, c2, c3), 0 <= ck <= 2*nk - 2, spans vertex coordinate ck/2 on axis k when
ck is even, and the vertex pair ((ck-1)/2, (ck+1)/2) when ck is odd.  The cell
dimension is the number of odd coordinates.  A cell's uid is its row-major
index in the doubled grid, which is deterministic across any partition of the
domain.

Keys and orders:
  * CellKey = (filtration value, uid), value = max over the cell's vertices.
  * Filtration order is ascending (value, uid).
  * Matrix order is the reverse: a precedes b iff (a.value, a.uid) >
    (b.value, b.uid) lexicographically.  Columns store entries in matrix
    order, so low() is the last element.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigError

Coords = tuple[int, int, int]
CellKey = tuple[float, int]


def skey(key: CellKey) -> tuple[float, int]:
    """Sort key that makes ascending order equal to matrix order."""
    return (-key[0], -key[1])


class Ordering(enum.Enum):
    PRECEDES = -1
    EQUALS = 0
    FOLLOWS = 1


def compare_matrix_order(a: CellKey, b: CellKey) -> Ordering:
    """a precedes b iff (value, uid) of a is lexicographically greater."""
    if a == b:
        return Ordering.EQUALS
    return Ordering.PRECEDES if a > b else Ordering.FOLLOWS


@dataclass(frozen=True, eq=False)
class Grid:
    """Scalar field sampled on an n1 x n2 x n3 vertex grid.

    `values` is indexed [x, y, z] in C order; all values must be finite.
    """

    dims: Coords
    values: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n1, n2, n3 = self.dims
        if min(n1, n2, n3) < 1:
            raise ConfigError(f"grid dims must be positive, got {self.dims}")
        arr = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64).reshape(self.dims))
        if not np.all(np.isfinite(arr)):
            raise ConfigError("grid values must all be finite")
        object.__setattr__(self, "values", arr)

    @property
    def doubled_dims(self) -> Coords:
        n1, n2, n3 = self.dims
        return (2 * n1 - 1, 2 * n2 - 1, 2 * n3 - 1)

    @property
    def strides(self) -> Coords:
        m1, m2, m3 = self.doubled_dims
        return (m2 * m3, m3, 1)

    @property
    def n_cells(self) -> int:
        m1, m2, m3 = self.doubled_dims
        return m1 * m2 * m3

    @property
    def doubled_values(self) -> np.ndarray:
        """Lower-star value of every cell, indexed by doubled coordinates.

        Built by three axis-wise max passes: each odd slot takes the max of its
        two even neighbours, which composes to the max over all cell vertices.
        """
        cached = self._cache.get("doubled")
        if cached is None:
            d = np.empty(self.doubled_dims, dtype=np.float64)
            d[::2, ::2, ::2] = self.values
            if self.dims[0] > 1:
                d[1::2, ::2, ::2] = np.maximum(d[:-2:2, ::2, ::2], d[2::2, ::2, ::2])
            if self.dims[1] > 1:
                d[:, 1::2, ::2] = np.maximum(d[:, :-2:2, ::2], d[:, 2::2, ::2])
            if self.dims[2] > 1:
                d[:, :, 1::2] = np.maximum(d[:, :, :-2:2], d[:, :, 2::2])
            cached = self._cache["doubled"] = d
        return cached


@dataclass(frozen=True)
class Cell:
    """A cubical cell given by its doubled-grid coordinates."""

    coords: Coords

    @property
    def dim(self) -> int:
        return (self.coords[0] & 1) + (self.coords[1] & 1) + (self.coords[2] & 1)


def check_cell(cell: Cell, grid: Grid) -> None:
    for c, m in zip(cell.coords, grid.doubled_dims):
        if not 0 <= c <= m - 1:
            raise ConfigError(f"cell coords {cell.coords} outside doubled grid {grid.doubled_dims}")


def uid_of_coords(coords: Coords, grid: Grid) -> int:
    s1, s2, s3 = grid.strides
    return coords[0] * s1 + coords[1] * s2 + coords[2] * s3


def coords_of_uid(uid: int, doubled_dims: Coords) -> Coords:
    m1, m2, m3 = doubled_dims
    c3 = uid % m3
    rest = uid // m3
    return (rest // m2, rest % m2, c3)


def cell_dim_of_uid(uid: int, doubled_dims: Coords) -> int:
    c1, c2, c3 = coords_of_uid(uid, doubled_dims)
    return (c1 & 1) + (c2 & 1) + (c3 & 1)


def vertices_of(cell: Cell) -> list[Coords]:
    """Vertex coordinates (in the original grid) spanned by the cell."""
    axes = []
    for c in cell.coords:
        axes.append((c // 2,) if c % 2 == 0 else ((c - 1) // 2, (c + 1) // 2))
    return [(a, b, c) for a in axes[0] for b in axes[1] for c in axes[2]]


def lower_star_value(cell: Cell, grid: Grid) -> float:
    """Max of the grid values over the cell's vertices."""
    check_cell(cell, grid)
    return float(grid.doubled_values[cell.coords])


def cell_key(cell: Cell, grid: Grid) -> CellKey:
    return (lower_star_value(cell, grid), uid_of_coords(cell.coords, grid))


def cofacets(cell: Cell, grid: Grid) -> list[Cell]:
    """All (dim+1)-cells of the grid having `cell` as a facet."""
    check_cell(cell, grid)
    out = []
    coords = cell.coords
    for axis in range(3):
        if coords[axis] % 2 == 0:
            hi = grid.doubled_dims[axis] - 1
            for step in (-1, 1):
                c = coords[axis] + step
                if 0 <= c <= hi:
                    nc = list(coords)
                    nc[axis] = c
                    out.append(Cell((nc[0], nc[1], nc[2])))
    return out


def facets(cell: Cell) -> list[Cell]:
    """The 2*dim cells obtained by snapping each odd coordinate to a neighbour."""
    out = []
    coords = cell.coords
    for axis in range(3):
        if coords[axis] % 2 == 1:
            for step in (-1, 1):
                nc = list(coords)
                nc[axis] = coords[axis] + step
                out.append(Cell((nc[0], nc[1], nc[2])))
    return out


def enumerate_cells(grid: Grid, max_dim: int = 3) -> Iterator[tuple[Cell, CellKey]]:
    """Yield every cell of dimension <= max_dim, sorted by (dim, matrix order)."""
    if not 0 <= max_dim <= 3:
        raise ConfigError(f"max_dim must be in [0, 3], got {max_dim}")
    values = grid.doubled_values.ravel()
    for dim in range(max_dim + 1):
        uids = uids_of_dim(grid.doubled_dims, dim)
        if uids.size == 0:
            continue
        vals = values[uids]
        order = np.lexsort((-uids, -vals))
        for u, v in zip(uids[order].tolist(), vals[order].tolist()):
            yield Cell(coords_of_uid(u, grid.doubled_dims)), (v, u)


def uids_of_dim(doubled_dims: Coords, dim: int) -> np.ndarray:
    """uids of all cells of one dimension, unsorted."""
    m1, m2, m3 = doubled_dims
    parts = []
    for p1 in (0, 1):
        for p2 in (0, 1):
            for p3 in (0, 1):
                if p1 + p2 + p3 != dim:
                    continue
                c1 = np.arange(p1, m1, 2)
                c2 = np.arange(p2, m2, 2)
                c3 = np.arange(p3, m3, 2)
                if c1.size and c2.size and c3.size:
                    u = (c1[:, None, None] * (m2 * m3) + c2[None, :, None] * m3 + c3[None, None, :])
                    parts.append(u.ravel())
    if not parts:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(parts)
