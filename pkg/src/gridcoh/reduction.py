"""Z/2 sparse column algebra and the sequential left-to-right reduction.

A column is a list of CellKeys sorted in matrix order (earliest row first),
so its low is the last element.  Column addition is symmetric difference by
linear merge.  Stores are dicts dim -> {owner key -> entry list}; zero columns
are never stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from heapq import heapify, heappop, heappush

from .filtration import CellKey, skey

Column = list  # list[CellKey], sorted descending by (value, uid)
ColumnStore = dict  # dict[CellKey, Column]
PivotTable = dict  # dict[CellKey, CellKey]: row key -> owner key of its pivot column


def low(entries: Column) -> CellKey | None:
    """Row key of the last nonzero entry in matrix order, None for a zero column."""
    return entries[-1] if entries else None


# A column under active reduction is held as a lazy min-heap of row keys with
# mod-2 multiplicity: adding a pivot column is just pushing its entries, so an
# addition costs the pivot's length, not the (often much longer) target's.
# Cancelled pairs surface as equal adjacent pops.  Keys below the current low
# can never be pushed (pivot entries sit above their low), so the heap stays
# consistent after the low is popped out.


def _pop_low(heap) -> CellKey | None:
    """Pop and return the current low (smallest key with odd multiplicity)."""
    while heap:
        x = heappop(heap)
        count = 1
        while heap and heap[0] == x:
            heappop(heap)
            count += 1
        if count & 1:
            return x
    return None


def _push_column(heap, entries) -> None:
    """Add a stored pivot column, minus its low, into the working heap."""
    k = len(entries) - 1
    if 4 * k > len(heap):
        heap.extend(entries[i] for i in range(k))
        heapify(heap)
    else:
        for i in range(k):
            heappush(heap, entries[i])


def _extract(heap, lowkey) -> Column:
    """Materialize the finished working column as a sorted entry list."""
    parity = {}
    for k in heap:
        parity[k] = parity.get(k, 0) ^ 1
    out = sorted((k for k, c in parity.items() if c), reverse=True)
    out.append(lowkey)
    return out


def add_columns(a: Column, b: Column) -> Column:
    """Symmetric difference of two sorted entry lists, sorted like the inputs."""
    out = []
    i, j = 0, 0
    la, lb = len(a), len(b)
    while i < la and j < lb:
        x = a[i]
        y = b[j]
        if x == y:
            i += 1
            j += 1
        elif x > y:
            out.append(x)
            i += 1
        else:
            out.append(y)
            j += 1
    if i < la:
        out.extend(a[i:])
    elif j < lb:
        out.extend(b[j:])
    return out


@dataclass
class ReducedChunk:
    """A set of columns owned by one worker, plus its pivot table."""

    columns: dict[int, ColumnStore] = field(default_factory=dict)
    pivots: PivotTable = field(default_factory=dict)
    n_cleared: int = 0

    def store(self, dim: int) -> ColumnStore:
        return self.columns.setdefault(dim, {})

    def n_columns(self) -> int:
        return sum(len(s) for s in self.columns.values())


def ordered_owners(store: ColumnStore) -> list:
    """Column keys in matrix order (the left-to-right visit order)."""
    return sorted(store.keys(), key=skey)


def reduce_chunk(chunk: ReducedChunk, use_clearing: bool = True) -> ReducedChunk:
    """Left-to-right reduction, dimensions ascending, in place.

    Every column repeatedly adds the registered pivot column with the same low
    until it zeroes (and is deleted) or claims a fresh pivot slot.  With
    clearing, before dimension d+1 is reduced, columns owned by cells that
    appeared as dimension-d lows are deleted outright.
    """
    pivots = chunk.pivots
    for dim in sorted(chunk.columns.keys()):
        store = chunk.columns[dim]
        if use_clearing:
            cleared = [k for k in store if k in pivots]
            for k in cleared:
                del store[k]
            chunk.n_cleared += len(cleared)
        for owner in ordered_owners(store):
            entries = store[owner]
            ell = entries[-1]
            if pivots.setdefault(ell, owner) == owner:
                continue
            heap = list(entries)
            heapify(heap)
            while True:
                x = _pop_low(heap)
                if x is None:
                    del store[owner]
                    break
                p = pivots.get(x)
                if p is None:
                    pivots[x] = owner
                    store[owner] = _extract(heap, x)
                    break
                _push_column(heap, store[p])
    return chunk


def assert_reduced(chunk: ReducedChunk) -> None:
    """Raise if two stored nonzero columns share a low (test helper)."""
    seen = {}
    for store in chunk.columns.values():
        for owner, entries in store.items():
            ell = entries[-1]
            if ell in seen:
                raise AssertionError(f"low collision at {ell}: {seen[ell]} vs {owner}")
            seen[ell] = owner
