"""The per-dimension distributed reduction loop.

In round 1 every nonzero column of the current dimension is rearranged to the
rank owning its low (self-moves stay put and do not count as traffic); later
rounds ship only columns whose low left the local segment.  Receiving a batch,
a rank inserts the columns and sweeps its store from the earliest incoming
owner rightward.  A collision against a pivot to the left is a standard
addition; against a pivot to the right, the current column takes over the
pivot slot and reduction continues on the column previously registered there.
A dimension finishes when a global reduction of sent-column counts is zero;
its positive columns in the next dimension are then cleared by messages
addressed by column value.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, field

from .errors import InternalError, ProtocolError
from .filtration import skey
from .redistribution import Splitters, rank_by_value
from .reduction import PivotTable, add_columns
from .runtime import RankContext, clear_message, column_message


@dataclass
class LoopStats:
    iterations_per_dim: list = field(default_factory=list)
    rounds_per_dim: list = field(default_factory=list)  # max(1, rounds with traffic)
    routing_violations: int = 0
    cleared_global: int = 0
    columns_sent: int = 0


@dataclass
class GlobalState:
    rank: int
    n_ranks: int
    splitters: Splitters
    stores: dict  # dim -> {owner: entries}
    pivots: PivotTable
    use_clearing: bool = True
    updated: set = field(default_factory=set)
    round: int = 0
    stats: LoopStats = field(default_factory=LoopStats)

    def segment_of(self, key) -> int:
        return rank_by_value(key, self.splitters)

    def n_columns(self) -> int:
        return sum(len(s) for s in self.stores.values())


def _ship(st: GlobalState, store, owner, dest, out):
    entries = store.pop(owner)
    low = entries[-1]
    if st.pivots.get(low) == owner:
        del st.pivots[low]
    out.append(column_message(st.rank, dest, owner, entries))


def send_columns(st: GlobalState, dim: int, rnd: int) -> list:
    """Outbox for one round; shipped columns leave the store and pivot table."""
    store = st.stores.get(dim, {})
    out = []
    if rnd == 1:
        for owner in list(store.keys()):
            dest = st.segment_of(store[owner][-1])
            if dest != st.rank:
                _ship(st, store, owner, dest, out)
    else:
        for owner in sorted(st.updated, key=skey):
            if owner not in store:
                continue
            dest = st.segment_of(store[owner][-1])
            if dest == st.rank:
                continue
            if dest > st.rank:
                st.stats.routing_violations += 1
            _ship(st, store, owner, dest, out)
        st.updated.clear()
    st.stats.columns_sent += len(out)
    return out


def receive_columns(st: GlobalState, dim: int, incoming) -> set:
    """Insert received columns and sweep the store from the earliest one."""
    st.updated = set()
    store = st.stores.setdefault(dim, {})
    if not incoming:
        return st.updated
    for owner, entries in incoming:
        if not entries:
            raise ProtocolError(f"received a zero column for owner {owner}")
        store[owner] = list(entries)

    snapshot = sorted(store.keys(), key=skey)
    skeys = [skey(k) for k in snapshot]
    start = min(skey(owner) for owner, _ in incoming)
    pivots = st.pivots
    rank = st.rank
    updated = st.updated

    def register(row, owner):
        pivots[row] = owner
        if st.segment_of(row) != rank:
            updated.add(owner)

    for idx in range(bisect_left(skeys, start), len(snapshot)):
        owner = snapshot[idx]
        entries = store.get(owner)
        if entries is None:
            continue
        ell = entries[-1]
        p = pivots.get(ell)
        if p is None:
            register(ell, owner)
            continue
        if p == owner:
            continue
        heap = list(entries)
        heapify(heap)
        cur = owner
        while True:
            x = _pop_low(heap)
            if x is None:
                del store[cur]
                break
            p = pivots.get(x)
            if p is None:
                register(x, cur)
                store[cur] = _extract(heap, x)
                break
            if skey(p) < skey(cur):
                _push_column(heap, store[p])
            else:
                # pivot to the right: current column takes the slot and the
                # old pivot column continues reducing with the new one added
                register(x, cur)
                finished = _extract(heap, x)
                store[cur] = finished
                heap = store[p][:-1] + finished[:-1]
                heapify(heap)
                cur = p

    st.updated = {
        o for o in updated if o in store and st.segment_of(store[o][-1]) != rank
    }
    return st.updated


def clear_columns(ctx: RankContext, st: GlobalState, dim: int) -> None:
    """After a dimension is fully reduced, delete its positive partners in the
    next dimension: one clear message per low, addressed by column value."""
    store = st.stores.get(dim, {})
    out = []
    local = []
    for entries in store.values():
        sigma = entries[-1]
        dest = st.segment_of(sigma)
        if dest == st.rank:
            local.append(sigma)
        else:
            out.append(clear_message(st.rank, dest, sigma))
    inbox = ctx.exchange(out)
    target = st.stores.get(dim + 1, {})
    for sigma in local + [m.owner for m in inbox]:
        col = target.pop(sigma, None)
        if col is not None:
            if st.pivots.get(col[-1]) == sigma:
                del st.pivots[col[-1]]
            st.stats.cleared_global += 1


def run_global_loop(ctx: RankContext, st: GlobalState, max_dim: int) -> GlobalState:
    """Alg-4 driver: per dimension, rounds of send/exchange/receive until no
    rank ships a column, then clearing."""
    total_columns = ctx.all_reduce_sum(st.n_columns())
    round_limit = max(1, st.n_ranks) * max(1, total_columns) + 1
    for dim in range(max_dim):
        rnd = 1
        traffic_rounds = 0
        while True:
            out = send_columns(st, dim, rnd)
            total = ctx.all_reduce_sum(len(out))
            inbox = ctx.exchange(out)
            receive_columns(st, dim, [(m.owner, m.entries) for m in inbox])
            if total:
                traffic_rounds += 1
            if total == 0:
                break
            rnd += 1
            if rnd > round_limit:
                raise InternalError(
                    f"global loop for dimension {dim} exceeded {round_limit} rounds"
                )
        st.stats.iterations_per_dim.append(rnd)
        st.stats.rounds_per_dim.append(max(1, traffic_rounds))
        if st.use_clearing:
            clear_columns(ctx, st, dim)
    return st
