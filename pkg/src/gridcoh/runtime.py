"""Rank workers and pluggable message transports.

Both transports expose the same bulk-synchronous contract through a
RankContext: `exchange` is collective, delivers exactly the messages addressed
to each rank, grouped by source rank in ascending order with per-pair FIFO
preserved; `all_reduce_sum` is built on two exchanges through rank 0 and so
behaves identically over any transport.

The in-process transport runs ranks as threads over a shared mailbox and a
counted barrier.  The multi-process transport forks one OS process per rank,
connected pairwise by local stream sockets carrying length-prefixed frames:

    u32 frame length, then
    column:  u8 kind=1, u32 source, u32 dest, u64 owner uid, f64 owner value,
             u64 entry count, then (f64 value, u64 uid) per entry
    clear:   u8 kind=2, u32 source, u32 dest, u64 owner uid, f64 owner value
    blob:    u8 kind=3, u32 source, u32 dest, u64 byte count, raw bytes
    round end marker: u8 kind=0, u32 source, u32 dest
"""

from __future__ import annotations

import io
import pickle
import selectors
import socket
import struct
import threading
import traceback
from dataclasses import dataclass, field

from .errors import ConfigError, InternalError, ProtocolError

KIND_ROUND_END = 0
KIND_COLUMN = 1
KIND_CLEAR = 2
KIND_BLOB = 3

_HDR = struct.Struct("<BII")
_OWNER = struct.Struct("<Qd")
_COUNT = struct.Struct("<Q")
_ENTRY = struct.Struct("<dQ")
_LEN = struct.Struct("<I")


@dataclass(frozen=True, eq=False)
class Message:
    kind: int
    source: int
    dest: int
    owner: tuple | None = None  # CellKey (value, uid)
    entries: list | None = None  # for columns: sorted CellKey list, nonempty
    blob: bytes | None = None


def column_message(source: int, dest: int, owner, entries) -> Message:
    if not entries:
        raise ProtocolError(f"refusing to ship a zero column for owner {owner}")
    return Message(KIND_COLUMN, source, dest, owner, entries)


def clear_message(source: int, dest: int, owner) -> Message:
    return Message(KIND_CLEAR, source, dest, owner)


def blob_message(source: int, dest: int, payload: bytes) -> Message:
    return Message(KIND_BLOB, source, dest, blob=payload)


def encode_message(msg: Message) -> bytes:
    head = _HDR.pack(msg.kind, msg.source, msg.dest)
    if msg.kind == KIND_COLUMN:
        body = [head, _OWNER.pack(msg.owner[1], msg.owner[0]), _COUNT.pack(len(msg.entries))]
        body.extend(_ENTRY.pack(v, u) for v, u in msg.entries)
        return b"".join(body)
    if msg.kind == KIND_CLEAR:
        return head + _OWNER.pack(msg.owner[1], msg.owner[0])
    if msg.kind == KIND_BLOB:
        return head + _COUNT.pack(len(msg.blob)) + msg.blob
    if msg.kind == KIND_ROUND_END:
        return head
    raise ProtocolError(f"unknown message kind {msg.kind}")


def decode_message(buf: bytes) -> Message:
    kind, source, dest = _HDR.unpack_from(buf, 0)
    off = _HDR.size
    if kind == KIND_COLUMN:
        uid, value = _OWNER.unpack_from(buf, off)
        off += _OWNER.size
        (count,) = _COUNT.unpack_from(buf, off)
        off += _COUNT.size
        entries = []
        for _ in range(count):
            v, u = _ENTRY.unpack_from(buf, off)
            off += _ENTRY.size
            entries.append((v, u))
        if not entries:
            raise ProtocolError("decoded a zero column payload")
        return Message(kind, source, dest, (value, uid), entries)
    if kind == KIND_CLEAR:
        uid, value = _OWNER.unpack_from(buf, off)
        return Message(kind, source, dest, (value, uid))
    if kind == KIND_BLOB:
        (count,) = _COUNT.unpack_from(buf, off)
        off += _COUNT.size
        return Message(kind, source, dest, blob=buf[off : off + count])
    if kind == KIND_ROUND_END:
        return Message(kind, source, dest)
    raise ProtocolError(f"unknown message kind {kind}")


class RankContext:
    """One worker's handle on the collective machinery."""

    rank: int
    n_ranks: int

    def exchange(self, messages: list[Message]) -> list[Message]:
        raise NotImplementedError

    def all_reduce_sum(self, value: int) -> int:
        out = [blob_message(self.rank, 0, struct.pack("<q", value))]
        inbox = self.exchange(out)
        if self.rank == 0:
            total = sum(struct.unpack("<q", m.blob)[0] for m in inbox)
            reply = [blob_message(0, r, struct.pack("<q", total)) for r in range(self.n_ranks)]
        else:
            reply = []
        inbox2 = self.exchange(reply)
        if len(inbox2) != 1:
            raise InternalError("all_reduce_sum collective out of step")
        return struct.unpack("<q", inbox2[0].blob)[0]

    def barrier(self) -> None:
        self.all_reduce_sum(0)

    def _check(self, messages):
        for m in messages:
            if not 0 <= m.dest < self.n_ranks:
                raise ConfigError(f"message destination {m.dest} out of range (n={self.n_ranks})")
            if m.source != self.rank:
                raise ProtocolError(f"message source {m.source} forged on rank {self.rank}")


class _ThreadShared:
    def __init__(self, n: int):
        self.n = n
        self.barrier = threading.Barrier(n)
        self.outboxes: list = [None] * n


class ThreadRankContext(RankContext):
    def __init__(self, shared: _ThreadShared, rank: int):
        self.rank = rank
        self.n_ranks = shared.n
        self._shared = shared

    def exchange(self, messages):
        self._check(messages)
        sh = self._shared
        sh.outboxes[self.rank] = messages
        sh.barrier.wait()
        inbox = [m for src in range(sh.n) for m in sh.outboxes[src] if m.dest == self.rank]
        sh.barrier.wait()
        return inbox


class SocketRankContext(RankContext):
    """One rank of the multi-process transport, over pairwise stream sockets."""

    def __init__(self, rank: int, n_ranks: int, peers: dict[int, socket.socket]):
        self.rank = rank
        self.n_ranks = n_ranks
        self._peers = peers
        self._rbuf = {p: bytearray() for p in peers}
        for s in peers.values():
            s.setblocking(False)

    def _drain(self, peer, sink) -> bool:
        """Parse buffered frames from one peer until its round-end marker.

        Returns True once the marker is consumed; later bytes stay buffered
        for the next exchange.
        """
        rb = self._rbuf[peer]
        while True:
            if len(rb) < _LEN.size:
                return False
            (flen,) = _LEN.unpack_from(rb, 0)
            if len(rb) < _LEN.size + flen:
                return False
            msg = decode_message(bytes(rb[_LEN.size : _LEN.size + flen]))
            del rb[: _LEN.size + flen]
            if msg.kind == KIND_ROUND_END:
                return True
            sink.append(msg)

    def exchange(self, messages):
        self._check(messages)
        outgoing = {p: [] for p in self._peers}
        inbox_self = []
        for m in messages:
            if m.dest == self.rank:
                inbox_self.append(m)
            else:
                frame = encode_message(m)
                outgoing[m.dest].append(_LEN.pack(len(frame)) + frame)
        by_source = {p: [] for p in self._peers}
        sel = selectors.DefaultSelector()
        out_bufs = {}
        pending_reads = set()
        pending_writes = set(self._peers)
        for p in self._peers:
            end = encode_message(Message(KIND_ROUND_END, self.rank, p))
            outgoing[p].append(_LEN.pack(len(end)) + end)
            out_bufs[p] = memoryview(b"".join(outgoing[p]))
            if not self._drain(p, by_source[p]):
                pending_reads.add(p)

        def interest(p):
            ev = 0
            if p in pending_reads:
                ev |= selectors.EVENT_READ
            if p in pending_writes:
                ev |= selectors.EVENT_WRITE
            return ev

        for p, sock in self._peers.items():
            ev = interest(p)
            if ev:
                sel.register(sock, ev, p)

        while pending_writes or pending_reads:
            for key, events in sel.select():
                p = key.data
                sock = key.fileobj
                changed = False
                if events & selectors.EVENT_WRITE and p in pending_writes:
                    buf = out_bufs[p]
                    if buf:
                        try:
                            sent = sock.send(buf)
                        except BlockingIOError:
                            sent = 0
                        out_bufs[p] = buf[sent:]
                    if not out_bufs[p]:
                        pending_writes.discard(p)
                        changed = True
                if events & selectors.EVENT_READ and p in pending_reads:
                    try:
                        data = sock.recv(1 << 20)
                    except BlockingIOError:
                        data = None
                    if data is not None:
                        if not data:
                            raise InternalError(f"rank {p} closed its socket mid-exchange")
                        self._rbuf[p].extend(data)
                        if self._drain(p, by_source[p]):
                            pending_reads.discard(p)
                            changed = True
                if changed:
                    ev = interest(p)
                    if ev:
                        sel.modify(sock, ev, p)
                    else:
                        sel.unregister(sock)
        sel.close()
        inbox = []
        for src in range(self.n_ranks):
            if src == self.rank:
                inbox.extend(inbox_self)
            else:
                inbox.extend(by_source.get(src, ()))
        return inbox


def _socket_worker(fn, rank, n, peers, result_conn):
    try:
        ctx = SocketRankContext(rank, n, peers)
        result = fn(ctx)
        result_conn.send(("ok", pickle.dumps(result)))
    except BaseException:
        result_conn.send(("err", traceback.format_exc()))
    finally:
        result_conn.close()
        for s in peers.values():
            s.close()


def run_ranks(n: int, fn, transport: str = "inproc") -> list:
    """Run fn(ctx) on n workers over the chosen transport; returns per-rank results.

    Any worker failure aborts the whole run with that worker's diagnostics.
    """
    if n < 1:
        raise ConfigError(f"need at least one rank, got {n}")
    if transport == "inproc":
        return _run_threads(n, fn)
    if transport == "proc":
        return _run_processes(n, fn)
    raise ConfigError(f"unknown transport {transport!r} (expected 'inproc' or 'proc')")


def _run_threads(n: int, fn) -> list:
    shared = _ThreadShared(n)
    results = [None] * n
    errors: list[tuple[int, str]] = []
    lock = threading.Lock()

    def runner(rank):
        try:
            results[rank] = fn(ThreadRankContext(shared, rank))
        except threading.BrokenBarrierError:
            pass
        except BaseException:
            with lock:
                errors.append((rank, traceback.format_exc()))
            shared.barrier.abort()

    threads = [threading.Thread(target=runner, args=(r,), daemon=True) for r in range(n)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        rank, tb = errors[0]
        raise InternalError(f"rank {rank} failed:\n{tb}")
    return results


def _run_processes(n: int, fn) -> list:
    import multiprocessing as mp

    ctx = mp.get_context("fork")
    pair_socks = {}
    for i in range(n):
        for j in range(i + 1, n):
            pair_socks[(i, j)] = socket.socketpair()
    conns = [ctx.Pipe(duplex=False) for _ in range(n)]
    procs = []
    for r in range(n):
        peers = {}
        for (i, j), (si, sj) in pair_socks.items():
            if i == r:
                peers[j] = si
            elif j == r:
                peers[i] = sj
        p = ctx.Process(target=_socket_worker, args=(fn, r, n, peers, conns[r][1]), daemon=True)
        procs.append(p)
        p.start()
    for (si, sj) in pair_socks.values():
        si.close()
        sj.close()
    for _, w in conns:
        w.close()

    results = [None] * n
    failure = None
    for r in range(n):
        try:
            status, payload = conns[r][0].recv()
        except EOFError:
            status, payload = "err", f"rank {r} exited without reporting a result"
        if status == "ok":
            results[r] = pickle.loads(payload)
        elif failure is None:
            failure = (r, payload)
    for p in procs:
        if failure is not None and p.is_alive():
            p.terminate()
        p.join()
    if failure is not None:
        raise InternalError(f"rank {failure[0]} failed:\n{failure[1]}")
    return results
