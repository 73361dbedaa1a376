"""Traffic sources and sinks: core request generators, the multi-channel DMA,
tile scratchpad memory, the HBM boundary channel model, and traffic patterns.

Memory endpoints are timing models, not storage: a request's response beats
are scheduled after an access latency and paced by a token bucket so the
long-run acceptance/emission rate never exceeds the configured fraction of
one beat per cycle (0.715 for an HBM channel: 57.6 GB/s against the 64 B x
1.26 GHz wide-link peak).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .protocol import (
    AxiTransaction,
    ChannelKind,
    LinkClass,
    NodeId,
    NodeKind,
    TxnId,
    TxnOp,
    Width,
    MAX_BURST_BYTES,
    NARROW_BEAT_BYTES,
    WIDE_BEAT_BYTES,
)


# ---------------------------------------------------------------------------
# Rate limiting
# ---------------------------------------------------------------------------


class TokenBucket:
    """Credit accumulator with capacity one: at most one stored beat of burst,
    long-run throughput bounded by ``rate`` beats/cycle."""

    __slots__ = ("rate", "capacity", "credit")

    def __init__(self, rate: float, capacity: float = 1.0):
        assert 0.0 < rate <= 1.0
        self.rate = rate
        self.capacity = capacity
        self.credit = 0.0

    def tick(self) -> None:
        self.credit += self.rate

    def try_take(self) -> bool:
        if self.credit >= 1.0:
            self.credit -= 1.0
            return True
        return False

    def settle(self) -> None:
        if self.credit > self.capacity:
            self.credit = self.capacity


# ---------------------------------------------------------------------------
# Memory endpoints
# ---------------------------------------------------------------------------


class MemKind:
    SPM = "spm"
    HBM = "hbm"


@dataclass
class MemoryEndpointConfig:
    kind: str = MemKind.SPM
    # Default SPM latency absorbs the tile-internal interconnect and memory
    # access on both sides of a roundtrip (10 cycles total), which together
    # with 4 NI crossings and 2 cycles/hop yields the 22-cycle neighbor read.
    access_latency: int = 10
    accept_rate: float = 1.0

    @staticmethod
    def hbm(access_latency: int = 100, accept_rate: float = 0.715) -> "MemoryEndpointConfig":
        return MemoryEndpointConfig(MemKind.HBM, access_latency, accept_rate)


@dataclass(slots=True)
class _ReadJob:
    txn: AxiTransaction
    ready_cycle: int
    next_beat: int = 0


@dataclass(slots=True)
class _WriteJob:
    txn: AxiTransaction
    eligible: int
    beats_taken: int = 0
    w_arrival: int = -1  # atomics: cycle the (single) data beat arrived
    b_due: int = -1


class MemoryEndpoint:
    """Latency + rate-cap service model shared by SPM tiles and HBM channels.

    Non-atomic reads and writes are served FIFO per direction with the token
    bucket shared across both (one port); atomics take priority and can
    therefore overtake queued bulk traffic.
    """

    def __init__(self, cfg: MemoryEndpointConfig, target_of=None, staging_depth: int = 4):
        self.cfg = cfg
        # target_of(txn) -> TargetNi handling that transaction's width class
        self.target_of = target_of
        self.bucket = TokenBucket(cfg.accept_rate)
        self.read_q: deque[_ReadJob] = deque()
        self.atomic_q: deque[_WriteJob] = deque()
        self.write_staging: deque[tuple[_WriteJob, int]] = deque()
        self.staging_depth = staging_depth
        self._writes: dict[int, _WriteJob] = {}  # uid -> open write
        # Non-atomic writes all collapse onto one TxnID downstream, so their
        # B responses must return in registration (AW) order even when their
        # data beats complete out of order.
        self._write_order: deque[_WriteJob] = deque()
        self._prefer_write = False
        self.beats_served = 0

    # -- request ingestion (called by the target NI) -------------------------

    def enqueue_read(self, txn: AxiTransaction, eligible: int) -> None:
        self.read_q.append(_ReadJob(txn, eligible + self.cfg.access_latency))

    def register_write(self, txn: AxiTransaction, eligible: int) -> None:
        job = _WriteJob(txn, eligible)
        self._writes[txn.uid] = job
        if txn.op is TxnOp.ATOMIC:
            self.atomic_q.append(job)
        else:
            self._write_order.append(job)

    def can_accept_beat(self) -> bool:
        return len(self.write_staging) < self.staging_depth

    def push_write_beat(self, txn: AxiTransaction, beat_idx: int, cycle: int) -> None:
        job = self._writes[txn.uid]
        if txn.op is TxnOp.ATOMIC:
            job.w_arrival = cycle
        else:
            self.write_staging.append((job, beat_idx))

    # -- service -------------------------------------------------------------

    def _emit(self, txn: AxiTransaction, kind: ChannelKind, beat_idx: int, cycle: int) -> None:
        self.target_of(txn).queue_response(txn, kind, beat_idx, cycle)

    def _resp_link(self, txn: AxiTransaction) -> LinkClass:
        return LinkClass.WIDE if txn.width is Width.WIDE else LinkClass.RSP

    def step(self, cycle: int, sim=None) -> None:
        bucket = self.bucket
        if self._has_pending(cycle):
            # Credit accrues only while work is serviceable, so an idle
            # channel stores no bandwidth beyond the one-token capacity.
            bucket.tick()
            served = self._serve_one(cycle)
            if not served:
                bucket.settle()
        else:
            bucket.credit = 0.0
            served = False
        # Write acks are tiny and carry no payload; no token needed, but they
        # leave strictly in AW order (collapsed-TxnID write ordering).
        while self._write_order:
            job = self._write_order[0]
            if job.b_due < 0 or job.b_due > cycle:
                break
            if not self.target_of(job.txn).resp_space(LinkClass.RSP):
                break
            self._write_order.popleft()
            self._emit(job.txn, ChannelKind.B, 0, cycle)
            del self._writes[job.txn.uid]
        if served and sim is not None:
            sim.mark_progress()

    def _has_pending(self, cycle: int) -> bool:
        if self.write_staging:
            return True
        if self.atomic_q:
            job = self.atomic_q[0]
            if job.w_arrival >= 0 and cycle >= job.w_arrival + self.cfg.access_latency:
                return True
        if self.read_q and cycle >= self.read_q[0].ready_cycle:
            return True
        return False

    def _serve_one(self, cycle: int) -> bool:
        # A serviceable atomic overtakes bulk traffic; one that is still
        # waiting for its data beat or latency must not block the port.
        if self.atomic_q:
            job = self.atomic_q[0]
            if (
                job.w_arrival >= 0
                and cycle >= job.w_arrival + self.cfg.access_latency
                and self.target_of(job.txn).resp_space(LinkClass.RSP)
                and self.bucket.try_take()
            ):
                self.atomic_q.popleft()
                self._emit(job.txn, ChannelKind.R, 0, cycle)
                self._emit(job.txn, ChannelKind.B, 0, cycle)
                del self._writes[job.txn.uid]
                self.beats_served += 1
                return True
        want_write = bool(self.write_staging)
        read = self.read_q[0] if self.read_q else None
        want_read = (
            read is not None
            and cycle >= read.ready_cycle
            and self.target_of(read.txn).resp_space(self._resp_link(read.txn))
        )
        if want_write and (self._prefer_write or not want_read):
            if not self.bucket.try_take():
                return False
            job, beat_idx = self.write_staging.popleft()
            job.beats_taken += 1
            self.beats_served += 1
            if job.beats_taken == job.txn.burst_len:
                job.b_due = cycle + self.cfg.access_latency
            self._prefer_write = not want_read
            return True
        if want_read:
            if not self.bucket.try_take():
                return False
            self._emit(read.txn, ChannelKind.R, read.next_beat, cycle)
            read.next_beat += 1
            self.beats_served += 1
            if read.next_beat == read.txn.burst_len:
                self.read_q.popleft()
            self._prefer_write = want_write
            return True
        return False

    def idle(self) -> bool:
        return not (
            self.read_q
            or self.atomic_q
            or self.write_staging
            or self._writes
            or self._write_order
        )


# ---------------------------------------------------------------------------
# Traffic patterns
# ---------------------------------------------------------------------------


PATTERNS = ("neighbor", "bit_complement", "uniform_random", "tiled_matmul")


def pattern_destination(
    pattern: str,
    src: NodeId,
    x_tiles: int,
    y_tiles: int,
    rng: Optional[np.random.Generator] = None,
) -> NodeId:
    """Destination of one access under a synthetic traffic pattern.

    Pure in (pattern, src, dims, rng state); ``rng`` is only consulted for
    uniform_random.
    """
    if pattern == "neighbor":
        # +x direction, east-edge tile wrapping to the west edge of its row.
        # The wrap flow routes back across the row's idle -x links, so every
        # directed link still carries at most one flow (zero contention) and
        # every tile serves exactly one incoming stream.
        return NodeId((src.x + 1) % x_tiles, src.y)
    if pattern == "bit_complement":
        return NodeId(x_tiles - 1 - src.x, y_tiles - 1 - src.y)
    if pattern == "uniform_random":
        assert rng is not None, "uniform_random needs an rng"
        n = x_tiles * y_tiles
        idx = int(rng.integers(n - 1))
        self_idx = src.y * x_tiles + src.x
        if idx >= self_idx:
            idx += 1
        return NodeId(idx % x_tiles, idx // x_tiles)
    if pattern == "tiled_matmul":
        return NodeId(-1, src.y, NodeKind.HBM)
    raise ValueError(f"unknown pattern {pattern!r}")


# ---------------------------------------------------------------------------
# DMA
# ---------------------------------------------------------------------------


@dataclass
class DmaConfig:
    num_channels: int = 4
    max_outstanding_per_channel: int = 4
    burst_bytes: int = 4096
    wide_beat_bytes: int = WIDE_BEAT_BYTES
    # Assign each transfer to a channel by arrival index instead of by which
    # channels are free.  The issued per-channel streams then depend only on
    # the workload, which the ordering-equivalence comparisons require.
    static_assignment: bool = False

    def validate(self) -> None:
        if not 1 <= self.num_channels <= 4:
            raise ValueError("num_channels must be in 1..4")
        if self.burst_bytes > MAX_BURST_BYTES:
            raise ValueError("burst_bytes exceeds the 4 KiB burst limit")


@dataclass
class TransferSpec:
    src: NodeId
    dst: NodeId
    bytes: int
    op: TxnOp = TxnOp.WRITE
    start_cycle: int = 0
    tag: str = ""

    def __post_init__(self) -> None:
        if self.bytes <= 0:
            raise ValueError("transfer bytes must be > 0")


def split_bursts(spec: TransferSpec, cfg: DmaConfig) -> list[int]:
    """Burst lengths (in wide beats) covering the transfer, <=4 KiB each."""
    beats_per_burst = cfg.burst_bytes // cfg.wide_beat_bytes
    total_beats = -(-spec.bytes // cfg.wide_beat_bytes)
    out = []
    while total_beats > 0:
        take = min(beats_per_burst, total_beats)
        out.append(take)
        total_beats -= take
    return out


def dma_issue(
    spec: TransferSpec, cfg: DmaConfig, channels: Optional[list[int]] = None
) -> list[AxiTransaction]:
    """Transactions for one transfer, bursts distributed round-robin across
    the given channels (all of them by default); each channel contributes its
    own TxnID so concurrent streams stay decoupled downstream."""
    chans = channels if channels is not None else list(range(cfg.num_channels))
    txns = []
    for i, burst_len in enumerate(split_bursts(spec, cfg)):
        ch = chans[i % len(chans)]
        txns.append(
            AxiTransaction(
                txn_id=TxnId(ch),
                op=spec.op,
                src=spec.src,
                dst=spec.dst,
                burst_len=burst_len,
                beat_bytes=cfg.wide_beat_bytes,
                tag=spec.tag,
            )
        )
    return txns


class _DmaChannel:
    __slots__ = ("idx", "queue", "outstanding")

    def __init__(self, idx: int):
        self.idx = idx
        self.queue: deque = deque()  # (spec, dst, burst_len, op, tag)
        self.outstanding = 0

    def free(self) -> bool:
        return not self.queue and self.outstanding == 0


class DmaEngine:
    """Multi-backend DMA frontend.

    Each backend (channel) owns one wide TxnID and pipelines bursts up to its
    outstanding limit.  Transfers starting in the same cycle divide the free
    channels between them; with no free channel a transfer round-robins over
    all of them and inherits whatever ordering stalls that implies.
    """

    def __init__(self, node: NodeId, cfg: DmaConfig, submit, alloc_uid):
        cfg.validate()
        self.node = node
        self.cfg = cfg
        self.submit = submit  # callable(txn, completion_cb)
        self.alloc_uid = alloc_uid
        self.channels = [_DmaChannel(i) for i in range(cfg.num_channels)]
        self._pending: deque[TransferSpec] = deque()
        self._live: dict[int, int] = {}  # id(spec) -> remaining bursts
        self.completed: list[tuple[TransferSpec, int]] = []
        self._issue_rr = 0
        self._static_rr = 0

    def add_transfer(self, spec: TransferSpec) -> None:
        self._pending.append(spec)

    def sort_pending(self) -> None:
        self._pending = deque(sorted(self._pending, key=lambda s: s.start_cycle))

    def step(self, cycle: int) -> None:
        due = []
        while self._pending and self._pending[0].start_cycle <= cycle:
            due.append(self._pending.popleft())
        if due:
            self._assign_batch(due)
        self._issue(cycle)

    def _assign_batch(self, specs: list[TransferSpec]) -> None:
        free = [ch for ch in self.channels if ch.free()]
        k = len(specs)
        for i, spec in enumerate(specs):
            if self.cfg.static_assignment:
                chans = [self.channels[self._static_rr % len(self.channels)]]
                self._static_rr += 1
            elif free:
                chans = free[i::k] or [free[i % len(free)]]
            else:
                chans = self.channels
            bursts = split_bursts(spec, self.cfg)
            self._live[id(spec)] = len(bursts)
            for j, burst_len in enumerate(bursts):
                ch = chans[j % len(chans)]
                txn = AxiTransaction(
                    txn_id=TxnId(ch.idx),
                    op=spec.op,
                    src=self.node,
                    dst=spec.dst,
                    burst_len=burst_len,
                    beat_bytes=self.cfg.wide_beat_bytes,
                    uid=self.alloc_uid(),
                    tag=spec.tag,
                )
                ch.queue.append((spec, txn))

    def _issue(self, cycle: int) -> None:
        issued = {TxnOp.READ: False, TxnOp.WRITE: False}
        n = len(self.channels)
        for k in range(n):
            ch = self.channels[(self._issue_rr + k) % n]
            if not ch.queue or ch.outstanding >= self.cfg.max_outstanding_per_channel:
                continue
            spec, txn = ch.queue[0]
            if issued[spec.op]:
                continue
            ch.queue.popleft()
            issued[spec.op] = True
            txn.issue_cycle = cycle
            ch.outstanding += 1
            self.submit(txn, self._make_done_cb(ch, spec))
        self._issue_rr = (self._issue_rr + 1) % n

    def _make_done_cb(self, ch: _DmaChannel, spec: TransferSpec):
        def done(txn: AxiTransaction, cycle: int) -> None:
            ch.outstanding -= 1
            rem = self._live[id(spec)] - 1
            self._live[id(spec)] = rem
            if rem == 0:
                del self._live[id(spec)]
                self.completed.append((spec, cycle))

        return done

    def done(self) -> bool:
        return not self._pending and not self._live and all(
            ch.free() for ch in self.channels
        )


# ---------------------------------------------------------------------------
# Narrow (core) generators
# ---------------------------------------------------------------------------

CORES_PER_TILE = 9
ATOMIC_ID_BASE = 32


def core_request(
    core_id: int,
    src: NodeId,
    dst: NodeId,
    op: TxnOp = TxnOp.READ,
    uid: int = 0,
    issue_cycle: int = 0,
    tag: str = "",
) -> AxiTransaction:
    """Single-beat narrow access; each core owns a unique narrow TxnID."""
    assert core_id < CORES_PER_TILE
    return AxiTransaction(
        txn_id=TxnId(core_id),
        op=op,
        src=src,
        dst=dst,
        burst_len=1,
        beat_bytes=NARROW_BEAT_BYTES,
        issue_cycle=issue_cycle,
        uid=uid,
        tag=tag,
    )


class SweepReader:
    """Issues one narrow read at a time through an ordered target list
    (zero-load latency measurement)."""

    def __init__(self, node: NodeId, targets: list[NodeId], submit, alloc_uid, tag=""):
        self.node = node
        self.targets = deque(targets)
        self.submit = submit
        self.alloc_uid = alloc_uid
        self.tag = tag
        self._in_flight = False

    def step(self, cycle: int) -> None:
        if self._in_flight or not self.targets:
            return
        dst = self.targets.popleft()
        txn = core_request(
            0, self.node, dst, TxnOp.READ,
            uid=self.alloc_uid(), issue_cycle=cycle, tag=self.tag,
        )
        self._in_flight = True
        self.submit(txn, self._done)

    def _done(self, txn: AxiTransaction, cycle: int) -> None:
        self._in_flight = False

    def done(self) -> bool:
        return not self.targets and not self._in_flight


class NarrowProber:
    """Low-rate narrow reads to a fixed destination while some foreground
    workload runs; stops issuing when ``stop_when`` turns true."""

    def __init__(self, node, dst, submit, alloc_uid, period=64, stop_when=None, tag=""):
        self.node = node
        self.dst = dst
        self.submit = submit
        self.alloc_uid = alloc_uid
        self.period = period
        self.stop_when = stop_when or (lambda: False)
        self.tag = tag
        self._in_flight = False
        self._next_issue = 0

    def step(self, cycle: int) -> None:
        if self._in_flight or cycle < self._next_issue or self.stop_when():
            return
        txn = core_request(
            0, self.node, self.dst, TxnOp.READ,
            uid=self.alloc_uid(), issue_cycle=cycle, tag=self.tag,
        )
        self._in_flight = True
        self._next_issue = cycle + self.period
        self.submit(txn, self._done)

    def _done(self, txn, cycle) -> None:
        self._in_flight = False

    def done(self) -> bool:
        return not self._in_flight


@dataclass(slots=True)
class _CoreScript:
    requests: deque  # AxiTransaction, uid pre-assigned
    in_flight: int = 0


class RandomCores:
    """Per-core scripted random request streams.

    Scripts (including transaction uids) are materialized up front from the
    rng, so the issued workload is identical across runs that differ only in
    timing (e.g. the two ordering-unit configurations).  Atomic TxnIDs come
    from a per-NI free pool: allocation waits until an ID is free, which
    preserves the global uniqueness rule by construction (the NI still
    checks it).
    """

    def __init__(
        self,
        node: NodeId,
        rng: np.random.Generator,
        submit,
        alloc_uid,
        dests: list[NodeId],
        requests_per_core: int = 4,
        cores: int = 4,
        atomic_fraction: float = 0.15,
        write_fraction: float = 0.35,
        atomic_pool: int = 4,
        outstanding_per_core: int = 1,
    ):
        self.node = node
        self.submit = submit
        self.alloc_uid = alloc_uid
        self.atomic_ids = deque(range(ATOMIC_ID_BASE, ATOMIC_ID_BASE + atomic_pool))
        self.outstanding_per_core = outstanding_per_core
        self.cores: list[_CoreScript] = []
        for core_id in range(cores):
            reqs = deque()
            for _ in range(requests_per_core):
                dst = dests[int(rng.integers(len(dests)))]
                r = rng.random()
                if r < atomic_fraction:
                    op = TxnOp.ATOMIC
                elif r < atomic_fraction + write_fraction:
                    op = TxnOp.WRITE
                else:
                    op = TxnOp.READ
                # atomics get their TxnID from the pool at issue time
                tid = 0 if op is TxnOp.ATOMIC else core_id
                reqs.append(
                    AxiTransaction(
                        txn_id=TxnId(tid),
                        op=op,
                        src=node,
                        dst=dst,
                        burst_len=1,
                        beat_bytes=NARROW_BEAT_BYTES,
                        uid=alloc_uid(),
                    )
                )
            self.cores.append(_CoreScript(reqs))

    def step(self, cycle: int) -> None:
        for core in self.cores:
            if core.in_flight >= self.outstanding_per_core or not core.requests:
                continue
            txn = core.requests[0]
            if txn.op is TxnOp.ATOMIC:
                if not self.atomic_ids:
                    continue
                txn.txn_id = TxnId(self.atomic_ids.popleft())
            txn.issue_cycle = cycle
            core.requests.popleft()
            core.in_flight += 1
            self.submit(txn, self._make_done(core))

    def _make_done(self, core: _CoreScript):
        def done(txn: AxiTransaction, cycle: int) -> None:
            core.in_flight -= 1
            if txn.op is TxnOp.ATOMIC:
                self.atomic_ids.append(int(txn.txn_id))

        return done

    def done(self) -> bool:
        return all(not c.requests and not c.in_flight for c in self.cores)


class BernoulliCores:
    """Open-loop narrow read injection at a target rate, used by the drain
    and deadlock tests; each core keeps at most one request in flight."""

    def __init__(
        self,
        node: NodeId,
        rng: np.random.Generator,
        submit,
        alloc_uid,
        dest_fn: Callable[[np.random.Generator], NodeId],
        rate_per_tile: float,
        stop_cycle: int,
        cores: int = CORES_PER_TILE,
    ):
        self.node = node
        self.rng = rng
        self.submit = submit
        self.alloc_uid = alloc_uid
        self.dest_fn = dest_fn
        self.rate = rate_per_tile
        self.stop_cycle = stop_cycle
        self.busy = [False] * cores
        self._past_stop = False

    def step(self, cycle: int) -> None:
        if cycle >= self.stop_cycle:
            self._past_stop = True
            return
        if self.rng.random() >= self.rate:
            return
        try:
            core_id = self.busy.index(False)
        except ValueError:
            return
        dst = self.dest_fn(self.rng)
        txn = core_request(
            core_id, self.node, dst, TxnOp.READ, uid=self.alloc_uid(), issue_cycle=cycle
        )
        self.busy[core_id] = True

        def done(t, c, core_id=core_id):
            self.busy[core_id] = False

        self.submit(txn, done)

    def done(self) -> bool:
        return self._past_stop and not any(self.busy)


# ---------------------------------------------------------------------------
# Workload files
# ---------------------------------------------------------------------------


@dataclass
class PatternBlock:
    kind: str
    bytes: int
    op: TxnOp = TxnOp.WRITE
    start_cycle: int = 0
    tag: str = ""


class WorkloadParseError(ValueError):
    pass


def _parse_node(text: str) -> NodeId:
    if text.startswith("hbm:"):
        return NodeId(-1, int(text[4:]), NodeKind.HBM)
    x, y = text.split(",")
    return NodeId(int(x), int(y))


def parse_workload(text: str) -> list:
    """Parse a workload file: one `transfer` or `pattern` block per line.

    Example::

        transfer src=0,0 dst=3,2 bytes=8192 op=write start=0
        pattern kind=neighbor bytes=32768 op=write start=0
    """
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        kind, kvs = parts[0], parts[1:]
        try:
            kv = dict(p.split("=", 1) for p in kvs)
        except ValueError:
            raise WorkloadParseError(f"line {lineno}: malformed key=value pair")
        try:
            if kind == "transfer":
                out.append(
                    TransferSpec(
                        src=_parse_node(kv["src"]),
                        dst=_parse_node(kv["dst"]),
                        bytes=int(kv["bytes"]),
                        op=TxnOp(kv.get("op", "write")),
                        start_cycle=int(kv.get("start", 0)),
                        tag=kv.get("tag", ""),
                    )
                )
            elif kind == "pattern":
                if kv["kind"] not in PATTERNS:
                    raise WorkloadParseError(
                        f"line {lineno}: unknown pattern {kv['kind']!r}"
                    )
                out.append(
                    PatternBlock(
                        kind=kv["kind"],
                        bytes=int(kv["bytes"]),
                        op=TxnOp(kv.get("op", "write")),
                        start_cycle=int(kv.get("start", 0)),
                        tag=kv.get("tag", kv["kind"]),
                    )
                )
            else:
                raise WorkloadParseError(f"line {lineno}: unknown block {kind!r}")
        except KeyError as e:
            raise WorkloadParseError(f"line {lineno}: missing key {e.args[0]}") from None
        except WorkloadParseError:
            raise
        except ValueError as e:
            raise WorkloadParseError(f"line {lineno}: {e}") from None
    return out
