"""Network interfaces: AXI-to-flit conversion and response ordering.

The source side enforces same-TxnID response ordering with one of two
ordering units: a reorder buffer that parks out-of-order responses until
their predecessors have been forwarded, or a RoB-less unit that instead
stalls new requests whose destination differs from the outstanding ones for
the same TxnID (safe under deterministic routing, since same-destination
responses return in issue order).  Atomics bypass the ordering unit entirely
but must carry a TxnID unique among all outstanding transactions.

The target side tracks return information in a meta buffer: one FIFO per
request direction for non-atomic traffic (which is collapsed onto a single
TxnID toward the local endpoint), plus an associative store for atomics,
which may complete out of order.

Reads and writes keep fully independent ordering state; AXI imposes no
ordering between them.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .protocol import (
    AxiTransaction,
    ChannelKind,
    Flit,
    FlitHeader,
    LinkClass,
    NodeId,
    ProtocolError,
    TxnId,
    TxnOp,
    Width,
    NARROW_BEAT_BYTES,
    WIDE_BEAT_BYTES,
    request_flits,
    _make_flit,
)


class UnknownResponse(ProtocolError):
    """Response arrived with no live bookkeeping entry."""


class DuplicateAtopId(ProtocolError):
    """Atomic issued while its TxnID was already outstanding."""


class MetaBufferOverflow(ProtocolError):
    """Meta buffer exceeded its configured depth with flow control disabled."""


class OrderingMode:
    ROB = "rob"
    ROB_LESS = "rob_less"


@dataclass
class NiConfig:
    ordering: str = OrderingMode.ROB_LESS
    rob_capacity_bytes: int = 8192
    max_txnid: int = 256
    ni_crossing_latency: int = 1
    atop_buffer_depth: int = 16
    meta_depth: int = 64
    flow_control: bool = True
    # Test-only: carry responses on the req link class (single shared network
    # for requests and responses), reintroducing protocol deadlock.
    merge_req_rsp: bool = False

    def validate(self) -> None:
        if self.ordering not in (OrderingMode.ROB, OrderingMode.ROB_LESS):
            raise ValueError(f"unknown ordering mode {self.ordering!r}")
        if self.ordering == OrderingMode.ROB and self.rob_capacity_bytes < 4096:
            raise ValueError("rob_capacity_bytes must hold at least one max burst")
        if self.ni_crossing_latency < 1:
            raise ValueError("ni_crossing_latency must be >= 1")


@dataclass
class NiStats:
    ordering_stall_cycles: int = 0
    injected: int = 0
    retired: int = 0
    rob_peak_bytes: int = 0


class Decision(Enum):
    INJECT = "inject"
    STALL = "stall"


STALL = (Decision.STALL, None, False)


def _expected_beats(txn: AxiTransaction) -> int:
    if txn.op is TxnOp.READ:
        return txn.burst_len
    if txn.op is TxnOp.WRITE:
        return 1  # B
    return 2  # atomic: R + B


def _response_bytes(txn: AxiTransaction) -> int:
    # RoB space is only needed for payload-carrying responses.
    return txn.total_bytes if txn.op is TxnOp.READ else 0


# ---------------------------------------------------------------------------
# Ordering units
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class RobEntry:
    txn: AxiTransaction
    rob_idx: Optional[int]
    in_order: bool
    expected: int
    alloc_bytes: int
    forwarded: int = 0
    buffered: list = field(default_factory=list)  # (channel, beat_idx) in order


class RobOrderingUnit:
    """Reorder-table + reorder-buffer ordering.

    Space is reserved at injection and freed once the entry's responses have
    all been forwarded.  Allocation is skipped when the transaction is the
    first outstanding for its TxnID or when every outstanding same-ID
    transaction targets the same destination (their responses cannot arrive
    out of order under deterministic routing).
    """

    def __init__(self, capacity_bytes: int, stats: NiStats):
        self.capacity = capacity_bytes
        self.free_bytes = capacity_bytes
        self.live: dict[int, deque[RobEntry]] = {}
        self.by_idx: dict[int, RobEntry] = {}
        self._next_idx = 0
        self.stats = stats

    def outstanding(self, txn_id: int) -> int:
        q = self.live.get(txn_id)
        return len(q) if q else 0

    def try_inject(self, txn: AxiTransaction):
        tid = int(txn.txn_id)
        q = self.live.get(tid)
        in_order = not q or all(e.txn.dst == txn.dst for e in q)
        rob_idx = None
        alloc = 0
        if not in_order:
            alloc = _response_bytes(txn)
            if alloc > self.free_bytes:
                return STALL
            self.free_bytes -= alloc
            assert self.free_bytes >= 0, "RoB occupancy exceeded capacity"
            used = self.capacity - self.free_bytes
            if used > self.stats.rob_peak_bytes:
                self.stats.rob_peak_bytes = used
            rob_idx = self._next_idx
            self._next_idx += 1
        entry = RobEntry(txn, rob_idx, in_order, _expected_beats(txn), alloc)
        if q is None:
            q = deque()
            self.live[tid] = q
        q.append(entry)
        if rob_idx is not None:
            self.by_idx[rob_idx] = entry
        return (Decision.INJECT, rob_idx, in_order)

    def on_response(self, flit: Flit) -> list[tuple[AxiTransaction, ChannelKind, int]]:
        """Returns the beats to forward to the AXI side, in order."""
        h = flit.header
        q = self.live.get(h.txn_id)
        if not q:
            raise UnknownResponse(f"no live entry for txn id {h.txn_id}")
        head = q[0]
        if h.in_order:
            if not head.in_order or head.txn.uid != h.txn_uid:
                raise ProtocolError(
                    f"in-order response for uid {h.txn_uid} but head is "
                    f"uid {head.txn.uid}"
                )
            entry = head
        elif head.rob_idx is not None and head.rob_idx == h.rob_idx:
            entry = head
        else:
            entry = self.by_idx.get(h.rob_idx)
            if entry is None:
                raise UnknownResponse(f"no entry for rob_idx {h.rob_idx}")
            entry.buffered.append((h.channel, h.beat_idx))
            return []
        # Head entry: forward immediately, then release any successors that
        # are now fully in order.
        out = [(entry.txn, h.channel, h.beat_idx)]
        entry.forwarded += 1
        if entry.forwarded == entry.expected:
            self._retire_head(q, entry)
            out.extend(self._release_chain(q))
        return out

    def _retire_head(self, q: deque, entry: RobEntry) -> None:
        assert q[0] is entry
        q.popleft()
        if entry.rob_idx is not None:
            del self.by_idx[entry.rob_idx]
            self.free_bytes += entry.alloc_bytes
        if not q:
            del self.live[int(entry.txn.txn_id)]

    def _release_chain(self, q: deque) -> list:
        released = []
        while q:
            head = q[0]
            while head.buffered:
                ch, beat = head.buffered.pop(0)
                released.append((head.txn, ch, beat))
                head.forwarded += 1
            if head.forwarded == head.expected:
                self._retire_head(q, head)
            else:
                break
        return released


class RobLessOrderingUnit:
    """Counter-based ordering: stall any request whose destination differs
    from the destination of outstanding same-TxnID transactions."""

    def __init__(self, stats: NiStats):
        self.live: dict[int, deque[AxiTransaction]] = {}
        self.forwarded: dict[int, int] = {}  # uid -> beats forwarded
        self.stats = stats

    def outstanding(self, txn_id: int) -> int:
        q = self.live.get(txn_id)
        return len(q) if q else 0

    def try_inject(self, txn: AxiTransaction):
        tid = int(txn.txn_id)
        q = self.live.get(tid)
        if q and q[0].dst != txn.dst:
            return STALL
        if q is None:
            q = deque()
            self.live[tid] = q
        q.append(txn)
        return (Decision.INJECT, None, True)

    def on_response(self, flit: Flit) -> list[tuple[AxiTransaction, ChannelKind, int]]:
        h = flit.header
        q = self.live.get(h.txn_id)
        if not q:
            raise UnknownResponse(f"no live entry for txn id {h.txn_id}")
        txn = q[0]
        if txn.uid != h.txn_uid:
            # With the stall discipline and deterministic routing this is
            # impossible; hitting it means ordering was violated.
            raise ProtocolError(
                f"out-of-order response: got uid {h.txn_uid}, head uid {txn.uid}"
            )
        done = self.forwarded.get(txn.uid, 0) + 1
        if done == _expected_beats(txn):
            q.popleft()
            self.forwarded.pop(txn.uid, None)
            if not q:
                del self.live[int(txn.txn_id)]
        else:
            self.forwarded[txn.uid] = done
        return [(txn, h.channel, h.beat_idx)]


def make_ordering_unit(cfg: NiConfig, stats: NiStats):
    if cfg.ordering == OrderingMode.ROB:
        return RobOrderingUnit(cfg.rob_capacity_bytes, stats)
    return RobLessOrderingUnit(stats)


# ---------------------------------------------------------------------------
# Source-side NI
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class _AtomicRec:
    txn: AxiTransaction
    delivered: int = 0


class SourceNi:
    """Initiator-side interface for one width class of one endpoint.

    Converts granted transactions into request flits (one cycle per
    AXI-to-flit crossing), applies the ordering unit's injection gating, and
    sequences returning response beats back to the AXI side.
    """

    def __init__(
        self,
        node: NodeId,
        width: Width,
        cfg: NiConfig,
        on_retire: Callable[[AxiTransaction, int], None],
        make_route: Optional[Callable[[NodeId, NodeId], Optional[tuple]]] = None,
    ):
        self.node = node
        self.width = width
        self.cfg = cfg
        self.on_retire = on_retire
        self.make_route = make_route or (lambda a, b: None)
        self.stats = NiStats()
        self.read_q: deque[AxiTransaction] = deque()
        self.write_q: deque[AxiTransaction] = deque()
        self.read_unit = make_ordering_unit(cfg, self.stats)
        self.write_unit = make_ordering_unit(cfg, self.stats)
        self.atomic_live: dict[int, _AtomicRec] = {}
        # (ready_cycle, flit) per link class, filled at admission
        self.inject_q: dict[LinkClass, deque] = {
            LinkClass.REQ: deque(),
            LinkClass.RSP: deque(),
            LinkClass.WIDE: deque(),
        }
        # (ready_cycle, txn, channel, beat_idx) per response channel
        self.delivery_q: dict[ChannelKind, deque] = {
            ChannelKind.R: deque(),
            ChannelKind.B: deque(),
        }

    # -- request path -------------------------------------------------------

    def submit(self, txn: AxiTransaction) -> None:
        if int(txn.txn_id) >= self.cfg.max_txnid:
            raise ProtocolError(
                f"TxnID {int(txn.txn_id)} outside the configured space "
                f"(max_txnid={self.cfg.max_txnid})"
            )
        if txn.op is TxnOp.READ:
            self.read_q.append(txn)
        else:
            self.write_q.append(txn)

    def _non_atomic_outstanding(self, tid: int) -> int:
        return self.read_unit.outstanding(tid) + self.write_unit.outstanding(tid)

    def inject_atop(self, txn: AxiTransaction) -> None:
        tid = int(txn.txn_id)
        if tid in self.atomic_live or self._non_atomic_outstanding(tid):
            raise DuplicateAtopId(
                f"atomic TxnID {tid} already outstanding at {self.node}"
            )
        self.atomic_live[tid] = _AtomicRec(txn)

    def step_admit(self, cycle: int) -> None:
        for q, unit in ((self.read_q, self.read_unit), (self.write_q, self.write_unit)):
            if not q:
                continue
            txn = q[0]
            if txn.op is TxnOp.ATOMIC:
                self.inject_atop(txn)
                rob_idx, in_order = None, True
            else:
                tid = int(txn.txn_id)
                if tid in self.atomic_live:
                    raise ProtocolError(
                        f"non-atomic TxnID {tid} clashes with outstanding atomic"
                    )
                decision, rob_idx, in_order = unit.try_inject(txn)
                if decision is Decision.STALL:
                    self.stats.ordering_stall_cycles += 1
                    continue
            q.popleft()
            self.stats.injected += 1
            route = self.make_route(self.node, txn.dst)
            flits = request_flits(txn, rob_idx=rob_idx, in_order=in_order, route=route)
            ready = cycle + self.cfg.ni_crossing_latency - 1
            self.inject_q[flits[0].link].extend((ready, f) for f in flits)

    def injectable(self, link: LinkClass, cycle: int) -> Optional[Flit]:
        q = self.inject_q[link]
        if q and q[0][0] <= cycle:
            return q[0][1]
        return None

    def pop_injectable(self, link: LinkClass) -> Flit:
        return self.inject_q[link].popleft()[1]

    # -- response path ------------------------------------------------------

    def handle_response(self, flit: Flit, cycle: int) -> None:
        h = flit.header
        ready = cycle + self.cfg.ni_crossing_latency - 1
        if h.atop:
            rec = self.atomic_live.get(h.txn_id)
            if rec is None or rec.txn.uid != h.txn_uid:
                raise UnknownResponse(f"atomic response for unknown id {h.txn_id}")
            self.delivery_q[_resp_channel(h.channel)].append(
                (ready, rec.txn, h.channel, h.beat_idx)
            )
            return
        unit = self.read_unit if h.channel is ChannelKind.R else self.write_unit
        for txn, ch, beat in unit.on_response(flit):
            self.delivery_q[_resp_channel(ch)].append((ready, txn, ch, beat))

    def step_deliver(self, cycle: int) -> None:
        for ch, q in self.delivery_q.items():
            if not q or q[0][0] > cycle:
                continue
            _, txn, kind, beat = q.popleft()
            self._on_beat_delivered(txn, kind, beat, cycle)

    def _on_beat_delivered(
        self, txn: AxiTransaction, kind: ChannelKind, beat: int, cycle: int
    ) -> None:
        if txn.op is TxnOp.ATOMIC:
            rec = self.atomic_live[int(txn.txn_id)]
            rec.delivered += 1
            if rec.delivered == 2:
                del self.atomic_live[int(txn.txn_id)]
                self._retire(txn, cycle)
            return
        last = (
            kind is ChannelKind.B
            or (txn.op is TxnOp.READ and beat == txn.burst_len - 1)
        )
        if last:
            self._retire(txn, cycle)

    def _retire(self, txn: AxiTransaction, cycle: int) -> None:
        self.stats.retired += 1
        self.on_retire(txn, cycle)

    @property
    def outstanding(self) -> int:
        return self.stats.injected - self.stats.retired

    def pending(self) -> bool:
        return bool(
            self.read_q
            or self.write_q
            or any(self.inject_q.values())
            or any(self.delivery_q.values())
            or self.outstanding
        )


def _resp_channel(kind: ChannelKind) -> ChannelKind:
    return ChannelKind.R if kind is ChannelKind.R else ChannelKind.B


# ---------------------------------------------------------------------------
# Target-side NI
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class MetaBufferEntry:
    src: NodeId
    txn_id: int
    atop: bool
    uid: int
    rob_idx: Optional[int]
    in_order: bool
    txn: AxiTransaction


class TargetNi:
    """Target-side interface: meta buffer, request reassembly, and response
    packetization back toward the requester."""

    def __init__(
        self,
        node: NodeId,
        width: Width,
        cfg: NiConfig,
        memory,
        make_route: Optional[Callable[[NodeId, NodeId], Optional[tuple]]] = None,
    ):
        self.node = node
        self.width = width
        self.cfg = cfg
        self.memory = memory
        self.make_route = make_route or (lambda a, b: None)
        self.read_meta: deque[MetaBufferEntry] = deque()
        self.write_meta: deque[MetaBufferEntry] = deque()
        self.atomic_meta: dict[int, deque[MetaBufferEntry]] = {}
        self._assembly: dict[int, MetaBufferEntry] = {}  # uid -> open write
        # (ready_cycle, flit) response flits awaiting injection, per link class
        self.resp_q: dict[LinkClass, deque] = {
            LinkClass.RSP: deque(),
            LinkClass.WIDE: deque(),
        }
        if cfg.merge_req_rsp:
            self.resp_q[LinkClass.REQ] = deque()

    # -- request ingress ----------------------------------------------------

    def _meta_full(self, q) -> bool:
        depth = self.cfg.meta_depth
        if len(q) < depth:
            return False
        if self.cfg.flow_control:
            return True
        raise MetaBufferOverflow(f"meta buffer depth {depth} exceeded at {self.node}")

    def _rebuild_txn(self, h: FlitHeader, op: TxnOp) -> AxiTransaction:
        beat_bytes = WIDE_BEAT_BYTES if h.width is Width.WIDE else NARROW_BEAT_BYTES
        return AxiTransaction(
            txn_id=TxnId(h.txn_id, 16),
            op=op,
            src=h.src,
            dst=h.dst,
            burst_len=h.burst_len,
            beat_bytes=beat_bytes,
            uid=h.txn_uid,
        )

    def accept_request_flit(self, flit: Flit, cycle: int) -> bool:
        """Consume one arriving request flit; False applies backpressure."""
        h = flit.header
        eligible = cycle + self.cfg.ni_crossing_latency - 1
        if h.channel is ChannelKind.AR:
            if self._meta_full(self.read_meta):
                return False
            txn = self._rebuild_txn(h, TxnOp.READ)
            meta = MetaBufferEntry(h.src, h.txn_id, False, h.txn_uid, h.rob_idx, h.in_order, txn)
            self.read_meta.append(meta)
            self.memory.enqueue_read(txn, eligible)
            return True
        if h.channel is ChannelKind.AW:
            if h.atop:
                q = self.atomic_meta.setdefault(h.txn_id, deque())
                if len(q) >= self.cfg.atop_buffer_depth:
                    if self.cfg.flow_control:
                        return False
                    raise MetaBufferOverflow("atomic meta buffer exceeded")
                txn = self._rebuild_txn(h, TxnOp.ATOMIC)
                meta = MetaBufferEntry(h.src, h.txn_id, True, h.txn_uid, h.rob_idx, h.in_order, txn)
                q.append(meta)
            else:
                if self._meta_full(self.write_meta):
                    return False
                txn = self._rebuild_txn(h, TxnOp.WRITE)
                meta = MetaBufferEntry(h.src, h.txn_id, False, h.txn_uid, h.rob_idx, h.in_order, txn)
                self.write_meta.append(meta)
            self._assembly[h.txn_uid] = meta
            self.memory.register_write(meta.txn, eligible)
            return True
        if h.channel is ChannelKind.W:
            meta = self._assembly.get(h.txn_uid)
            if meta is None:
                raise ProtocolError(f"W beat with no preceding AW (uid {h.txn_uid})")
            # Atomic data rides directly to its job; only bulk write beats
            # occupy (and can be backpressured by) the staging buffer.
            if meta.txn.op is not TxnOp.ATOMIC and not self.memory.can_accept_beat():
                return False
            self.memory.push_write_beat(meta.txn, h.beat_idx, cycle)
            if h.beat_idx == h.burst_len - 1:
                del self._assembly[h.txn_uid]
            return True
        raise ProtocolError(f"unexpected request channel {h.channel}")

    # -- memory response egress ---------------------------------------------

    def queue_response(
        self, txn: AxiTransaction, kind: ChannelKind, beat_idx: int, cycle: int
    ) -> None:
        """Called by the local endpoint as it produces each response beat."""
        if txn.op is TxnOp.ATOMIC:
            q = self.atomic_meta.get(int(txn.txn_id))
            if not q:
                raise UnknownResponse(f"atomic response with empty meta ({txn.uid})")
            meta = q[0]
            assert meta.uid == txn.uid
            if kind is ChannelKind.B:
                q.popleft()
                if not q:
                    del self.atomic_meta[int(txn.txn_id)]
        elif kind is ChannelKind.R:
            if not self.read_meta:
                raise UnknownResponse(f"read response with empty meta ({txn.uid})")
            meta = self.read_meta[0]
            assert meta.uid == txn.uid, "non-atomic responses must pop in FIFO order"
            if beat_idx == txn.burst_len - 1:
                self.read_meta.popleft()
        else:
            if not self.write_meta:
                raise UnknownResponse(f"write response with empty meta ({txn.uid})")
            meta = self.write_meta.popleft()
            assert meta.uid == txn.uid, "non-atomic responses must pop in FIFO order"
        route = self.make_route(self.node, meta.src)
        flit = _make_flit(
            txn,
            kind,
            src=self.node,
            dst=meta.src,
            beat_idx=beat_idx,
            payload=("r", txn.uid, beat_idx) if kind is ChannelKind.R else None,
            rob_idx=meta.rob_idx,
            in_order=meta.in_order,
            route=route,
        )
        if self.cfg.merge_req_rsp and flit.link is LinkClass.RSP:
            flit.link = LinkClass.REQ
        # The injection arbiter has already run this cycle, so a stamp of
        # cycle+1 is the 1-cycle crossing; each extra crossing cycle delays
        # injection one more.
        ready = cycle + self.cfg.ni_crossing_latency
        self.resp_q[flit.link].append((ready, flit))

    def resp_space(self, link: LinkClass, limit: int = 4) -> bool:
        if self.cfg.merge_req_rsp and link is LinkClass.RSP:
            link = LinkClass.REQ
        return len(self.resp_q[link]) < limit

    def injectable(self, link: LinkClass, cycle: int) -> Optional[Flit]:
        q = self.resp_q.get(link)
        if q and q[0][0] <= cycle:
            return q[0][1]
        return None

    def pop_injectable(self, link: LinkClass) -> Flit:
        return self.resp_q[link].popleft()[1]
