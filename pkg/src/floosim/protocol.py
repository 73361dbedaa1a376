"""Transport-level transaction model, flit classes, and the AXI-channel-to-link mapping.

The network moves fixed-width flits over three physical link classes per edge
direction.  Narrow requests/responses and wide read requests ride the two narrow
links (req/rsp); wide write address+data and wide read data ride the wide link.
Headers are carried on parallel lines, so every flit is a single-cycle transfer
on its link; only the total bit budget per link class is modeled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, Optional


class Dir(IntEnum):
    """Router port directions; LOCAL is the endpoint port."""

    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3
    LOCAL = 4

    def __str__(self) -> str:
        return "NESWL"[self.value]


class NodeKind(Enum):
    TILE = "tile"
    HBM = "hbm"
    C2C = "c2c"
    PERIPHERAL = "periph"


@dataclass(frozen=True, slots=True)
class NodeId:
    """Mesh coordinate of a tile or boundary attachment.

    Boundary endpoints carry exactly one out-of-range coordinate (e.g. HBM
    channels sit at x = -1 of their row), which keeps the encoding injective
    without a separate address space.
    """

    x: int
    y: int
    kind: NodeKind = NodeKind.TILE

    def name(self) -> str:
        if self.kind is NodeKind.TILE:
            return f"tile_{self.x}_{self.y}"
        if self.kind is NodeKind.HBM:
            return f"hbm_{self.y}"
        return f"{self.kind.value}_{self.x}_{self.y}"

    def __str__(self) -> str:
        return self.name()


def manhattan(a: NodeId, b: NodeId) -> int:
    return abs(a.x - b.x) + abs(a.y - b.y)


class ChannelKind(IntEnum):
    AR = 0
    AW = 1
    W = 2
    R = 3
    B = 4


class Width(Enum):
    NARROW = "narrow"
    WIDE = "wide"


@dataclass(frozen=True, slots=True)
class AxiChannel:
    kind: ChannelKind
    width: Width


class LinkClass(Enum):
    REQ = "req"
    RSP = "rsp"
    WIDE = "wide"


#: Total serialized flit width per physical link class (header lines + payload).
DEFAULT_FLIT_BITS = {LinkClass.REQ: 119, LinkClass.RSP: 103, LinkClass.WIDE: 603}

NARROW_BEAT_BYTES = 8
WIDE_BEAT_BYTES = 64
MAX_BURST_BYTES = 4096
ADDR_BITS = 48
BRESP_BITS = 2

# Physical link carrying each (channel, width) pair.  Narrow address/data and
# wide read requests share the two narrow links; only bulk data (wide AW/W/R)
# occupies the wide link, keeping it free for high-bandwidth traffic.
CHANNEL_LINK_TABLE: dict[tuple[ChannelKind, Width], LinkClass] = {
    (ChannelKind.AR, Width.NARROW): LinkClass.REQ,
    (ChannelKind.AW, Width.NARROW): LinkClass.REQ,
    (ChannelKind.W, Width.NARROW): LinkClass.REQ,
    (ChannelKind.R, Width.NARROW): LinkClass.RSP,
    (ChannelKind.B, Width.NARROW): LinkClass.RSP,
    (ChannelKind.AR, Width.WIDE): LinkClass.REQ,
    (ChannelKind.AW, Width.WIDE): LinkClass.WIDE,
    (ChannelKind.W, Width.WIDE): LinkClass.WIDE,
    (ChannelKind.R, Width.WIDE): LinkClass.WIDE,
    (ChannelKind.B, Width.WIDE): LinkClass.RSP,
}


class ProtocolError(Exception):
    """A transaction or flit violated a protocol invariant; aborts the run."""


class BurstTooLong(ProtocolError):
    """Burst exceeds the 4 KiB limit."""


@dataclass(frozen=True, slots=True)
class TxnId:
    value: int
    width_bits: int = 8

    def __post_init__(self) -> None:
        if not 0 <= self.value < (1 << self.width_bits):
            raise ProtocolError(
                f"TxnId {self.value} does not fit in {self.width_bits} bits"
            )

    def __int__(self) -> int:
        return self.value


class TxnOp(Enum):
    READ = "read"
    WRITE = "write"
    ATOMIC = "atomic"


@dataclass(slots=True)
class AxiTransaction:
    """A read, write, or atomic burst as issued on one AXI interface.

    ``uid`` is a simulator-global sequence number used to tie flits, memory
    responses, and metrics back to the transaction; it is not an AXI field.
    """

    txn_id: TxnId
    op: TxnOp
    src: NodeId
    dst: NodeId
    burst_len: int
    beat_bytes: int
    issue_cycle: int = 0
    uid: int = 0
    tag: str = ""

    def __post_init__(self) -> None:
        if self.burst_len < 1:
            raise ProtocolError("burst_len must be >= 1")
        if self.burst_len * self.beat_bytes > MAX_BURST_BYTES:
            raise BurstTooLong(
                f"{self.burst_len} x {self.beat_bytes} B exceeds {MAX_BURST_BYTES} B"
            )
        if self.op is TxnOp.ATOMIC and self.burst_len != 1:
            raise ProtocolError("atomic transactions are single-beat")

    @property
    def width(self) -> Width:
        return Width.WIDE if self.beat_bytes == WIDE_BEAT_BYTES else Width.NARROW

    @property
    def total_bytes(self) -> int:
        return self.burst_len * self.beat_bytes


@dataclass(slots=True)
class AxiBeat:
    channel: AxiChannel
    beat_idx: int = 0
    payload: object = None


@dataclass(slots=True)
class FlitHeader:
    src: NodeId
    dst: NodeId
    channel: ChannelKind
    width: Width
    last: bool = True
    atop: bool = False
    rob_idx: Optional[int] = None
    in_order: bool = False
    route: Optional[tuple[Dir, ...]] = None
    route_pos: int = 0
    txn_uid: int = 0
    txn_id: int = 0
    beat_idx: int = 0
    burst_len: int = 1


@dataclass(slots=True)
class Flit:
    header: FlitHeader
    payload_bits: int
    payload: object = None
    link: LinkClass = LinkClass.REQ

    def serialized_bits(self, overrides: Optional[dict] = None) -> int:
        """Total width on the wire: header lines plus payload fill the link's
        whole bit budget (header sub-fields are not itemized)."""
        return flit_size(self.link, overrides)


def map_beat_to_link(beat: AxiBeat) -> LinkClass:
    """Physical link carrying a beat; total over all ten (kind, width) pairs."""
    return CHANNEL_LINK_TABLE[(beat.channel.kind, beat.channel.width)]


def link_for(kind: ChannelKind, width: Width) -> LinkClass:
    return CHANNEL_LINK_TABLE[(kind, width)]


def flit_size(link: LinkClass, overrides: Optional[dict[LinkClass, int]] = None) -> int:
    """Configured total flit width in bits for a link class."""
    if overrides and link in overrides:
        return overrides[link]
    return DEFAULT_FLIT_BITS[link]


def is_wormhole(flit: Flit) -> bool:
    """Whether the flit is part of a wide AW+W bundle.

    Only wide write bundles use wormhole routing; every other packet fits a
    single flit (wide R beats are independent single-flit packets, reordered
    at the endpoints by TxnID).
    """
    h = flit.header
    return h.width is Width.WIDE and h.channel in (ChannelKind.AW, ChannelKind.W)


def _payload_bits(kind: ChannelKind, beat_bytes: int) -> int:
    if kind in (ChannelKind.W, ChannelKind.R):
        return beat_bytes * 8
    if kind is ChannelKind.B:
        return BRESP_BITS
    return ADDR_BITS


def _make_flit(
    txn: AxiTransaction,
    kind: ChannelKind,
    *,
    src: NodeId,
    dst: NodeId,
    last: bool = True,
    beat_idx: int = 0,
    payload: object = None,
    rob_idx: Optional[int] = None,
    in_order: bool = False,
    route: Optional[tuple[Dir, ...]] = None,
) -> Flit:
    width = txn.width
    header = FlitHeader(
        src=src,
        dst=dst,
        channel=kind,
        width=width,
        last=last,
        atop=txn.op is TxnOp.ATOMIC,
        rob_idx=rob_idx,
        in_order=in_order,
        route=route,
        txn_uid=txn.uid,
        txn_id=int(txn.txn_id),
        beat_idx=beat_idx,
        burst_len=txn.burst_len,
    )
    return Flit(
        header=header,
        payload_bits=_payload_bits(kind, txn.beat_bytes),
        payload=payload,
        link=link_for(kind, width),
    )


def request_flits(
    txn: AxiTransaction,
    rob_idx: Optional[int] = None,
    in_order: bool = False,
    route: Optional[tuple[Dir, ...]] = None,
) -> list[Flit]:
    """Flits injected at the source for one transaction.

    Reads emit a lone AR.  Writes (and atomics, which travel like single-beat
    writes) emit AW followed by the W beats; wide write bundles are wormhole
    packets with last=True only on the final W.
    """
    if txn.total_bytes > MAX_BURST_BYTES:
        raise BurstTooLong(f"{txn.total_bytes} B burst exceeds {MAX_BURST_BYTES} B")
    kw = dict(src=txn.src, dst=txn.dst, rob_idx=rob_idx, in_order=in_order, route=route)
    if txn.op is TxnOp.READ:
        return [_make_flit(txn, ChannelKind.AR, **kw)]
    bundled = txn.width is Width.WIDE
    flits = [_make_flit(txn, ChannelKind.AW, last=not bundled, **kw)]
    for i in range(txn.burst_len):
        is_final = i == txn.burst_len - 1
        flits.append(
            _make_flit(
                txn,
                ChannelKind.W,
                last=(not bundled) or is_final,
                beat_idx=i,
                payload=("w", txn.uid, i),
                **kw,
            )
        )
    return flits


def response_flits(
    txn: AxiTransaction,
    rob_idx: Optional[int] = None,
    in_order: bool = False,
    route: Optional[tuple[Dir, ...]] = None,
) -> list[Flit]:
    """Flits injected at the target once the local endpoint has responded.

    Response direction is reversed (dst = requester).  Read data beats are
    independent single-flit packets; atomics return both an R and a B.
    """
    kw = dict(src=txn.dst, dst=txn.src, rob_idx=rob_idx, in_order=in_order, route=route)
    flits: list[Flit] = []
    if txn.op in (TxnOp.READ, TxnOp.ATOMIC):
        for i in range(txn.burst_len):
            flits.append(
                _make_flit(
                    txn, ChannelKind.R, beat_idx=i, payload=("r", txn.uid, i), **kw
                )
            )
    if txn.op in (TxnOp.WRITE, TxnOp.ATOMIC):
        flits.append(_make_flit(txn, ChannelKind.B, **kw))
    return flits


def packetize(txn: AxiTransaction) -> list[Flit]:
    """All flits a transaction produces end to end: request flits, then the
    response flits generated at the target."""
    return request_flits(txn) + response_flits(txn)


@dataclass(slots=True)
class DepacketizedTxn:
    op: TxnOp
    src: NodeId
    dst: NodeId
    txn_id: int
    txn_uid: int
    burst_len: int
    w_payloads: list = field(default_factory=list)
    r_payloads: list = field(default_factory=list)


def depacketize(flits: Iterable[Flit]) -> DepacketizedTxn:
    """Reconstruct one transaction's beats, in order, from its flit sequence."""
    flits = list(flits)
    if not flits:
        raise ProtocolError("empty flit sequence")
    first = flits[0].header
    kinds = {f.header.channel for f in flits}
    if ChannelKind.AW in kinds:
        op = TxnOp.ATOMIC if first.atop else TxnOp.WRITE
    elif kinds <= {ChannelKind.R}:
        op = TxnOp.READ
    else:
        op = TxnOp.READ
    out = DepacketizedTxn(
        op=op,
        src=first.src,
        dst=first.dst,
        txn_id=first.txn_id,
        txn_uid=first.txn_uid,
        burst_len=first.burst_len,
    )
    for f in flits:
        h = f.header
        if h.txn_uid != first.txn_uid:
            raise ProtocolError("flit sequence mixes transactions")
        if h.channel is ChannelKind.W:
            out.w_payloads.append(f.payload)
        elif h.channel is ChannelKind.R:
            out.r_payloads.append(f.payload)
    return out
