"""Multi-link mesh router: per-port buffers, round-robin switch arbitration,
wormhole output locking, and the three static routing algorithms.

Each physical link class gets its own router instance, so the three networks
are completely isolated.  A flit spends one cycle on switch traversal (input
buffer to output buffer) and one on the link (output buffer to the neighbor's
input buffer): two cycles per hop at zero load, one flit per cycle per port
sustained.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .engine import Fifo
from .protocol import Dir, Flit, LinkClass, NodeId, NodeKind, is_wormhole


class RoutingError(Exception):
    pass


class UnroutableDestination(RoutingError):
    pass


class EmptyRoute(RoutingError):
    pass


class RoutingMode:
    XY = "xy"
    SOURCE = "source"
    TABLE = "table"


RoutingTable = dict  # NodeId -> Dir


@dataclass
class RouterConfig:
    num_ports: int = 5
    in_buf_depth: int = 2
    out_buf_depth: int = 2
    routing: str = RoutingMode.XY
    disable_loopback: bool = True
    xy_turn_pruning: bool = True


def route_xy(here: NodeId, dst: NodeId) -> Dir:
    """Dimension-ordered routing: resolve X fully before Y."""
    if dst.x != here.x:
        return Dir.EAST if dst.x > here.x else Dir.WEST
    if dst.y != here.y:
        return Dir.NORTH if dst.y > here.y else Dir.SOUTH
    return Dir.LOCAL


def boundary_attach(dst: NodeId, x_tiles: int, y_tiles: int) -> tuple[NodeId, Dir]:
    """Mesh tile a boundary endpoint hangs off, and the ejecting port."""
    if dst.x < 0:
        return NodeId(0, dst.y), Dir.WEST
    if dst.x >= x_tiles:
        return NodeId(x_tiles - 1, dst.y), Dir.EAST
    if dst.y < 0:
        return NodeId(dst.x, 0), Dir.SOUTH
    if dst.y >= y_tiles:
        return NodeId(dst.x, y_tiles - 1), Dir.NORTH
    raise UnroutableDestination(f"{dst} is not a boundary endpoint")


def route_to(here: NodeId, dst: NodeId, x_tiles: int, y_tiles: int) -> Dir:
    """XY decision extended to boundary endpoints.

    Boundary traffic routes to the attachment tile first, then ejects through
    the boundary port; the ejection is a sink link, so the extra turn cannot
    close a dependency cycle.
    """
    if dst.kind is NodeKind.TILE:
        return route_xy(here, dst)
    attach, port = boundary_attach(dst, x_tiles, y_tiles)
    if here == attach:
        return port
    return route_xy(here, attach)


def route_table(dst: NodeId, table: RoutingTable) -> Dir:
    try:
        return table[dst]
    except KeyError:
        raise UnroutableDestination(str(dst)) from None


def peek_route(flit: Flit) -> Dir:
    h = flit.header
    if h.route is None or h.route_pos >= len(h.route):
        raise EmptyRoute(f"flit {h.txn_uid} has no route steps left")
    return h.route[h.route_pos]


def route_source(flit: Flit) -> tuple[Dir, Flit]:
    """Consume the head step of a source-routed flit."""
    d = peek_route(flit)
    flit.header.route_pos += 1
    return d, flit


def compute_route(
    src: NodeId, dst: NodeId, x_tiles: int, y_tiles: int
) -> tuple[Dir, ...]:
    """Full XY step list from the source router to ejection at dst."""
    steps: list[Dir] = []
    here = src
    if src.kind is not NodeKind.TILE:
        here = boundary_attach(src, x_tiles, y_tiles)[0]
    while True:
        d = route_to(here, dst, x_tiles, y_tiles)
        steps.append(d)
        if d is Dir.LOCAL:
            return tuple(steps)
        if dst.kind is not NodeKind.TILE:
            attach, port = boundary_attach(dst, x_tiles, y_tiles)
            if here == attach and d is port:
                # ejection off the mesh edge terminates the route
                return tuple(steps)
        here = _neighbor(here, d)


def _neighbor(n: NodeId, d: Dir) -> NodeId:
    if d is Dir.NORTH:
        return NodeId(n.x, n.y + 1)
    if d is Dir.SOUTH:
        return NodeId(n.x, n.y - 1)
    if d is Dir.EAST:
        return NodeId(n.x + 1, n.y)
    if d is Dir.WEST:
        return NodeId(n.x - 1, n.y)
    return n


def arbitrate_rr(requests: Sequence[int], rr_pointer: int, num_ports: int) -> int:
    """Grant the first requesting input strictly after the pointer, cyclically."""
    assert requests
    req = set(requests)
    for off in range(1, num_ports + 1):
        cand = (rr_pointer + off) % num_ports
        if cand in req:
            return cand
    raise AssertionError("unreachable")


class Router:
    """One link class's 5x5 (by default) router at a mesh coordinate."""

    __slots__ = (
        "coord",
        "link_class",
        "cfg",
        "x_tiles",
        "y_tiles",
        "in_bufs",
        "out_bufs",
        "rr_ptr",
        "locks",
        "out_sink",
        "out_is_router",
        "out_link_id",
        "table",
        "grant_counts",
        "trace",
    )

    def __init__(
        self,
        coord: NodeId,
        link_class: LinkClass,
        cfg: RouterConfig,
        x_tiles: int = 1,
        y_tiles: int = 1,
        table: Optional[RoutingTable] = None,
    ):
        n = cfg.num_ports
        self.coord = coord
        self.link_class = link_class
        self.cfg = cfg
        self.x_tiles = x_tiles
        self.y_tiles = y_tiles
        self.in_bufs = [Fifo(cfg.in_buf_depth) for _ in range(n)]
        self.out_bufs = [Fifo(cfg.out_buf_depth) for _ in range(n)]
        self.rr_ptr = [n - 1] * n
        self.locks: list[Optional[tuple[int, int]]] = [None] * n  # (input, bundle uid)
        self.out_sink: list[Optional[Fifo]] = [None] * n
        self.out_is_router = [False] * n
        self.out_link_id: list = [None] * n
        self.table = table
        self.grant_counts: dict[tuple[int, int], int] = {}
        self.trace = None  # optional callable(cycle, router, in_port, out_port, flit)

    # -- wiring ------------------------------------------------------------

    def connect(self, port: Dir, sink: Fifo, link_id, is_router: bool) -> None:
        self.out_sink[port] = sink
        self.out_link_id[port] = link_id
        self.out_is_router[port] = is_router

    def fifos(self) -> list[Fifo]:
        return self.in_bufs + self.out_bufs

    # -- routing -----------------------------------------------------------

    def route_port(self, flit: Flit) -> Dir:
        mode = self.cfg.routing
        if mode == RoutingMode.SOURCE:
            return peek_route(flit)
        if mode == RoutingMode.TABLE:
            return route_table(flit.header.dst, self.table)
        return route_to(self.coord, flit.header.dst, self.x_tiles, self.y_tiles)

    # -- one cycle ---------------------------------------------------------

    def step(self, cycle: int, sim) -> None:
        # Link stage: drain output buffers into the attached sinks.
        for p, buf in enumerate(self.out_bufs):
            if buf.items:
                sink = self.out_sink[p]
                if sink is not None and sink.can_accept():
                    flit = buf.pop()
                    sink.push(flit)
                    sim.on_link_transfer(self.out_link_id[p], flit)

        # Switch stage: gather requests per output from committed input heads.
        requests: dict[int, list[int]] = {}
        any_input = False
        for i, buf in enumerate(self.in_bufs):
            if buf.items:
                any_input = True
                flit = buf.items[0]
                o = int(self.route_port(flit))
                if self.cfg.disable_loopback and o == i:
                    continue
                if (
                    self.cfg.xy_turn_pruning
                    and i in (Dir.NORTH, Dir.SOUTH)
                    and o in (Dir.EAST, Dir.WEST)
                    and self.out_is_router[o]
                ):
                    raise RoutingError(
                        f"prohibited Y->X turn at {self.coord} ({Dir(i)}->{Dir(o)})"
                    )
                requests.setdefault(o, []).append(i)
        if not any_input:
            return

        for o, inputs in requests.items():
            out_buf = self.out_bufs[o]
            if not out_buf.can_accept():
                continue
            lock = self.locks[o]
            if lock is not None:
                grant, bundle_uid = lock
                if grant not in inputs:
                    continue  # locked bundle's next flit not at the head yet
            else:
                grant = arbitrate_rr(inputs, self.rr_ptr[o], self.cfg.num_ports)
                self.rr_ptr[o] = grant
            flit = self.in_bufs[grant].pop()
            if lock is not None:
                assert flit.header.txn_uid == lock[1], "foreign flit under wormhole lock"
            if self.cfg.routing == RoutingMode.SOURCE:
                route_source(flit)
            out_buf.push(flit)
            if is_wormhole(flit):
                self.locks[o] = None if flit.header.last else (grant, flit.header.txn_uid)
            key = (o, grant)
            self.grant_counts[key] = self.grant_counts.get(key, 0) + 1
            if self.trace is not None:
                self.trace(cycle, self, grant, o, flit)

    def occupancy(self) -> int:
        return sum(len(b.items) for b in self.in_bufs) + sum(
            len(b.items) for b in self.out_bufs
        )
