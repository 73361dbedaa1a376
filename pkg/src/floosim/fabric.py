"""Network construction: the X x Y tile mesh with three physical links per
direction per edge, per-row HBM channels on the west boundary, routing-table
generation, and the per-node endpoint glue (injection arbitration, ejection
dispatch, local memory, generators).

The three link classes instantiate three edge-disjoint isomorphic router
networks; flits only cross between classes inside a network interface.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional

from .endpoints import MemoryEndpoint, MemoryEndpointConfig
from .engine import Fifo
from .ni import NiConfig, SourceNi, TargetNi
from .protocol import (
    AxiTransaction,
    ChannelKind,
    Dir,
    LinkClass,
    NodeId,
    NodeKind,
    Width,
    is_wormhole,
)
from .router import (
    Router,
    RouterConfig,
    RoutingMode,
    arbitrate_rr,
    compute_route,
    route_to,
)

LINK_CLASSES = (LinkClass.REQ, LinkClass.RSP, LinkClass.WIDE)

_REQUEST_KINDS = (ChannelKind.AR, ChannelKind.AW, ChannelKind.W)

_OPPOSITE = {
    Dir.EAST: Dir.WEST,
    Dir.WEST: Dir.EAST,
    Dir.NORTH: Dir.SOUTH,
    Dir.SOUTH: Dir.NORTH,
}


class InvalidConfig(ValueError):
    pass


@dataclass
class MeshConfig:
    x_tiles: int = 8
    y_tiles: int = 4
    hbm_rows: bool = True
    routing: str = RoutingMode.XY

    def validate(self) -> None:
        if self.x_tiles < 1 or self.y_tiles < 1:
            raise InvalidConfig("mesh dimensions must be >= 1")
        if self.routing not in (RoutingMode.XY, RoutingMode.SOURCE, RoutingMode.TABLE):
            raise InvalidConfig(f"unknown routing mode {self.routing!r}")

    def tiles(self) -> list[NodeId]:
        return [NodeId(x, y) for y in range(self.y_tiles) for x in range(self.x_tiles)]

    def hbm_nodes(self) -> list[NodeId]:
        if not self.hbm_rows:
            return []
        return [NodeId(-1, y, NodeKind.HBM) for y in range(self.y_tiles)]


def gen_tables(cfg: MeshConfig) -> dict[NodeId, dict[NodeId, Dir]]:
    """Per-router routing tables covering every reachable destination; by
    construction the entries agree with dimension-ordered routing."""
    dests = cfg.tiles() + cfg.hbm_nodes()
    tables = {}
    for coord in cfg.tiles():
        tables[coord] = {
            dst: route_to(coord, dst, cfg.x_tiles, cfg.y_tiles) for dst in dests
        }
    return tables


class Endpoint:
    """Everything hanging off one attachment point: NIs for both width
    classes, the local memory, traffic generators, and the per-class
    injection/ejection plumbing.

    Tiles attach at their routers' LOCAL ports; boundary endpoints (HBM)
    attach at the mesh-edge port of their row's column-0 routers and carry no
    traffic sources of their own.
    """

    def __init__(
        self,
        node: NodeId,
        ni_cfg: NiConfig,
        mem_cfg: MemoryEndpointConfig,
        make_route: Callable[[NodeId, NodeId], Optional[tuple]],
        alloc_uid: Callable[[], int],
        ingress_depth: int = 2,
        with_source: bool = True,
    ):
        self.node = node
        self.ni_cfg = ni_cfg
        self.alloc_uid = alloc_uid
        self.ingress: dict[LinkClass, Fifo] = {
            cls: Fifo(ingress_depth) for cls in LINK_CLASSES
        }
        self.memory = MemoryEndpoint(mem_cfg, target_of=self._target_of)
        self.narrow_tgt = TargetNi(node, Width.NARROW, ni_cfg, self.memory, make_route)
        self.wide_tgt = TargetNi(node, Width.WIDE, ni_cfg, self.memory, make_route)
        self.source_nis: list[SourceNi] = []
        self.narrow_src: Optional[SourceNi] = None
        self.wide_src: Optional[SourceNi] = None
        if with_source:
            self.narrow_src = SourceNi(
                node, Width.NARROW, ni_cfg, self._on_retire, make_route
            )
            self.wide_src = SourceNi(
                node, Width.WIDE, ni_cfg, self._on_retire, make_route
            )
            self.source_nis = [self.narrow_src, self.wide_src]
        # Per-class injection arbitration between the NIs sharing a port.
        targets = [self.narrow_tgt, self.wide_tgt]
        if ni_cfg.merge_req_rsp:
            self._inj_sources = {
                LinkClass.REQ: list(self.source_nis) + targets,
                LinkClass.RSP: [],
                LinkClass.WIDE: ([self.wide_src] if self.wide_src else [])
                + [self.wide_tgt],
            }
        else:
            self._inj_sources = {
                LinkClass.REQ: list(self.source_nis),
                LinkClass.RSP: targets,
                LinkClass.WIDE: ([self.wide_src] if self.wide_src else [])
                + [self.wide_tgt],
            }
        self._inj_rr = {cls: -1 for cls in LINK_CLASSES}
        self._inj_lock: dict[LinkClass, Optional[tuple[int, int]]] = {
            cls: None for cls in LINK_CLASSES
        }
        self._inj_fifo: dict[LinkClass, Fifo] = {}
        self._inj_link_id: dict[LinkClass, tuple] = {}
        self.generators: list = []
        self._completion_cbs: dict[int, Callable] = {}
        self._sim = None

    # -- wiring --------------------------------------------------------------

    def connect_injection(self, cls: LinkClass, fifo: Fifo, link_id: tuple) -> None:
        self._inj_fifo[cls] = fifo
        self._inj_link_id[cls] = link_id

    def fifos(self) -> list[Fifo]:
        return list(self.ingress.values())

    def _target_of(self, txn: AxiTransaction) -> TargetNi:
        return self.wide_tgt if txn.width is Width.WIDE else self.narrow_tgt

    # -- traffic submission ----------------------------------------------------

    def submit_narrow(self, txn: AxiTransaction, done_cb=None) -> None:
        if done_cb is not None:
            self._completion_cbs[txn.uid] = done_cb
        self.narrow_src.submit(txn)

    def submit_wide(self, txn: AxiTransaction, done_cb=None) -> None:
        if done_cb is not None:
            self._completion_cbs[txn.uid] = done_cb
        self.wide_src.submit(txn)

    def _on_retire(self, txn: AxiTransaction, cycle: int) -> None:
        sim = self._sim
        if sim is not None:
            sim.mark_progress()
            if sim.collector is not None:
                sim.collector.record_completion(txn, cycle)
        cb = self._completion_cbs.pop(txn.uid, None)
        if cb is not None:
            cb(txn, cycle)

    # -- one cycle ---------------------------------------------------------------

    def step(self, cycle: int, sim) -> None:
        self._sim = sim
        for ni in self.source_nis:
            ni.step_admit(cycle)
        self._step_inject(cycle, sim)
        self._step_ingress(cycle)
        for ni in self.source_nis:
            ni.step_deliver(cycle)
        self.memory.step(cycle, sim)
        for gen in self.generators:
            gen.step(cycle)

    def _step_inject(self, cycle: int, sim) -> None:
        for cls, fifo in self._inj_fifo.items():
            sources = self._inj_sources[cls]
            if not sources or not fifo.can_accept():
                continue
            lock = self._inj_lock[cls]
            chosen = None
            if lock is not None:
                src_i, uid = lock
                flit = sources[src_i].injectable(cls, cycle)
                if flit is not None:
                    assert flit.header.txn_uid == uid
                    chosen = src_i
            else:
                offers = [
                    i
                    for i, s in enumerate(sources)
                    if s.injectable(cls, cycle) is not None
                ]
                if offers:
                    chosen = arbitrate_rr(offers, self._inj_rr[cls], len(sources))
                    self._inj_rr[cls] = chosen
            if chosen is None:
                continue
            flit = sources[chosen].pop_injectable(cls)
            fifo.push(flit)
            sim.on_link_transfer(self._inj_link_id[cls], flit)
            if is_wormhole(flit):
                self._inj_lock[cls] = (
                    None if flit.header.last else (chosen, flit.header.txn_uid)
                )

    def _step_ingress(self, cycle: int) -> None:
        for fifo in self.ingress.values():
            if not fifo.items:
                continue
            flit = fifo.items[0]
            h = flit.header
            if h.channel in _REQUEST_KINDS:
                tgt = self.wide_tgt if h.width is Width.WIDE else self.narrow_tgt
                if not tgt.accept_request_flit(flit, cycle):
                    continue  # backpressure: leave the head in place
            else:
                src = self.wide_src if h.width is Width.WIDE else self.narrow_src
                if src is None:
                    raise RuntimeError(f"response at source-less endpoint {self.node}")
                src.handle_response(flit, cycle)
            fifo.pop()

    # -- accounting ----------------------------------------------------------------

    def outstanding(self) -> int:
        return sum(ni.outstanding for ni in self.source_nis)

    def generators_done(self) -> bool:
        return all(g.done() for g in self.generators)

    def describe_blocked(self) -> list[str]:
        out = []
        for ni in self.source_nis:
            if ni.pending():
                out.append(
                    f"{self.node} {ni.width.value}: outstanding={ni.outstanding} "
                    f"read_q={len(ni.read_q)} write_q={len(ni.write_q)}"
                )
        return out


class Network:
    """A built mesh: routers per link class, endpoints, and the registries
    the engine and metrics need."""

    def __init__(self, mesh: MeshConfig):
        self.mesh = mesh
        self.routers: dict[tuple[NodeId, LinkClass], Router] = {}
        self.endpoints: dict[NodeId, Endpoint] = {}
        self.step_components: list = []
        self.all_fifos: list[Fifo] = []
        self._uid = itertools.count()

    def alloc_uid(self) -> int:
        return next(self._uid)

    def tile(self, x: int, y: int) -> Endpoint:
        return self.endpoints[NodeId(x, y)]

    def hbm(self, row: int) -> Endpoint:
        return self.endpoints[NodeId(-1, row, NodeKind.HBM)]

    def outstanding(self) -> int:
        return sum(ep.outstanding() for ep in self.endpoints.values())

    def generators_done(self) -> bool:
        return all(ep.generators_done() for ep in self.endpoints.values())

    def blocked_snapshot(self) -> list[str]:
        out = []
        for ep in self.endpoints.values():
            out.extend(ep.describe_blocked())
        for (coord, cls), r in self.routers.items():
            occ = r.occupancy()
            if occ:
                out.append(f"router {coord}/{cls.value}: {occ} flits buffered")
        return out

    def dump(self) -> str:
        lines = [f"mesh {self.mesh.x_tiles}x{self.mesh.y_tiles}"]
        for (coord, cls), r in sorted(
            self.routers.items(),
            key=lambda kv: (kv[0][0].y, kv[0][0].x, kv[0][1].value),
        ):
            sinks = []
            for p in range(r.cfg.num_ports):
                if r.out_sink[p] is not None:
                    sinks.append(f"{Dir(p)}->{r.out_link_id[p][1]}")
                else:
                    sinks.append(f"{Dir(p)}->tied")
            lines.append(f"router {coord} {cls.value}: {' '.join(sinks)}")
            if r.table is not None:
                for dst, port in sorted(r.table.items(), key=lambda kv: str(kv[0])):
                    lines.append(f"  {dst} -> {Dir(port)}")
        for node in sorted(self.endpoints, key=str):
            lines.append(f"endpoint {node}")
        return "\n".join(lines)


def build_mesh(
    mesh: MeshConfig,
    router_cfg: Optional[RouterConfig] = None,
    ni_cfg: Optional[NiConfig] = None,
    spm_cfg: Optional[MemoryEndpointConfig] = None,
    hbm_cfg: Optional[MemoryEndpointConfig] = None,
) -> Network:
    """Instantiate routers, endpoints, and wiring for a mesh with per-row HBM
    channels; boundary ports without an attachment are tied off."""
    mesh.validate()
    router_cfg = router_cfg or RouterConfig()
    router_cfg.routing = mesh.routing
    ni_cfg = ni_cfg or NiConfig()
    ni_cfg.validate()
    spm_cfg = spm_cfg or MemoryEndpointConfig()
    hbm_cfg = hbm_cfg or MemoryEndpointConfig.hbm()
    net = Network(mesh)
    X, Y = mesh.x_tiles, mesh.y_tiles

    if mesh.routing == RoutingMode.SOURCE:
        def make_route(a: NodeId, b: NodeId):
            return compute_route(a, b, X, Y)
    else:
        def make_route(a: NodeId, b: NodeId):
            return None

    tables = gen_tables(mesh) if mesh.routing == RoutingMode.TABLE else None

    for coord in mesh.tiles():
        for cls in LINK_CLASSES:
            table = tables[coord] if tables is not None else None
            net.routers[(coord, cls)] = Router(coord, cls, router_cfg, X, Y, table)

    for coord in mesh.tiles():
        ep = Endpoint(coord, ni_cfg, spm_cfg, make_route, net.alloc_uid)
        net.endpoints[coord] = ep
        ni_name = f"ni_{coord.x}_{coord.y}"
        for cls in LINK_CLASSES:
            router = net.routers[(coord, cls)]
            router.connect(
                Dir.LOCAL,
                ep.ingress[cls],
                (str(coord), ni_name, cls.value, "ej"),
                False,
            )
            ep.connect_injection(
                cls,
                router.in_bufs[Dir.LOCAL],
                (ni_name, str(coord), cls.value, "inj"),
            )

    # Tile-to-tile links (every inter-tile edge carries all classes, both ways)
    for coord in mesh.tiles():
        for d, (dx, dy) in (
            (Dir.EAST, (1, 0)),
            (Dir.WEST, (-1, 0)),
            (Dir.NORTH, (0, 1)),
            (Dir.SOUTH, (0, -1)),
        ):
            nbr = NodeId(coord.x + dx, coord.y + dy)
            if not (0 <= nbr.x < X and 0 <= nbr.y < Y):
                continue
            for cls in LINK_CLASSES:
                net.routers[(coord, cls)].connect(
                    d,
                    net.routers[(nbr, cls)].in_bufs[_OPPOSITE[d]],
                    (str(coord), str(nbr), cls.value, str(d)),
                    True,
                )

    # HBM channels on the west edge, one per row
    for hnode in mesh.hbm_nodes():
        attach = NodeId(0, hnode.y)
        ep = Endpoint(
            hnode, ni_cfg, hbm_cfg, make_route, net.alloc_uid, with_source=False
        )
        net.endpoints[hnode] = ep
        for cls in LINK_CLASSES:
            router = net.routers[(attach, cls)]
            router.connect(
                Dir.WEST,
                ep.ingress[cls],
                (str(attach), str(hnode), cls.value, "ej"),
                False,
            )
            ep.connect_injection(
                cls,
                router.in_bufs[Dir.WEST],
                (str(hnode), str(attach), cls.value, "inj"),
            )

    for key in sorted(net.routers, key=lambda k: (k[0].y, k[0].x, k[1].value)):
        r = net.routers[key]
        net.step_components.append(r)
        net.all_fifos.extend(r.fifos())
    for node in sorted(net.endpoints, key=str):
        ep = net.endpoints[node]
        net.step_components.append(ep)
        net.all_fifos.extend(ep.fifos())
    return net
