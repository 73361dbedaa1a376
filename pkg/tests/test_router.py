import itertools

import pytest

from floosim.engine import Fifo
from floosim.protocol import (
    AxiTransaction,
    Dir,
    LinkClass,
    NodeId,
    NodeKind,
    TxnId,
    TxnOp,
    request_flits,
    response_flits,
)
from floosim.router import (
    EmptyRoute,
    Router,
    RouterConfig,
    UnroutableDestination,
    arbitrate_rr,
    boundary_attach,
    compute_route,
    peek_route,
    route_source,
    route_table,
    route_to,
    route_xy,
)


class StubSim:
    def __init__(self):
        self.cycle = 0
        self.transfers = []

    def on_link_transfer(self, link_id, flit):
        self.transfers.append((self.cycle, link_id, flit))

    def mark_progress(self):
        pass


class Harness:
    def __init__(self, routers, extra_fifos=()):
        self.routers = routers
        self.sim = StubSim()
        self.fifos = list(extra_fifos)
        for r in routers:
            self.fifos.extend(r.fifos())

    def run(self, cycles, before=None):
        for _ in range(cycles):
            if before is not None:
                before(self.sim.cycle)
            for r in self.routers:
                r.step(self.sim.cycle, self.sim)
            for f in self.fifos:
                f.commit()
            self.sim.cycle += 1


def narrow_read_flit(src, dst, uid=0):
    txn = AxiTransaction(
        txn_id=TxnId(0), op=TxnOp.READ, src=src, dst=dst,
        burst_len=1, beat_bytes=8, uid=uid,
    )
    return request_flits(txn)[0]


def wide_bundle(src, dst, beats, uid=0):
    txn = AxiTransaction(
        txn_id=TxnId(0), op=TxnOp.WRITE, src=src, dst=dst,
        burst_len=beats, beat_bytes=64, uid=uid,
    )
    return request_flits(txn)


def wide_r_flit(src, dst, uid=0):
    txn = AxiTransaction(
        txn_id=TxnId(1), op=TxnOp.READ, src=dst, dst=src,
        burst_len=1, beat_bytes=64, uid=uid,
    )
    return response_flits(txn)[0]


# ---------------------------------------------------------------------------
# routing decisions
# ---------------------------------------------------------------------------


def test_route_xy_examples():
    assert route_xy(NodeId(0, 0), NodeId(3, 0)) is Dir.EAST
    assert route_xy(NodeId(2, 1), NodeId(2, 3)) is Dir.NORTH
    assert route_xy(NodeId(0, 0), NodeId(2, 2)) is Dir.EAST  # X before Y
    assert route_xy(NodeId(2, 2), NodeId(2, 2)) is Dir.LOCAL


def test_route_table_from_xy():
    here = NodeId(0, 0)
    table = {
        dst: route_xy(here, dst) for dst in
        (NodeId(x, y) for x in range(8) for y in range(4))
    }
    assert route_table(NodeId(7, 3), table) is Dir.EAST
    assert route_table(here, table) is Dir.LOCAL
    with pytest.raises(UnroutableDestination):
        route_table(NodeId(9, 9), table)


def test_route_source_advances():
    flit = narrow_read_flit(NodeId(0, 0), NodeId(2, 1))
    flit.header.route = (Dir.EAST, Dir.EAST, Dir.NORTH, Dir.LOCAL)
    d, same = route_source(flit)
    assert d is Dir.EAST and same is flit
    assert peek_route(flit) is Dir.EAST
    for expect in (Dir.EAST, Dir.NORTH, Dir.LOCAL):
        assert route_source(flit)[0] is expect
    with pytest.raises(EmptyRoute):
        peek_route(flit)


def test_compute_route_matches_stepwise_xy():
    # oracle: apply route_xy step by step
    src, dst = NodeId(0, 0), NodeId(2, 1)
    assert compute_route(src, dst, 8, 4) == (Dir.EAST, Dir.EAST, Dir.NORTH, Dir.LOCAL)
    # generic equivalence on an 8x4 mesh
    for sx, sy, dx, dy in [(0, 0, 7, 3), (3, 2, 1, 0), (5, 1, 5, 3)]:
        here, target = NodeId(sx, sy), NodeId(dx, dy)
        route = compute_route(here, target, 8, 4)
        cur = here
        for step in route[:-1]:
            assert step is route_xy(cur, target)
            cur = {
                Dir.EAST: NodeId(cur.x + 1, cur.y),
                Dir.WEST: NodeId(cur.x - 1, cur.y),
                Dir.NORTH: NodeId(cur.x, cur.y + 1),
                Dir.SOUTH: NodeId(cur.x, cur.y - 1),
            }[step]
        assert route[-1] is Dir.LOCAL and cur == target


def test_hbm_routing_west_chain():
    hbm = NodeId(-1, 1, NodeKind.HBM)
    # same-row tiles route straight west
    for x in range(1, 8):
        assert route_to(NodeId(x, 1), hbm, 8, 4) is Dir.WEST
    # at the attachment tile the West port ejects
    assert route_to(NodeId(0, 1), hbm, 8, 4) is Dir.WEST
    # off-row traffic reaches the attachment tile first
    assert route_to(NodeId(0, 3), hbm, 8, 4) is Dir.SOUTH
    attach, port = boundary_attach(hbm, 8, 4)
    assert attach == NodeId(0, 1) and port is Dir.WEST


def test_arbitrate_rr_examples():
    assert arbitrate_rr([0, 2], 0, 5) == 2
    assert arbitrate_rr([0, 2], 2, 5) == 0
    assert arbitrate_rr([3], 3, 5) == 3  # sole requester re-granted


def test_arbitrate_rr_fairness_counting():
    # oracle: counting simulation, 5 persistent requesters
    counts = {i: 0 for i in range(5)}
    ptr = 4
    for _ in range(5000):
        g = arbitrate_rr(range(5), ptr, 5)
        ptr = g
        counts[g] += 1
    assert all(c == 1000 for c in counts.values())


# ---------------------------------------------------------------------------
# router cycle behavior
# ---------------------------------------------------------------------------


def two_router_line():
    cfg = RouterConfig()
    a = Router(NodeId(0, 0), LinkClass.REQ, cfg, 2, 1)
    b = Router(NodeId(1, 0), LinkClass.REQ, cfg, 2, 1)
    sink = Fifo(64)
    a.connect(Dir.EAST, b.in_bufs[Dir.WEST], ("a", "b", "req", "E"), True)
    b.connect(Dir.LOCAL, sink, ("b", "ni", "req", "ej"), False)
    return a, b, sink


def test_two_cycle_hop_zero_load():
    a, b, sink = two_router_line()
    h = Harness([a, b], [sink])
    flit = narrow_read_flit(NodeId(0, 0), NodeId(1, 0))
    a.in_bufs[Dir.LOCAL].push(flit)
    a.in_bufs[Dir.LOCAL].commit()  # present at end of cycle 0

    arrivals = {}

    def watch(cycle):
        for name, fifo in (("b_in", b.in_bufs[Dir.WEST]), ("sink", sink)):
            if fifo.items and name not in arrivals:
                arrivals[name] = cycle

    h.run(8, before=watch)
    # flit visible at A's input from cycle 0; input-to-next-input is exactly
    # 2 cycles, and ejection costs the second router's 2 cycles as well
    assert arrivals["b_in"] == 2
    assert arrivals["sink"] == 4
    assert sink.items[0] is flit


def test_uncontended_output_sustains_one_flit_per_cycle():
    a, b, sink = two_router_line()
    h = Harness([a, b], [sink])
    supply = itertools.count()

    def feed(cycle):
        if a.in_bufs[Dir.LOCAL].can_accept():
            a.in_bufs[Dir.LOCAL].push(
                narrow_read_flit(NodeId(0, 0), NodeId(1, 0), uid=next(supply))
            )
        if sink.items:
            sink.pop()

    h.run(50, before=feed)
    ejected = len([t for t in h.sim.transfers if t[1][3] == "ej"])
    # after a short fill, one flit per cycle at the output
    assert ejected >= 44


def test_two_inputs_alternate_one_per_cycle():
    cfg = RouterConfig()
    r = Router(NodeId(0, 0), LinkClass.REQ, cfg, 3, 1)
    sink = Fifo(256)
    r.connect(Dir.EAST, sink, ("r", "sink", "req", "E"), False)
    h = Harness([r], [sink])
    uids = itertools.count()

    def feed(cycle):
        for port in (Dir.WEST, Dir.LOCAL):
            if r.in_bufs[port].can_accept():
                f = narrow_read_flit(NodeId(0, 0), NodeId(2, 0), uid=next(uids))
                f.header.beat_idx = int(port)  # tag origin for the assertion
                r.in_bufs[port].push(f)

    h.run(30, before=feed)
    arrivals = [f for (_, _, f) in h.sim.transfers]
    assert len(arrivals) >= 26  # one per cycle after the 2-cycle fill
    origins = [f.header.beat_idx for f in arrivals]
    # strict alternation once both inputs are persistent
    for x, y in zip(origins[2:], origins[3:]):
        assert x != y


def test_wormhole_bundle_blocks_interleaving():
    cfg = RouterConfig()
    r = Router(NodeId(0, 0), LinkClass.WIDE, cfg, 5, 1)
    sink = Fifo(256)
    r.connect(Dir.EAST, sink, ("r", "sink", "wide", "E"), False)
    h = Harness([r], [sink])
    bundle = wide_bundle(NodeId(0, 0), NodeId(3, 0), beats=4, uid=7)
    single = wide_r_flit(NodeId(0, 0), NodeId(3, 0), uid=9)
    feeds = {Dir.LOCAL: list(bundle), Dir.WEST: [single]}

    def feed(cycle):
        for port, queue in feeds.items():
            if port is Dir.WEST and cycle == 0:
                continue  # single flit shows up once the bundle holds the lock
            if queue and r.in_bufs[port].can_accept():
                r.in_bufs[port].push(queue.pop(0))

    h.run(20, before=feed)
    seq = [f.header.txn_uid for (_, _, f) in h.sim.transfers]
    assert len(seq) == 6
    # the 5-flit bundle is emitted contiguously, the single flit after
    assert seq == [7, 7, 7, 7, 7, 9]
    last_flags = [f.header.last for (_, _, f) in h.sim.transfers]
    assert last_flags[4] is True  # lock released by the last W


def test_wormhole_lock_survives_bubbles():
    cfg = RouterConfig()
    r = Router(NodeId(0, 0), LinkClass.WIDE, cfg, 5, 1)
    sink = Fifo(256)
    r.connect(Dir.EAST, sink, ("r", "sink", "wide", "E"), False)
    h = Harness([r], [sink])
    bundle = wide_bundle(NodeId(0, 0), NodeId(3, 0), beats=2, uid=7)  # AW + 2 W
    single = wide_r_flit(NodeId(0, 0), NodeId(3, 0), uid=9)
    # bundle flits dribble in with gaps; competitor always ready
    schedule = {0: bundle[0], 3: bundle[1], 6: bundle[2], 1: single}

    def feed(cycle):
        f = schedule.pop(cycle, None)
        if f is not None:
            port = Dir.LOCAL if f.header.txn_uid == 7 else Dir.WEST
            r.in_bufs[port].push(f)

    h.run(20, before=feed)
    seq = [f.header.txn_uid for (_, _, f) in h.sim.transfers]
    assert seq == [7, 7, 7, 9]


def test_loopback_never_granted():
    cfg = RouterConfig()
    r = Router(NodeId(0, 0), LinkClass.REQ, cfg, 5, 1)
    sink = Fifo(8)
    r.connect(Dir.LOCAL, sink, ("r", "ni", "req", "ej"), False)
    h = Harness([r], [sink])
    f = narrow_read_flit(NodeId(0, 0), NodeId(0, 0))
    r.in_bufs[Dir.LOCAL].push(f)
    h.run(10)
    assert not sink.items
    assert r.in_bufs[Dir.LOCAL].items  # stuck, never granted


def test_flit_conservation_random_traffic():
    import random

    rng = random.Random(7)
    cfg = RouterConfig()
    r = Router(NodeId(1, 0), LinkClass.REQ, cfg, 3, 1)
    sinks = {}
    for d in (Dir.EAST, Dir.WEST, Dir.LOCAL):
        sinks[d] = Fifo(4096)
        r.connect(d, sinks[d], ("r", str(d), "req", str(d)), False)
    h = Harness([r], list(sinks.values()))
    injected = []

    def feed(cycle):
        if cycle < 200:
            for port in (Dir.NORTH, Dir.SOUTH):
                if rng.random() < 0.6 and r.in_bufs[port].can_accept():
                    f = narrow_read_flit(NodeId(1, 0), NodeId(1, 0), uid=len(injected))
                    r.in_bufs[port].push(f)
                    injected.append(f)

    h.run(260, before=feed)
    ejected = list(sinks[Dir.LOCAL].items)
    assert len(ejected) == len(injected)
    assert {f.header.txn_uid for f in ejected} == {f.header.txn_uid for f in injected}


def test_turn_pruning_rejects_bogus_table():
    # a table that commands a Y->X turn toward another router must be refused
    cfg = RouterConfig(routing="table")
    bad_table = {NodeId(2, 0): Dir.EAST}
    r = Router(NodeId(1, 0), LinkClass.REQ, cfg, 3, 2, table=bad_table)
    east_sink = Fifo(8)
    r.connect(Dir.EAST, east_sink, ("r", "e", "req", "E"), True)
    h = Harness([r], [east_sink])
    r.in_bufs[Dir.NORTH].push(narrow_read_flit(NodeId(1, 1), NodeId(2, 0)))
    with pytest.raises(Exception, match="prohibited"):
        h.run(3)


def test_turn_pruning_can_be_disabled():
    cfg = RouterConfig(routing="table", xy_turn_pruning=False)
    table = {NodeId(2, 0): Dir.EAST}
    r = Router(NodeId(1, 0), LinkClass.REQ, cfg, 3, 2, table=table)
    east_sink = Fifo(8)
    r.connect(Dir.EAST, east_sink, ("r", "e", "req", "E"), True)
    h = Harness([r], [east_sink])
    r.in_bufs[Dir.NORTH].push(narrow_read_flit(NodeId(1, 1), NodeId(2, 0)))
    h.run(5)
    assert east_sink.items
