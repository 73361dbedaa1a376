import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floosim.protocol import (
    AxiBeat,
    AxiChannel,
    AxiTransaction,
    BurstTooLong,
    ChannelKind,
    LinkClass,
    NodeId,
    ProtocolError,
    TxnId,
    TxnOp,
    Width,
    depacketize,
    flit_size,
    is_wormhole,
    map_beat_to_link,
    packetize,
    request_flits,
    response_flits,
)


def beat(kind, width):
    return AxiBeat(AxiChannel(kind, width))


def make_txn(op, burst_len=1, beat_bytes=8, txn_id=0, uid=1):
    return AxiTransaction(
        txn_id=TxnId(txn_id),
        op=op,
        src=NodeId(0, 0),
        dst=NodeId(1, 0),
        burst_len=burst_len,
        beat_bytes=beat_bytes,
        uid=uid,
    )


# ---------------------------------------------------------------------------
# channel -> link mapping (exhaustive)
# ---------------------------------------------------------------------------

MAPPING = {
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


def test_map_beat_to_link_total():
    # all ten (kind, width) pairs, nothing else
    assert len(MAPPING) == len(ChannelKind) * len(Width)
    for (kind, width), expected in MAPPING.items():
        assert map_beat_to_link(beat(kind, width)) is expected


def test_map_examples():
    assert map_beat_to_link(beat(ChannelKind.AR, Width.NARROW)) is LinkClass.REQ
    assert map_beat_to_link(beat(ChannelKind.B, Width.WIDE)) is LinkClass.RSP
    assert map_beat_to_link(beat(ChannelKind.W, Width.WIDE)) is LinkClass.WIDE


def test_flit_sizes():
    assert flit_size(LinkClass.REQ) == 119
    assert flit_size(LinkClass.RSP) == 103
    assert flit_size(LinkClass.WIDE) == 603
    assert flit_size(LinkClass.REQ, {LinkClass.REQ: 200}) == 200


# ---------------------------------------------------------------------------
# packetize
# ---------------------------------------------------------------------------


def test_wide_write_burst4_is_five_flit_bundle():
    txn = make_txn(TxnOp.WRITE, burst_len=4, beat_bytes=64)
    req = request_flits(txn)
    assert len(req) == 5
    assert all(f.link is LinkClass.WIDE for f in req)
    assert [f.header.channel for f in req] == [ChannelKind.AW] + [ChannelKind.W] * 4
    assert [f.header.last for f in req] == [False, False, False, False, True]
    assert all(is_wormhole(f) for f in req)


def test_narrow_read_one_req_one_rsp():
    txn = make_txn(TxnOp.READ, burst_len=1, beat_bytes=8)
    flits = packetize(txn)
    assert len(flits) == 2
    assert flits[0].header.channel is ChannelKind.AR
    assert flits[0].link is LinkClass.REQ
    assert flits[1].header.channel is ChannelKind.R
    assert flits[1].link is LinkClass.RSP
    assert all(f.header.last for f in flits)


def test_wide_read_burst8():
    # request flit count oracle: one AR on the req link, one R per beat on
    # the wide link, each its own single-flit packet
    txn = make_txn(TxnOp.READ, burst_len=8, beat_bytes=64)
    req = request_flits(txn)
    rsp = response_flits(txn)
    assert len(req) == 1 and req[0].link is LinkClass.REQ
    assert len(rsp) == 8
    assert all(f.link is LinkClass.WIDE for f in rsp)
    assert all(f.header.last for f in rsp)
    assert not any(is_wormhole(f) for f in rsp)


def test_narrow_write_flits_not_bundled():
    txn = make_txn(TxnOp.WRITE, burst_len=3, beat_bytes=8)
    req = request_flits(txn)
    assert len(req) == 4
    assert all(f.link is LinkClass.REQ for f in req)
    assert all(f.header.last for f in req)
    assert not any(is_wormhole(f) for f in req)


def test_burst_too_long():
    with pytest.raises(BurstTooLong):
        make_txn(TxnOp.WRITE, burst_len=65, beat_bytes=64)


def test_atomic_single_beat_and_both_responses():
    txn = make_txn(TxnOp.ATOMIC, burst_len=1, beat_bytes=8)
    rsp = response_flits(txn)
    assert [f.header.channel for f in rsp] == [ChannelKind.R, ChannelKind.B]
    assert all(f.header.atop for f in rsp)
    with pytest.raises(ProtocolError):
        make_txn(TxnOp.ATOMIC, burst_len=2, beat_bytes=8)


def test_response_direction_reversed():
    txn = make_txn(TxnOp.READ, burst_len=2, beat_bytes=64)
    for f in response_flits(txn):
        assert f.header.src == txn.dst
        assert f.header.dst == txn.src


def test_is_wormhole_examples():
    wide_write = make_txn(TxnOp.WRITE, burst_len=2, beat_bytes=64)
    aw, w0, w1 = request_flits(wide_write)
    assert is_wormhole(aw) and is_wormhole(w0) and is_wormhole(w1)
    assert w1.header.last
    narrow_read = make_txn(TxnOp.READ)
    (r,) = response_flits(narrow_read)
    assert not is_wormhole(r)


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------

ops = st.sampled_from([TxnOp.READ, TxnOp.WRITE])
widths = st.sampled_from([8, 64])


@st.composite
def txns(draw):
    op = draw(ops)
    beat_bytes = draw(widths)
    burst_len = draw(st.integers(1, 4096 // beat_bytes))
    return make_txn(op, burst_len=burst_len, beat_bytes=beat_bytes, uid=draw(st.integers(0, 2**20)))


@given(txns())
@settings(max_examples=200)
def test_roundtrip_reconstructs_beats(txn):
    got = depacketize(packetize(txn))
    assert got.op is txn.op
    assert got.src == txn.src and got.dst == txn.dst
    assert got.txn_id == int(txn.txn_id)
    assert got.burst_len == txn.burst_len
    if txn.op is TxnOp.WRITE:
        assert got.w_payloads == [("w", txn.uid, i) for i in range(txn.burst_len)]
    else:
        assert got.r_payloads == [("r", txn.uid, i) for i in range(txn.burst_len)]


@given(txns())
@settings(max_examples=200)
def test_bundle_contiguity_precondition(txn):
    req = request_flits(txn)
    if txn.op is TxnOp.WRITE and txn.width is Width.WIDE:
        assert req[0].header.channel is ChannelKind.AW
        lasts = [f.header.last for f in req]
        assert lasts.count(True) == 1 and lasts[-1]
    else:
        assert all(f.header.last for f in req)


@given(txns())
@settings(max_examples=200)
def test_width_accounting(txn):
    for f in packetize(txn):
        budget = flit_size(f.link)
        assert f.serialized_bits() == budget
        assert f.payload_bits <= budget
        assert f.serialized_bits({f.link: 1024}) == 1024


def test_txnid_width_invariant():
    with pytest.raises(ProtocolError):
        TxnId(256, width_bits=8)
    assert int(TxnId(255, width_bits=8)) == 255
