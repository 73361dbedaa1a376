"""Per-transaction latency and per-link bandwidth collection, aggregation
into summary figures, and CSV emission.

A link is "busy" in a cycle when a flit transfer completes on it; utilization
is busy cycles over a measurement window.  At the default 1.26 GHz scale
factor a fully utilized wide link moves 512 payload bits per cycle, i.e.
645.12 Gbit/s.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .protocol import (
    AxiTransaction,
    ChannelKind,
    Flit,
    NodeId,
    Width,
    manhattan,
)

DEFAULT_CLOCK_GHZ = 1.26
WIDE_PAYLOAD_BITS = 512


@dataclass(slots=True)
class LatencySample:
    tag: str
    src: NodeId
    dst: NodeId
    issue_cycle: int
    complete_cycle: int
    width: Width
    hops: int
    # not part of the CSV schema; used by ordering checks
    op: str = ""
    txn_id: int = 0
    uid: int = 0

    @property
    def latency(self) -> int:
        return self.complete_cycle - self.issue_cycle


@dataclass(slots=True)
class LinkStats:
    busy: int = 0
    payload_beats: int = 0
    first_busy: int = -1
    last_busy: int = -1


@dataclass
class LatencySummary:
    count: int
    mean: float
    p50: float
    p99: float
    max: int


class MetricsCollector:
    """Single collector fed by the engine at commit time; append-only."""

    def __init__(self, clock_ghz: float = DEFAULT_CLOCK_GHZ):
        self.clock_ghz = clock_ghz
        self.samples: list[LatencySample] = []
        self.links: dict[tuple, LinkStats] = {}
        self.trace_sink = None  # optional callable(cycle, link_id, flit)

    # -- recording ----------------------------------------------------------

    def on_link_transfer(self, link_id: tuple, flit: Flit, cycle: int) -> None:
        st = self.links.get(link_id)
        if st is None:
            st = LinkStats()
            self.links[link_id] = st
        st.busy += 1
        if flit.header.channel in (ChannelKind.W, ChannelKind.R):
            st.payload_beats += 1
        if st.first_busy < 0:
            st.first_busy = cycle
        st.last_busy = cycle
        if self.trace_sink is not None:
            self.trace_sink(cycle, link_id, flit)

    def record_completion(self, txn: AxiTransaction, cycle: int) -> None:
        self.samples.append(
            LatencySample(
                tag=txn.tag,
                src=txn.src,
                dst=txn.dst,
                issue_cycle=txn.issue_cycle,
                complete_cycle=cycle,
                width=txn.width,
                hops=manhattan(txn.src, txn.dst),
                op=txn.op.value,
                txn_id=int(txn.txn_id),
                uid=txn.uid,
            )
        )

    def completion_orders(self) -> dict[tuple, list[int]]:
        """Per (source, width, direction, TxnID) completion order of uids for
        non-atomic transactions; AXI ordering requires this to equal the issue
        order per key.  Atomics are keyed separately (see atomic_set): each
        carries a unique TxnID drawn from a pool at issue time, so they have
        no cross-transaction order to compare."""
        orders: dict[tuple, list[int]] = {}
        for s in self.samples:
            if s.op == "atomic":
                continue
            key = (str(s.src), s.width.value, s.op, s.txn_id)
            orders.setdefault(key, []).append(s.uid)
        return orders

    def atomic_set(self) -> set[int]:
        return {s.uid for s in self.samples if s.op == "atomic"}

    # -- aggregation ----------------------------------------------------------

    def aggregate(
        self, samples: Optional[Iterable[LatencySample]] = None
    ) -> dict[tuple[str, int], LatencySummary]:
        """Latency summary per (tag, hops); an empty input yields an empty
        summary rather than an error."""
        out: dict[tuple[str, int], list[int]] = {}
        for s in self.samples if samples is None else samples:
            out.setdefault((s.tag, s.hops), []).append(s.latency)
        summary = {}
        for key, vals in out.items():
            arr = np.asarray(vals, dtype=float)
            summary[key] = LatencySummary(
                count=len(vals),
                mean=float(arr.mean()),
                p50=float(np.percentile(arr, 50)),
                p99=float(np.percentile(arr, 99)),
                max=int(arr.max()),
            )
        return summary

    def utilization(
        self,
        link_id: tuple,
        window: Optional[tuple[int, int]] = None,
        active_window: bool = False,
    ) -> float:
        """Busy fraction of a link over a window.

        With ``active_window`` the measurement window is the link's own
        first-to-last busy cycle span (the sustained-transfer reading used by
        the traffic presets); otherwise pass an explicit (start, end] window.
        """
        st = self.links.get(link_id)
        if st is None or st.busy == 0:
            return 0.0
        if active_window:
            span = st.last_busy - st.first_busy + 1
            return st.busy / span
        assert window is not None and window[1] > window[0]
        start, end = window
        # Busy counts outside the window cannot be excluded post hoc; callers
        # use windows covering the measured phase.
        return min(st.busy, end - start) / (end - start)

    def link_gbps(self, utilization: float, payload_bits: int = WIDE_PAYLOAD_BITS) -> float:
        return utilization * payload_bits * self.clock_ghz

    # -- CSV emission -----------------------------------------------------------

    def write_latency_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(
                [
                    "pattern",
                    "src_x",
                    "src_y",
                    "dst_x",
                    "dst_y",
                    "hops",
                    "class",
                    "latency_cycles",
                ]
            )
            for s in self.samples:
                w.writerow(
                    [
                        s.tag,
                        s.src.x,
                        s.src.y,
                        s.dst.x,
                        s.dst.y,
                        s.hops,
                        s.width.value,
                        s.latency,
                    ]
                )

    def write_util_csv(self, path, window_cycles: int) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(
                ["edge_from", "edge_to", "class", "direction", "busy", "window", "utilization"]
            )
            for link_id in sorted(self.links):
                st = self.links[link_id]
                frm, to, cls, direction = link_id
                window = window_cycles or (st.last_busy - st.first_busy + 1)
                util = st.busy / window if window else 0.0
                w.writerow([frm, to, cls, direction, st.busy, window, f"{util:.6f}"])


def write_heatmap_csv(path, grid: dict[tuple[int, int], float]) -> None:
    """X x Y grid of one per-tile metric, row-major by (y, x)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "value"])
        for (x, y) in sorted(grid, key=lambda p: (p[1], p[0])):
            w.writerow([x, y, f"{grid[(x, y)]:.6f}"])


class FlitTraceWriter:
    """Optional per-flit trace: cycle, link_id, class, src, dst, channel,
    last, atop."""

    def __init__(self):
        self.rows: list[tuple] = []

    def attach(self, collector: MetricsCollector) -> None:
        collector.trace_sink = self._record

    def _record(self, cycle: int, link_id: tuple, flit: Flit) -> None:
        h = flit.header
        self.rows.append(
            (
                cycle,
                "->".join(link_id[:2]) + f"/{link_id[3]}",
                flit.link.value,
                str(h.src),
                str(h.dst),
                h.channel.name,
                int(h.last),
                int(h.atop),
            )
        )

    def flush(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["cycle", "link_id", "class", "src", "dst", "channel", "last", "atop"])
            for row in self.rows:
                w.writerow(row)
