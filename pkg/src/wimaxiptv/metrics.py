"""Per-packet records and the QoS/QoE evaluation pipeline.

All timestamps are integer microseconds, so sums of delays and delay
differences are exact; every average is one integer division, hence
correctly rounded.
Statistics that cannot be formed (no received packet, fewer than two for
jitter) are ``None`` rather than zero.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .sim_core import US_PER_S

MOS_LABELS = {5: "Excellent", 4: "Good", 3: "Fair", 2: "Poor", 1: "Bad"}
# Lower bounds, closed: [37, inf) -> 5, [31, 37) -> 4, ...
MOS_BINS = ((37.0, 5), (31.0, 4), (25.0, 3), (20.0, 2))

PENDING = -1


class LossPoint(enum.IntEnum):
    NONE = 0
    MAC_QUEUE = 1
    PHY = 2

    @property
    def label(self) -> str:
        return ("none", "mac_queue", "phy")[self]


@dataclass(frozen=True)
class PacketRecord:
    flow_id: str
    seq: int
    payload_bytes: int
    t_sent: int
    t_received: int | None = None
    loss_point: LossPoint = LossPoint.NONE

    @property
    def finalized(self) -> bool:
        return self.t_received is not None or self.loss_point is not LossPoint.NONE


class PacketLog:
    """Column store of one flow's packets, indexed by per-flow sequence number."""

    def __init__(self, flow_id: str):
        self.flow_id = flow_id
        self.payload: list[int] = []
        self.t_sent: list[int] = []
        self.t_received: list[int] = []
        self.loss: list[int] = []

    def __len__(self) -> int:
        return len(self.t_sent)

    def add(self, payload_bytes: int, t_sent: int) -> int:
        self.payload.append(payload_bytes)
        self.t_sent.append(t_sent)
        self.t_received.append(PENDING)
        self.loss.append(0)
        return len(self.t_sent) - 1

    def mark_received(self, seq: int, t: int) -> None:
        self.t_received[seq] = t

    def mark_lost(self, seq: int, point: LossPoint) -> None:
        if not self.loss[seq]:
            self.loss[seq] = int(point)

    def is_lost(self, seq: int) -> bool:
        return self.loss[seq] != 0

    @classmethod
    def from_records(cls, records: Iterable[PacketRecord], flow_id: str | None = None) -> "PacketLog":
        recs = sorted(records, key=lambda r: r.seq)
        log = cls(flow_id if flow_id is not None else (recs[0].flow_id if recs else ""))
        for expected, r in enumerate(recs):
            if r.seq != expected:
                raise ValueError(f"sequence numbers must run 0..n-1, got {r.seq} at {expected}")
            if r.t_received is not None and r.loss_point is not LossPoint.NONE:
                raise ValueError(f"packet {r.seq} is both received and lost")
            if r.t_received is not None and r.t_received < r.t_sent:
                raise ValueError(f"packet {r.seq} received before it was sent")
            log.add(r.payload_bytes, r.t_sent)
            if r.t_received is not None:
                log.mark_received(r.seq, r.t_received)
            elif r.loss_point is not LossPoint.NONE:
                log.mark_lost(r.seq, r.loss_point)
        return log

    def records(self) -> list[PacketRecord]:
        return [
            PacketRecord(self.flow_id, i, self.payload[i], self.t_sent[i],
                         None if self.t_received[i] == PENDING else self.t_received[i],
                         LossPoint(self.loss[i]))
            for i in range(len(self))
        ]

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "payload": np.asarray(self.payload, dtype=np.int64),
            "t_sent": np.asarray(self.t_sent, dtype=np.int64),
            "t_received": np.asarray(self.t_received, dtype=np.int64),
            "loss": np.asarray(self.loss, dtype=np.int8),
        }

    def residual(self) -> int:
        """Packets neither received nor lost (still queued or in flight)."""
        return sum(1 for r, l in zip(self.t_received, self.loss) if r == PENDING and l == 0)


def _arrays(records) -> dict[str, np.ndarray]:
    if isinstance(records, PacketLog):
        return records.arrays()
    return PacketLog.from_records(records).arrays()


def _received(a: dict[str, np.ndarray], warmup_until_us: int):
    """Received packets sent at or after the warm-up cut, ordered by seq."""
    mask = (a["t_received"] != PENDING) & (a["loss"] == 0) & (a["t_sent"] >= warmup_until_us)
    return a["t_sent"][mask], a["t_received"][mask]


@dataclass(frozen=True)
class DelayStats:
    avg_s: float | None
    max_s: float | None
    count: int


def e2e_delay(records, warmup_until_us: int = 0) -> DelayStats:
    sent, recv = _received(_arrays(records), warmup_until_us)
    if len(sent) == 0:
        return DelayStats(None, None, 0)
    d = recv - sent
    return DelayStats(int(d.sum()) / (len(d) * US_PER_S), int(d.max()) / US_PER_S, len(d))


JITTER_MODES = ("mean_abs_consecutive", "max_signed_interval")


def jitter(records, mode: str = "mean_abs_consecutive", warmup_until_us: int = 0,
           interval_us: int = US_PER_S) -> float | None:
    """Delay variation in seconds.

    ``mean_abs_consecutive``: mean of |d[i+1] - d[i]| over consecutive
    received packets in sequence order. ``max_signed_interval``: spread
    (max - min) of one-way delay inside each interval of ``interval_us``
    (by receive time, counted from the warm-up cut), averaged over the
    intervals that saw at least one packet.
    """
    sent, recv = _received(_arrays(records), warmup_until_us)
    if len(sent) < 2:
        return None
    d = recv - sent
    if mode == "mean_abs_consecutive":
        diffs = np.abs(np.diff(d))
        return int(diffs.sum()) / (len(diffs) * US_PER_S)
    if mode == "max_signed_interval":
        bins = (recv - warmup_until_us) // interval_us
        order = np.argsort(bins, kind="stable")
        bins, d = bins[order], d[order]
        starts = np.flatnonzero(np.concatenate(([True], bins[1:] != bins[:-1])))
        spread = np.maximum.reduceat(d, starts) - np.minimum.reduceat(d, starts)
        return int(spread.sum()) / (len(spread) * US_PER_S)
    raise ValueError(f"unknown jitter mode {mode!r}")


@dataclass(frozen=True)
class ThroughputStats:
    avg_bps: float
    total_bits: int
    series_bps: list[float]


def throughput(records, window_s: float = 1.0, t_start_us: int = 0,
               t_end_us: int | None = None) -> ThroughputStats:
    """Received payload bits per second over ``[t_start_us, t_end_us)`` by receive time."""
    if window_s <= 0:
        raise ValueError("window_s must be > 0")
    a = _arrays(records)
    ok = (a["t_received"] != PENDING) & (a["loss"] == 0)
    recv, payload = a["t_received"][ok], a["payload"][ok]
    if t_end_us is None:
        t_end_us = int(recv.max()) + 1 if len(recv) else t_start_us
    span = t_end_us - t_start_us
    if span <= 0:
        return ThroughputStats(0.0, 0, [])
    sel = (recv >= t_start_us) & (recv < t_end_us)
    bits = payload[sel] * 8
    total = int(bits.sum())
    window_us = round(window_s * US_PER_S)
    nwin = -(-span // window_us)
    idx = (recv[sel] - t_start_us) // window_us
    per_window = np.zeros(nwin, dtype=np.int64)
    np.add.at(per_window, idx, bits)
    series = [int(b) * US_PER_S / window_us for b in per_window.tolist()]
    return ThroughputStats(total * US_PER_S / span, total, series)


@dataclass(frozen=True)
class LossStats:
    ratio: float | None
    sent: int
    received: int
    lost_phy: int
    lost_mac: int
    residual: int


def loss_ratio(records, warmup_until_us: int = 0) -> LossStats:
    """Lost over finalized packets (received or lost); in-flight ones are reported as residual."""
    a = _arrays(records)
    keep = a["t_sent"] >= warmup_until_us
    loss, recv = a["loss"][keep], a["t_received"][keep]
    lost_phy = int((loss == LossPoint.PHY).sum())
    lost_mac = int((loss == LossPoint.MAC_QUEUE).sum())
    received = int(((recv != PENDING) & (loss == 0)).sum())
    sent = int(keep.sum())
    done = received + lost_phy + lost_mac
    ratio = (lost_phy + lost_mac) / done if done else None
    return LossStats(ratio, sent, received, lost_phy, lost_mac, sent - done)


def psnr_to_mos(psnr_db: float) -> tuple[int, str]:
    if not math.isfinite(psnr_db):
        if psnr_db > 0:
            return 5, MOS_LABELS[5]
        raise ValueError("psnr must be finite")
    for lower, score in MOS_BINS:
        if psnr_db >= lower:
            return score, MOS_LABELS[score]
    return 1, MOS_LABELS[1]


@dataclass(frozen=True)
class QosThresholds:
    delay_max_s: float = 0.200
    jitter_avg_max_s: float = 0.060
    jitter_ideal_s: float = 0.010
    loss_max: float = 0.01
    throughput_min_bps: float = 10e3
    throughput_max_bps: float = 5e6

    def __post_init__(self):
        vals = (self.delay_max_s, self.jitter_avg_max_s, self.jitter_ideal_s,
                self.loss_max, self.throughput_min_bps, self.throughput_max_bps)
        if min(vals) <= 0:
            raise ValueError("QoS thresholds must be positive")
        if self.throughput_min_bps >= self.throughput_max_bps:
            raise ValueError("throughput_min_bps must be below throughput_max_bps")
        if self.jitter_ideal_s > self.jitter_avg_max_s:
            raise ValueError("jitter_ideal_s must not exceed jitter_avg_max_s")


PASS, FAIL, INDETERMINATE = "pass", "fail", "indeterminate"


@dataclass(frozen=True)
class Verdict:
    delay: str
    jitter: str
    jitter_ideal: bool
    loss: str
    throughput: str

    @property
    def overall(self) -> str:
        return PASS if all(v == PASS for v in (self.delay, self.jitter, self.loss, self.throughput)) else FAIL


@dataclass
class FlowMetrics:
    flow_id: str
    codec: str = ""
    sent: int = 0
    received: int = 0
    lost_phy: int = 0
    lost_mac: int = 0
    residual: int = 0
    delay_avg_s: float | None = None
    delay_max_s: float | None = None
    jitter_avg_s: float | None = None
    jitter_interval_s: float | None = None
    throughput_bps: float = 0.0
    loss_ratio: float | None = None
    psnr_db: float | None = None
    mos: int | None = None
    mos_label: str = ""
    verdict: Verdict | None = None
    queue_peak_bytes: int = 0


def _judge(value, ok) -> str:
    if value is None:
        return INDETERMINATE
    return PASS if ok(value) else FAIL


def qos_verdict(m: FlowMetrics, th: QosThresholds = QosThresholds()) -> Verdict:
    return Verdict(
        delay=_judge(m.delay_avg_s, lambda v: v < th.delay_max_s),
        jitter=_judge(m.jitter_avg_s, lambda v: v < th.jitter_avg_max_s),
        jitter_ideal=m.jitter_avg_s is not None and m.jitter_avg_s < th.jitter_ideal_s,
        loss=_judge(m.loss_ratio, lambda v: v <= th.loss_max),
        throughput=_judge(m.throughput_bps,
                          lambda v: th.throughput_min_bps <= v <= th.throughput_max_bps),
    )


@dataclass
class FlowSeries:
    """Per-tick raw series (warm-up included) for figure reproduction."""

    t_s: list[float] = field(default_factory=list)
    delay_s: list[float | None] = field(default_factory=list)
    jitter_s: list[float | None] = field(default_factory=list)
    throughput_bps: list[float] = field(default_factory=list)


def flow_series(records, t_end_us: int, tick_us: int = US_PER_S) -> FlowSeries:
    """Mean delay, mean consecutive jitter and throughput per tick, binned by receive time."""
    a = _arrays(records)
    sent, recv = _received(a, 0)
    nbins = -(-t_end_us // tick_us) if t_end_us > 0 else 0
    d = recv - sent
    inside = recv < t_end_us
    bins = recv // tick_us
    delay_sum = np.zeros(nbins, dtype=np.int64)
    delay_n = np.zeros(nbins, dtype=np.int64)
    np.add.at(delay_sum, bins[inside], d[inside])
    np.add.at(delay_n, bins[inside], 1)
    jit_sum = np.zeros(nbins, dtype=np.int64)
    jit_n = np.zeros(nbins, dtype=np.int64)
    if len(d) >= 2:
        jd = np.abs(np.diff(d))
        jb = bins[1:]
        ji = inside[1:]
        np.add.at(jit_sum, jb[ji], jd[ji])
        np.add.at(jit_n, jb[ji], 1)
    tp = throughput(records, tick_us / US_PER_S, 0, t_end_us).series_bps if nbins else []
    s = FlowSeries()
    for k in range(nbins):
        s.t_s.append(k * tick_us / US_PER_S)
        s.delay_s.append(int(delay_sum[k]) / (int(delay_n[k]) * US_PER_S) if delay_n[k] else None)
        s.jitter_s.append(int(jit_sum[k]) / (int(jit_n[k]) * US_PER_S) if jit_n[k] else None)
        s.throughput_bps.append(tp[k])
    return s


def compute_flow_metrics(records, *, flow_id: str, codec: str = "", psnr_db: float | None = None,
                         warmup_until_us: int = 0, t_end_us: int | None = None,
                         thresholds: QosThresholds = QosThresholds()) -> FlowMetrics:
    """Every statistic for one flow. Counts cover the whole run; averages skip the warm-up."""
    log = records if isinstance(records, PacketLog) else PacketLog.from_records(records)
    counts = loss_ratio(log, 0)
    post = loss_ratio(log, warmup_until_us)
    delay = e2e_delay(log, warmup_until_us)
    m = FlowMetrics(
        flow_id=flow_id, codec=codec,
        sent=counts.sent, received=counts.received, lost_phy=counts.lost_phy,
        lost_mac=counts.lost_mac, residual=counts.residual,
        delay_avg_s=delay.avg_s, delay_max_s=delay.max_s,
        jitter_avg_s=jitter(log, "mean_abs_consecutive", warmup_until_us),
        jitter_interval_s=jitter(log, "max_signed_interval", warmup_until_us),
        throughput_bps=throughput(log, 1.0, warmup_until_us, t_end_us).avg_bps,
        loss_ratio=post.ratio, psnr_db=psnr_db,
    )
    if psnr_db is not None:
        m.mos, m.mos_label = psnr_to_mos(psnr_db)
    m.verdict = qos_verdict(m, thresholds)
    return m
