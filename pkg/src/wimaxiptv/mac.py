"""802.16 MAC abstraction: service flows, ToS classification, TDD grant scheduling.

Airtime is accounted in integer nanoseconds. A flow whose burst profile runs
at ``rate_bps`` pays ``ceil(bytes * 8e9 / rate_bps)`` ns for a grant, which
lets flows with different burst profiles share one subframe. When every flow
uses the same profile this reduces to a plain byte budget.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .phy import ModulationCoding, RadioConfig, SubcarrierPlan, phy_rate_bps

MAC_HEADER_BYTES = 6
#: 11-bit LEN field: 2047-byte PDU including the generic MAC header.
DEFAULT_MAX_PDU_PAYLOAD = 2047 - MAC_HEADER_BYTES
DEFAULT_QUEUE_CAP_BYTES = 2_000_000
BUCKET_DEPTH_US = 100_000
NS_PER_BYTE_BIT = 8_000_000_000  # 8 bits * 1e9 ns
MICROBITS_PER_BYTE = 8_000_000


class MacError(ValueError):
    pass


class SchedulingClass(str, enum.Enum):
    UGS = "UGS"
    ERTPS = "ertPS"
    RTPS = "rtPS"
    NRTPS = "nrtPS"
    BE = "BE"

    @property
    def priority(self) -> int:
        return _PRIORITY[self]


_PRIORITY = {
    SchedulingClass.UGS: 0,
    SchedulingClass.ERTPS: 1,
    SchedulingClass.RTPS: 2,
    SchedulingClass.NRTPS: 3,
    SchedulingClass.BE: 4,
}

DOWNLINK = "downlink"
UPLINK = "uplink"
SUBFRAME = {DOWNLINK: "DL", UPLINK: "UL"}


class PduQueue:
    """FIFO of ``(packet_seq, air_bytes, is_last_fragment)`` with byte accounting."""

    __slots__ = ("_items", "_head", "bytes")

    def __init__(self):
        self._items: list[tuple[int, int, bool]] = []
        self._head = 0
        self.bytes = 0

    def __len__(self) -> int:
        return len(self._items) - self._head

    def append(self, pdu: tuple[int, int, bool]) -> None:
        self._items.append(pdu)
        self.bytes += pdu[1]

    def popleft(self) -> tuple[int, int, bool]:
        if self._head >= len(self._items):
            raise IndexError("pop from empty PduQueue")
        pdu = self._items[self._head]
        self._head += 1
        self.bytes -= pdu[1]
        if self._head > 4096 and self._head * 2 > len(self._items):
            del self._items[:self._head]
            self._head = 0
        return pdu

    def peek(self, k: int = 0) -> tuple[int, int, bool] | None:
        i = self._head + k
        return self._items[i] if i < len(self._items) else None

    def fit(self, skip: int, limit_bytes: int) -> tuple[int, int]:
        """Bytes and count of whole PDUs after the first ``skip`` that fit in ``limit_bytes``."""
        items = self._items
        i = self._head + skip
        end = len(items)
        total = 0
        n = 0
        while i < end:
            size = items[i][1]
            if total + size > limit_bytes:
                break
            total += size
            n += 1
            i += 1
        return total, n

    def __iter__(self):
        return iter(self._items[self._head:])


class TokenBucket:
    """Integer token bucket; the level is kept in micro-bits to avoid rounding drift."""

    __slots__ = ("rate_bps", "depth", "level")

    def __init__(self, rate_bps: int, depth_us: int = BUCKET_DEPTH_US):
        self.rate_bps = int(rate_bps)
        self.depth = self.rate_bps * depth_us
        self.level = self.depth

    def refill(self, dt_us: int) -> None:
        self.level = min(self.depth, self.level + self.rate_bps * dt_us)

    @property
    def bytes(self) -> int:
        return self.level // MICROBITS_PER_BYTE

    def consume(self, nbytes: int) -> None:
        self.level -= nbytes * MICROBITS_PER_BYTE


@dataclass(eq=False)
class ServiceFlow:
    id: str
    direction: str
    sched_class: SchedulingClass
    max_sustained_bps: int
    min_reserved_bps: int
    tos: int
    burst_profile: ModulationCoding | None
    station: str = ""
    rate_bps: int = 0  # PHY rate of the burst profile; 0 in outage
    queue: PduQueue = field(default_factory=PduQueue)
    reported_backlog: int = 0
    min_bucket: TokenBucket = field(init=False)
    max_bucket: TokenBucket = field(init=False)

    def __post_init__(self):
        self.sched_class = SchedulingClass(self.sched_class)
        if self.direction not in (DOWNLINK, UPLINK):
            raise MacError(f"flow {self.id}: direction must be downlink or uplink")
        if not 0 <= self.min_reserved_bps <= self.max_sustained_bps:
            raise MacError(f"flow {self.id}: need 0 <= min_reserved_bps <= max_sustained_bps")
        self.min_bucket = TokenBucket(self.min_reserved_bps)
        self.max_bucket = TokenBucket(self.max_sustained_bps)

    @property
    def polled(self) -> bool:
        return self.direction == UPLINK and self.sched_class in (SchedulingClass.RTPS,
                                                                  SchedulingClass.NRTPS)

    def visible_backlog(self) -> int:
        """Backlog in bytes as known to the BS scheduler."""
        if self.polled:
            return min(self.reported_backlog, self.queue.bytes)
        return self.queue.bytes


def bandwidth_request(flow: ServiceFlow) -> int:
    """Answer a poll: the BS learns the flow's current backlog."""
    flow.reported_backlog = flow.queue.bytes
    return flow.reported_backlog


def classify(packet_tos: int, flows: list[ServiceFlow]) -> ServiceFlow:
    """The flow whose ToS matches, else the best-effort fallback."""
    fallback = None
    for f in flows:
        if f.tos == packet_tos:
            return f
        if fallback is None and f.sched_class is SchedulingClass.BE:
            fallback = f
    if fallback is None:
        raise MacError(f"no flow for tos={packet_tos} and no BE fallback")
    return fallback


def check_unique_tos(flows: list[ServiceFlow]) -> None:
    seen = {}
    for f in flows:
        key = (f.direction, f.tos)
        if key in seen:
            raise MacError(f"flows {seen[key]} and {f.id} share tos={f.tos} on the {f.direction}")
        seen[key] = f.id


@dataclass(frozen=True)
class TddFrame:
    duration_us: int = 5000
    dl_fraction: float = 0.67

    def __post_init__(self):
        if self.duration_us <= 0:
            raise MacError("frame duration must be > 0")
        if not 0 < self.dl_fraction < 1:
            raise MacError("dl_fraction must be in (0, 1)")

    @property
    def ul_fraction(self) -> float:
        return 1.0 - self.dl_fraction

    @property
    def dl_ns(self) -> int:
        return round(self.duration_us * 1000 * self.dl_fraction)

    @property
    def ul_ns(self) -> int:
        return self.duration_us * 1000 - self.dl_ns

    def airtime_ns(self, subframe: str) -> int:
        return self.dl_ns if subframe == "DL" else self.ul_ns


@dataclass(frozen=True)
class Grant:
    flow_id: str
    bytes_granted: int
    subframe: str


def subframe_capacity_bytes(frame: TddFrame, subframe: str, flow_profile: ModulationCoding | None,
                            radio: RadioConfig, plan: SubcarrierPlan) -> int:
    if flow_profile is None:
        return 0
    fraction = frame.dl_fraction if subframe == "DL" else frame.ul_fraction
    seconds = frame.duration_us / 1e6
    return math.floor(phy_rate_bps(flow_profile, radio, plan) * seconds * fraction / 8)


def airtime_cost_ns(nbytes: int, rate_bps: int) -> int:
    return -(-nbytes * NS_PER_BYTE_BIT // rate_bps)


def airtime_capacity_bytes(airtime_ns: int, rate_bps: int) -> int:
    return airtime_ns * rate_bps // NS_PER_BYTE_BIT


def fragment(sdu_bytes: int, max_pdu_bytes: int) -> list[int]:
    """Split an SDU into PDU payload sizes; MAC headers are added by the caller."""
    if sdu_bytes <= 0 or max_pdu_bytes <= 0:
        raise MacError("sdu_bytes and max_pdu_bytes must be > 0")
    full, tail = divmod(sdu_bytes, max_pdu_bytes)
    return [max_pdu_bytes] * full + ([tail] if tail else [])


class FrameScheduler:
    """Grant engine run once per TDD frame.

    Per subframe, flows are served in class priority order. Every non-BE
    flow first gets up to its minimum-rate tokens, then a second pass tops
    up to its maximum-rate tokens; BE flows split whatever is left one PDU
    at a time, within their maximum-rate tokens. Grants cover whole PDUs
    only (UGS excepted: a UGS grant is a fixed size whether or not it is
    used).
    """

    def __init__(self, flows: list[ServiceFlow], frame: TddFrame, check: bool = True):
        self.flows = list(flows)
        self.frame = frame
        self.check = check
        self.frame_index = 0
        self._last_us: int | None = None
        self.by_subframe = {
            "DL": [f for f in self.flows if f.direction == DOWNLINK],
            "UL": [f for f in self.flows if f.direction == UPLINK],
        }
        self.airtime_used: dict[str, int] = {"DL": 0, "UL": 0}

    def _ordered(self, flows: list[ServiceFlow]) -> list[ServiceFlow]:
        out = []
        for cls in SchedulingClass:
            group = [f for f in flows if f.sched_class is cls and f.rate_bps > 0]
            if group:
                k = self.frame_index % len(group)
                out.extend(group[k:] + group[:k])
        return out

    def ugs_grant_bytes(self, flow: ServiceFlow) -> int:
        return flow.min_reserved_bps * self.frame.duration_us // MICROBITS_PER_BYTE

    def schedule_frame(self, now_us: int) -> list[Grant]:
        dt = 0 if self._last_us is None else now_us - self._last_us
        self._last_us = now_us
        if dt:
            for f in self.flows:
                f.min_bucket.refill(dt)
                f.max_bucket.refill(dt)
        grants = []
        for sub in ("DL", "UL"):
            grants.extend(self._schedule_subframe(sub, self.by_subframe[sub]))
        self.frame_index += 1
        return grants

    def _schedule_subframe(self, sub: str, flows: list[ServiceFlow]) -> list[Grant]:
        airtime = self.frame.airtime_ns(sub)
        rem = airtime
        order = self._ordered(flows)
        granted: dict[str, list[int]] = {f.id: [0, 0] for f in order}  # bytes, pdus

        for f in order:
            cls = f.sched_class
            if cls is SchedulingClass.BE:
                continue
            cap = airtime_capacity_bytes(rem, f.rate_bps)
            if cls is SchedulingClass.UGS:
                g, n = min(self.ugs_grant_bytes(f), cap), 0
            else:
                limit = min(f.min_bucket.bytes, f.max_bucket.bytes, f.visible_backlog(), cap)
                g, n = f.queue.fit(0, limit)
                f.min_bucket.consume(g)
                f.max_bucket.consume(g)
            if g:
                rem -= airtime_cost_ns(g, f.rate_bps)
            granted[f.id] = [g, n]

        for f in order:
            if f.sched_class in (SchedulingClass.BE, SchedulingClass.UGS) or rem <= 0:
                continue
            g0, n0 = granted[f.id]
            cap = airtime_capacity_bytes(rem, f.rate_bps)
            limit = min(f.max_bucket.bytes, f.visible_backlog() - g0, cap)
            if limit <= 0:
                continue
            g, n = f.queue.fit(n0, limit)
            if g:
                f.max_bucket.consume(g)
                rem -= airtime_cost_ns(g0 + g, f.rate_bps) - airtime_cost_ns(g0, f.rate_bps)
                granted[f.id] = [g0 + g, n0 + n]

        be = [f for f in order if f.sched_class is SchedulingClass.BE]
        progress = True
        while be and progress and rem > 0:
            progress = False
            for f in be:
                g0, n0 = granted[f.id]
                pdu = f.queue.peek(n0)
                if pdu is None or g0 + pdu[1] > min(f.visible_backlog(), f.max_bucket.bytes):
                    continue
                extra = airtime_cost_ns(g0 + pdu[1], f.rate_bps) - airtime_cost_ns(g0, f.rate_bps)
                if extra > rem:
                    continue
                rem -= extra
                granted[f.id] = [g0 + pdu[1], n0 + 1]
                progress = True
        for f in be:
            f.max_bucket.consume(granted[f.id][0])

        used = airtime - rem
        if self.check and used > airtime:
            raise AssertionError(f"{sub} subframe over-allocated: {used} > {airtime} ns")
        self.airtime_used[sub] = used
        out = []
        for f in order:
            g = granted[f.id][0]
            if f.polled:
                f.reported_backlog = max(0, f.reported_backlog - g)
            out.append(Grant(f.id, g, sub))
        return out
