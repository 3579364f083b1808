"""Run one scenario: build the cell, drive the event loop, collect metrics."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import TextIO

import numpy as np

from .. import mac, phy
from ..mac import (DOWNLINK, MAC_HEADER_BYTES, FrameScheduler, ServiceFlow, airtime_cost_ns,
                   bandwidth_request, fragment)
from ..metrics import (FlowMetrics, FlowSeries, LossPoint, PacketLog, compute_flow_metrics,
                       flow_series)
from ..sim_core import EventKind, RandomStream, Simulator
from ..traffic import (IP_UDP_HEADER_BYTES, VideoTrace, emission_time_us, gen_gamma_trace,
                       packetize, read_trace)
from .model import Scenario, StreamSpec, stream_flow

NRTPS_POLL_EVERY = 20
_UNIFORM_BATCH = 4096


class RunError(RuntimeError):
    pass


@dataclass
class LinkBudget:
    station: str
    distance_m: float
    pathloss_db: float
    dl_snr_db: float
    ul_snr_db: float
    dl_selected: str
    ul_selected: str


@dataclass
class FlowResult:
    flow_id: str
    station: str
    direction: str
    profile: str
    snr_db: float
    metrics: FlowMetrics
    series: FlowSeries
    log: PacketLog = field(repr=False)
    queue_bytes: list[int] = field(default_factory=list, repr=False)
    granted_bytes: list[int] = field(default_factory=list, repr=False)


@dataclass
class RunResult:
    scenario: Scenario
    flows: dict[str, FlowResult]
    links: list[LinkBudget]
    dispatched: int
    event_counts: dict[str, int]
    wall_s: float = 0.0


def build_trace(s: Scenario, st: StreamSpec) -> VideoTrace:
    if st.trace_file is not None:
        path = Path(st.trace_file)
        if not path.is_absolute() and s.base_dir:
            path = Path(s.base_dir) / path
        return read_trace(path)
    syn = st.synth
    return gen_gamma_trace(syn.mean_bytes, syn.peak_bytes, syn.frames, syn.fps, syn.gop,
                           RandomStream(s.seed, f"traffic-gen/{st.id}"), codec=syn.codec,
                           psnr_db=syn.psnr_db, shape=syn.shape, i_to_p_ratio=syn.i_to_p_ratio)


class _Uniforms:
    """Batched uniform draws; yields exactly the sequence of single draws."""

    __slots__ = ("_gen", "_buf", "_i")

    def __init__(self, stream: RandomStream):
        self._gen = stream.generator
        self._buf: list[float] = []
        self._i = 0

    def next(self) -> float:
        if self._i >= len(self._buf):
            self._buf = self._gen.random(_UNIFORM_BATCH).tolist()
            self._i = 0
        u = self._buf[self._i]
        self._i += 1
        return u


class _FlowState:
    __slots__ = ("flow", "spec", "log", "snr_db", "profile", "shadow", "loss_cache",
                 "queue_series", "granted_series", "granted_tick", "streams", "uniforms")

    def __init__(self, flow: ServiceFlow, spec, snr_db: float, profile):
        self.flow = flow
        self.spec = spec
        self.log = PacketLog(flow.id)
        self.snr_db = snr_db
        self.profile = profile
        self.shadow: RandomStream | None = None
        self.loss_cache: dict[int, float] = {}
        self.queue_series: list[int] = []
        self.granted_series: list[int] = []
        self.granted_tick = 0
        self.streams: list = []
        self.uniforms: _Uniforms | None = None


class _StreamState:
    __slots__ = ("spec", "trace", "fs", "k")

    def __init__(self, spec: StreamSpec, trace: VideoTrace, fs: _FlowState):
        self.spec = spec
        self.trace = trace
        self.fs = fs
        self.k = 0


class Cell:
    """One BS, its subscriber stations and the video server behind the backhaul."""

    def __init__(self, scenario: Scenario, event_trace: TextIO | None = None,
                 grant_log: TextIO | None = None, traces: dict[str, VideoTrace] | None = None):
        s = self.scenario = scenario
        self.sim = Simulator(seed=s.seed, trace=event_trace)
        self.grant_log = grant_log
        self.frame = s.frame
        self.backhaul = s.backhaul_delay_us
        bs = s.base_station
        self.links: dict[str, LinkBudget] = {}
        for ss in s.subscribers:
            d = math.dist(ss.position, bs.position)
            pl = phy.pathloss_db(s.pathloss, d, bs.radio.carrier_hz, bs.radio.height_m, ss.radio.height_m)
            dl = phy.link_snr_db(bs.radio, ss.radio, pl)
            ul = phy.link_snr_db(ss.radio, bs.radio, pl)
            sel_dl, sel_ul = phy.select_modulation(dl), phy.select_modulation(ul)
            self.links[ss.id] = LinkBudget(ss.id, d, pl, dl, ul,
                                           sel_dl.label if sel_dl else "outage",
                                           sel_ul.label if sel_ul else "outage")

        self.flow_states: dict[str, _FlowState] = {}
        flows = []
        for spec in s.flows:
            link = self.links[spec.station]
            snr = link.dl_snr_db if spec.direction == DOWNLINK else link.ul_snr_db
            profile = phy.select_modulation(snr) if s.adaptive_modulation else phy.find_profile(spec.burst_profile)
            radio = bs.radio if spec.direction == DOWNLINK else s.node(spec.station).radio
            flow = ServiceFlow(spec.id, spec.direction, spec.sched_class, spec.max_sustained_bps,
                               spec.min_reserved_bps, spec.tos, profile, station=spec.station)
            flow.rate_bps = int(phy.phy_rate_bps(profile, radio, s.subcarriers)) if profile else 0
            fs = _FlowState(flow, spec, snr, profile)
            fs.uniforms = _Uniforms(self.sim.stream(f"phy-errors/{spec.id}"))
            if s.pathloss.shadowing_sigma_db > 0:
                fs.shadow = self.sim.stream(f"shadowing/{spec.id}")
            self.flow_states[spec.id] = fs
            flows.append(flow)
        mac.check_unique_tos(flows)
        self.scheduler = FrameScheduler(flows, s.frame)
        self.polled = [self.flow_states[f.id] for f in flows if f.polled]
        self._poll_count = 0
        self._frag_cache: dict[int, tuple[int, list[int]]] = {}

        traces = traces or {}
        self.streams: list[_StreamState] = []
        for st in s.streams:
            trace = traces.get(st.id) or build_trace(s, st)
            fs = self.flow_states[stream_flow(s, st).id]
            state = _StreamState(st, trace, fs)
            fs.streams.append(state)
            self.streams.append(state)

        self.sim.on(EventKind.FRAME_ARRIVAL, self._on_frame_arrival)
        self.sim.on(EventKind.TRANSMISSION_COMPLETE, self._on_tx_complete)
        self.sim.on(EventKind.FRAME_BOUNDARY, self._on_frame)
        self.sim.on(EventKind.POLL, self._on_poll)
        self.sim.on(EventKind.MEASUREMENT_TICK, self._on_tick)

    # ------------------------------------------------------------ handlers

    def _on_frame_arrival(self, ev) -> None:
        st: _StreamState = ev.data
        now = self.sim.now
        rec = st.trace.records[st.k]
        fs = st.fs
        seqs = [fs.log.add(p, now) for p in packetize(rec.size_bytes, self.scenario.mtu_bytes)]
        if st.spec.direction == DOWNLINK and self.backhaul > 0:
            self.sim.at(now + self.backhaul, EventKind.TRANSMISSION_COMPLETE, f"backhaul/{fs.flow.id}",
                        (fs, seqs))
        else:
            self._enqueue(fs, seqs)
        st.k += 1
        if st.k < len(st.trace.records):
            t = emission_time_us(st.spec.start_us, st.k, st.trace.fps)
            if t <= self.scenario.duration_us:
                self.sim.at(t, EventKind.FRAME_ARRIVAL, st.spec.id, st)

    def _fragments(self, ip_bytes: int) -> tuple[int, list[int]]:
        hit = self._frag_cache.get(ip_bytes)
        if hit is None:
            sizes = [p + MAC_HEADER_BYTES for p in fragment(ip_bytes, self.scenario.max_pdu_payload_bytes)]
            hit = self._frag_cache[ip_bytes] = (sum(sizes), sizes)
        return hit

    def _enqueue(self, fs: _FlowState, seqs: list[int]) -> None:
        q = fs.flow.queue
        cap = self.scenario.queue_cap_bytes
        payload = fs.log.payload
        for seq in seqs:
            air, sizes = self._fragments(payload[seq] + IP_UDP_HEADER_BYTES)
            if q.bytes + air > cap:
                fs.log.mark_lost(seq, LossPoint.MAC_QUEUE)
                continue
            last = len(sizes) - 1
            for i, size in enumerate(sizes):
                q.append((seq, size, i == last))

    def _on_poll(self, ev) -> None:
        self._poll_count += 1
        for fs in self.polled:
            if fs.flow.sched_class is mac.SchedulingClass.RTPS or self._poll_count % NRTPS_POLL_EVERY == 1:
                bandwidth_request(fs.flow)
        self.sim.at(self.sim.now + self.scenario.poll_interval_us, EventKind.POLL, "bs")

    def _on_frame(self, ev) -> None:
        now = self.sim.now
        frame = self.frame
        grants = self.scheduler.schedule_frame(now)
        if self.grant_log is not None:
            idx = self.scheduler.frame_index - 1
            for g in grants:
                self.grant_log.write(f"{idx}\t{g.flow_id}\t{g.subframe}\t{g.bytes_granted}\n")
        out = {"DL": [], "UL": []}
        base = {"DL": 0, "UL": 0}
        start = {"DL": now, "UL": now + frame.dl_ns // 1000}
        states = self.flow_states
        for g in grants:
            if not g.bytes_granted:
                continue
            fs = states[g.flow_id]
            flow = fs.flow
            q = flow.queue
            rate = flow.rate_bps
            sub = g.subframe
            b0 = base[sub]
            t0 = start[sub]
            budget = g.bytes_granted
            used = 0
            deliveries = out[sub]
            while len(q):
                pdu = q.peek()
                if used + pdu[1] > budget:
                    break
                q.popleft()
                used += pdu[1]
                t_done = t0 + -(-(b0 + airtime_cost_ns(used, rate)) // 1000)
                deliveries.append((fs, pdu, t_done))
            fs.granted_tick += used
            base[sub] = b0 + airtime_cost_ns(budget, rate)
        if out["DL"]:
            self.sim.at(now + -(-frame.dl_ns // 1000), EventKind.TRANSMISSION_COMPLETE, "air/DL", out["DL"])
        if out["UL"]:
            self.sim.at(now + frame.duration_us, EventKind.TRANSMISSION_COMPLETE, "air/UL", out["UL"])
        self.sim.at(now + frame.duration_us, EventKind.FRAME_BOUNDARY, "bs")

    def _loss_p(self, fs: _FlowState, size: int) -> float:
        if fs.shadow is not None:
            snr = fs.snr_db + self.scenario.pathloss.shadowing_sigma_db * fs.shadow.normal()
            return phy.loss_probability(snr, fs.profile, size * 8, self.scenario.ber)
        p = fs.loss_cache.get(size)
        if p is None:
            p = fs.loss_cache[size] = phy.loss_probability(fs.snr_db, fs.profile, size * 8,
                                                           self.scenario.ber)
        return p

    def _on_tx_complete(self, ev) -> None:
        if ev.target.startswith("backhaul/"):
            fs, seqs = ev.data
            self._enqueue(fs, seqs)
            return
        extra = self.backhaul if ev.target == "air/UL" else 0
        for fs, (seq, size, last), t_done in ev.data:
            log = fs.log
            if fs.uniforms.next() < self._loss_p(fs, size):
                log.mark_lost(seq, LossPoint.PHY)
            elif last and not log.loss[seq]:
                log.mark_received(seq, t_done + extra)

    def _on_tick(self, ev) -> None:
        for fs in self.flow_states.values():
            fs.queue_series.append(fs.flow.queue.bytes)
            fs.granted_series.append(fs.granted_tick)
            fs.granted_tick = 0
        nxt = self.sim.now + self.scenario.tick_us
        if nxt <= self.scenario.duration_us:
            self.sim.at(nxt, EventKind.MEASUREMENT_TICK, "metrics")

    # ------------------------------------------------------------ driver

    def in_network(self) -> dict[str, int]:
        """Packets still queued or in flight per flow, counted from the queues and pending events."""
        pending: dict[str, set[int]] = {fid: set() for fid in self.flow_states}
        for fid, fs in self.flow_states.items():
            for seq, _, _ in fs.flow.queue:
                pending[fid].add(seq)
        for _, _, ev in self.sim._heap:
            if ev.state != "pending" or ev.kind is not EventKind.TRANSMISSION_COMPLETE:
                continue
            if ev.target.startswith("backhaul/"):
                fs, seqs = ev.data
                pending[fs.flow.id].update(seqs)
            else:
                for fs, (seq, _, _), _ in ev.data:
                    pending[fs.flow.id].add(seq)
        out = {}
        for fid, seqs in pending.items():
            log = self.flow_states[fid].log
            out[fid] = sum(1 for q in seqs if log.t_received[q] < 0 and not log.loss[q])
        return out

    def run(self) -> RunResult:
        t_wall = time.perf_counter()
        s = self.scenario
        sim = self.sim
        for st in self.streams:
            sim.at(emission_time_us(st.spec.start_us, 0, st.trace.fps), EventKind.FRAME_ARRIVAL, st.spec.id, st)
        if self.polled:
            sim.at(0, EventKind.POLL, "bs")
        sim.at(0, EventKind.FRAME_BOUNDARY, "bs")
        if s.tick_us <= s.duration_us:
            sim.at(s.tick_us, EventKind.MEASUREMENT_TICK, "metrics")
        sim.run_until(s.duration_us)

        residual_check = self.in_network()
        flows = {}
        for fid, fs in self.flow_states.items():
            if not fs.streams:
                continue
            if fs.log.residual() != residual_check[fid]:
                raise RunError(f"conservation violated on {fid}: {fs.log.residual()} unresolved packets, "
                               f"{residual_check[fid]} found in the network")
            start = min(st.spec.start_us for st in fs.streams)
            psnrs = [st.trace.mean_psnr_db for st in fs.streams if st.trace.mean_psnr_db is not None]
            codec = "+".join(sorted({st.trace.codec for st in fs.streams}))
            m = compute_flow_metrics(fs.log, flow_id=fid, codec=codec,
                                     psnr_db=sum(psnrs) / len(psnrs) if psnrs else None,
                                     warmup_until_us=start + s.warmup_us, t_end_us=s.duration_us,
                                     thresholds=s.thresholds)
            m.queue_peak_bytes = max(fs.queue_series, default=fs.flow.queue.bytes)
            flows[fid] = FlowResult(
                fid, fs.flow.station, fs.flow.direction,
                fs.profile.label if fs.profile else "outage", fs.snr_db, m,
                flow_series(fs.log, s.duration_us, s.tick_us), fs.log,
                fs.queue_series, fs.granted_series,
            )
        return RunResult(s, flows, list(self.links.values()), sim.dispatched, dict(sim.counts),
                         time.perf_counter() - t_wall)


def run(scenario: Scenario, event_trace: TextIO | None = None, grant_log: TextIO | None = None,
        traces: dict[str, VideoTrace] | None = None) -> RunResult:
    return Cell(scenario, event_trace, grant_log, traces).run()


def granted_window_max_bps(granted_bytes: list[int], tick_s: float, window_s: float = 10.0,
                           skip_ticks: int = 0) -> float:
    """Largest granted rate (air bytes incl. headers) over sliding windows of ``window_s``."""
    n = max(1, round(window_s / tick_s))
    g = np.asarray(granted_bytes[skip_ticks:], dtype=np.int64)
    if len(g) < n:
        return float(g.sum() * 8 / (len(g) * tick_s)) if len(g) else 0.0
    c = np.concatenate(([0], np.cumsum(g)))
    return float((c[n:] - c[:-n]).max() * 8 / window_s)
