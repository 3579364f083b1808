"""Declarative scenario: topology, service flows, video streams, run settings.

Scenario files are JSON. Times are written in seconds and held internally as
integer microseconds. ``dump_scenario`` writes the canonical form with every
default filled in; ``load_scenario(dump_scenario(s)) == s``.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from ..mac import (DEFAULT_MAX_PDU_PAYLOAD, DEFAULT_QUEUE_CAP_BYTES, DOWNLINK, UPLINK,
                   MacError, SchedulingClass, TddFrame)
from ..metrics import QosThresholds
from ..phy import (BerCurve, PathlossModel, PhyError, RadioConfig, SubcarrierPlan, find_profile)
from ..sim_core import US_PER_S, seconds_to_us
from ..traffic import TraceError, codec_profile

NODE_KINDS = ("base_station", "subscriber_station", "server")


class ScenarioError(ValueError):
    """A scenario document violates the schema or an invariant."""

    def __init__(self, path: str, constraint: str):
        self.path = path
        self.constraint = constraint
        super().__init__(f"{path}: {constraint}")


def hexagon_positions(n: int, radius_m: float) -> list[tuple[float, float]]:
    """First ``n`` vertices of a regular hexagon around the origin, vertex 0 on +x."""
    if not 1 <= n <= 6:
        raise ValueError(f"hexagon holds 1..6 stations, got {n}")
    out = []
    for k in range(n):
        a = math.radians(60 * k)
        out.append((radius_m * math.cos(a), radius_m * math.sin(a)))
    return out


@dataclass
class NodeSpec:
    id: str
    kind: str
    position: tuple[float, float] = (0.0, 0.0)
    radio: RadioConfig | None = None
    backhaul_delay_us: int = 0


@dataclass
class FlowSpec:
    id: str
    station: str
    direction: str
    sched_class: str
    max_sustained_bps: int
    min_reserved_bps: int
    tos: int
    burst_profile: str


@dataclass
class TraceSynth:
    codec: str
    mean_bytes: float
    peak_bytes: int
    frames: int
    fps: float = 30.0
    gop: int = 16
    psnr_db: float | None = None
    shape: float = 2.0
    i_to_p_ratio: float = 4.0


@dataclass
class StreamSpec:
    id: str
    station: str
    tos: int
    start_us: int
    direction: str = DOWNLINK
    trace_file: str | None = None
    synth: TraceSynth | None = None


@dataclass
class Scenario:
    name: str
    duration_us: int
    seed: int
    nodes: list[NodeSpec]
    flows: list[FlowSpec]
    streams: list[StreamSpec]
    frame: TddFrame = TddFrame()
    pathloss: PathlossModel = PathlossModel()
    subcarriers: SubcarrierPlan = SubcarrierPlan()
    ber: BerCurve = BerCurve()
    thresholds: QosThresholds = QosThresholds()
    mtu_bytes: int = 1500
    max_pdu_payload_bytes: int = DEFAULT_MAX_PDU_PAYLOAD
    queue_cap_bytes: int = DEFAULT_QUEUE_CAP_BYTES
    poll_interval_us: int = 5000
    tick_us: int = US_PER_S
    warmup_us: int = 10 * US_PER_S
    adaptive_modulation: bool = False
    base_dir: str | None = field(default=None, compare=False)

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    @property
    def base_station(self) -> NodeSpec:
        return next(n for n in self.nodes if n.kind == "base_station")

    @property
    def subscribers(self) -> list[NodeSpec]:
        return [n for n in self.nodes if n.kind == "subscriber_station"]

    @property
    def backhaul_delay_us(self) -> int:
        servers = [n for n in self.nodes if n.kind == "server"]
        return servers[0].backhaul_delay_us if servers else 0


# ---------------------------------------------------------------- parsing

def _get(d: dict, key: str, path: str, kind=None, default: Any = ...):
    if key not in d:
        if default is ...:
            raise ScenarioError(f"{path}.{key}", "required field missing")
        return default
    v = d[key]
    if kind is not None and v is not None:
        ok = isinstance(v, kind) and not (kind in (int, float, (int, float)) and isinstance(v, bool))
        if not ok:
            name = kind.__name__ if isinstance(kind, type) else "number"
            raise ScenarioError(f"{path}.{key}", f"expected {name}, got {type(v).__name__}")
    return v


def _number(d, key, path, default=...):
    v = _get(d, key, path, (int, float), default)
    if v is not None and not math.isfinite(v):
        raise ScenarioError(f"{path}.{key}", "must be finite")
    return v


def _int(d, key, path, default=...):
    v = _get(d, key, path, (int, float), default)
    if isinstance(v, float):
        if not v.is_integer():
            raise ScenarioError(f"{path}.{key}", "must be an integer")
        v = int(v)
    return v


def _check_keys(d: dict, allowed: set[str], path: str) -> None:
    if not isinstance(d, dict):
        raise ScenarioError(path, "expected an object")
    extra = set(d) - allowed
    if extra:
        raise ScenarioError(f"{path}.{sorted(extra)[0]}", "unknown field")


def _build(cls, d: dict, path: str, names: dict[str, str]):
    """Construct a frozen config dataclass from JSON keys mapped to field names."""
    _check_keys(d, set(names), path)
    kwargs = {}
    for key, fname in names.items():
        if key in d:
            kwargs[fname] = _number(d, key, path)
    try:
        return cls(**kwargs)
    except (PhyError, MacError, ValueError) as exc:
        raise ScenarioError(path, str(exc)) from None


RADIO_KEYS = {f.name: f.name for f in fields(RadioConfig)}
PLAN_KEYS = {"null": "null_count", "data": "data_count", "pilot": "pilot_count", "dc": "dc_count"}
BER_KEYS = {f.name: f.name for f in fields(BerCurve)}
THRESHOLD_KEYS = {f.name: f.name for f in fields(QosThresholds)}


def _parse_radio(d, path) -> RadioConfig:
    radio = _build(RadioConfig, d, path, RADIO_KEYS)
    if "subcarriers_total" in d:
        radio = RadioConfig(**{**radio.__dict__, "subcarriers_total": _int(d, "subcarriers_total", path)})
    return radio


def _parse_node(d, path) -> NodeSpec:
    _check_keys(d, {"id", "kind", "position", "ring", "radio", "backhaul_delay_s"}, path)
    node_id = _get(d, "id", path, str)
    kind = _get(d, "kind", path, str)
    if kind not in NODE_KINDS:
        raise ScenarioError(f"{path}.kind", f"must be one of {', '.join(NODE_KINDS)}")
    if "position" in d and "ring" in d:
        raise ScenarioError(path, "give either position or ring, not both")
    if "ring" in d:
        ring = d["ring"]
        _check_keys(ring, {"radius_m", "index"}, f"{path}.ring")
        idx = _int(ring, "index", f"{path}.ring")
        if not 0 <= idx < 6:
            raise ScenarioError(f"{path}.ring.index", "must be in 0..5")
        position = hexagon_positions(6, _number(ring, "radius_m", f"{path}.ring"))[idx]
    else:
        pos = d.get("position", [0.0, 0.0])
        if (not isinstance(pos, list) or len(pos) != 2
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
                           for v in pos)):
            raise ScenarioError(f"{path}.position", "expected [x_m, y_m] with finite numbers")
        position = (float(pos[0]), float(pos[1]))
    radio = None
    if d.get("radio") is not None:
        radio = _parse_radio(d["radio"], f"{path}.radio")
    elif kind != "server":
        raise ScenarioError(f"{path}.radio", "required for base and subscriber stations")
    backhaul = _number(d, "backhaul_delay_s", path, 0.0)
    if backhaul < 0:
        raise ScenarioError(f"{path}.backhaul_delay_s", "must be >= 0")
    return NodeSpec(node_id, kind, position, radio, seconds_to_us(backhaul))


def _parse_flow(d, path) -> FlowSpec:
    _check_keys(d, {"id", "station", "direction", "class", "max_sustained_bps",
                    "min_reserved_bps", "tos", "burst_profile"}, path)
    direction = _get(d, "direction", path, str)
    if direction not in (DOWNLINK, UPLINK):
        raise ScenarioError(f"{path}.direction", "must be downlink or uplink")
    cls = _get(d, "class", path, str)
    try:
        SchedulingClass(cls)
    except ValueError:
        raise ScenarioError(f"{path}.class",
                            f"must be one of {', '.join(c.value for c in SchedulingClass)}") from None
    profile = _get(d, "burst_profile", path, str)
    try:
        find_profile(profile)
    except PhyError as exc:
        raise ScenarioError(f"{path}.burst_profile", str(exc)) from None
    f = FlowSpec(_get(d, "id", path, str), _get(d, "station", path, str), direction, cls,
                 _int(d, "max_sustained_bps", path), _int(d, "min_reserved_bps", path, 0),
                 _int(d, "tos", path), " ".join(profile.split()))
    if not 0 <= f.min_reserved_bps <= f.max_sustained_bps:
        raise ScenarioError(f"{path}.min_reserved_bps", "need 0 <= min_reserved_bps <= max_sustained_bps")
    return f


def _parse_synth(d, path) -> TraceSynth:
    _check_keys(d, {"preset", "codec", "mean_bytes", "peak_bytes", "frames", "fps", "gop",
                    "psnr_db", "shape", "i_to_p_ratio"}, path)
    base = {}
    if "preset" in d:
        try:
            p = codec_profile(_get(d, "preset", path, str))
        except TraceError as exc:
            raise ScenarioError(f"{path}.preset", str(exc)) from None
        base = {"codec": p.codec, "mean_bytes": p.mean_frame_bytes,
                "peak_bytes": p.max_frame_bytes, "psnr_db": p.mean_psnr_db}
    merged = {**base, **{k: v for k, v in d.items() if k != "preset"}}
    s = TraceSynth(
        codec=_get(merged, "codec", path, str),
        mean_bytes=float(_number(merged, "mean_bytes", path)),
        peak_bytes=_int(merged, "peak_bytes", path),
        frames=_int(merged, "frames", path),
        fps=float(_number(merged, "fps", path, 30.0)),
        gop=_int(merged, "gop", path, 16),
        psnr_db=_number(merged, "psnr_db", path, None),
        shape=float(_number(merged, "shape", path, 2.0)),
        i_to_p_ratio=float(_number(merged, "i_to_p_ratio", path, 4.0)),
    )
    if not 0 < s.mean_bytes < s.peak_bytes:
        raise ScenarioError(f"{path}.mean_bytes", "need 0 < mean_bytes < peak_bytes")
    if s.gop < 1 or s.frames < s.gop:
        raise ScenarioError(f"{path}.frames", "need frames >= gop >= 1")
    if s.fps <= 0 or s.shape <= 0 or s.i_to_p_ratio <= 0:
        raise ScenarioError(path, "fps, shape and i_to_p_ratio must be > 0")
    if s.psnr_db is not None:
        s.psnr_db = float(s.psnr_db)
    return s


def _parse_stream(d, path) -> StreamSpec:
    _check_keys(d, {"id", "station", "tos", "start_s", "direction", "trace"}, path)
    direction = _get(d, "direction", path, str, DOWNLINK)
    if direction not in (DOWNLINK, UPLINK):
        raise ScenarioError(f"{path}.direction", "must be downlink or uplink")
    start = _number(d, "start_s", path, 70.0)
    if start < 0:
        raise ScenarioError(f"{path}.start_s", "must be >= 0")
    trace = _get(d, "trace", path, dict)
    _check_keys(trace, {"file", "synth"}, f"{path}.trace")
    if ("file" in trace) == ("synth" in trace):
        raise ScenarioError(f"{path}.trace", "give exactly one of file or synth")
    return StreamSpec(
        _get(d, "id", path, str), _get(d, "station", path, str), _int(d, "tos", path),
        seconds_to_us(start), direction,
        trace_file=_get(trace, "file", f"{path}.trace", str, None),
        synth=_parse_synth(trace["synth"], f"{path}.trace.synth") if "synth" in trace else None,
    )


TOP_KEYS = {"name", "seed", "duration_s", "warmup_s", "tick_s", "mtu_bytes", "max_pdu_payload_bytes",
            "queue_cap_bytes", "poll_interval_s", "adaptive_modulation", "frame", "pathloss",
            "subcarriers", "ber", "thresholds", "nodes", "flows", "streams"}


def scenario_from_dict(doc: dict, base_dir: str | None = None) -> Scenario:
    _check_keys(doc, TOP_KEYS, "scenario")
    p = "scenario"
    frame_d = doc.get("frame", {})
    _check_keys(frame_d, {"duration_s", "dl_fraction"}, f"{p}.frame")
    try:
        frame = TddFrame(seconds_to_us(_number(frame_d, "duration_s", f"{p}.frame", 0.005)),
                         float(_number(frame_d, "dl_fraction", f"{p}.frame", 0.67)))
    except MacError as exc:
        raise ScenarioError(f"{p}.frame", str(exc)) from None
    pl_d = doc.get("pathloss", {})
    _check_keys(pl_d, {"model", "reference_distance_m", "shadowing_sigma_db"}, f"{p}.pathloss")
    try:
        pathloss = PathlossModel(_get(pl_d, "model", f"{p}.pathloss", str, "suburban-erceg-C"),
                                 float(_number(pl_d, "reference_distance_m", f"{p}.pathloss", 100.0)),
                                 float(_number(pl_d, "shadowing_sigma_db", f"{p}.pathloss", 0.0)))
    except PhyError as exc:
        raise ScenarioError(f"{p}.pathloss", str(exc)) from None
    plan_d = doc.get("subcarriers", {})
    _check_keys(plan_d, set(PLAN_KEYS), f"{p}.subcarriers")
    plan = SubcarrierPlan(**{PLAN_KEYS[k]: _int(plan_d, k, f"{p}.subcarriers") for k in plan_d})

    nodes_raw = _get(doc, "nodes", p, list)
    nodes = [_parse_node(n, f"{p}.nodes[{i}]") for i, n in enumerate(nodes_raw)]
    flows = [_parse_flow(f, f"{p}.flows[{i}]") for i, f in enumerate(_get(doc, "flows", p, list))]
    streams = [_parse_stream(s, f"{p}.streams[{i}]") for i, s in enumerate(_get(doc, "streams", p, list))]

    adaptive = _get(doc, "adaptive_modulation", p, bool, False)
    s = Scenario(
        name=_get(doc, "name", p, str),
        duration_us=seconds_to_us(_number(doc, "duration_s", p)),
        seed=_int(doc, "seed", p, 1),
        nodes=nodes, flows=flows, streams=streams, frame=frame, pathloss=pathloss,
        subcarriers=plan,
        ber=_build(BerCurve, doc.get("ber", {}), f"{p}.ber", BER_KEYS),
        thresholds=_build(QosThresholds, doc.get("thresholds", {}), f"{p}.thresholds", THRESHOLD_KEYS),
        mtu_bytes=_int(doc, "mtu_bytes", p, 1500),
        max_pdu_payload_bytes=_int(doc, "max_pdu_payload_bytes", p, DEFAULT_MAX_PDU_PAYLOAD),
        queue_cap_bytes=_int(doc, "queue_cap_bytes", p, DEFAULT_QUEUE_CAP_BYTES),
        poll_interval_us=seconds_to_us(_number(doc, "poll_interval_s", p, 0.005)),
        tick_us=seconds_to_us(_number(doc, "tick_s", p, 1.0)),
        warmup_us=seconds_to_us(_number(doc, "warmup_s", p, 10.0)),
        adaptive_modulation=adaptive,
        base_dir=base_dir,
    )
    validate(s)
    return s


def validate(s: Scenario) -> None:
    p = "scenario"
    if s.duration_us <= 0:
        raise ScenarioError(f"{p}.duration_s", "must be > 0")
    if s.seed < 0:
        raise ScenarioError(f"{p}.seed", "must be >= 0")
    if s.mtu_bytes < 100:
        raise ScenarioError(f"{p}.mtu_bytes", "must be >= 100")
    if s.max_pdu_payload_bytes <= 0 or s.queue_cap_bytes <= 0:
        raise ScenarioError(p, "max_pdu_payload_bytes and queue_cap_bytes must be > 0")
    if s.poll_interval_us <= 0 or s.tick_us <= 0 or s.warmup_us < 0:
        raise ScenarioError(p, "poll_interval_s and tick_s must be > 0, warmup_s >= 0")

    ids = [n.id for n in s.nodes]
    dup = {i for i in ids if ids.count(i) > 1}
    if dup:
        raise ScenarioError(f"{p}.nodes", f"duplicate node id {sorted(dup)[0]!r}")
    kinds = [n.kind for n in s.nodes]
    if kinds.count("base_station") != 1:
        raise ScenarioError(f"{p}.nodes", "need exactly one base_station")
    if kinds.count("subscriber_station") < 1:
        raise ScenarioError(f"{p}.nodes", "need at least one subscriber_station")
    if kinds.count("server") > 1:
        raise ScenarioError(f"{p}.nodes", "at most one server")
    bs = s.base_station
    try:
        for n in s.nodes:
            if n.radio is not None:
                s.subcarriers.check(n.radio)
    except PhyError as exc:
        raise ScenarioError(f"{p}.subcarriers", str(exc)) from None
    for i, n in enumerate(s.nodes):
        if n.kind == "subscriber_station":
            d = math.dist(n.position, bs.position)
            floor = s.pathloss.reference_distance_m if s.pathloss.model == "suburban-erceg-C" else 0.0
            if d < floor or d == 0:
                raise ScenarioError(f"{p}.nodes[{i}].position",
                                    f"station is {d:.1f} m from the base station; model needs >= {floor} m")

    ss_ids = {n.id for n in s.subscribers}
    fids = [f.id for f in s.flows]
    if len(set(fids)) != len(fids):
        raise ScenarioError(f"{p}.flows", "duplicate flow id")
    seen = {}
    for i, f in enumerate(s.flows):
        if f.station not in ss_ids:
            raise ScenarioError(f"{p}.flows[{i}].station", f"{f.station!r} is not a subscriber_station")
        key = (f.direction, f.tos)
        if key in seen:
            raise ScenarioError(f"{p}.flows[{i}].tos",
                                f"tos {f.tos} already used on the {f.direction} by {seen[key]!r}")
        seen[key] = f.id

    sids = [st.id for st in s.streams]
    if len(set(sids)) != len(sids):
        raise ScenarioError(f"{p}.streams", "duplicate stream id")
    for i, st in enumerate(s.streams):
        if st.station not in ss_ids:
            raise ScenarioError(f"{p}.streams[{i}].station", f"{st.station!r} is not a subscriber_station")
        if st.start_us >= s.duration_us:
            raise ScenarioError(f"{p}.streams[{i}].start_s", "must be before the end of the run")
        flow = stream_flow(s, st)
        if flow is None:
            raise ScenarioError(f"{p}.streams[{i}].tos",
                                f"no {st.direction} flow with tos {st.tos} and no BE fallback")
        if flow.station != st.station:
            raise ScenarioError(f"{p}.streams[{i}].tos",
                                f"tos {st.tos} classifies onto flow {flow.id!r} at {flow.station!r}")


def stream_flow(s: Scenario, st: StreamSpec) -> FlowSpec | None:
    """ToS classification of a stream onto a flow (BE fallback)."""
    cands = [f for f in s.flows if f.direction == st.direction]
    for f in cands:
        if f.tos == st.tos:
            return f
    return next((f for f in cands if f.sched_class == SchedulingClass.BE.value), None)


def load_scenario(text: str, base_dir: str | None = None) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("scenario", f"invalid JSON: {exc}") from None
    return scenario_from_dict(doc, base_dir)


def read_scenario(path) -> Scenario:
    path = Path(path)
    return load_scenario(path.read_text("utf-8"), str(path.parent))


# ---------------------------------------------------------------- dumping

def _us_to_s(us: int) -> float:
    return us / US_PER_S


def scenario_to_dict(s: Scenario) -> dict:
    def radio(r: RadioConfig | None):
        return None if r is None else dict(r.__dict__)

    def synth(t: TraceSynth):
        return dict(t.__dict__)

    return {
        "name": s.name,
        "seed": s.seed,
        "duration_s": _us_to_s(s.duration_us),
        "warmup_s": _us_to_s(s.warmup_us),
        "tick_s": _us_to_s(s.tick_us),
        "mtu_bytes": s.mtu_bytes,
        "max_pdu_payload_bytes": s.max_pdu_payload_bytes,
        "queue_cap_bytes": s.queue_cap_bytes,
        "poll_interval_s": _us_to_s(s.poll_interval_us),
        "adaptive_modulation": s.adaptive_modulation,
        "frame": {"duration_s": _us_to_s(s.frame.duration_us), "dl_fraction": s.frame.dl_fraction},
        "pathloss": dict(s.pathloss.__dict__),
        "subcarriers": {k: getattr(s.subcarriers, v) for k, v in PLAN_KEYS.items()},
        "ber": dict(s.ber.__dict__),
        "thresholds": dict(s.thresholds.__dict__),
        "nodes": [
            {"id": n.id, "kind": n.kind, "position": list(n.position), "radio": radio(n.radio),
             "backhaul_delay_s": _us_to_s(n.backhaul_delay_us)}
            for n in s.nodes
        ],
        "flows": [
            {"id": f.id, "station": f.station, "direction": f.direction, "class": f.sched_class,
             "max_sustained_bps": f.max_sustained_bps, "min_reserved_bps": f.min_reserved_bps,
             "tos": f.tos, "burst_profile": f.burst_profile}
            for f in s.flows
        ],
        "streams": [
            {"id": st.id, "station": st.station, "tos": st.tos, "start_s": _us_to_s(st.start_us),
             "direction": st.direction,
             "trace": {"file": st.trace_file} if st.trace_file is not None else {"synth": synth(st.synth)}}
            for st in s.streams
        ],
    }


def dump_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2) + "\n"


def with_overrides(s: Scenario, **changes) -> Scenario:
    """Copy of ``s`` with top-level fields replaced, re-validated."""
    out = copy.deepcopy(s)
    for k, v in changes.items():
        if not hasattr(out, k):
            raise ScenarioError(f"scenario.{k}", "unknown field")
        setattr(out, k, v)
    validate(out)
    return out
