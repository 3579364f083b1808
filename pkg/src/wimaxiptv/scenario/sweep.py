"""One-axis parameter sweeps over a scenario.

An axis is a dotted path into the canonical scenario document, e.g.
``frame.dl_fraction`` or ``flows.dl-ss1.max_sustained_bps``. List segments
pick items by ``id``, by integer index, or all of them with ``*``. Two
shorthand axes exist: ``codec`` (``AVC``/``SVC`` preset for every synthetic
stream) and ``distance_km`` (every subscriber moved radially to that range).
"""

from __future__ import annotations

import copy
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any

from ..metrics import FlowMetrics
from ..traffic import TraceError, codec_profile
from .engine import run
from .model import Scenario, ScenarioError, scenario_from_dict, scenario_to_dict

ALIASES = ("codec", "distance_km")


@dataclass
class SweepRow:
    value: Any
    flow_id: str
    station: str
    profile: str
    snr_db: float
    metrics: FlowMetrics


def parse_value(text: str) -> Any:
    """CLI value: JSON scalar when it parses as one, else the raw string."""
    try:
        v = json.loads(text)
    except ValueError:
        return text
    return v if isinstance(v, (int, float, str, bool)) else text


def _targets(doc: dict, axis: str) -> list[tuple[Any, Any]]:
    parts = axis.split(".")
    if not axis or any(not p for p in parts):
        raise ScenarioError(axis or "<axis>", "empty path segment")
    nodes: list[Any] = [doc]
    for depth, part in enumerate(parts):
        where = ".".join(parts[:depth + 1])
        last = depth == len(parts) - 1
        found = []
        for node in nodes:
            if isinstance(node, dict):
                if part not in node:
                    raise ScenarioError(where, "no such field")
                found.append((node, part))
            elif isinstance(node, list):
                if part == "*":
                    found += [(node, i) for i in range(len(node))]
                    continue
                ids = [i for i, item in enumerate(node) if isinstance(item, dict) and item.get("id") == part]
                if ids:
                    found.append((node, ids[0]))
                elif part.lstrip("-").isdigit() and -len(node) <= int(part) < len(node):
                    found.append((node, int(part)))
                else:
                    raise ScenarioError(where, "no list item with that id or index")
            else:
                raise ScenarioError(where, "cannot descend into a scalar")
        if not found:
            raise ScenarioError(where, "matches nothing")
        if last:
            for parent, key in found:
                if isinstance(parent[key], (dict, list)):
                    raise ScenarioError(where, "must name a number or string field")
            return found
        nodes = [parent[key] for parent, key in found]
    raise AssertionError("unreachable")


def _apply_codec(doc: dict, value: Any) -> None:
    try:
        p = codec_profile(str(value))
    except TraceError as exc:
        raise ScenarioError("codec", str(exc)) from None
    synths = [st["trace"]["synth"] for st in doc["streams"] if "synth" in st["trace"]]
    if not synths:
        raise ScenarioError("codec", "scenario has no synthetic streams")
    for syn in synths:
        syn.update(codec=p.codec, mean_bytes=p.mean_frame_bytes, peak_bytes=p.max_frame_bytes,
                   psnr_db=p.mean_psnr_db)


def _apply_distance(doc: dict, value: Any) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
        raise ScenarioError("distance_km", "must be a positive number")
    bs = next(n for n in doc["nodes"] if n["kind"] == "base_station")
    bx, by = bs["position"]
    for n in doc["nodes"]:
        if n["kind"] != "subscriber_station":
            continue
        x, y = n["position"]
        a = math.atan2(y - by, x - bx)
        n["position"] = [bx + value * 1000.0 * math.cos(a), by + value * 1000.0 * math.sin(a)]


def apply_axis(doc: dict, axis: str, value: Any) -> dict:
    """Copy of the canonical document with ``axis`` set to ``value``."""
    out = copy.deepcopy(doc)
    if axis == "codec":
        _apply_codec(out, value)
    elif axis == "distance_km":
        _apply_distance(out, value)
    else:
        for parent, key in _targets(out, axis):
            parent[key] = value
    return out


def sweep_scenarios(base: Scenario, axis: str, values: list) -> list[Scenario]:
    """Build and validate every variant; any bad axis or value fails before a run starts."""
    doc = scenario_to_dict(base)
    if axis not in ALIASES:
        _targets(doc, axis)
    return [scenario_from_dict(apply_axis(doc, axis, v), base.base_dir) for v in values]


def _run_rows(args) -> list[SweepRow]:
    value, s = args
    r = run(s)
    return [SweepRow(value, f.flow_id, f.station, f.profile, f.snr_db, f.metrics) for f in r.flows.values()]


def sweep(base: Scenario, axis: str, values: list, jobs: int = 1) -> list[SweepRow]:
    """One independent run per value, rows in ``values`` order."""
    scenarios = sweep_scenarios(base, axis, values)
    work = list(zip(values, scenarios))
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(work))) as pool:
            chunks = list(pool.map(_run_rows, work))
    else:
        chunks = [_run_rows(w) for w in work]
    return [row for chunk in chunks for row in chunk]
