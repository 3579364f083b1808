"""CSV output and the human-readable summary table.

Floats are written with ``repr`` so a rerun with the same seed reproduces
every file byte for byte. Undefined metrics are written as empty cells.
"""

from __future__ import annotations

import csv
import io
import os
from pathlib import Path

from ..metrics import FlowMetrics, QosThresholds
from .engine import RunResult
from .model import dump_scenario
from .sweep import SweepRow

METRIC_COLUMNS = ["flow_id", "codec", "sent", "received", "lost_phy", "lost_mac", "delay_avg_s",
                  "delay_max_s", "jitter_avg_s", "throughput_bps", "loss_ratio", "psnr_db", "mos",
                  "verdict"]
SERIES_COLUMNS = ["t_s", "delay_s", "jitter_s", "throughput_bps"]
LINK_COLUMNS = ["station", "distance_m", "pathloss_db", "dl_snr_db", "ul_snr_db", "dl_selected",
                "ul_selected"]
SWEEP_EXTRA = ["station", "profile", "snr_db"]
OUTPUT_FILES = ("metrics.csv", "links.csv", "summary.txt", "scenario.json", "sweep.csv")


class ReportError(OSError):
    pass


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_row(m: FlowMetrics) -> dict[str, str]:
    vals = {c: getattr(m, c) for c in METRIC_COLUMNS if c != "verdict"}
    vals["verdict"] = m.verdict.overall if m.verdict else ""
    return {k: _cell(v) for k, v in vals.items()}


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_csv(path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def prepare_out_dir(out_dir, force: bool = False) -> Path:
    """Create ``out_dir`` or check it can be reused; called before any simulation."""
    p = Path(out_dir)
    if p.exists():
        if not p.is_dir():
            raise ReportError(f"{p}: not a directory")
        existing = [f for f in os.listdir(p) if f in OUTPUT_FILES or f.startswith("series_")]
        if existing and not force:
            raise ReportError(f"{p}: already holds results ({existing[0]}); use --force to overwrite")
    else:
        try:
            p.mkdir(parents=True)
        except OSError as exc:
            raise ReportError(f"{p}: cannot create ({exc.strerror})") from None
    if not os.access(p, os.W_OK | os.X_OK):
        raise ReportError(f"{p}: not writable")
    return p


def write_run(result: RunResult, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    rows = [metrics_row(f.metrics) for f in result.flows.values()]
    _write_csv(out / "metrics.csv", METRIC_COLUMNS, rows)
    written.append(out / "metrics.csv")
    links = [{c: _cell(getattr(lb, c)) for c in LINK_COLUMNS} for lb in result.links]
    _write_csv(out / "links.csv", LINK_COLUMNS, links)
    written.append(out / "links.csv")
    for fid, f in result.flows.items():
        s = f.series
        series = [{"t_s": _cell(t), "delay_s": _cell(d), "jitter_s": _cell(j), "throughput_bps": _cell(tp)}
                  for t, d, j, tp in zip(s.t_s, s.delay_s, s.jitter_s, s.throughput_bps)]
        path = out / f"series_{fid}.csv"
        _write_csv(path, SERIES_COLUMNS, series)
        written.append(path)
    (out / "scenario.json").write_text(dump_scenario(result.scenario), encoding="utf-8")
    written.append(out / "scenario.json")
    (out / "summary.txt").write_text(summary_table(rows, result.scenario.thresholds), encoding="utf-8")
    written.append(out / "summary.txt")
    return written


def sweep_rows(rows: list[SweepRow], axis: str) -> tuple[list[str], list[dict[str, str]]]:
    columns = [axis, METRIC_COLUMNS[0], *SWEEP_EXTRA, *METRIC_COLUMNS[1:]]
    out = []
    for r in rows:
        d = {axis: _cell(r.value), "station": r.station, "profile": r.profile, "snr_db": _cell(r.snr_db)}
        d.update(metrics_row(r.metrics))
        out.append(d)
    return columns, out


def write_sweep(rows: list[SweepRow], axis: str, out_dir) -> Path:
    columns, table = sweep_rows(rows, axis)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    path = Path(out_dir) / "sweep.csv"
    _write_csv(path, columns, table)
    (Path(out_dir) / "summary.txt").write_text(summary_table(table, axis=axis), encoding="utf-8")
    return path


def _num(s: str | None) -> float | None:
    return float(s) if s not in (None, "") else None


def _fmt(v: float | None, scale: float, spec: str) -> str:
    return "n/a" if v is None else format(v * scale, spec)


def summary_table(rows: list[dict[str, str]], thresholds: QosThresholds = QosThresholds(),
                  axis: str | None = None) -> str:
    """Per-flow table: throughput, delay, jitter, loss, PSNR/MOS and verdicts."""
    head = ([axis] if axis else []) + ["flow", "codec", "thru Mbps", "delay ms", "", "jitter ms", "",
                                       "loss %", "PSNR dB", "MOS", "verdict"]
    body = []
    for r in rows:
        delay, jit = _num(r.get("delay_avg_s")), _num(r.get("jitter_avg_s"))
        loss, psnr = _num(r.get("loss_ratio")), _num(r.get("psnr_db"))
        delay_flag = "" if delay is None else ("<200" if delay < thresholds.delay_max_s else "HIGH")
        jit_flag = "" if jit is None else ("<10" if jit < thresholds.jitter_ideal_s else
                                           "ok" if jit < thresholds.jitter_avg_max_s else "HIGH")
        line = ([r[axis]] if axis else []) + [
            r["flow_id"], r.get("codec", ""), _fmt(_num(r["throughput_bps"]), 1e-6, ".3f"),
            _fmt(delay, 1e3, ".2f"), delay_flag, _fmt(jit, 1e3, ".3f"), jit_flag,
            _fmt(loss, 100, ".3f"), _fmt(psnr, 1, ".2f"), r.get("mos", ""), r.get("verdict", ""),
        ]
        body.append(line)
    widths = [max(len(str(x)) for x in col) for col in zip(head, *body)]
    buf = io.StringIO()
    for line in [head, ["-" * w for w in widths], *body]:
        buf.write("  ".join(str(x).ljust(w) for x, w in zip(line, widths)).rstrip() + "\n")
    return buf.getvalue()


def read_run(out_dir) -> tuple[list[dict[str, str]], dict[str, list[dict[str, str]]], list[dict[str, str]]]:
    """metrics rows, series per flow and link rows of a run directory."""
    out = Path(out_dir)
    metrics = read_csv(out / "metrics.csv")
    series = {r["flow_id"]: read_csv(out / f"series_{r['flow_id']}.csv") for r in metrics
              if (out / f"series_{r['flow_id']}.csv").exists()}
    links = read_csv(out / "links.csv") if (out / "links.csv").exists() else []
    return metrics, series, links
