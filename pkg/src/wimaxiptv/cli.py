"""Command line: run, sweep, gen-trace, validate-trace, report.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

from .scenario.engine import RunError, run
from .scenario.model import ScenarioError, read_scenario, with_overrides
from .scenario.report import (ReportError, prepare_out_dir, read_run, summary_table, sweep_rows,
                              write_run, write_sweep)
from .scenario.sweep import parse_value, sweep
from .sim_core import RandomStream, seconds_to_us
from .traffic import TraceError, codec_profile, gen_gamma_trace, read_trace, trace_stats, write_trace

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def shipped_scenarios() -> list[str]:
    root = resources.files("wimaxiptv.data.scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_scenario(ref: str) -> Path:
    """A file path, or the name of a shipped scenario such as ``paper_svc``."""
    p = Path(ref)
    if p.exists():
        return p
    name = ref[:-5] if ref.endswith(".json") else ref
    if name in shipped_scenarios():
        return Path(str(resources.files("wimaxiptv.data.scenarios") / f"{name}.json"))
    raise ScenarioError(ref, f"no such file or shipped scenario (shipped: {', '.join(shipped_scenarios())})")


def _load(args):
    s = read_scenario(resolve_scenario(args.scenario))
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.duration is not None:
        if args.duration <= 0:
            raise UsageError("--duration must be > 0")
        changes["duration_us"] = seconds_to_us(args.duration)
    return with_overrides(s, **changes) if changes else s


def cmd_run(args) -> int:
    s = _load(args)
    out = prepare_out_dir(args.out or Path("results") / s.name, args.force)
    events = open(out / "events.tsv", "w", encoding="utf-8", newline="\n") if args.dump_events else None
    grants = open(out / "grants.tsv", "w", encoding="utf-8", newline="\n") if args.dump_grants else None
    try:
        result = run(s, event_trace=events, grant_log=grants)
    finally:
        for fh in (events, grants):
            if fh is not None:
                fh.close()
    write_run(result, out)
    if args.format != "csv-only":
        from .scenario.plots import plot_run
        plot_run(out, *read_run(out))
        print(f"scenario {s.name}  seed {s.seed}  {s.duration_us / 1e6:g} s simulated  "
              f"{result.dispatched} events  {result.wall_s:.1f} s wall")
        for lb in result.links:
            print(f"  {lb.station}: {lb.distance_m:.0f} m  pathloss {lb.pathloss_db:.1f} dB  "
                  f"DL SNR {lb.dl_snr_db:.1f} dB (supports {lb.dl_selected})  "
                  f"UL SNR {lb.ul_snr_db:.1f} dB (supports {lb.ul_selected})")
        print((out / "summary.txt").read_text(encoding="utf-8"), end="")
    print(f"results in {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    s = _load(args)
    values = [parse_value(v) for v in args.values.split(",")] if args.values.strip() else []
    out = prepare_out_dir(args.out or Path("results") / f"{s.name}-sweep", args.force)
    rows = sweep(s, args.axis, values, jobs=args.jobs)
    write_sweep(rows, args.axis, out)
    if args.format != "csv-only":
        _, table = sweep_rows(rows, args.axis)
        if table:
            from .scenario.plots import plot_sweep
            plot_sweep(out, args.axis, table)
        print((out / "summary.txt").read_text(encoding="utf-8"), end="")
    print(f"results in {out}")
    return EXIT_OK


def cmd_gen_trace(args) -> int:
    p = codec_profile(args.codec)
    mean = args.mean_bytes if args.mean_bytes is not None else p.mean_frame_bytes
    peak = args.peak_bytes if args.peak_bytes is not None else p.max_frame_bytes
    trace = gen_gamma_trace(mean, peak, args.frames, args.fps, args.gop,
                            RandomStream(args.seed, "traffic-gen"), codec=p.codec)
    write_trace(trace, args.out)
    st = trace_stats(trace)
    print(f"{args.out}: {st.frames} frames, mean {st.mean_size_bytes:.2f} B, max {st.max_size} B, "
          f"mean rate {st.mean_rate_bps / 1e6:.3f} Mbps")
    return EXIT_OK


def cmd_validate_trace(args) -> int:
    trace = read_trace(args.file)
    st = trace_stats(trace)
    psnr = "n/a" if st.mean_psnr_db is None else f"{st.mean_psnr_db:.2f} dB"
    print(f"{args.file}: ok  codec {trace.codec}  {trace.fps:g} fps  GOP {trace.gop_size}\n"
          f"  frames {st.frames}  size {st.min_size}..{st.max_size} B  mean {st.mean_size_bytes:.2f} B\n"
          f"  mean rate {st.mean_rate_bps / 1e6:.3f} Mbps  peak 1 s rate {st.peak_rate_bps / 1e6:.3f} Mbps  "
          f"peak frame rate {st.peak_frame_rate_bps / 1e6:.3f} Mbps  PSNR {psnr}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.dir)
    if not (out / "metrics.csv").exists():
        raise UsageError(f"{out}: no metrics.csv")
    metrics, series, links = read_run(out)
    text = summary_table(metrics)
    (out / "summary.txt").write_text(text, encoding="utf-8")
    if args.format != "csv-only":
        from .scenario.plots import plot_run
        plot_run(out, metrics, series, links)
        print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="wimaxiptv", description="WiMAX IPTV/VoD cell simulator")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scenario_args(p):
        p.add_argument("scenario", help="scenario JSON file or shipped name (paper_svc, paper_avc, low_snr, overload)")
        p.add_argument("--seed", type=int)
        p.add_argument("--duration", type=float, help="simulated seconds (overrides the scenario)")
        p.add_argument("--out", help="output directory (default results/<name>)")
        p.add_argument("--force", action="store_true", help="overwrite existing results")
        p.add_argument("--format", choices=("full", "csv-only"), default="full")

    p = sub.add_parser("run", help="simulate one scenario")
    scenario_args(p)
    p.add_argument("--dump-events", action="store_true", help="write events.tsv")
    p.add_argument("--dump-grants", action="store_true", help="write grants.tsv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="one run per value of a scenario field")
    scenario_args(p)
    p.add_argument("--axis", required=True, help="dotted field path, or codec / distance_km")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-trace", help="synthesize a gamma frame-size trace")
    p.add_argument("--codec", default="svc")
    p.add_argument("--mean-bytes", type=float)
    p.add_argument("--peak-bytes", type=int)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--gop", type=int, default=16)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("validate-trace", help="parse a trace file and print its statistics")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate_trace)

    p = sub.add_parser("report", help="re-render summary and figures from a results directory")
    p.add_argument("dir")
    p.add_argument("--format", choices=("full", "csv-only"), default="full")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, TraceError, ReportError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RunError, OSError, ArithmeticError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
