import json
import math
import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import shipped
from wimaxiptv.cli import main, shipped_scenarios
from wimaxiptv.scenario.engine import granted_window_max_bps, run
from wimaxiptv.scenario.model import (ScenarioError, dump_scenario, hexagon_positions, load_scenario,
                                      scenario_to_dict)
from wimaxiptv.scenario.report import ReportError, prepare_out_dir, read_csv
from wimaxiptv.scenario.sweep import apply_axis, parse_value, sweep, sweep_scenarios


def test_shipped_scenarios_load():
    assert shipped_scenarios() == ["low_snr", "overload", "paper_avc", "paper_svc"]
    s = shipped("paper_svc")
    assert len(s.subscribers) == 5 and s.base_station.radio.tx_power_dbm == 35.8
    assert s.duration_us == (74 * 60 + 70) * 1_000_000
    for n in s.subscribers:
        assert math.hypot(*n.position) == pytest.approx(1000.0, abs=1e-6)
    dl = [f for f in s.flows if f.direction == "downlink" and f.sched_class == "rtPS"]
    assert {(f.max_sustained_bps, f.min_reserved_bps, f.burst_profile) for f in dl} == \
           {(5_000_000, 1_000_000, "64-QAM 3/4")}
    ul = [f for f in s.flows if f.direction == "uplink" and f.sched_class == "rtPS"]
    assert {f.burst_profile for f in ul} == {"16-QAM 3/4"}
    assert all(st.synth.frames == 133_200 for st in s.streams)


@pytest.mark.parametrize("name", ["paper_svc", "paper_avc", "low_snr", "overload"])
def test_dump_round_trip(name):
    s = shipped(name)
    text = dump_scenario(s)
    back = load_scenario(text)
    assert back == s
    assert dump_scenario(back) == text


def test_duplicate_tos_is_load_error():
    d = scenario_to_dict(shipped("paper_svc"))
    d["flows"][2]["tos"] = d["flows"][0]["tos"]
    with pytest.raises(ScenarioError) as exc:
        load_scenario(json.dumps(d))
    assert "tos" in str(exc.value)


@pytest.mark.parametrize("mutate, where", [
    (lambda d: d.pop("nodes"), "nodes"),
    (lambda d: d["frame"].update(dl_fraction=1.5), "frame"),
    (lambda d: d["nodes"][2].update(position=[50.0, 0.0]), "nodes[2]"),
    (lambda d: d["flows"][0].update(burst_profile="256-QAM"), "flows[0]"),
    (lambda d: d.update(bogus=1), "scenario"),
    (lambda d: d.update(duration_s=10.0), "start_s"),
])
def test_schema_errors_name_the_field(mutate, where):
    d = scenario_to_dict(shipped("paper_svc"))
    mutate(d)
    with pytest.raises(ScenarioError) as exc:
        load_scenario(json.dumps(d))
    assert where in exc.value.path or where in str(exc.value)


def test_hexagon():
    pts = hexagon_positions(5, 1000)
    assert len(pts) == 5
    assert all(math.hypot(x, y) == pytest.approx(1000.0, abs=1e-6) for x, y in pts)
    assert hexagon_positions(1, 1000) == [(1000.0, 0.0)]
    with pytest.raises(ValueError):
        hexagon_positions(7, 1000)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.floats(1, 1e5))
def test_hexagon_properties(n, r):
    pts = hexagon_positions(n, r)
    for x, y in pts:
        assert abs(math.hypot(x, y) - r) <= 1e-6 * r
    full = hexagon_positions(6, r)
    c, s = math.cos(math.pi / 3), math.sin(math.pi / 3)
    for k, (x, y) in enumerate(full):
        nx, ny = full[(k + 1) % 6]
        assert (x * c - y * s) == pytest.approx(nx, abs=1e-6 * r)
        assert (x * s + y * c) == pytest.approx(ny, abs=1e-6 * r)


def test_short_run_conserves_and_is_deterministic(short_svc):
    a, b = run(short_svc), run(short_svc)
    for fid, f in a.flows.items():
        m = f.metrics
        assert m.sent == m.received + m.lost_phy + m.lost_mac + m.residual
        assert (m.delay_avg_s, m.jitter_avg_s, m.throughput_bps) == \
               (b.flows[fid].metrics.delay_avg_s, b.flows[fid].metrics.jitter_avg_s,
                b.flows[fid].metrics.throughput_bps)
    assert a.event_counts == b.event_counts


def test_seed_changes_only_noise(short_svc):
    from wimaxiptv.scenario.model import with_overrides
    a = run(short_svc)
    b = run(with_overrides(short_svc, seed=2))
    for fid in a.flows:
        ta, tb = a.flows[fid].metrics.throughput_bps, b.flows[fid].metrics.throughput_bps
        assert ta == pytest.approx(tb, rel=0.35)


def test_all_outage_completes():
    d = scenario_to_dict(shipped("low_snr"))
    for n in d["nodes"]:
        if n["kind"] == "subscriber_station":
            n["position"] = [v * 10 / 3 for v in n["position"]]
    d["duration_s"] = 90.0
    r = run(load_scenario(json.dumps(d)))
    for f in r.flows.values():
        assert f.metrics.loss_ratio == 1.0
        assert f.metrics.delay_avg_s is None
        assert f.metrics.verdict.overall == "fail"
    assert all(lb.dl_selected == "outage" for lb in r.links)


def test_granted_window():
    assert granted_window_max_bps([125_000] * 30, 1.0) == 1e6
    assert granted_window_max_bps([0] * 5 + [250_000] * 5, 1.0, 10.0) == 1e6


def test_parse_value():
    assert parse_value("0.5") == 0.5 and parse_value("3") == 3
    assert parse_value("SVC") == "SVC" and parse_value("true") is True


def test_axis_paths():
    s = shipped("paper_svc")
    doc = scenario_to_dict(s)
    d = apply_axis(doc, "flows.dl-ss1.max_sustained_bps", 3_000_000)
    assert d["flows"][0]["max_sustained_bps"] == 3_000_000
    d = apply_axis(doc, "flows.*.burst_profile", "16-QAM 3/4")
    assert {f["burst_profile"] for f in d["flows"]} == {"16-QAM 3/4"}
    d = apply_axis(doc, "nodes.1.radio.tx_power_dbm", 30.0)
    assert d["nodes"][1]["radio"]["tx_power_dbm"] == 30.0
    d = apply_axis(doc, "distance_km", 2)
    assert all(math.hypot(*n["position"]) == pytest.approx(2000) for n in d["nodes"]
               if n["kind"] == "subscriber_station")
    d = apply_axis(doc, "codec", "AVC")
    assert {st["trace"]["synth"]["mean_bytes"] for st in d["streams"]} == {7004.52}


@pytest.mark.parametrize("axis, values", [
    ("frame.nope", [1]), ("flows.ghost.tos", [1]), ("nodes", [1]), ("frame.dl_fraction", [2.0]),
    ("codec", ["VP9"]), ("distance_km", [-1]), ("", [1]),
])
def test_bad_axis_fails_before_running(axis, values):
    with pytest.raises(ScenarioError):
        sweep_scenarios(shipped("paper_svc"), axis, values)


def test_empty_sweep():
    assert sweep(shipped("paper_svc"), "frame.dl_fraction", []) == []


def test_distance_sweep_snr_monotone():
    rows = sweep(shipped("paper_svc", 72), "distance_km", [0.5, 1, 2, 4, 8])
    snr = [r.snr_db for r in rows if r.flow_id == "dl-ss1"]
    assert len(snr) == 5 and snr == sorted(snr, reverse=True)


def test_sweep_order_independent():
    base = shipped("paper_svc", 80)
    a = sweep(base, "frame.dl_fraction", [0.6, 0.7])
    b = sweep(base, "frame.dl_fraction", [0.7, 0.6], jobs=2)
    key = lambda r: (r.value, r.flow_id)  # noqa: E731
    assert sorted(((key(r), r.metrics) for r in a), key=lambda x: x[0]) == \
           sorted(((key(r), r.metrics) for r in b), key=lambda x: x[0])


def test_out_dir_checks(tmp_path):
    out = tmp_path / "r"
    prepare_out_dir(out)
    (out / "metrics.csv").write_text("x")
    with pytest.raises(ReportError):
        prepare_out_dir(out)
    prepare_out_dir(out, force=True)
    f = tmp_path / "file"
    f.write_text("")
    with pytest.raises(ReportError):
        prepare_out_dir(f)


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_unwritable_out_dir(tmp_path):
    ro = tmp_path / "ro"
    ro.mkdir()
    ro.chmod(0o500)
    with pytest.raises(ReportError):
        prepare_out_dir(ro)


def test_cli_run_and_report(tmp_path, capsys):
    out = tmp_path / "svc"
    assert main(["run", "paper_svc", "--duration", "82", "--out", str(out), "--dump-events",
                 "--dump-grants"]) == 0
    text = capsys.readouterr().out
    assert "dl-ss1" in text and "verdict" in text
    rows = read_csv(out / "metrics.csv")
    assert list(rows[0]) == ["flow_id", "codec", "sent", "received", "lost_phy", "lost_mac",
                             "delay_avg_s", "delay_max_s", "jitter_avg_s", "throughput_bps",
                             "loss_ratio", "psnr_db", "mos", "verdict"]
    assert len(rows) == 5
    series = read_csv(out / "series_dl-ss1.csv")
    assert list(series[0]) == ["t_s", "delay_s", "jitter_s", "throughput_bps"] and len(series) == 82
    for png in ("delay.png", "jitter.png", "throughput.png", "link.png"):
        assert (out / png).stat().st_size > 1000
    ev = (out / "events.tsv").read_text().splitlines()
    rows_ev = [line.split("\t") for line in ev]
    assert rows_ev[0][0] == "0" and rows_ev[0][2] == "poll"
    keys = [(int(t), int(q)) for t, q, *_ in rows_ev]
    assert keys == sorted(keys, key=lambda k: k[0]) and len(set(keys)) == len(keys)
    gr = (out / "grants.tsv").read_text().splitlines()
    assert gr[0].split("\t")[0] == "0" and len(gr[0].split("\t")) == 4

    # rerun without --force refuses, with --force overwrites
    assert main(["run", "paper_svc", "--duration", "82", "--out", str(out)]) == 1
    assert main(["run", "paper_svc", "--duration", "82", "--out", str(out), "--force",
                 "--format", "csv-only"]) == 0
    assert "verdict" not in capsys.readouterr().out

    (out / "summary.txt").unlink()
    assert main(["report", str(out)]) == 0
    assert "dl-ss5" in (out / "summary.txt").read_text()


def test_cli_exit_codes(tmp_path, capsys):
    assert main([]) == 1
    assert main(["run"]) == 1
    assert main(["run", "nonexistent_scenario"]) == 1
    assert main(["frobnicate"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert main(["report", str(tmp_path / "missing")]) == 1
    assert main(["sweep", "paper_svc", "--axis", "frame.nope", "--values", "1",
                 "--out", str(tmp_path / "s")]) == 1


def test_cli_runtime_failure_exit_code(tmp_path, monkeypatch):
    import wimaxiptv.cli as cli
    from wimaxiptv.scenario.engine import RunError

    def boom(*a, **k):
        raise RunError("conservation violated")

    monkeypatch.setattr(cli, "run", boom)
    assert main(["run", "paper_svc", "--duration", "75", "--out", str(tmp_path / "x")]) == 2


def test_cli_trace_tools(tmp_path, capsys):
    path = tmp_path / "svc.tsv"
    assert main(["gen-trace", "--codec", "svc", "--mean-bytes", "8440.74", "--peak-bytes", "58150",
                 "--frames", "3000", "--out", str(path)]) == 0
    assert main(["validate-trace", str(path)]) == 0
    assert "H264-SVC" in capsys.readouterr().out
    path.write_text("0\tI\t0\n")
    assert main(["validate-trace", str(path)]) == 1
    assert "line 1" in capsys.readouterr().err


def test_cli_sweep(tmp_path, capsys):
    out = tmp_path / "sw"
    assert main(["sweep", "paper_svc", "--duration", "80", "--axis", "codec", "--values", "AVC,SVC",
                 "--out", str(out)]) == 0
    rows = read_csv(out / "sweep.csv")
    assert [r["codec"] for r in rows][:1] == ["H264-AVC"]
    assert {r["codec"] for r in rows} == {"H264-AVC", "H264-SVC"}
    assert (out / "sweep.png").exists()
