"""PNG figures rendered from the CSV outputs (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _col(rows, key, scale=1.0):
    return [float(r[key]) * scale if r[key] != "" else float("nan") for r in rows]


def _series_fig(series, key, scale, ylabel, title, path):
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for fid, rows in series.items():
        ax.plot(_col(rows, "t_s"), _col(rows, key, scale), label=fid, linewidth=0.9)
    ax.set_xlabel("simulation time (s)")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if series:
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_run(out_dir, metrics, series, links) -> list[Path]:
    """delay.png, jitter.png, throughput.png and link.png for one run directory."""
    out = Path(out_dir)
    paths = [
        _series_fig(series, "delay_s", 1e3, "end-to-end delay (ms)", "Video E2E delay", out / "delay.png"),
        _series_fig(series, "jitter_s", 1e3, "jitter (ms)", "Video jitter", out / "jitter.png"),
        _series_fig(series, "throughput_bps", 1e-6, "throughput (Mbps)", "Video throughput",
                    out / "throughput.png"),
    ]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 4))
    a1.bar([r["station"] for r in links], _col(links, "dl_snr_db"))
    a1.axhline(24.4, color="k", linestyle="--", linewidth=0.8)
    a1.set_ylabel("downlink SNR (dB)")
    a1.set_title("Link SNR (dashed: 64-QAM 3/4 threshold)", fontsize="small")
    a2.bar([r["flow_id"] for r in metrics], _col(metrics, "loss_ratio", 100))
    a2.set_ylabel("packet loss (%)")
    a2.set_title("Loss per flow", fontsize="small")
    a2.tick_params(axis="x", labelrotation=45)
    fig.tight_layout()
    fig.savefig(out / "link.png", dpi=110)
    plt.close(fig)
    paths.append(out / "link.png")
    return paths


def plot_sweep(out_dir, axis, rows) -> Path | None:
    """Mean delay and throughput against the swept value, one line per flow."""
    by_flow: dict[str, list[dict]] = {}
    for r in rows:
        by_flow.setdefault(r["flow_id"], []).append(r)
    try:
        [float(r[axis]) for r in rows]
        numeric = True
    except ValueError:
        numeric = False
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(10, 4))
    for fid, fr in by_flow.items():
        x = _col(fr, axis) if numeric else [r[axis] for r in fr]
        a1.plot(x, _col(fr, "throughput_bps", 1e-6), marker="o", label=fid)
        a2.plot(x, _col(fr, "delay_avg_s", 1e3), marker="o", label=fid)
    a1.set_ylabel("throughput (Mbps)")
    a2.set_ylabel("mean delay (ms)")
    for ax in (a1, a2):
        ax.set_xlabel(axis)
        ax.grid(True, alpha=0.3)
    a1.legend(fontsize="small")
    fig.tight_layout()
    path = Path(out_dir) / "sweep.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
