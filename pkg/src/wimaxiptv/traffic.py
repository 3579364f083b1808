"""Video workload: trace files, gamma trace synthesis, 30 fps emission, packetization.

Trace file layout (UTF-8, LF)::

    # codec=H264-SVC
    # fps=30
    # gop=16
    0	I	31245	47.89
    1	P	6012	47.89

The PSNR column is optional. Other ``# key=value`` header lines are kept as
opaque metadata; any other ``#`` line is ignored.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, TextIO

import numpy as np

from .sim_core import RandomStream, US_PER_S

IP_UDP_HEADER_BYTES = 40
FRAME_TYPES = ("I", "P", "B")


class TraceError(ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)


@dataclass(frozen=True)
class CodecProfile:
    codec: str
    compression_ratio: float
    min_frame_bytes: int
    max_frame_bytes: int
    mean_frame_bytes: float
    peak_rate_mbps: float
    mean_rate_mbps: float
    mean_psnr_db: float


# Tokyo Olympics traces, 30 fps, GOP 16.
AVC = CodecProfile("H264-AVC", 21.7, 17, 62269, 7004.52, 14.92, 1.68, 46.49)
SVC = CodecProfile("H264-SVC", 18.01, 22, 58150, 8440.74, 13.9, 2.02, 47.89)
CODECS = {"H264-AVC": AVC, "H264-SVC": SVC}
CODEC_ALIASES = {"avc": "H264-AVC", "svc": "H264-SVC", "h264-avc": "H264-AVC", "h264-svc": "H264-SVC"}


def codec_profile(name: str) -> CodecProfile:
    key = CODEC_ALIASES.get(name.lower(), name)
    try:
        return CODECS[key]
    except KeyError:
        raise TraceError(f"unknown codec {name!r}") from None


@dataclass(frozen=True)
class VideoTraceRecord:
    index: int
    frame_type: str
    size_bytes: int
    psnr_db: float | None = None


@dataclass
class VideoTrace:
    codec: str
    records: list[VideoTraceRecord]
    fps: float = 30.0
    gop_size: int = 16
    meta: dict[str, str] = field(default_factory=dict)
    mean_psnr_db: float | None = field(default=None)

    def __post_init__(self):
        self.fps = float(self.fps)
        if self.fps <= 0:
            raise TraceError("fps must be > 0")
        if self.gop_size < 1:
            raise TraceError("gop must be >= 1")
        if not self.records:
            raise TraceError("empty trace")
        if self.mean_psnr_db is None:
            self.mean_psnr_db = _mean_psnr(self.codec, self.records)

    def __len__(self) -> int:
        return len(self.records)

    def sizes(self) -> np.ndarray:
        return np.fromiter((r.size_bytes for r in self.records), dtype=np.int64, count=len(self.records))


def _mean_psnr(codec: str, records: list[VideoTraceRecord]) -> float | None:
    values = [r.psnr_db for r in records if r.psnr_db is not None]
    if values:
        return math.fsum(values) / len(values)
    key = CODEC_ALIASES.get(codec.lower(), codec)
    return CODECS[key].mean_psnr_db if key in CODECS else None


def parse_trace(source: str | TextIO) -> VideoTrace:
    stream = io.StringIO(source) if isinstance(source, str) else source
    header: dict[str, str] = {}
    records: list[VideoTraceRecord] = []
    for lineno, raw in enumerate(stream, 1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                header[key.strip()] = value.strip()
            continue
        parts = line.split("\t")
        if len(parts) not in (3, 4):
            raise TraceError(f"expected 3 or 4 tab-separated fields, got {len(parts)}", lineno)
        try:
            index = int(parts[0])
            size = int(parts[2])
            psnr = float(parts[3]) if len(parts) == 4 and parts[3].strip() else None
        except ValueError as exc:
            raise TraceError(str(exc), lineno) from None
        ftype = parts[1].strip()
        if ftype not in FRAME_TYPES:
            raise TraceError(f"frame type {ftype!r} not one of I/P/B", lineno)
        if index != len(records):
            raise TraceError(f"frame index {index}, expected {len(records)}", lineno)
        if size < 1:
            raise TraceError(f"frame size {size} must be >= 1", lineno)
        records.append(VideoTraceRecord(index, ftype, size, psnr))
    if not records:
        raise TraceError("empty trace")
    codec = header.pop("codec", "other")
    try:
        fps = float(header.pop("fps", "30"))
        gop = int(header.pop("gop", "16"))
    except ValueError as exc:
        raise TraceError(f"bad header: {exc}") from None
    return VideoTrace(codec, records, fps, gop, header)


def read_trace(path) -> VideoTrace:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh)


def serialize_trace(trace: VideoTrace) -> str:
    out = [f"# codec={trace.codec}", f"# fps={trace.fps!r}", f"# gop={trace.gop_size}"]
    out += [f"# {k}={v}" for k, v in sorted(trace.meta.items())]
    for r in trace.records:
        row = f"{r.index}\t{r.frame_type}\t{r.size_bytes}"
        if r.psnr_db is not None:
            row += f"\t{r.psnr_db!r}"
        out.append(row)
    return "\n".join(out) + "\n"


def write_trace(trace: VideoTrace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_trace(trace))


@dataclass(frozen=True)
class TraceStats:
    frames: int
    min_size: int
    max_size: int
    mean_size_bytes: float
    mean_rate_bps: float
    peak_rate_bps: float
    peak_frame_rate_bps: float
    mean_psnr_db: float | None


def trace_stats(trace: VideoTrace) -> TraceStats:
    """Size and rate statistics.

    ``peak_rate_bps`` is the busiest one-second window (``round(fps)``
    consecutive frames). ``peak_frame_rate_bps`` is the largest frame
    sustained at the frame rate, which is how the ASU trace tables quote
    their peak rate.
    """
    sizes = trace.sizes()
    n = len(sizes)
    total = int(sizes.sum())
    mean = total / n
    window = max(1, min(n, round(trace.fps)))
    csum = np.concatenate(([0], np.cumsum(sizes)))
    peak_window = int((csum[window:] - csum[:-window]).max())
    return TraceStats(
        frames=n,
        min_size=int(sizes.min()),
        max_size=int(sizes.max()),
        mean_size_bytes=mean,
        mean_rate_bps=mean * 8 * trace.fps,
        peak_rate_bps=peak_window * 8 * trace.fps / window,
        peak_frame_rate_bps=int(sizes.max()) * 8 * trace.fps,
        mean_psnr_db=trace.mean_psnr_db,
    )


def gen_gamma_trace(target_mean_bytes: float, target_peak_bytes: int, n_frames: int,
                    fps: float = 30.0, gop_size: int = 16, stream: RandomStream | None = None,
                    codec: str = "other", psnr_db: float | None = None,
                    shape: float = 2.0, i_to_p_ratio: float = 4.0) -> VideoTrace:
    """Synthesize an IPPP... trace with gamma-distributed frame sizes.

    I and P frames are drawn from gamma distributions with the same shape,
    the I mean being ``i_to_p_ratio`` times the P mean. One common scale is
    then solved by bisection so that the mean of the rounded, clamped sizes
    lands on ``target_mean_bytes``.
    """
    if not 0 < target_mean_bytes < target_peak_bytes:
        raise TraceError("need 0 < target_mean_bytes < target_peak_bytes")
    if n_frames < gop_size:
        raise TraceError("n_frames must be >= gop_size")
    if stream is None:
        stream = RandomStream(0, "traffic-gen")
    is_i = (np.arange(n_frames) % gop_size) == 0
    weights = stream.generator.gamma(shape, 1.0, n_frames) / shape
    weights[is_i] *= i_to_p_ratio

    def realized(scale: float) -> np.ndarray:
        return np.clip(np.rint(weights * scale), 1, target_peak_bytes)

    lo, hi = 0.0, target_mean_bytes / max(weights.mean(), 1e-12)
    while realized(hi).mean() < target_mean_bytes:
        hi *= 2
    for _ in range(80):
        mid = (lo + hi) / 2
        if realized(mid).mean() < target_mean_bytes:
            lo = mid
        else:
            hi = mid
    below, above = realized(lo), realized(hi)
    pick = below if abs(below.mean() - target_mean_bytes) <= abs(above.mean() - target_mean_bytes) else above
    sizes = pick.astype(np.int64)

    if psnr_db is None:
        key = CODEC_ALIASES.get(codec.lower(), codec)
        psnr_db = CODECS[key].mean_psnr_db if key in CODECS else None
    records = [VideoTraceRecord(i, "I" if is_i[i] else "P", int(s), psnr_db)
               for i, s in enumerate(sizes.tolist())]
    return VideoTrace(codec, records, fps, gop_size)


@dataclass(frozen=True)
class StreamProfile:
    start_us: int = 70 * US_PER_S
    mode: str = "simultaneous"
    direction: str = "downlink"


def emission_time_us(start_us: int, k: int, fps: float) -> int:
    """Start plus ``k / fps`` seconds, rounded once so error never accumulates."""
    return start_us + round(Fraction(k * US_PER_S) / Fraction(fps))


def streaming_source(trace: VideoTrace, profile: StreamProfile) -> Iterator[tuple[int, VideoTraceRecord]]:
    """Yield ``(emission_time_us, record)`` for every frame in order."""
    for k, rec in enumerate(trace.records):
        yield emission_time_us(profile.start_us, k, trace.fps), rec


def packetize(frame_bytes: int, mtu_bytes: int = 1500,
              header_bytes: int = IP_UDP_HEADER_BYTES) -> list[int]:
    """Payload size of each IP packet carrying one video frame."""
    if frame_bytes < 1:
        raise TraceError("frame_bytes must be >= 1")
    if mtu_bytes < 100:
        raise TraceError("mtu must be >= 100")
    payload = mtu_bytes - header_bytes
    full, tail = divmod(frame_bytes, payload)
    return [payload] * full + ([tail] if tail else [])
