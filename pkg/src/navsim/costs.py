"""Transmission time, table-driven transcoding / super-resolution costs and monetary pricing."""

from __future__ import annotations

import csv
import enum
import re
from bisect import bisect_left
from dataclasses import dataclass
from typing import Optional

from .catalog import Ladder


class Infeasible(ValueError):
    pass


class MissingProfile(KeyError):
    pass


class NodeClass(str, enum.Enum):
    EDGE = "Edge"
    PEER_PC = "PeerPC"
    PEER_MOBILE = "PeerMobile"

    @classmethod
    def parse(cls, text: str) -> "NodeClass":
        key = str(text).replace("_", "").lower()
        for c in cls:
            if c.value.lower() == key:
                return c
        raise ValueError(f"unknown node class {text!r}")


@dataclass(frozen=True)
class CostRecord:
    """Whole-video values as published, plus the per-segment split."""
    time_s: float
    cpu_s: float
    power_mah: float
    vmaf: Optional[float]
    time_per_segment: float
    cpu_per_segment: float
    power_per_segment: float


@dataclass
class TranscodeProfile:
    rows: dict[tuple[int, int, NodeClass], tuple[float, float, float, Optional[float]]]
    video_duration: float = 180.0

    def __post_init__(self):
        for (bin_, bout, _), vals in self.rows.items():
            if bout >= bin_:
                raise ValueError(f"profile row {bin_}->{bout}: output must be below input")
            if any(v is not None and v < 0 for v in vals):
                raise ValueError(f"profile row {bin_}->{bout}: negative value")
        self._index: dict[tuple[int, NodeClass], list[int]] = {}
        for (bin_, bout, cls) in self.rows:
            self._index.setdefault((bin_, cls), []).append(bout)
        for outs in self._index.values():
            outs.sort()

    def inputs(self, node_class: NodeClass) -> list[int]:
        return sorted({bin_ for (bin_, cls) in self._index if cls == node_class})

    def outputs(self, input_bitrate: int, node_class: NodeClass) -> list[int]:
        return self._index.get((input_bitrate, node_class), [])


@dataclass
class SrProfile:
    rows: dict[tuple[int, int, NodeClass], tuple[float, float, Optional[float]]]  # time, power per segment, vmaf

    def __post_init__(self):
        for (i, o, _) in self.rows:
            if o != i + 1:
                raise ValueError("super-resolution rows must go up exactly one rung")


@dataclass(frozen=True)
class PriceBook:
    bw_price: float       # dollars per bit
    compute_price: float  # dollars per cpu-second

    def __post_init__(self):
        if self.bw_price < 0 or self.compute_price < 0:
            raise ValueError("prices must be non-negative")

    @classmethod
    def from_billing_units(cls, usd_per_gb: float = 0.12, usd_per_cpu_hour: float = 0.029) -> "PriceBook":
        return cls(usd_per_gb / 8e9, usd_per_cpu_hour / 3600.0)


def transmission_time(size_bits: float, bandwidth_bps: float) -> float:
    if size_bits == 0:
        return 0.0
    if not bandwidth_bps > 0:
        raise Infeasible("no bandwidth on this leg")
    return size_bits / bandwidth_bps


def monetary_cost(bits: float, cpu_seconds: float, pricebook: PriceBook) -> tuple[float, float, float]:
    if bits < 0 or cpu_seconds < 0:
        raise ValueError("inputs must be non-negative")
    bw = bits * pricebook.bw_price
    cpu = cpu_seconds * pricebook.compute_price
    return bw, cpu, bw + cpu


def transcode_lookup(profile: TranscodeProfile, input_bitrate: int, output_bitrate: int, node_class: NodeClass,
                     segment_duration: float = 2.0) -> CostRecord:
    if output_bitrate >= input_bitrate:
        raise ValueError("transcoding must lower the bitrate")
    node_class = NodeClass(node_class)
    outs = profile.outputs(input_bitrate, node_class)
    if not outs:
        raise MissingProfile((input_bitrate, node_class.value))

    def row(out):
        return profile.rows[(input_bitrate, out, node_class)]

    pos = bisect_left(outs, output_bitrate)
    if pos < len(outs) and outs[pos] == output_bitrate:
        time_s, cpu_s, power, vmaf = row(output_bitrate)
    elif pos == 0 or pos == len(outs):
        # outside the tabulated range: clamp to the nearest row
        time_s, cpu_s, power, vmaf = row(outs[0] if pos == 0 else outs[-1])
    else:
        lo, hi = outs[pos - 1], outs[pos]
        w = (output_bitrate - lo) / (hi - lo)
        a, b = row(lo), row(hi)
        time_s, cpu_s, power = (a[k] + w * (b[k] - a[k]) for k in range(3))
        vmaf = None if a[3] is None or b[3] is None else a[3] + w * (b[3] - a[3])
    n = profile.video_duration / segment_duration
    return CostRecord(time_s, cpu_s, power, vmaf, time_s / n, cpu_s / n, power / n)


def _opt_float(text) -> Optional[float]:
    text = (text or "").strip()
    return float(text) if text else None


def _header_params(lines) -> dict[str, float]:
    params = {}
    for line in lines:
        if line.startswith("#"):
            for key, value in re.findall(r"(\w+)\s*=\s*([-\d.eE+]+)", line):
                params[key] = float(value)
    return params


def load_transcode_profile(path) -> TranscodeProfile:
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    params = _header_params(lines)
    reader = csv.DictReader(l for l in lines if l.strip() and not l.startswith("#"))
    rows = {}
    for rec in reader:
        key = (int(round(float(rec["in_kbps"]) * 1000)), int(round(float(rec["out_kbps"]) * 1000)),
               NodeClass.parse(rec["class"]))
        time_s = float(rec["time_s"])
        cpu = _opt_float(rec.get("cpu_s"))
        rows[key] = (time_s, time_s if cpu is None else cpu, _opt_float(rec.get("power_mah")) or 0.0,
                     _opt_float(rec.get("vmaf")))
    return TranscodeProfile(rows, params.get("video_duration_s", 180.0))


def load_sr_profile(path) -> SrProfile:
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    reader = csv.DictReader(l for l in lines if l.strip() and not l.startswith("#"))
    rows = {}
    for rec in reader:
        key = (int(rec["in_index"]), int(rec["out_index"]), NodeClass.parse(rec["class"]))
        rows[key] = (float(rec["time_s"]), float(rec["power_mah"]), _opt_float(rec.get("vmaf")))
    return SrProfile(rows)


@dataclass(frozen=True)
class TransformCost:
    time: float       # seconds of processing per segment
    cpu: float        # cpu-seconds per segment
    power: float      # mAh per segment (peers only)


class CostModel:
    """Per-segment transform costs bound to one ladder.

    Ladder rungs are matched to the nearest tabulated input bitrate within `snap_tolerance`
    (the tables were measured at 4219k/2484k while ladders quote 4.2M/2.4M).
    Edge transcoding reuses the PeerPC rows scaled by `edge_speed_factor`.
    """

    def __init__(self, ladder: Ladder, transcode: TranscodeProfile, sr: Optional[SrProfile], pricebook: PriceBook,
                 edge_speed_factor: float = 1.0, cores_used: float = 1.0, snap_tolerance: float = 0.05):
        self.ladder = ladder
        self.transcode = transcode
        self.sr = sr
        self.pricebook = pricebook
        self.edge_speed_factor = edge_speed_factor
        self.cores_used = cores_used
        self.snap_tolerance = snap_tolerance
        self._tr: dict = {}
        self._sr: dict = {}

    def _snap_input(self, bitrate: int, cls: NodeClass) -> int:
        inputs = self.transcode.inputs(cls)
        if not inputs:
            raise MissingProfile((bitrate, cls.value))
        best = min(inputs, key=lambda b: (abs(b - bitrate), b))
        if abs(best - bitrate) > self.snap_tolerance * bitrate:
            raise MissingProfile((bitrate, cls.value))
        return best

    def tr(self, src_index: int, dst_index: int, cls: NodeClass) -> TransformCost:
        key = (src_index, dst_index, cls)
        hit = self._tr.get(key)
        if hit is not None:
            return hit
        table_cls = NodeClass.PEER_PC if cls == NodeClass.EDGE else cls
        src_bps = self._snap_input(self.ladder[src_index].bitrate, table_cls)
        rec = transcode_lookup(self.transcode, src_bps, self.ladder[dst_index].bitrate, table_cls,
                               self.ladder.segment_duration)
        if cls == NodeClass.EDGE:
            t = rec.time_per_segment * self.edge_speed_factor
            out = TransformCost(t, t * self.cores_used, 0.0)
        else:
            out = TransformCost(rec.time_per_segment, rec.time_per_segment * self.cores_used, rec.power_per_segment)
        self._tr[key] = out
        return out

    def has_sr(self, src_index: int, dst_index: int, cls: NodeClass) -> bool:
        return self.sr is not None and (src_index, dst_index, cls) in self.sr.rows

    def sr_cost(self, src_index: int, dst_index: int, cls: NodeClass) -> TransformCost:
        if not self.has_sr(src_index, dst_index, cls):
            raise MissingProfile((src_index, dst_index, cls.value))
        time_s, power, _ = self.sr.rows[(src_index, dst_index, cls)]
        return TransformCost(time_s, time_s, power)
