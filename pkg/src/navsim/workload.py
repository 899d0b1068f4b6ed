"""Client request streams (Zipf popularity, churn, live/VoD pacing) and 4G trace replay."""

from __future__ import annotations

import csv
import enum
import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import seeding
from .catalog import Content, ContentKind, SegmentId


class ServiceClass(str, enum.Enum):
    LIVE = "Live"
    VOD = "Vod"


@dataclass(frozen=True)
class RequestEvent:
    client_id: str
    edge_id: str
    segment: SegmentId
    requested_rep: int
    arrival_slot: int
    deadline: float
    service_class: ServiceClass = ServiceClass.LIVE

    def __post_init__(self):
        if not self.deadline > 0:
            raise ValueError("deadline must be positive")
        if self.arrival_slot < 0:
            raise ValueError("arrival_slot must be >= 0")


@dataclass(frozen=True)
class BandwidthTrace:
    times: tuple[float, ...]
    bps: tuple[float, ...]

    def __post_init__(self):
        if not self.times:
            raise ValueError("empty trace")
        if len(self.times) != len(self.bps):
            raise ValueError("times and bandwidths differ in length")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("trace times must strictly increase")
        if any(v < 0 for v in self.bps):
            raise ValueError("negative bandwidth in trace")

    @classmethod
    def from_samples(cls, samples: Sequence[tuple[float, float]]) -> "BandwidthTrace":
        return cls(tuple(float(t) for t, _ in samples), tuple(float(b) for _, b in samples))

    @property
    def period(self) -> float:
        # length of one replay cycle; the last sample holds for the median sample spacing
        if len(self.times) == 1:
            return 1.0
        step = float(np.median(np.diff(self.times)))
        return self.times[-1] - self.times[0] + step


@dataclass(frozen=True)
class ChurnSchedule:
    initial_peers: int
    join_interval: float
    leave_events: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True)
class ClientSpec:
    client_id: str
    edge_id: str
    join_time: float = 0.0
    leave_time: float = math.inf


@dataclass
class WorkloadSpec:
    clients: list[ClientSpec]
    contents: list[Content]          # in popularity rank order
    zipf_alpha: float
    segment_duration: float
    slot_duration: float
    horizon_slots: int
    top_rep: int
    live_deadline: float = 2.0
    vod_deadline: float = 4.0
    startup_segments: int = 5        # backlog a new player may fetch back to back


def zipf_probabilities(K: int, alpha: float) -> np.ndarray:
    if K < 1:
        raise ValueError("K must be >= 1")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    weights = np.arange(1, K + 1, dtype=np.float64) ** (-float(alpha))
    # fsum keeps the normalisation exact to rounding even for very long vectors
    return weights / math.fsum(weights)


def sample_zipf(rng: np.random.Generator, K: int, alpha: float, size: int) -> np.ndarray:
    """Zero-based ranks drawn from the Zipf law."""
    return rng.choice(K, size=size, p=zipf_probabilities(K, alpha))


def trace_bandwidth_at(trace: BandwidthTrace, t: float) -> float:
    if t < trace.times[0]:
        raise ValueError(f"t={t} precedes the first trace sample")
    return trace.bps[bisect_right(trace.times, t) - 1]


def cyclic_bandwidth(trace: BandwidthTrace, t: float, offset: float = 0.0) -> float:
    """Replay the trace in a loop, shifted by a per-client phase offset."""
    local = trace.times[0] + (t + offset) % trace.period
    return trace_bandwidth_at(trace, local)


def trace_mean(trace: BandwidthTrace, t0: float, t1: float, offset: float = 0.0, step: float = 0.01) -> float:
    grid = np.arange(t0, t1, step)
    return float(np.mean([cyclic_bandwidth(trace, t, offset) for t in grid]))


def load_trace(path) -> BandwidthTrace:
    samples = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        if reader.fieldnames is None or not {"t_s", "kbps"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: trace header must be t_s,kbps")
        for row in reader:
            samples.append((float(row["t_s"]), float(row["kbps"]) * 1000.0))
    return BandwidthTrace.from_samples(samples)


def churn_clients(schedule: ChurnSchedule, edges: Sequence[str], total: int, prefix: str = "p") -> list[ClientSpec]:
    """Initial peers at t=0, then one join every join_interval until `total` clients exist.

    Clients are spread over edges round-robin.
    """
    leaves = dict(schedule.leave_events)
    out = []
    width = len(str(max(total - 1, 0)))
    for i in range(total):
        cid = f"{prefix}{i:0{width}d}"
        join = 0.0 if i < schedule.initial_peers else (i - schedule.initial_peers + 1) * schedule.join_interval
        out.append(ClientSpec(cid, edges[i % len(edges)], join, leaves.get(cid, math.inf)))
    return out


def client_contents(spec: WorkloadSpec, seed: int) -> dict[str, Content]:
    """Content is fixed per client session and drawn from the Zipf law."""
    probs = zipf_probabilities(len(spec.contents), spec.zipf_alpha)
    out = {}
    for c in spec.clients:
        rng = seeding.stream(seed, seeding.WORKLOAD, c.client_id)
        out[c.client_id] = spec.contents[int(rng.choice(len(probs), p=probs))]
    return out


def client_trace_offsets(clients: Sequence[ClientSpec], trace: BandwidthTrace, seed: int) -> dict[str, float]:
    return {c.client_id: float(seeding.stream(seed, seeding.TRACE, c.client_id).uniform(0, trace.period))
            for c in clients}


def _client_schedule(spec: WorkloadSpec, client: ClientSpec, content: Content) -> Iterator[tuple[int, int]]:
    """(slot, segment index) pairs for one client.

    A player may fetch `startup_segments` segments ahead of real-time pacing, one per slot,
    so its buffer can build before playback settles to one segment per segment duration.
    Live streams are already `startup_segments` segments old when the run starts, and a
    joining player starts from the segment being produced at its join time.
    """
    seg, theta = spec.segment_duration, spec.slot_duration
    B = spec.startup_segments
    end = min(client.leave_time, spec.horizon_slots * theta)
    live = content.kind == ContentKind.LIVE
    k0 = int(math.floor(client.join_time / seg + 1e-9)) if live else 0
    for i in range(content.n_segments - k0):
        if live:
            # live segment k is published at (k + 1 - B) * seg
            t = max(client.join_time + i * theta, (k0 + i + 1 - B) * seg)
        else:
            t = client.join_time + max(i * theta, (i - B) * seg)
        if t >= end:
            break
        yield int(math.floor(t / theta + 1e-9)), k0 + i


def generate_requests(spec: WorkloadSpec, rng_seed: int) -> list[RequestEvent]:
    """All request intents of a run, ordered by (slot, client id).

    The requested representation is a placeholder (top rung); the engine re-selects it
    through ABR when the request is issued.
    """
    contents = client_contents(spec, rng_seed)
    events = []
    for c in spec.clients:
        content = contents[c.client_id]
        live = content.kind == ContentKind.LIVE
        last_slot = -1
        for slot, k in _client_schedule(spec, c, content):
            if slot == last_slot:
                # at most one request per client per slot
                continue
            last_slot = slot
            events.append(RequestEvent(
                client_id=c.client_id,
                edge_id=c.edge_id,
                segment=SegmentId(content.content_id, k),
                requested_rep=spec.top_rep,
                arrival_slot=slot,
                deadline=spec.live_deadline if live else spec.vod_deadline,
                service_class=ServiceClass.LIVE if live else ServiceClass.VOD,
            ))
    events.sort(key=lambda e: (e.arrival_slot, e.client_id, e.segment))
    return events


def synthetic_4g_trace(seed: int, duration_s: int = 600, mean_kbps: float = 3780.0, std_kbps: float = 3190.0) -> BandwidthTrace:
    """Lognormal 1 s samples with AR(1) memory, rescaled to the target mean exactly.

    Used to produce the bundled trace file; the standard deviation lands near the target.
    """
    rng = seeding.stream(seed, seeding.TRACE, "synthetic")
    sigma2 = math.log(1 + (std_kbps / mean_kbps) ** 2)
    mu = math.log(mean_kbps) - sigma2 / 2
    rho = 0.8
    z = np.empty(duration_s)
    z[0] = rng.standard_normal()
    for i in range(1, duration_s):
        z[i] = rho * z[i - 1] + math.sqrt(1 - rho * rho) * rng.standard_normal()
    kbps = np.exp(mu + math.sqrt(sigma2) * z)
    kbps = np.maximum(kbps * mean_kbps / kbps.mean(), 50.0)
    kbps *= mean_kbps / kbps.mean()
    return BandwidthTrace(tuple(float(t) for t in range(duration_s)), tuple(float(v) * 1000 for v in np.round(kbps, 1)))
