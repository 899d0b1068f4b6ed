"""Content model: bitrate ladders, segment ids, LRU caches and candidate representation sets."""

from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence


@dataclass(frozen=True)
class Representation:
    index: int
    bitrate: int        # bits per second
    resolution: str
    segment_size: float  # bits

    def __post_init__(self):
        if self.bitrate <= 0:
            raise ValueError("bitrate must be positive")


@dataclass(frozen=True)
class Ladder:
    representations: tuple[Representation, ...]
    segment_duration: float

    def __post_init__(self):
        if self.segment_duration <= 0:
            raise ValueError("segment_duration must be positive")
        rates = [r.bitrate for r in self.representations]
        if not rates:
            raise ValueError("empty ladder")
        if any(hi <= lo for lo, hi in zip(rates, rates[1:])):
            raise ValueError("ladder bitrates must strictly increase")
        for i, r in enumerate(self.representations):
            if r.index != i:
                raise ValueError("representation indices must be 0..n-1 in order")
            if r.segment_size != r.bitrate * self.segment_duration:
                raise ValueError("segment_size must equal bitrate x segment_duration")

    @classmethod
    def from_rungs(cls, rungs: Iterable[tuple[int, str]], segment_duration: float) -> "Ladder":
        reps = tuple(
            Representation(i, int(bps), str(res), int(bps) * segment_duration)
            for i, (bps, res) in enumerate(rungs)
        )
        return cls(reps, float(segment_duration))

    @classmethod
    def from_config(cls, config: Mapping) -> "Ladder":
        rungs = []
        for r in config["representations"]:
            bps = int(r["bitrate_bps"]) if "bitrate_bps" in r else int(round(float(r["bitrate_kbps"]) * 1000))
            rungs.append((bps, r["resolution"]))
        return cls.from_rungs(rungs, float(config["segment_duration_s"]))

    def to_config(self) -> dict:
        return {
            "segment_duration_s": self.segment_duration,
            "representations": [
                {"bitrate_kbps": r.bitrate / 1000, "resolution": r.resolution} for r in self.representations
            ],
        }

    def __len__(self):
        return len(self.representations)

    def __getitem__(self, i) -> Representation:
        return self.representations[i]

    @property
    def max_index(self) -> int:
        return len(self.representations) - 1

    @property
    def bitrates(self) -> list[int]:
        return [r.bitrate for r in self.representations]


@dataclass(frozen=True, order=True)
class SegmentId:
    content_id: str
    segment_index: int

    def __post_init__(self):
        if self.segment_index < 0:
            raise ValueError("segment_index must be non-negative")

    def __str__(self):
        return f"{self.content_id}#{self.segment_index}"


class ContentKind(str, enum.Enum):
    LIVE = "live"
    VOD = "vod"


@dataclass(frozen=True)
class Content:
    content_id: str
    kind: ContentKind
    n_segments: int
    ladder_ref: str = "default"


class CacheState:
    """LRU set of (segment, representation index) pairs, capacity counted in segments."""

    def __init__(self, node_id: str, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.node_id = node_id
        self.capacity = int(capacity)
        self.resident: OrderedDict[tuple[SegmentId, int], None] = OrderedDict()
        self._by_segment: dict[SegmentId, set[int]] = {}

    def __len__(self):
        return len(self.resident)

    def __contains__(self, key):
        return key in self.resident

    def reps_of(self, segment: SegmentId) -> frozenset[int]:
        return frozenset(self._by_segment.get(segment, ()))

    def entries(self) -> list[tuple[SegmentId, int]]:
        # least recent first
        return list(self.resident)

    def _drop(self, key):
        del self.resident[key]
        reps = self._by_segment[key[0]]
        reps.discard(key[1])
        if not reps:
            del self._by_segment[key[0]]


def cache_lookup(cache: CacheState, segment: SegmentId, rep_index: int) -> bool:
    key = (segment, rep_index)
    if key in cache.resident:
        cache.resident.move_to_end(key)
        return True
    return False


def cache_insert(cache: CacheState, segment: SegmentId, rep_index: int) -> Optional[tuple[SegmentId, int]]:
    key = (segment, rep_index)
    if key in cache.resident:
        cache.resident.move_to_end(key)
        return None
    if cache.capacity == 0:
        return None
    cache.resident[key] = None
    cache._by_segment.setdefault(segment, set()).add(rep_index)
    if len(cache.resident) > cache.capacity:
        oldest = next(iter(cache.resident))
        cache._drop(oldest)
        return oldest
    return None


def replacement_set(ladder: Ladder, requested_index: int, m: int) -> list[int]:
    """Eligible delivered qualities {i, i+1, ..., min(i+m, max)}."""
    if not 0 <= requested_index <= ladder.max_index:
        raise IndexError(requested_index)
    if m < 0:
        raise ValueError("m must be >= 0")
    return list(range(requested_index, min(requested_index + m, ladder.max_index) + 1))


class SourceMode(str, enum.Enum):
    EXACT = "exact"
    TR = "tr"   # transcode down from a higher rung
    SR = "sr"   # super-resolve up from a lower rung


def candidate_set_alive(ladder: Ladder, requested_index: int, sr_window: int = 1) -> list[tuple[SourceMode, int]]:
    if not 0 <= requested_index <= ladder.max_index:
        raise IndexError(requested_index)
    out = [(SourceMode.EXACT, requested_index)]
    out += [(SourceMode.TR, i) for i in range(requested_index + 1, ladder.max_index + 1)]
    lo = max(0, requested_index - sr_window)
    out += [(SourceMode.SR, i) for i in range(requested_index - 1, lo - 1, -1)]
    return out


def load_catalog(config: Sequence[Mapping]) -> dict[str, Content]:
    out = {}
    for raw in config:
        cid = str(raw["content_id"])
        if cid in out:
            raise ValueError(f"duplicate content id {cid}")
        n = int(raw["n_segments"])
        if n <= 0:
            raise ValueError(f"content {cid}: n_segments must be positive")
        out[cid] = Content(cid, ContentKind(str(raw.get("kind", "live")).lower()), n, str(raw.get("ladder_ref", "default")))
    return out
