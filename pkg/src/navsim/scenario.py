"""Scenario files: a TOML run description pointing at topology, ladder, catalog, profiles and trace.

Every problem found while loading is collected as a Diagnostic with file and line context, so
`validate` can report them all at once.
"""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import seeding
from .catalog import Content, Ladder, load_catalog
from .costs import CostModel, MissingProfile, NodeClass, PriceBook, SrProfile, TranscodeProfile, load_sr_profile, load_transcode_profile
from .policy import PRESETS, Weights
from .topology import NodeKind, Topology, TopologyError, build_topology, select_path
from .workload import BandwidthTrace, ChurnSchedule, ClientSpec, WorkloadSpec, churn_clients, load_trace

DATA_DIR = Path(__file__).parent / "data"
BUNDLED = DATA_DIR / "cache_rich.toml"
U64 = 2 ** 64


@dataclass(frozen=True)
class Diagnostic:
    file: str
    line: Optional[int]
    field: str
    message: str

    def __str__(self):
        where = self.file if self.line is None else f"{self.file}:{self.line}"
        return f"{where}: {self.field}: {self.message}"


class ScenarioError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(str(d) for d in diagnostics))


@dataclass
class Scenario:
    path: Path
    seed: int
    policy: str
    slot_duration: float
    horizon_slots: int
    topology: Topology
    ladder: Ladder
    contents: list[Content]
    transcode: TranscodeProfile
    sr: Optional[SrProfile]
    trace: BandwidthTrace
    weights: Weights
    pricebook: PriceBook
    workload: WorkloadSpec
    params: dict[str, Any] = field(default_factory=dict)
    som: dict[str, Any] = field(default_factory=dict)
    edge_speed_factor: float = 1.0
    cores_used: float = 1.0

    def cost_model(self) -> CostModel:
        return CostModel(self.ladder, self.transcode, self.sr, self.pricebook, self.edge_speed_factor, self.cores_used)


def _line_of(text: str, key: str) -> Optional[int]:
    """First line where `key` is assigned or opened as a table; good enough for pointing a user at it."""
    leaf = key.split(".")[-1]
    pat = re.compile(rf"^\s*(\[+\s*{re.escape(key)}\s*\]+|{re.escape(leaf)}\s*=)")
    for i, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return i
    return None


class _Collector:
    def __init__(self, path: Path, text: str):
        self.path, self.text = path, text
        self.items: list[Diagnostic] = []

    def add(self, key: str, message: str, file: Optional[Path] = None, line: Optional[int] = None):
        if file is None:
            file, line = self.path, _line_of(self.text, key) if line is None else line
        self.items.append(Diagnostic(str(file), line, key, message))


def _read_toml(path: Path, diag: _Collector, key: str) -> Optional[dict]:
    if not path.is_file():
        diag.add(key, f"file not found: {path}")
        return None
    text = path.read_text()
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        diag.add(key, f"TOML parse error: {exc}", file=path, line=int(m.group(1)) if m else None)
        return None


def _num(diag, table, key, default, lo=-math.inf, hi=math.inf, integer=False, qual=""):
    name = f"{qual}{key}"
    value = table.get(key, default)
    try:
        value = int(value) if integer else float(value)
    except (TypeError, ValueError):
        diag.add(name, f"expected a number, got {value!r}")
        return default
    if not lo <= value <= hi:
        diag.add(name, f"{value} outside [{lo}, {hi}]")
        return default
    return value


def _is_edge(node: dict) -> bool:
    try:
        return NodeKind.parse(node.get("kind", "")) == NodeKind.EDGE
    except TopologyError:
        return False


def _peer_nodes(cfg: dict, edges: list[str], seed: int, diag: _Collector) -> tuple[list[dict], list[dict], list[ClientSpec]]:
    """Players as peers: initial ones are seeders, later joiners leechers, each hanging off its edge."""
    count = _num(diag, cfg, "count", 0, 0, integer=True, qual="clients.")
    if "per_edge" in cfg:
        count = _num(diag, cfg, "per_edge", 0, 0, integer=True, qual="clients.") * len(edges)
    initial = _num(diag, cfg, "initial", count, 0, integer=True, qual="clients.")
    interval = _num(diag, cfg, "join_interval_s", 3.0, 0, qual="clients.")
    clients = churn_clients(ChurnSchedule(min(initial, count), interval), edges, count) if edges else []
    if not cfg.get("p2p", True):
        return [], [], clients
    mobile_fraction = _num(diag, cfg, "mobile_fraction", 0.0, 0, 1, qual="clients.")
    cache = _num(diag, cfg, "peer_cache", 5, 0, integer=True, qual="clients.")
    uplink = _num(diag, cfg, "peer_uplink_mbps", 20.0, 1e-9, qual="clients.")
    battery = _num(diag, cfg, "battery_mah", 4000.0, 0, qual="clients.")
    nodes, links = [], []
    for i, c in enumerate(clients):
        mobile = seeding.stream(seed, seeding.PEERS, c.client_id).random() < mobile_fraction
        nodes.append({"id": c.client_id, "kind": "PeerSeeder" if i < initial else "PeerLeecher",
                      "cache": cache, "power": battery, "join": c.join_time, "device": "mobile" if mobile else "pc",
                      "region": c.edge_id})
        links.append({"id": f"acc-{c.client_id}", "a": c.client_id, "b": c.edge_id, "mbps": uplink})
    return nodes, links, clients


def load_scenario(path, collect: bool = False):
    """Parse and cross-check a scenario; raises ScenarioError listing every problem.

    With collect=True returns (scenario or None, diagnostics) instead of raising.
    """
    path = Path(path)
    if not path.is_file():
        diags = [Diagnostic(str(path), None, "scenario", "file not found")]
        if collect:
            return None, diags
        raise ScenarioError(diags)
    text = path.read_text()
    diag = _Collector(path, text)
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        diag.add("scenario", f"TOML parse error: {exc}", file=path, line=int(m.group(1)) if m else None)
        return _finish(None, diag, collect)
    base = path.parent
    files = raw.get("files", {})

    def ref(key):
        if key not in files:
            diag.add(f"files.{key}", "missing file reference")
            return None
        return (base / files[key]).resolve()

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < U64:
        diag.add("seed", "seed must be an integer in [0, 2^64)")
        seed = 0
    policy = str(raw.get("policy", "alive"))
    if policy not in PRESETS:
        diag.add("policy", f"unknown policy {policy!r}; choose one of {', '.join(PRESETS)}")
    theta = _num(diag, raw, "slot_duration_s", 0.5, 1e-6)
    horizon = _num(diag, raw, "horizon_s", 60.0, 0)

    w = raw.get("weights", {})
    weights = Weights(beta=float(w.get("beta", 0.5)), eshas=tuple(w.get("eshas", (1.0, 0.0, 0.0))),
                      csdn=tuple(w.get("csdn", (0.5, 0.5))))
    for problem in weights.validate():
        key = "weights." + problem.split()[0]
        diag.add(key, problem)

    pr = raw.get("prices", {})
    pricebook = PriceBook.from_billing_units(_num(diag, pr, "usd_per_gb", 0.12, 0, qual="prices."),
                                           _num(diag, pr, "usd_per_cpu_hour", 0.029, 0, qual="prices."))

    ladder = None
    p = ref("ladder")
    if p is not None and (cfg := _read_toml(p, diag, "files.ladder")) is not None:
        try:
            ladder = Ladder.from_config(cfg)
        except (KeyError, ValueError, TypeError) as exc:
            diag.add("ladder", str(exc), file=p, line=_line_of(p.read_text(), "representations"))

    contents: list[Content] = []
    p = ref("catalog")
    if p is not None and (cfg := _read_toml(p, diag, "files.catalog")) is not None:
        try:
            contents = list(load_catalog(cfg.get("contents", [])).values())
            if not contents:
                diag.add("contents", "catalog lists no contents", file=p)
        except (KeyError, ValueError) as exc:
            diag.add("contents", str(exc), file=p, line=_line_of(p.read_text(), "contents"))

    topo = None
    clients: list[ClientSpec] = []
    p = ref("topology")
    cfg = _read_toml(p, diag, "files.topology") if p is not None else None
    if cfg is not None:
        edges = sorted(str(n.get("id")) for n in cfg.get("nodes", []) if _is_edge(n))
        peer_nodes, peer_links, clients = _peer_nodes(raw.get("clients", {}), edges, seed, diag)
        if not edges:
            diag.add("nodes", "topology has no Edge node", file=p)
        try:
            topo = build_topology({"nodes": list(cfg.get("nodes", [])) + peer_nodes,
                                   "links": list(cfg.get("links", [])) + peer_links})
            origin = topo.origin.id
            for e in edges:
                select_path(topo, origin, e)
        except (TopologyError, KeyError, ValueError) as exc:
            kind = type(exc).__name__
            diag.add("topology", f"{kind}: {exc}", file=p,
                     line=_line_of(p.read_text(), str(exc).strip("'")) if str(exc) else None)
            topo = None

    transcode = None
    p = ref("transcode_profile")
    if p is not None:
        if not p.is_file():
            diag.add("files.transcode_profile", f"file not found: {p}")
        else:
            try:
                transcode = load_transcode_profile(p)
            except (KeyError, ValueError) as exc:
                diag.add("transcode_profile", str(exc), file=p)
    sr = None
    if "sr_profile" in files:
        p = ref("sr_profile")
        if not p.is_file():
            diag.add("files.sr_profile", f"file not found: {p}")
        else:
            try:
                sr = load_sr_profile(p)
            except (KeyError, ValueError) as exc:
                diag.add("sr_profile", str(exc), file=p)
    trace = None
    p = ref("trace")
    if p is not None:
        if not p.is_file():
            diag.add("files.trace", f"file not found: {p}")
        else:
            try:
                trace = load_trace(p)
            except (KeyError, ValueError) as exc:
                diag.add("trace", str(exc), file=p)

    wl = raw.get("workload", {})
    alpha = _num(diag, wl, "zipf_alpha", 0.7, 0, qual="workload.")
    startup = _num(diag, wl, "startup_segments", 5, 0, integer=True, qual="workload.")
    live_dl = _num(diag, wl, "live_deadline_s", 2.0, 1e-9, qual="workload.")
    vod_dl = _num(diag, wl, "vod_deadline_s", 4.0, 1e-9, qual="workload.")

    params: dict[str, Any] = {}
    pp = raw.get("policy_params", {})
    params["thr_comp"] = _num(diag, pp, "thr_comp", 0.5, 0, 1, qual="policy_params.")
    params["thr_miss"] = _num(diag, pp, "thr_miss", 100, 0, integer=True, qual="policy_params.")
    if "m" in pp:
        params["m"] = _num(diag, pp, "m", 1, 0, integer=True, qual="policy_params.")
    params["sr_window"] = _num(diag, pp, "sr_window", 1, 0, integer=True, qual="policy_params.")
    params["joint_limit"] = _num(diag, pp, "joint_limit", 5000, 1, integer=True, qual="policy_params.")
    ca = raw.get("caching", {})
    params["edge_caching"] = bool(ca.get("enabled", True))
    params["cdn_fill"] = _num(diag, ca, "cdn_fill", 0.4, 0, 1, qual="caching.")
    params["prewarm_segments"] = _num(diag, ca, "prewarm_segments", 0, 0, integer=True, qual="caching.")
    en = raw.get("engine", {})
    params["eec_watts_per_core"] = _num(diag, en, "eec_watts_per_core", 10.0, 0, qual="engine.")
    params["min_last_mile_bps"] = _num(diag, en, "min_last_mile_kbps", 50.0, 1e-6, qual="engine.") * 1000
    params["autoscale_interval_s"] = _num(diag, raw.get("sarena", {}), "autoscale_interval_s", 10.0, 0, qual="sarena.")
    co = raw.get("costs", {})
    speed = _num(diag, co, "edge_speed_factor", 1.0, 1e-9, qual="costs.")
    cores = _num(diag, co, "cores_used", 1.0, 1e-9, qual="costs.")
    le = raw.get("learning", {})
    som = {"sigma": _num(diag, le, "sigma", 0.01, 1e-12, qual="learning."),
           "weights": tuple(le.get("weights", (0.5, 0.5))),
           "penalty_scale": _num(diag, le, "penalty_scale", 10.0, 1e-12, qual="learning.")}

    if ladder is not None and transcode is not None:
        model = CostModel(ladder, transcode, sr, pricebook)
        try:
            model.tr(ladder.max_index, 0, NodeClass.PEER_PC)
        except MissingProfile:
            diag.add("files.transcode_profile", "no transcoding rows match the top ladder rung")
    if not clients:
        diag.add("clients.count", "scenario has no clients")

    if diag.items or None in (ladder, topo, transcode, trace):
        return _finish(None, diag, collect)
    workload = WorkloadSpec(clients=clients, contents=contents, zipf_alpha=alpha,
                            segment_duration=ladder.segment_duration, slot_duration=theta,
                            horizon_slots=int(round(horizon / theta)), top_rep=ladder.max_index,
                            live_deadline=live_dl, vod_deadline=vod_dl, startup_segments=startup)
    sc = Scenario(path=path, seed=seed, policy=policy, slot_duration=theta, horizon_slots=workload.horizon_slots,
                  topology=topo, ladder=ladder, contents=contents, transcode=transcode, sr=sr, trace=trace,
                  weights=weights, pricebook=pricebook, workload=workload, params=params, som=som,
                  edge_speed_factor=speed, cores_used=cores)
    return _finish(sc, diag, collect)


def _finish(sc, diag: _Collector, collect: bool):
    if collect:
        return sc, diag.items
    if diag.items:
        raise ScenarioError(diag.items)
    return sc


def validate_scenario(path) -> list[Diagnostic]:
    return load_scenario(path, collect=True)[1]
