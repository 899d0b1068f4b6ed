"""Static decision snapshots: the `compare` instance file format and random contention instances."""

from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from .catalog import Ladder, SegmentId
from .costs import CostModel, PriceBook, load_sr_profile, load_transcode_profile
from .heuristics import efg1, gba, greedy_assign
from .policy import DecisionContext, Tree, Weights, compute_normalizers, oracle_joint, oracle_single
from .topology import MBPS, NodeKind, NodeSpec
from .workload import RequestEvent, ServiceClass

DATA_DIR = Path(__file__).parent / "data"


def bundled_costs(ladder: Optional[Ladder] = None) -> CostModel:
    if ladder is None:
        ladder = Ladder.from_config(tomllib.loads((DATA_DIR / "ladder.toml").read_text()))
    return CostModel(ladder, load_transcode_profile(DATA_DIR / "transcode_profile.csv"),
                     load_sr_profile(DATA_DIR / "sr_profile.csv"), PriceBook.from_billing_units())


@dataclass
class Instance:
    ctx: DecisionContext
    requests: list[RequestEvent]
    tree: Tree


def load_instance(path) -> Instance:
    """Read a snapshot: nodes with cached rungs, pairwise bandwidth, budgets and the pending requests."""
    path = Path(path)
    raw = tomllib.loads(path.read_text())
    base = path.parent
    files = raw.get("files", {})
    ladder = Ladder.from_config(tomllib.loads((base / files.get("ladder", "ladder.toml")).read_text()))
    sr = base / files["sr_profile"] if "sr_profile" in files else None
    costs = CostModel(ladder, load_transcode_profile(base / files.get("transcode_profile", "transcode_profile.csv")),
                      load_sr_profile(sr) if sr else None, PriceBook.from_billing_units())
    content = str(raw.get("content", "c1"))
    nodes, availability, cpu, power = {}, {}, {}, {}
    for n in raw["nodes"]:
        spec = NodeSpec(n["id"], NodeKind.parse(n["kind"]), cpu_capacity=float(n.get("cpu", 0.0)),
                        power_capacity=float(n.get("power", math.inf)), device=n.get("device", "pc"))
        nodes[spec.id] = spec
        if spec.kind == NodeKind.EDGE:
            cpu[spec.id] = spec.cpu_capacity
        if spec.kind.is_peer:
            power[spec.id] = spec.power_capacity
        held: dict[SegmentId, set] = {}
        for seg, rep in n.get("holds", []):
            held.setdefault(SegmentId(content, int(seg)), set()).add(int(rep))
        availability[spec.id] = {s: frozenset(v) for s, v in held.items()}
    bandwidth = {(b["src"], b["dst"]): float(b["mbps"]) * MBPS for b in raw.get("bandwidth", [])}
    w = raw.get("weights", {})
    weights = Weights(beta=float(w.get("beta", 0.5)), eshas=tuple(w.get("eshas", (1.0, 0.0, 0.0))),
                      csdn=tuple(w.get("csdn", (0.5, 0.5))))
    ctx = DecisionContext(ladder=ladder, nodes=nodes, availability=availability, bandwidth=bandwidth, cpu=cpu,
                          power=power, costs=costs, weights=weights, thr_comp=float(raw.get("thr_comp", 0.5)),
                          m=int(raw.get("m", 0)), sr_window=int(raw.get("sr_window", 1)))
    requests = [RequestEvent(r["client"], r["edge"], SegmentId(content, int(r["segment"])), int(r["rep"]), 0,
                             float(r.get("deadline", 2.0)), ServiceClass.LIVE) for r in raw["requests"]]
    return Instance(ctx, requests, Tree(raw.get("tree", "Alive")))


# --- random instances --------------------------------------------------------------------------

_PEER_TREES = (Tree.ALIVE, Tree.RICHTER)


def random_instance(rng: np.random.Generator, tree: Tree, n_requests: int = 1, n_nodes: int = 4,
                    costs: Optional[CostModel] = None, ample_origin: bool = True) -> Instance:
    """A random snapshot for one tree.

    Up to `n_nodes` serving nodes (CDNs, a neighbour edge, peers) besides the origin and the
    local edge. With `ample_origin` the origin can carry every request at the top rung at once,
    so any greedy sequence stays feasible.
    """
    tree = Tree(tree)
    costs = costs or bundled_costs()
    ladder = costs.ladder
    top = ladder.max_index
    content = "c1"
    segs = [SegmentId(content, k) for k in range(2)]
    nodes = {"origin": NodeSpec("origin", NodeKind.ORIGIN), "edge1": NodeSpec("edge1", NodeKind.EDGE)}
    peer_tree = tree in _PEER_TREES
    extra = []
    for i in range(int(rng.integers(1, n_nodes + 1))):
        roll = rng.random()
        if peer_tree and roll < 0.5:
            kind = NodeKind.SEEDER if rng.random() < 0.6 else NodeKind.LEECHER
            extra.append(NodeSpec(f"p{i}", kind, power_capacity=float(rng.uniform(0.0, 3.0)),
                                  device="mobile" if rng.random() < 0.3 else "pc"))
        elif roll < 0.8 or tree in (Tree.ESHAS, Tree.CSDN, Tree.SARENA, Tree.RICHTER):
            extra.append(NodeSpec(f"cdn{i}", NodeKind.CDN))
        else:
            extra.append(NodeSpec(f"edge{i + 2}", NodeKind.EDGE))
    for n in extra:
        nodes[n.id] = n
    requesters = []
    for j in range(n_requests):
        if peer_tree:
            rid = f"r{j}"
            kind = NodeKind.SEEDER if rng.random() < 0.5 else NodeKind.LEECHER
            nodes[rid] = NodeSpec(rid, kind, power_capacity=float(rng.uniform(0.0, 3.0)),
                                  device="mobile" if rng.random() < 0.3 else "pc")
        else:
            rid = f"u{j}"
        requesters.append(rid)

    availability = {}
    for nid, n in nodes.items():
        if n.kind in (NodeKind.ORIGIN,):
            continue
        availability[nid] = {s: frozenset(int(r) for r in range(top + 1) if rng.random() < 0.4) for s in segs}

    bandwidth = {}
    edges = sorted(k for k, n in nodes.items() if n.kind == NodeKind.EDGE)
    peers = sorted(k for k, n in nodes.items() if n.kind.is_peer)

    def draw():
        # mix of starved, tight and generous links
        return float(rng.choice([0.5, 1.0, 3.0, 6.0, 12.0, 30.0]) * MBPS * rng.uniform(0.8, 1.2))

    for nid, n in nodes.items():
        if n.kind in (NodeKind.CDN, NodeKind.EDGE) and nid != "edge1":
            bandwidth[(nid, "edge1")] = draw()
            if n.kind == NodeKind.EDGE:
                bandwidth[("edge1", nid)] = draw()
    # enough for every request at the top rung, fast enough to meet the tightest deadline
    origin_bw = (1.5 * n_requests + 10.0) * ladder[top].bitrate if ample_origin else draw()
    bandwidth[("origin", "edge1")] = origin_bw
    for p in peers:
        for q in peers:
            if p != q:
                bandwidth[(p, q)] = draw()
    cpu = {e: float(rng.choice([0.0, 0.05, 0.2, 1.0])) for e in edges}
    power = {p: nodes[p].power_capacity for p in peers}
    weights = Weights(beta=float(rng.choice([0.0, 0.25, 0.5, 0.75, 1.0])),
                      eshas=(1.0, 0.0, 0.0) if rng.random() < 0.5 else (0.5, 0.3, 0.2),
                      csdn=(0.5, 0.5) if rng.random() < 0.5 else (0.8, 0.2))
    ctx = DecisionContext(ladder=ladder, nodes=nodes, availability=availability, bandwidth=bandwidth, cpu=cpu,
                          power=power, costs=costs, weights=weights, thr_comp=float(rng.choice([0.25, 0.5, 1.0])),
                          m=int(rng.integers(1, 3)) if tree in (Tree.ESHAS, Tree.CSDN) else 0, sr_window=1)
    requests = []
    for j, rid in enumerate(requesters):
        requests.append(RequestEvent(rid, "edge1", segs[int(rng.integers(0, len(segs)))], int(rng.integers(0, top + 1)),
                                     0, float(rng.choice([1.0, 2.0, 4.0]))))
    return Instance(ctx, requests, tree)


# --- comparisons -------------------------------------------------------------------------------

HEURISTICS: dict[str, Callable] = {
    "gba": lambda ctx, r, tree: gba(ctx, r, tree)[1],
    "efg1": lambda ctx, r, tree: efg1(ctx, r, tree=tree),
    "greedy-oracle": lambda ctx, r, tree: oracle_single(ctx, r, tree),
}


@dataclass(frozen=True)
class CompareRow:
    name: str
    objective: float
    nov: float
    etv_s: float
    feasible: bool


def compare(instance: Instance, names: Sequence[str], limit: int = 10 ** 6) -> list[CompareRow]:
    """Run the joint oracle and each heuristic on the same snapshot.

    Heuristics decide one request at a time, reserving as they go, and are scored with the
    oracle's normalizers so objective totals are comparable.
    """
    ctx, reqs, tree = instance.ctx, instance.requests, instance.tree
    t0 = time.perf_counter()
    best = oracle_joint(ctx, reqs, tree, limit=limit)
    rows = [CompareRow("oracle", best.objective, 1.0, time.perf_counter() - t0, True)]
    normed = ctx.with_normalizers(compute_normalizers(ctx, reqs, tree, limit=limit))
    for name in names:
        choose = HEURISTICS[name]
        t0 = time.perf_counter()
        got = greedy_assign(normed, reqs, lambda c, r: choose(c, r, tree))
        etv = time.perf_counter() - t0
        rows.append(CompareRow(name, got.objective, normalized_objective(got.objective, best.objective), etv, got.feasible))
    return rows


def normalized_objective(value: float, optimum: float) -> float:
    if math.isnan(value):
        return math.nan
    if optimum == 0:
        return 1.0 if value == 0 else math.inf
    return value / optimum
