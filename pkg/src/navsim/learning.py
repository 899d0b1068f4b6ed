"""Self-organising map agent that learns which (node, action) pairs serve a request queue best."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .policy import Action, DecisionContext, Priced, Tree, _capacity, price_actions
from .workload import RequestEvent


@dataclass(frozen=True)
class SomConfig:
    sigma: float = 0.01
    weights: tuple[float, float] = (0.5, 0.5)   # latency, penalty
    penalty_scale: float = 10.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.penalty_scale <= 0:
            raise ValueError("penalty_scale must be positive")


@dataclass(frozen=True)
class Neuron:
    node_id: str
    action_variant: int
    features: tuple[float, float]   # (latency_norm, penalty_norm)
    penalty_count: int = 0

    def __post_init__(self):
        if not all(0.0 <= f <= 1.0 for f in self.features):
            raise ValueError("neuron features must lie in [0, 1]")
        if self.penalty_count < 0:
            raise ValueError("penalty_count must be >= 0")


def _norm(features, weights) -> float:
    return math.sqrt(weights[0] * features[0] ** 2 + weights[1] * features[1] ** 2)


def _dist(a, b, weights) -> float:
    return math.sqrt(weights[0] * (a[0] - b[0]) ** 2 + weights[1] * (a[1] - b[1]) ** 2)


def bmu(neurons: Sequence[Neuron], weights=(0.5, 0.5)) -> int:
    """Index of the neuron closest to the ideal point (0, 0); ties go to the lowest node id."""
    if not neurons:
        raise ValueError("bmu of an empty neuron set")
    return min(range(len(neurons)),
               key=lambda i: (_norm(neurons[i].features, weights), neurons[i].node_id, neurons[i].action_variant, i))


def neighborhood(d: float, sigma: float) -> float:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return math.exp(-d * d / (2.0 * sigma * sigma))


def _clamp(x: float) -> float:
    return min(1.0, max(0.0, x))


def som_update(neurons: Sequence[Neuron], bmu_index: int, observed: tuple[float, float], config: SomConfig) -> list[Neuron]:
    """Pull every neuron toward the observed outcome, scaled by its Gaussian closeness to the BMU."""
    centre = neurons[bmu_index].features
    out = []
    for n in neurons:
        h = neighborhood(_dist(centre, n.features, config.weights), config.sigma)
        rate = config.sigma * h
        feats = tuple(_clamp(f + rate * (o - f)) for f, o in zip(n.features, observed))
        out.append(replace(n, features=feats))
    return out


def penalize(neuron: Neuron, penalty_scale: float = 10.0) -> Neuron:
    count = neuron.penalty_count + 1
    return replace(neuron, penalty_count=count, features=(neuron.features[0], count / (count + penalty_scale)))


@dataclass(frozen=True)
class SomTuple:
    node: str
    action_variant: int
    servable: int      # R
    violates: int      # V
    action: Optional[Action] = None


def _pair_action(ctx: DecisionContext, request: RequestEvent, node: str, variant: int, tree: Tree) -> Optional[Priced]:
    best = None
    for p in price_actions(ctx, request, tree):
        a = p.action
        if a.source_node == node and a.variant == variant:
            if best is None or (p.latency, a.sort_key) < (best.latency, best.action.sort_key):
                best = p
    return best


def servable_count(ctx: DecisionContext, p: Priced, limit: int) -> int:
    """How many copies of this action fit before a bandwidth, cpu or power budget runs out."""
    r = limit
    for key, amount in p.demands:
        if amount <= 0:
            continue
        cap = _capacity(ctx, key)
        r = min(r, int(math.floor(cap / amount * (1 + 1e-12))))
    return max(r, 0)


def som_decide(requests: Sequence[RequestEvent], neurons: Sequence[Neuron], ctx: DecisionContext,
               tree: Tree = Tree.RICHTER) -> list[SomTuple]:
    """(N, A, R, V) tuples in ascending latency-feature order; V = 1 marks a pair that cannot serve even one request."""
    if not requests:
        return []
    rep = requests[0]
    out = []
    for n in sorted(neurons, key=lambda n: (n.features[0], n.node_id, n.action_variant)):
        p = _pair_action(ctx, rep, n.node_id, n.action_variant, tree)
        if p is None:
            out.append(SomTuple(n.node_id, n.action_variant, 0, 1))
            continue
        r = servable_count(ctx, p, len(requests))
        out.append(SomTuple(n.node_id, n.action_variant, r, 0 if r > 0 else 1, p.action if r > 0 else None))
    return out


@dataclass
class SomAgent:
    """Neurons for one (region, content, bitrate) queue, persisting across slots."""
    config: SomConfig = field(default_factory=SomConfig)
    neurons: dict[tuple[str, int], Neuron] = field(default_factory=dict)

    def sync(self, pairs: dict[tuple[str, int], float]) -> None:
        # unseen pairs start from their first measured latency and no penalty
        for key, lat_norm in sorted(pairs.items()):
            if key not in self.neurons:
                self.neurons[key] = Neuron(key[0], key[1], (_clamp(lat_norm), 0.0))

    def ordered(self) -> list[Neuron]:
        return [self.neurons[k] for k in sorted(self.neurons)]

    def penalize(self, key) -> None:
        self.neurons[key] = penalize(self.neurons[key], self.config.penalty_scale)

    def learn(self, key, observed: tuple[float, float]) -> None:
        keys = sorted(self.neurons)
        updated = som_update([self.neurons[k] for k in keys], keys.index(key), observed, self.config)
        self.neurons = dict(zip(keys, updated))

    def best(self, allowed: set) -> Optional[tuple[str, int]]:
        keys = [k for k in sorted(self.neurons) if k in allowed]
        if not keys:
            return None
        i = bmu([self.neurons[k] for k in keys], self.config.weights)
        return keys[i]
