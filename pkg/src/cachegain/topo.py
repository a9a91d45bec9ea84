"""Topology generators and Zipf demand synthesis for the benchmark graphs."""

from __future__ import annotations

import heapq
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from itertools import combinations

import networkx as nx
import numpy as np

from .model import Demand, Network, Request
from .rng import stream

KINDS = (
    "grid_2d", "expander", "erdos_renyi", "small_world", "watts_strogatz",
    "barabasi_albert", "geant", "abilene", "dtelekom",
)
BUNDLED = ("geant", "abilene", "dtelekom")


@dataclass(frozen=True)
class TableRow:
    n_nodes: int
    n_edges: int
    n_items: int
    n_consumers: int
    n_requests: int
    budget: int


BENCHMARKS = {
    "grid_2d": TableRow(100, 180, 100, 20, 1000, 300),
    "expander": TableRow(100, 340, 100, 50, 2000, 400),
    "barabasi_albert": TableRow(100, 384, 100, 50, 2000, 400),
    "small_world": TableRow(100, 240, 100, 50, 2000, 400),
    "watts_strogatz": TableRow(100, 200, 100, 50, 2000, 400),
    "erdos_renyi": TableRow(100, 521, 100, 50, 2000, 400),
    "geant": TableRow(22, 33, 100, 20, 1000, 144),
    "abilene": TableRow(9, 13, 10, 9, 100, 28),
    "dtelekom": TableRow(68, 273, 100, 20, 1000, 304),
}

DEFAULT_PARAMS = {
    "grid_2d": {"side": 10},
    "expander": {"k": 10},
    "erdos_renyi": {"n": 100, "p": 0.1},
    "small_world": {"side": 10, "long_links": 60, "r": 2.0},
    "watts_strogatz": {"n": 100, "k": 4, "p": 0.3},
    "barabasi_albert": {"n": 100, "m": 4},
}


@dataclass(frozen=True)
class TopologySpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def resolved(self) -> dict:
        return {**DEFAULT_PARAMS.get(self.kind, {}), **self.params}


@dataclass(frozen=True)
class Skeleton:
    n_nodes: int
    edges: tuple[tuple[int, int], ...]


def _skeleton(g: nx.Graph) -> Skeleton:
    g = nx.convert_node_labels_to_integers(g, ordering="sorted")
    edges = sorted({(min(u, v), max(u, v)) for u, v in g.edges() if u != v})
    return Skeleton(g.number_of_nodes(), tuple(edges))


def _bridge_components(g: nx.Graph) -> nx.Graph:
    """Join components to the one holding node 0 via their smallest nodes."""
    comps = sorted((sorted(c) for c in nx.connected_components(g)), key=lambda c: c[0])
    for comp in comps[1:]:
        g.add_edge(comps[0][0], comp[0])
    return g


def _small_world(side: int, long_links: int, r: float, rng: np.random.Generator) -> nx.Graph:
    """Grid plus long-range links drawn with probability proportional to distance**-r."""
    g = nx.grid_2d_graph(side, side)
    nodes = sorted(g.nodes())
    coords = np.array(nodes)
    for idx in rng.choice(len(nodes), size=long_links, replace=False):
        dist = np.abs(coords - coords[idx]).sum(axis=1).astype(float)
        weight = np.zeros_like(dist)
        far = dist > 1
        weight[far] = dist[far] ** -r
        target = rng.choice(len(nodes), p=weight / weight.sum())
        g.add_edge(nodes[idx], nodes[target])
    return g


def geometric_backbone(n: int, m: int, seed: int) -> Skeleton:
    """Planar-ish backbone: Euclidean MST on random points plus the shortest remaining links.

    Used once to produce the bundled backbone edge lists.
    """
    rng = np.random.default_rng(seed)
    pts = rng.random((n, 2))
    g = nx.Graph()
    g.add_nodes_from(range(n))
    for u, v in combinations(range(n), 2):
        g.add_edge(u, v, d=float(np.hypot(*(pts[u] - pts[v]))))
    tree = nx.minimum_spanning_tree(g, weight="d")
    rest = sorted((d["d"], u, v) for u, v, d in g.edges(data=True) if not tree.has_edge(u, v))
    out = nx.Graph(tree.edges())
    out.add_nodes_from(range(n))
    for _, u, v in rest[: m - (n - 1)]:
        out.add_edge(u, v)
    return _skeleton(out)


def load_bundled(kind: str) -> Skeleton:
    text = resources.files("cachegain").joinpath(f"data/topologies/{kind}.txt").read_text()
    edges = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            u, v = line.split()[:2]
            edges.append((min(int(u), int(v)), max(int(u), int(v))))
    n = 1 + max(max(e) for e in edges)
    return Skeleton(n, tuple(sorted(set(edges))))


def generate(spec: TopologySpec) -> Skeleton:
    """Node count and undirected edges of the requested topology (always connected)."""
    if spec.kind not in KINDS:
        raise ValueError(f"unknown topology kind {spec.kind!r}")
    if spec.kind in BUNDLED:
        return load_bundled(spec.kind)
    p = spec.resolved()
    rng = stream(spec.seed, "topology")
    nx_seed = int(rng.integers(2**31 - 1))
    if spec.kind == "grid_2d":
        g = nx.grid_2d_graph(p["side"], p["side"])
    elif spec.kind == "expander":
        g = nx.Graph(nx.margulis_gabber_galil_graph(p["k"]))
        g.remove_edges_from(list(nx.selfloop_edges(g)))
    elif spec.kind == "erdos_renyi":
        g = nx.gnp_random_graph(p["n"], p["p"], seed=nx_seed)
    elif spec.kind == "small_world":
        g = _small_world(p["side"], p["long_links"], p["r"], rng)
    elif spec.kind == "watts_strogatz":
        g = nx.watts_strogatz_graph(p["n"], p["k"], p["p"], seed=nx_seed)
    else:
        g = nx.barabasi_albert_graph(p["n"], p["m"], seed=nx_seed)
    if not nx.is_connected(g):
        g = _bridge_components(g)
    if not nx.is_connected(g):
        raise ValueError(f"{spec.kind} graph still disconnected after repair")
    return _skeleton(g)


# ---------------------------------------------------------------------------
# demand synthesis

def zipf_pmf(n: int, s: float = 1.2) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=float) ** -s
    return w / w.sum()


def sample_zipf(rng: np.random.Generator, n: int, size: int, s: float = 1.2) -> np.ndarray:
    """Item ids ``0..n-1`` drawn with probability proportional to ``rank**-s``."""
    return rng.choice(n, size=size, p=zipf_pmf(n, s))


def shortest_path_tree(net: Network, src: int) -> dict[int, tuple[int, ...]]:
    """Minimum-weight paths from ``src`` to every node, lexicographic tie-break."""
    best: dict[int, tuple[float, tuple[int, ...]]] = {src: (0.0, (src,))}
    heap = [(0.0, (src,))]
    done: dict[int, tuple[int, ...]] = {}
    while heap:
        d, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        done[u] = path
        for v in net.neighbors[u]:
            if v in done:
                continue
            cand = (d + net.weights[(u, v)], path + (v,))
            if v not in best or cand < best[v]:
                best[v] = cand
                heapq.heappush(heap, cand)
    return done


def synthesize_instance(
    skeleton: Skeleton,
    n_items: int,
    n_consumers: int,
    n_requests: int,
    budget: int,
    seed: int,
    zipf_s: float = 1.2,
    weight_range: tuple[float, float] = (0.01, 1.0),
) -> tuple[Network, Demand]:
    """Random weights, servers, consumers and Zipf requests on a skeleton.

    Each item gets one designated server drawn uniformly; every drawn request
    has rate 1 and duplicates of the same (item, consumer) are merged by
    summing rates. Node caps equal the catalog size.
    """
    if budget < n_items:
        raise ValueError(f"budget {budget} below the {n_items} designated copies")
    if n_consumers > skeleton.n_nodes:
        raise ValueError("more consumers than nodes")
    rng = stream(seed, "demand")
    weights = rng.uniform(*weight_range, size=len(skeleton.edges))
    servers = rng.integers(skeleton.n_nodes, size=n_items)
    consumers = np.sort(rng.choice(skeleton.n_nodes, size=n_consumers, replace=False))
    net = Network.build(
        skeleton.n_nodes,
        [(u, v, w) for (u, v), w in zip(skeleton.edges, weights)],
        [{int(s)} for s in servers],
        n_items,
        budget,
    )
    who = rng.choice(consumers, size=n_requests)
    what = sample_zipf(rng, n_items, n_requests, zipf_s)
    counts = Counter(zip(who.tolist(), what.tolist()))
    trees = {int(c): shortest_path_tree(net, int(c)) for c in consumers}
    requests, rates = [], []
    for (c, i) in sorted(counts):
        requests.append(Request(int(i), trees[c][int(servers[i])]))
        rates.append(float(counts[(c, i)]))
    return net, Demand(tuple(requests), np.asarray(rates))


def benchmark_instance(kind: str, seed: int, **overrides) -> tuple[Network, Demand]:
    """Generate a benchmark-sized instance of ``kind``."""
    row = BENCHMARKS[kind]
    skel = generate(TopologySpec(kind, overrides.pop("params", {}), seed))
    args = dict(
        n_items=row.n_items, n_consumers=row.n_consumers,
        n_requests=row.n_requests, budget=row.budget,
    )
    args.update(overrides)
    return synthesize_instance(skel, seed=seed, **args)
