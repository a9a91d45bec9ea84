"""Network, demand and decision-variable types.

Node and item ids are dense integers ``0..n-1`` so placements and
allocations are plain ``(n_nodes, n_items)`` numpy arrays.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

FEAS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Network:
    """A connected graph of caches with designated servers and a storage budget.

    ``weights`` maps ordered pairs ``(u, v)`` to the cost of moving an item
    from ``u`` to ``v``; a response travelling back along a request path
    ``p`` pays ``w[p[k+1], p[k]]`` per hop.
    """

    n_nodes: int
    edges: tuple[tuple[int, int], ...]
    weights: Mapping[tuple[int, int], float]
    n_items: int
    servers: tuple[frozenset[int], ...]
    caps: tuple[int, ...]
    budget: int

    @classmethod
    def build(
        cls,
        n_nodes: int,
        weighted_edges: Iterable[tuple[int, int, float]],
        servers: Sequence[Iterable[int]],
        caps: int | Sequence[int],
        budget: int,
    ) -> "Network":
        """Build from undirected ``(u, v, w)`` triples (symmetric weights)."""
        edges = []
        weights: dict[tuple[int, int], float] = {}
        for u, v, w in weighted_edges:
            u, v = int(u), int(v)
            key = (min(u, v), max(u, v))
            if u == v or key in weights:
                continue
            edges.append(key)
            weights[(u, v)] = float(w)
            weights[(v, u)] = float(w)
        if isinstance(caps, (int, np.integer)):
            caps = [int(caps)] * n_nodes
        return cls(
            n_nodes=int(n_nodes),
            edges=tuple(sorted(edges)),
            weights=weights,
            n_items=len(servers),
            servers=tuple(frozenset(int(v) for v in s) for s in servers),
            caps=tuple(int(c) for c in caps),
            budget=int(budget),
        )

    def weight(self, u: int, v: int) -> float:
        return self.weights[(u, v)]

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        adj: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return tuple(tuple(sorted(a)) for a in adj)

    @cached_property
    def degree(self) -> np.ndarray:
        return np.array([len(a) for a in self.neighbors], dtype=int)

    @cached_property
    def cap_array(self) -> np.ndarray:
        return np.asarray(self.caps, dtype=float)

    @cached_property
    def designated(self) -> np.ndarray:
        """Boolean ``(n_nodes, n_items)`` mask of designated-server entries."""
        mask = np.zeros((self.n_nodes, self.n_items), dtype=bool)
        for i, nodes in enumerate(self.servers):
            for v in nodes:
                mask[v, i] = True
        mask.setflags(write=False)
        return mask

    @property
    def designated_count(self) -> int:
        return int(self.designated.sum())

    def servers_only(self) -> np.ndarray:
        """Placement holding only the designated copies."""
        return self.designated.astype(float)

    def with_budget(self, budget: int) -> "Network":
        return replace(self, budget=int(budget))

    def with_caps(self, caps: int | Sequence[int]) -> "Network":
        if isinstance(caps, (int, np.integer)):
            caps = [int(caps)] * self.n_nodes
        return replace(self, caps=tuple(int(c) for c in caps))


@dataclass(frozen=True)
class Request:
    """A request for ``item`` routed along ``path`` (consumer first, server last)."""

    item: int
    path: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class Demand:
    """Requests with their Poisson arrival rates (items per unit time)."""

    requests: tuple[Request, ...]
    rates: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        rates = np.ones(len(self.requests)) if self.rates is None else self.rates
        rates = np.array(rates, dtype=float).reshape(len(self.requests))
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)

    def __len__(self) -> int:
        return len(self.requests)

    def with_rates(self, rates) -> "Demand":
        return Demand(self.requests, np.asarray(rates, dtype=float))

    def scaled(self, factor: float) -> "Demand":
        return self.with_rates(self.rates * factor)


def empty_demand() -> Demand:
    return Demand((), np.zeros(0))


def _is_connected(net: Network) -> bool:
    if net.n_nodes == 0:
        return True
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in net.neighbors[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == net.n_nodes


def validate_network(net: Network) -> str | None:
    """Return the first violated invariant as a message, or ``None`` if valid."""
    if len(net.caps) != net.n_nodes:
        return f"caps has {len(net.caps)} entries for {net.n_nodes} nodes"
    for (u, v), w in net.weights.items():
        if not (0 <= u < net.n_nodes and 0 <= v < net.n_nodes):
            return f"edge ({u}, {v}) references unknown node"
        if not w >= 0:
            return f"negative weight {w} on edge ({u}, {v})"
    if not _is_connected(net):
        return "disconnected"
    for i, nodes in enumerate(net.servers):
        if not nodes:
            return f"no designated server for item {i}"
        if any(not 0 <= v < net.n_nodes for v in nodes):
            return f"designated server of item {i} is not a node"
    per_node = net.designated.sum(axis=1)
    for v in range(net.n_nodes):
        if net.caps[v] < per_node[v]:
            return f"node {v} cap {net.caps[v]} below its {per_node[v]} designated items"
    if net.budget < net.designated_count:
        return f"budget {net.budget} below designated count {net.designated_count}"
    return None


def validate_demand(net: Network, demand: Demand) -> str | None:
    """Return the first ill-formed request as a message, or ``None``."""
    for r, (req, rate) in enumerate(zip(demand.requests, demand.rates)):
        if not rate > 0:
            return f"request {r} has non-positive rate {rate}"
        if not 0 <= req.item < net.n_items:
            return f"request {r} asks for unknown item {req.item}"
        path = req.path
        if not path or len(set(path)) != len(path):
            return f"request {r} path is empty or loops"
        if path[-1] not in net.servers[req.item]:
            return f"request {r} does not end at a designated server"
        for a, b in zip(path, path[1:]):
            if (a, b) not in net.weights:
                return f"request {r} hops over non-edge ({a}, {b})"
    return None


def _check_shape(net: Network, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape != (net.n_nodes, net.n_items):
        raise ValueError(f"expected shape {(net.n_nodes, net.n_items)}, got {X.shape}")
    return X


def is_feasible_D2(net: Network, Y, tol: float = FEAS_TOL) -> bool:
    """Box, designated, per-node cap and global budget constraints."""
    Y = _check_shape(net, Y)
    if Y.min(initial=0.0) < -tol or Y.max(initial=0.0) > 1 + tol:
        return False
    if np.any(Y[net.designated] < 1 - tol):
        return False
    if np.any(Y.sum(axis=1) > net.cap_array + tol):
        return False
    return bool(Y.sum() <= net.budget + tol)


def is_feasible_D1(net: Network, X, tol: float = FEAS_TOL) -> bool:
    """``is_feasible_D2`` plus integrality."""
    X = _check_shape(net, X)
    if np.any((np.abs(X) > tol) & (np.abs(X - 1) > tol)):
        return False
    return is_feasible_D2(net, X, tol)


def shortest_path(net: Network, src: int, dst: int) -> tuple[int, ...]:
    """Minimum-weight path; equal-cost ties go to the lexicographically smallest sequence."""
    best: dict[int, tuple[float, tuple[int, ...]]] = {src: (0.0, (src,))}
    heap = [(0.0, (src,))]
    done: set[int] = set()
    while heap:
        d, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        done.add(u)
        if u == dst:
            return path
        for v in net.neighbors[u]:
            if v in done or v in path:
                continue
            cand = (d + net.weights[(u, v)], path + (v,))
            if v not in best or cand < best[v]:
                best[v] = cand
                heapq.heappush(heap, cand)
    raise ValueError(f"node {dst} unreachable from {src}")


def route_to_server(net: Network, consumer: int, item: int) -> tuple[int, ...]:
    """Shortest path from ``consumer`` to the nearest designated server of ``item``."""
    paths = [shortest_path(net, consumer, s) for s in sorted(net.servers[item])]
    return min(paths, key=lambda p: (path_weight(net, p), p))


def path_weight(net: Network, path: Sequence[int]) -> float:
    return float(sum(net.weights[(b, a)] for a, b in zip(path, path[1:])))


# ---------------------------------------------------------------------------
# text file formats

def _data_lines(path: Path):
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if line and not line.startswith("#"):
            yield line.split()


def write_graph(net: Network, path: Path) -> None:
    lines = ["# u v w"]
    lines += [f"{u} {v} {float(net.weights[(u, v)])!r}" for u, v in net.edges]
    Path(path).write_text("\n".join(lines) + "\n")


def read_graph(path: Path) -> tuple[int, list[tuple[int, int, float]]]:
    edges = [(int(u), int(v), float(w)) for u, v, w in _data_lines(path)]
    n = 1 + max((max(u, v) for u, v, _ in edges), default=-1)
    return n, edges


def write_servers(net: Network, path: Path) -> None:
    lines = ["# item node"]
    lines += [f"{i} {v}" for i, nodes in enumerate(net.servers) for v in sorted(nodes)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_servers(path: Path) -> list[set[int]]:
    pairs = [(int(i), int(v)) for i, v in _data_lines(path)]
    n_items = 1 + max((i for i, _ in pairs), default=-1)
    servers: list[set[int]] = [set() for _ in range(n_items)]
    for i, v in pairs:
        servers[i].add(v)
    return servers


def write_demand(demand: Demand, path: Path) -> None:
    lines = ["# item consumer rate"]
    lines += [f"{r.item} {r.path[0]} {float(lam)!r}" for r, lam in zip(demand.requests, demand.rates)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_demand(net: Network, path: Path) -> Demand:
    """Read ``item consumer rate`` lines and route each over its shortest path."""
    requests, rates = [], []
    for item, consumer, rate in _data_lines(path):
        item, consumer = int(item), int(consumer)
        requests.append(Request(item, route_to_server(net, consumer, item)))
        rates.append(float(rate))
    return Demand(tuple(requests), np.asarray(rates))
