"""In-band control messages and average consensus.

A request's forward probe ``m_s`` accumulates the allocation along its path
until the prefix sum passes ``1 + alpha/2`` (after which the surrogate is
flat); the reply ``m_r`` walks back accumulating ``w * sat'(m_s)``, and the
value it carries past node v is v's sample ``t_vi`` of the partial
derivative of L~ for that request.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .model import Demand, Network, Request, path_weight
from .objective import PathTable, sat_prime

SCALAR_BYTES = 8
TAG_BYTES = 4


@dataclass
class ProbeRecord:
    request_id: int
    nodes: tuple[int, ...]  # visited nodes, stop node last
    m_s: tuple[float, ...]
    m_r: tuple[float, ...] = ()


def forward_probe(net: Network, request: Request, Y, alpha: float, request_id: int = 0) -> ProbeRecord:
    """Propagate ``m_s`` until it exceeds ``1 + alpha/2`` or the path ends."""
    Y = np.asarray(Y)
    i = request.item
    nodes, sums = [], []
    total = 0.0
    for v in request.path:
        total += Y[v, i]
        nodes.append(v)
        sums.append(total)
        if total > 1 + alpha / 2:
            break
    return ProbeRecord(request_id, tuple(nodes), tuple(sums))


def reverse_probe(net: Network, probe: ProbeRecord, alpha: float) -> dict[int, float]:
    """Send ``m_r`` back from the stop node; returns ``{node: t_vi}``."""
    nodes, sums = probe.nodes, probe.m_s
    m_r = [0.0] * len(nodes)
    for l in range(len(nodes) - 2, -1, -1):
        hop = net.weights[(nodes[l + 1], nodes[l])]
        m_r[l] = m_r[l + 1] + hop * sat_prime(sums[l], alpha)
    probe.m_r = tuple(m_r)
    return dict(zip(nodes, m_r))


@dataclass
class GradientAccumulator:
    """Per-(node, item) samples collected during one measurement period."""

    period: float = 1.0
    samples: dict[tuple[int, int], list[float]] = field(default_factory=lambda: defaultdict(list))

    def record(self, item: int, t_by_node: dict[int, float]) -> None:
        for v, t in t_by_node.items():
            self.samples[(v, item)].append(t)


def period_estimate(acc: GradientAccumulator, shape: tuple[int, int]) -> np.ndarray:
    """``z_vi = sum(T_vi) / T``; clears the accumulator."""
    z = np.zeros(shape)
    for (v, i), ts in acc.samples.items():
        z[v, i] = sum(ts) / acc.period
    acc.samples.clear()
    return z


# ---------------------------------------------------------------------------
# vectorized probe pass used by the simulator

@dataclass(frozen=True, eq=False)
class ProbePass:
    """Outcome of probing every request once against a fixed allocation.

    ``samples[r, l]`` is the ``t`` value recorded by the l-th node of request
    r (zero beyond the stop position), ``hops[r]`` the number of links the
    forward (and the reverse) message crossed.
    """

    samples: np.ndarray
    hops: np.ndarray


def probe_all(table: PathTable, Y: np.ndarray, alpha: float) -> ProbePass:
    prefix = np.cumsum(table.values(Y), axis=1)
    width = prefix.shape[1]
    pos = np.arange(width)
    valid = pos[None, :] < table.length[:, None]
    over = (prefix > 1 + alpha / 2) & valid
    stop = np.where(over.any(axis=1), over.argmax(axis=1), table.length - 1)
    before_stop = pos[None, :] < stop[:, None]
    per_hop = np.where(before_stop, table.hop_w * sat_prime(prefix, alpha), 0.0)
    samples = np.cumsum(per_hop[:, ::-1], axis=1)[:, ::-1]
    return ProbePass(samples, stop.astype(np.int64))


def scatter_samples(table: PathTable, samples: np.ndarray, weights: np.ndarray, shape) -> np.ndarray:
    """``sum_r weights[r] * samples[r, l]`` accumulated into ``(node, item)`` cells."""
    out = np.zeros(shape)
    np.add.at(out, (table.nodes, table.items[:, None]), weights[:, None] * samples)
    return out


# ---------------------------------------------------------------------------
# path weights and the C0 over-estimate

def probe_path_weight(net: Network, path) -> float:
    """Weight a reverse-direction reply accumulates along ``path``."""
    return path_weight(net, path)


def local_c0(net: Network, demand: Demand, v: int, rate_bound=1.0) -> float:
    """``sum over requests originating at v of rate_bound * w_p``."""
    bounds = np.broadcast_to(np.asarray(rate_bound, dtype=float), (len(demand),))
    return float(
        sum(b * path_weight(net, r.path) for r, b in zip(demand.requests, bounds) if r.path[0] == v)
    )


@dataclass(frozen=True, eq=False)
class ConsensusState:
    s: np.ndarray
    scheme: str = "local-degree"
    edge_weight: float | None = None


def consensus_matrix(net: Network, scheme: str = "local-degree", edge_weight: float | None = None) -> np.ndarray:
    """Symmetric doubly-stochastic weights supported on the graph."""
    n = net.n_nodes
    A = np.zeros((n, n))
    deg = net.degree
    if scheme == "local-degree":
        for u, v in net.edges:
            A[u, v] = A[v, u] = 1.0 / max(deg[u], deg[v])
    elif scheme == "constant-edge":
        limit = 2.0 / max(deg[u] + deg[v] for u, v in net.edges)
        if edge_weight is None or not 0 < edge_weight < limit:
            raise ValueError(f"constant edge weight must lie in (0, {limit:.6g})")
        for u, v in net.edges:
            A[u, v] = A[v, u] = edge_weight
    else:
        raise ValueError(f"unknown weight scheme {scheme!r}")
    A[np.diag_indices(n)] = 1.0 - A.sum(axis=1)
    return A


def second_eigenvalue_modulus(A: np.ndarray) -> float:
    """Largest |eigenvalue| of A once the consensus direction is removed."""
    n = A.shape[0]
    eig = np.linalg.eigvalsh(A - np.full((n, n), 1.0 / n))
    return float(np.abs(eig).max())


def consensus_step(net: Network, state: ConsensusState, A: np.ndarray | None = None) -> ConsensusState:
    A = consensus_matrix(net, state.scheme, state.edge_weight) if A is None else A
    return ConsensusState(A @ state.s, state.scheme, state.edge_weight)


def run_consensus(
    net: Network,
    values,
    scheme: str = "local-degree",
    edge_weight: float | None = None,
    iters: int = 200,
    tol: float = 1e-9,
) -> tuple[np.ndarray, int]:
    """Iterate until the spread drops below ``tol`` or ``iters`` steps; returns (s, steps)."""
    A = consensus_matrix(net, scheme, edge_weight)
    s = np.asarray(values, dtype=float)
    steps = 0
    while steps < iters and s.max() - s.min() >= tol:
        s = A @ s
        steps += 1
    return s, steps


def estimate_c0_bar(
    net: Network,
    demand: Demand,
    n_bar: int | None = None,
    iters: int = 200,
    rate_bound=1.0,
    scheme: str = "local-degree",
) -> tuple[float, int]:
    """Upper estimate of C0 from consensus on per-node ``C_v0``; returns (value, steps).

    The value is read at node 0; any node would do once consensus has settled.
    """
    n_bar = net.n_nodes if n_bar is None else n_bar
    start = [local_c0(net, demand, v, rate_bound) for v in range(net.n_nodes)]
    s, steps = run_consensus(net, start, scheme, iters=iters)
    return float(n_bar * s[0]), steps


@dataclass
class MessageCounters:
    """Control-message hop counts; one scalar plus a tag per message."""

    m_s: int = 0
    m_r: int = 0
    e: int = 0
    consensus: int = 0

    def bytes(self) -> dict[str, int]:
        size = SCALAR_BYTES + TAG_BYTES
        return {k: v * size for k, v in vars(self).items()}
