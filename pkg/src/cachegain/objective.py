"""Caching gain F, its concave relaxation L and the smooth surrogate L~.

All three share one path walk (:func:`_walk`): the per-prefix coverage of
each hop is computed by a pluggable function of the allocation values read
along the request paths, so the evaluators cannot drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .model import Demand, Network, Request


@dataclass(frozen=True)
class SurrogateParams:
    alpha: float = 0.2

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")


@dataclass(frozen=True, eq=False)
class PathTable:
    """Requests padded into dense arrays.

    ``nodes[r, k]`` is the k-th node on request r's path (padded with the
    last node), ``hop_w[r, k]`` is the weight ``w[p[k+1], p[k]]`` of the hop
    leaving position k (zero past the end), ``length[r]`` the node count.
    """

    nodes: np.ndarray
    items: np.ndarray
    hop_w: np.ndarray
    length: np.ndarray

    @property
    def path_w(self) -> np.ndarray:
        return self.hop_w.sum(axis=1)

    def values(self, Y: np.ndarray) -> np.ndarray:
        """``Y`` read along every path: shape ``(n_requests, max_len)``."""
        return Y[self.nodes, self.items[:, None]]


def build_table(net: Network, requests: tuple[Request, ...]) -> PathTable:
    n = len(requests)
    width = max((len(r.path) for r in requests), default=1)
    nodes = np.zeros((n, width), dtype=np.intp)
    hop_w = np.zeros((n, width))
    items = np.zeros(n, dtype=np.intp)
    length = np.zeros(n, dtype=np.intp)
    for r, req in enumerate(requests):
        p = req.path
        nodes[r, : len(p)] = p
        nodes[r, len(p):] = p[-1]
        for k in range(len(p) - 1):
            hop_w[r, k] = net.weights[(p[k + 1], p[k])]
        items[r] = req.item
        length[r] = len(p)
    for arr in (nodes, hop_w, items, length):
        arr.setflags(write=False)
    return PathTable(nodes, items, hop_w, length)


@lru_cache(maxsize=64)
def path_table(net: Network, requests: tuple[Request, ...]) -> PathTable:
    return build_table(net, requests)


def table_for(net: Network, demand: Demand) -> PathTable:
    return path_table(net, demand.requests)


# ---------------------------------------------------------------------------
# saturation functions

def sat(x, params: SurrogateParams | float = 0.2):
    """Quadratically smoothed ``min(1, x)`` for ``x >= 0``; never exceeds it."""
    a = params.alpha if isinstance(params, SurrogateParams) else params
    x = np.asarray(x, dtype=float)
    hi = 1 + a / 2
    out = np.where(x < 1 - a / 2, x, 1 - (hi - x) ** 2 / (2 * a))
    out = np.where(x >= hi, 1.0, out)
    return out if out.ndim else float(out)


def sat_prime(x, params: SurrogateParams | float = 0.2):
    a = params.alpha if isinstance(params, SurrogateParams) else params
    x = np.asarray(x, dtype=float)
    hi = 1 + a / 2
    out = np.where(x < 1 - a / 2, 1.0, (hi - x) / a)
    out = np.where(x >= hi, 0.0, out)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# coverage rules: prefix-wise value in [0, 1] of each hop being saved

def _cover_product(vals: np.ndarray) -> np.ndarray:
    return 1.0 - np.cumprod(1.0 - vals, axis=1)


def _cover_min(vals: np.ndarray) -> np.ndarray:
    return np.minimum(1.0, np.cumsum(vals, axis=1))


def _cover_sat(alpha: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda vals: sat(np.cumsum(vals, axis=1), alpha)


def _walk(table: PathTable, rates: np.ndarray, Y, cover) -> float:
    if len(rates) == 0:
        return 0.0
    saved = (table.hop_w * cover(table.values(np.asarray(Y, dtype=float)))).sum(axis=1)
    return float(rates @ saved)


def baseline_cost(net: Network, demand: Demand) -> float:
    """Expected cost rate with only designated copies."""
    if len(demand) == 0:
        return 0.0
    return float(demand.rates @ table_for(net, demand).path_w)


def request_cost(net: Network, request: Request, X) -> float:
    """Cost of one request under placement (or fractional allocation) ``X``."""
    X = np.asarray(X, dtype=float)
    p, i = request.path, request.item
    cost, miss = 0.0, 1.0
    for k in range(len(p) - 1):
        miss *= 1.0 - X[p[k], i]
        cost += net.weights[(p[k + 1], p[k])] * miss
    return cost


def caching_gain(net: Network, demand: Demand, X) -> float:
    """F: expected cost saved by caches; accepts fractional input."""
    return _walk(table_for(net, demand), demand.rates, X, _cover_product)


def relaxed_gain(net: Network, demand: Demand, Y) -> float:
    """L: concave relaxation of F with ``min(1, prefix sum)`` coverage."""
    return _walk(table_for(net, demand), demand.rates, Y, _cover_min)


def smooth_gain(net: Network, demand: Demand, Y, params: SurrogateParams) -> float:
    """L~: differentiable concave lower bound of L."""
    return _walk(table_for(net, demand), demand.rates, Y, _cover_sat(params.alpha))


def table_gain(table: PathTable, rates: np.ndarray, Y, kind: str, alpha: float = 0.2) -> float:
    """Evaluate F / L / L~ (``kind`` = product / min / sat) on a prebuilt table."""
    cover = {"product": _cover_product, "min": _cover_min}.get(kind) or _cover_sat(alpha)
    return _walk(table, rates, Y, cover)


def table_grad(table: PathTable, rates: np.ndarray, Y, alpha: float, shape) -> np.ndarray:
    """Gradient of L~ on a prebuilt table, scattered into a ``shape`` matrix."""
    grad = np.zeros(shape)
    if len(rates) == 0:
        return grad
    prefix = np.cumsum(table.values(np.asarray(Y, dtype=float)), axis=1)
    per_hop = table.hop_w * sat_prime(prefix, alpha)
    # position l collects every hop k >= l
    tail = np.cumsum(per_hop[:, ::-1], axis=1)[:, ::-1]
    np.add.at(grad, (table.nodes, table.items[:, None]), rates[:, None] * tail)
    return grad


def smooth_gain_grad(net: Network, demand: Demand, Y, params: SurrogateParams) -> np.ndarray:
    """Exact gradient of L~ with respect to every ``y_vi``."""
    return table_grad(
        table_for(net, demand), demand.rates, Y, params.alpha, (net.n_nodes, net.n_items)
    )
