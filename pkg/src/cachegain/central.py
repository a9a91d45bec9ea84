"""Centralized offline baselines.

Greedy placement, the relaxed problem solved through the smooth surrogate,
pipage rounding back to an integral placement, and the equal-capacity
benchmark.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass

import numpy as np

from .game import project_rows
from .model import Demand, Network, is_feasible_D2
from .objective import (
    PathTable,
    SurrogateParams,
    baseline_cost,
    table_for,
    table_gain,
    table_grad,
)

log = logging.getLogger(__name__)

INT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class RelaxedSolution:
    Y_star: np.ndarray
    L_tilde_star: float
    L_upper: float
    iterations: int
    converged: bool
    gap: float = 0.0


# ---------------------------------------------------------------------------
# greedy

def _item_tables(table: PathTable, rates: np.ndarray, n_items: int):
    out = []
    for i in range(n_items):
        idx = np.flatnonzero(table.items == i)
        sub = PathTable(table.nodes[idx], table.items[idx], table.hop_w[idx], table.length[idx])
        out.append((sub, rates[idx]))
    return out


def greedy_placement(net: Network, demand: Demand) -> np.ndarray:
    """Standard greedy on F starting from the designated copies.

    Each step adds the feasible entry with the largest marginal gain (ties
    to the smallest ``(v, i)``) until nothing feasible improves F.
    """
    X = net.servers_only()
    per_node = X.sum(axis=1)
    if np.any(per_node > net.cap_array) or X.sum() > net.budget:
        raise ValueError("designated copies alone violate the caps or the budget")
    if len(demand) == 0:
        return X
    table = table_for(net, demand)
    by_item = _item_tables(table, demand.rates, net.n_items)

    def marginal(v: int, i: int) -> float:
        sub, rates = by_item[i]
        before = table_gain(sub, rates, X, "product")
        X[v, i] = 1.0
        after = table_gain(sub, rates, X, "product")
        X[v, i] = 0.0
        return after - before

    candidates = sorted(
        {(int(v), int(i)) for v, i in zip(table.nodes.ravel(), np.repeat(table.items, table.nodes.shape[1]))}
    )
    heap = [(-marginal(v, i), v, i, 0) for v, i in candidates if not net.designated[v, i]]
    heapq.heapify(heap)
    used, rnd = X.sum(), 0
    while heap and used < net.budget:
        neg, v, i, stamp = heapq.heappop(heap)
        if per_node[v] >= net.caps[v]:
            continue
        if stamp != rnd:
            heapq.heappush(heap, (-marginal(v, i), v, i, rnd))
            continue
        if -neg <= 0:
            break
        X[v, i] = 1.0
        per_node[v] += 1
        used += 1
        rnd += 1
    return X


# ---------------------------------------------------------------------------
# projection onto D2 and linear maximization over D2

def project_D2(Z: np.ndarray, net: Network, tol: float = 1e-12) -> np.ndarray:
    """Euclidean projection onto the box, per-node caps, designated copies and budget.

    For a global multiplier ``nu`` the problem separates into per-node
    projections of ``Z - nu``; ``nu`` is found by bisection on the total.
    """
    Z = np.asarray(Z, dtype=float)
    caps, des = net.cap_array, net.designated
    Y = project_rows(Z, caps, des)
    if Y.sum() <= net.budget + tol:
        return Y
    lo, hi = 0.0, max(float(Z.max()), 0.0) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if project_rows(Z - mid, caps, des).sum() > net.budget:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return project_rows(Z - hi, caps, des)


def linear_max_D2(G: np.ndarray, net: Network) -> np.ndarray:
    """Vertex of D2 maximizing ``<G, Y>``; greedy is exact on this laminar matroid."""
    X = net.servers_only()
    room = net.cap_array - X.sum(axis=1)
    budget = net.budget - X.sum()
    free = ~net.designated & (G > 0)
    vs, is_ = np.nonzero(free)
    order = np.lexsort((is_, vs, -G[vs, is_]))
    for k in order:
        if budget < 1:
            break
        v, i = vs[k], is_[k]
        if room[v] >= 1:
            X[v, i] = 1.0
            room[v] -= 1
            budget -= 1
    return X


def surrogate_gap(net: Network, demand: Demand, Y, params: SurrogateParams) -> float:
    """Frank-Wolfe duality gap: ``max_D2 L~ - L~(Y) <= <grad, Y_lmo - Y>``."""
    table = table_for(net, demand)
    G = table_grad(table, demand.rates, Y, params.alpha, Y.shape)
    return max(float(np.sum(G * (linear_max_D2(G, net) - Y))), 0.0)


# ---------------------------------------------------------------------------
# relaxed problem

def solve_relaxation(
    net: Network,
    demand: Demand,
    params: SurrogateParams,
    step: float | None = None,
    max_iters: int = 5000,
    tol: float = 1e-7,
    Y0: np.ndarray | None = None,
    gap_tol: float = 1e-5,
    grow: float = 1.2,
) -> RelaxedSolution:
    """Maximize L~ over D2 with monotone accelerated projected gradient ascent.

    ``step`` seeds the inverse curvature estimate (default ``alpha / C0``).
    It is halved whenever the quadratic lower model fails and multiplied by
    ``grow`` after every accepted step, so it tracks the local curvature,
    which is far below the global ``C0 / alpha``. The run stops when a step
    moves no entry by more than ``tol`` or the Frank-Wolfe gap falls below
    ``gap_tol * C0``. The reported ``L_upper`` adds the Frank-Wolfe gap
    at the returned point and ``alpha/8 * C0`` to ``L~(Y*)``, which bounds
    the optimum of L from above whether or not the run converged.
    """
    shape = (net.n_nodes, net.n_items)
    C0 = baseline_cost(net, demand)
    Y = project_D2(net.servers_only() if Y0 is None else Y0, net)
    if C0 <= 0:
        return RelaxedSolution(Y, 0.0, 0.0, 0, True)
    table, rates, a = table_for(net, demand), demand.rates, params.alpha

    def value(Z):
        return table_gain(table, rates, Z, "sat", a)

    eta = step if step is not None else a / C0
    x_prev, x, fx = Y, Y, value(Y)
    y, t = Y, 1.0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        fy = value(y)
        gy = table_grad(table, rates, y, a, shape)
        while True:
            z = project_D2(y + eta * gy, net)
            d = z - y
            fz = value(z)
            if fz >= fy + np.sum(gy * d) - np.sum(d * d) / (2 * eta) - 1e-12 * C0:
                break
            eta *= 0.5
        eta *= grow
        moved = float(np.abs(d).max(initial=0.0))
        x_prev = x
        if fz >= fx:
            x, fx = z, fz
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = x + (t / t_next) * (z - x) + ((t - 1) / t_next) * (x - x_prev)
        t = t_next
        if moved <= tol:
            converged = True
            break
        if it % 50 == 0:
            if surrogate_gap(net, demand, x, params) <= gap_tol * C0:
                converged = True
                break
        if it % 200 == 0:
            # restart momentum; keeps the iteration well behaved near kinks
            y, t = x, 1.0
    gap = surrogate_gap(net, demand, x, params)
    upper = fx + gap + a / 8 * C0
    log.debug("relaxation: %d iters, L~=%.6g gap=%.3g", it, fx, gap)
    return RelaxedSolution(x, fx, upper, it, converged, gap)


# ---------------------------------------------------------------------------
# pipage rounding

def pipage_round(net: Network, demand: Demand, Y_star) -> np.ndarray:
    """Round a D2 point to D1 without decreasing F.

    Pairs of fractional free entries (same node first, else across nodes,
    lexicographic) move along ``e1 - e2`` to whichever endpoint has larger
    F; F is convex along such directions, so the better endpoint is at
    least as good as the starting point. A last lone fractional entry is
    rounded up, which the integral budget and caps always allow.
    """
    if not is_feasible_D2(net, Y_star, tol=1e-7):
        raise ValueError("pipage input is not in D2")
    Y = np.clip(np.array(Y_star, dtype=float), 0.0, 1.0)
    Y[net.designated] = 1.0
    Y[np.abs(Y) <= INT_TOL] = 0.0
    Y[np.abs(Y - 1) <= INT_TOL] = 1.0
    table = table_for(net, demand) if len(demand) else None

    def F(Z):
        return table_gain(table, demand.rates, Z, "product") if table is not None else 0.0

    def fractional():
        mask = (Y > 0) & (Y < 1)
        return [tuple(map(int, p)) for p in np.argwhere(mask)]

    frac = fractional()
    while len(frac) >= 2:
        by_node: dict[int, list[int]] = {}
        for v, i in frac:
            by_node.setdefault(v, []).append(i)
        multi = [v for v in sorted(by_node) if len(by_node[v]) >= 2]
        if multi:
            v = multi[0]
            a, b = (v, by_node[v][0]), (v, by_node[v][1])
        else:
            a, b = frac[0], frac[1]
        ya, yb = Y[a], Y[b]
        up = min(1 - ya, yb)
        down = min(ya, 1 - yb)
        first, second = Y.copy(), Y.copy()
        first[a], first[b] = ya + up, yb - up
        second[a], second[b] = ya - down, yb + down
        Y = first if F(first) >= F(second) else second
        Y[np.abs(Y) <= INT_TOL] = 0.0
        Y[np.abs(Y - 1) <= INT_TOL] = 1.0
        frac = fractional()
    for v, i in frac:
        Y[v, i] = 1.0
        if Y[v].sum() > net.caps[v] + 1e-7 or Y.sum() > net.budget + 1e-7:
            Y[v, i] = 0.0
    return np.rint(Y)


# ---------------------------------------------------------------------------
# equal-capacity benchmark

def equal_capacity_caps(net: Network) -> np.ndarray:
    """``floor((M - designated)/|V|)`` spare slots per node, remainder to the lowest ids."""
    spare = net.budget - net.designated_count
    if spare < 0:
        raise ValueError("budget below the number of designated copies")
    base, rem = divmod(spare, net.n_nodes)
    caps = np.full(net.n_nodes, base) + (np.arange(net.n_nodes) < rem)
    return caps + net.designated.sum(axis=1)


def equal_capacity_bound(
    net: Network, demand: Demand, params: SurrogateParams, **solver_kw
) -> RelaxedSolution:
    """Relaxed optimum with caps fixed to the equal split (budget then redundant).

    The returned ``L_upper`` bounds the equal-capacity relaxed optimum from
    above; ``L_tilde_star`` bounds it from below.
    """
    if net.budget < net.n_items:
        raise ValueError("budget smaller than the catalog")
    caps = equal_capacity_caps(net)
    fixed = net.with_caps(caps).with_budget(int(caps.sum()))
    return solve_relaxation(fixed, demand, params, **solver_kw)
