"""State-based potential game played by the caches.

Each node v holds a row ``y_v`` of the allocation, an error term ``e_v``
(its running estimate of budget overuse ``1'y_v - c0_v``) and its budget
share ``c0_v``. One synchronous round computes every node's action from
the current state and applies them all at once.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import Demand, Network
from .objective import table_for, table_gain

PROJ_TOL = 1e-12


@dataclass(frozen=True)
class GameParams:
    mu: float
    gamma: float
    alpha: float = 0.2

    def __post_init__(self):
        if self.mu <= 0 or self.gamma <= 0:
            raise ValueError("mu and gamma must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class GameState:
    Y: np.ndarray
    e: np.ndarray
    c0: np.ndarray

    def imbalance(self) -> float:
        """``sum_v e_v - sum_v (1'y_v - c0_v)``; zero up to rounding."""
        return float(self.e.sum() - (self.Y.sum() - self.c0.sum()))

    def violation(self) -> float:
        """``[sum_v (1'y_v - c0_v)]_+``."""
        return max(float(self.Y.sum() - self.c0.sum()), 0.0)


def init_state(net: Network, M: float, epsilon: float, Y0) -> GameState:
    """Equal budget shares ``(M - epsilon)/|V|`` and errors ``1'y_v(0) - c0_v``."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    Y0 = np.array(Y0, dtype=float)
    if Y0.shape != (net.n_nodes, net.n_items):
        raise ValueError(f"Y0 has shape {Y0.shape}")
    c0 = np.full(net.n_nodes, (M - epsilon) / net.n_nodes)
    e = Y0.sum(axis=1) - c0
    if e.sum() > 1e-12 * max(1.0, M):
        raise ValueError(f"initial errors sum to {e.sum():.6g} > 0; lower Y0 or raise M")
    return GameState(Y0, e, c0)


# ---------------------------------------------------------------------------
# projection onto Omega_v

def project_rows(Z: np.ndarray, caps: np.ndarray, designated: np.ndarray) -> np.ndarray:
    """Project every row of ``Z`` onto ``{y in [0,1]^C : sum y <= cap, y_i = 1 on designated}``.

    Designated entries are pinned to 1 and the rest clipped; rows still over
    capacity get a common shift subtracted before clipping, found by bisection.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    designated = np.atleast_2d(designated)
    caps = np.broadcast_to(np.asarray(caps, dtype=float), (Z.shape[0],))
    free_cap = caps - designated.sum(axis=1)
    if np.any(free_cap < 0):
        raise ValueError("cap below number of designated items")
    free = ~designated
    out = np.where(designated, 1.0, np.clip(Z, 0.0, 1.0))
    over = (out * free).sum(axis=1) > free_cap
    if over.any():
        z = np.where(free[over], Z[over], -np.inf)
        target = free_cap[over]
        lo = np.zeros(len(target))
        hi = np.max(np.where(np.isfinite(z), z, -1.0), axis=1)
        hi = np.maximum(hi, 0.0)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            s = np.clip(z - mid[:, None], 0.0, 1.0).sum(axis=1)
            too_big = s > target
            lo = np.where(too_big, mid, lo)
            hi = np.where(too_big, hi, mid)
            if np.max(hi - lo) <= PROJ_TOL:
                break
        # hi is always on the feasible side
        out[over] = np.where(free[over], np.clip(z - hi[:, None], 0.0, 1.0), 1.0)
    return out


def project_omega(y, cap: float, designated=()) -> np.ndarray:
    """Euclidean projection of one node's row onto its admissible set."""
    y = np.asarray(y, dtype=float)
    mask = np.zeros(y.shape[0], dtype=bool)
    if len(designated):
        designated = np.asarray(designated)
        if designated.dtype == bool:
            mask = designated.copy()
        else:
            mask[designated.astype(int)] = True
    return project_rows(y[None, :], np.array([cap]), mask[None, :])[0]


# ---------------------------------------------------------------------------
# per-node actions (the literal algorithm)

def compute_error_actions(net: Network, state: GameState, params: GameParams, v: int) -> dict[int, float]:
    """Error transfers ``e_hat[v -> u]`` to every neighbor u."""
    pos = np.maximum(state.e, 0.0)
    return {u: params.gamma * params.mu * (pos[v] - pos[u]) for u in net.neighbors[v]}


def compute_allocation_action(
    net: Network, state: GameState, params: GameParams, v: int, grad_v
) -> np.ndarray:
    """Increment ``y_hat_v`` taking ``y_v`` to its projected gradient step."""
    y = state.Y[v]
    step = y + params.gamma * (np.asarray(grad_v) - params.mu * max(state.e[v], 0.0))
    new = project_omega(step, net.caps[v], net.designated[v])
    return new - y


def apply_updates(
    state: GameState,
    y_hats: np.ndarray,
    transfers: dict[tuple[int, int], float] | None = None,
) -> GameState:
    """Apply all increments and error transfers (keyed ``(sender, receiver)``)."""
    y_hats = np.asarray(y_hats, dtype=float)
    e = state.e + y_hats.sum(axis=1)
    if transfers:
        flow = np.zeros_like(e)
        for (v, u), amount in transfers.items():
            flow[u] += amount
            flow[v] -= amount
        e = e + flow
    return GameState(state.Y + y_hats, e, state.c0)


# ---------------------------------------------------------------------------
# vectorized round used by the simulator

@dataclass(frozen=True, eq=False)
class EdgeArrays:
    """Directed edge list (both orientations) for vectorized transfers."""

    src: np.ndarray
    dst: np.ndarray

    @classmethod
    def of(cls, net: Network) -> "EdgeArrays":
        und = np.asarray(net.edges, dtype=np.intp).reshape(-1, 2)
        return cls(np.concatenate([und[:, 0], und[:, 1]]), np.concatenate([und[:, 1], und[:, 0]]))


def game_round(
    net: Network,
    state: GameState,
    params: GameParams,
    grad: np.ndarray,
    edges: EdgeArrays | None = None,
    delivered: np.ndarray | None = None,
) -> GameState:
    """One synchronous round for all nodes.

    ``delivered`` optionally masks directed error transfers; an undelivered
    transfer is applied by neither endpoint, which keeps the conservation
    identity intact.
    """
    edges = edges or EdgeArrays.of(net)
    pos = np.maximum(state.e, 0.0)
    step = state.Y + params.gamma * (grad - params.mu * pos[:, None])
    Y = project_rows(step, net.cap_array, net.designated)
    amounts = params.gamma * params.mu * (pos[edges.src] - pos[edges.dst])
    if delivered is not None:
        amounts = np.where(delivered, amounts, 0.0)
    n = net.n_nodes
    flow = np.bincount(edges.dst, amounts, n) - np.bincount(edges.src, amounts, n)
    e = state.e + (Y - state.Y).sum(axis=1) + flow
    return GameState(Y, e, state.c0)


def rebase_budget(state: GameState, n_nodes: int, M_new: float, epsilon: float) -> GameState:
    """New budget shares; errors shift by the share change so conservation still holds."""
    c0 = np.full(n_nodes, (M_new - epsilon) / n_nodes)
    return replace(state, e=state.e + (state.c0 - c0), c0=c0)


# ---------------------------------------------------------------------------
# potential, step bounds, equilibrium diagnostics

def potential_from(smooth_value: float, state: GameState, params: GameParams) -> float:
    return -smooth_value + 0.5 * params.mu * float(np.sum(np.maximum(state.e, 0.0) ** 2))


def potential(net: Network, demand: Demand, state: GameState, params: GameParams) -> float:
    """Phi_mu = -L~(Y) + mu/2 * sum_v [e_v]_+^2."""
    value = table_gain(table_for(net, demand), demand.rates, state.Y, "sat", params.alpha)
    return potential_from(value, state, params)


def step_bound(C0: float, alpha: float, mu: float) -> float:
    """Theoretical step-size bound ``2 / (C0/alpha + 2 mu)``."""
    return 2.0 / (C0 / alpha + 2.0 * mu)


def step_bound_practical(C0_bar: float, mu0: float, alpha: float) -> float:
    """Bound computable from ``C0_bar >= C0`` when ``mu = mu0 * C0_bar``."""
    return 2.0 / ((1.0 / alpha + 2.0 * mu0) * C0_bar)


def equilibrium_residual(
    net: Network, state: GameState, params: GameParams, grad: np.ndarray
) -> tuple[float, float]:
    """(largest projected-gradient step over nodes, spread of positive errors).

    Both vanish at a stationary Nash equilibrium: no node wants to move and
    every ``[e_u]_+`` equals ``[sum_v (1'y_v - c0_v)]_+ / |V|``.
    """
    pos = np.maximum(state.e, 0.0)
    step = state.Y + params.gamma * (grad - params.mu * pos[:, None])
    moved = project_rows(step, net.cap_array, net.designated) - state.Y
    stationarity = float(np.abs(moved).max(initial=0.0))
    target = max(float(state.Y.sum() - state.c0.sum()), 0.0) / net.n_nodes
    spread = float(np.abs(pos - target).max(initial=0.0))
    return stationarity, spread
