"""Period-driven simulation of the adaptive cache allocation algorithm.

Every period: Poisson arrivals are served against the current integral
cache contents, probes (or the exact gradient) drive one synchronous game
round, the fractional allocation is rounded into new cache contents, any
scheduled event fires, and one metrics row is emitted.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import game
from .central import solve_relaxation
from .game import EdgeArrays, GameParams, GameState
from .model import Demand, Network, Request
from .objective import SurrogateParams, baseline_cost, table_for, table_gain, table_grad
from .protocol import MessageCounters, estimate_c0_bar, probe_all, scatter_samples
from .rng import stream

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "t", "F_heu", "L_tilde", "L_upper", "frac_cache_total", "int_cache_total",
    "violation", "measured_gain", "msg_ms", "msg_mr", "msg_e", "msg_consensus",
)
EVENT_KINDS = ("rates_uniform", "rates_const", "rates_scale", "budget", "budget_delta")


class InvariantBreach(RuntimeError):
    """The conservation identity drifted beyond rounding error."""


@dataclass(frozen=True)
class Event:
    """A scheduled change applied at the end of the period ending at ``time``.

    ``rates_uniform`` draws every rate from ``[value, high]``; ``rates_const``
    sets every rate to ``value``; ``rates_scale`` multiplies them;
    ``budget`` sets M to ``value`` and ``budget_delta`` adds ``value`` to it.
    """

    time: float
    kind: str
    value: float = 1.0
    high: float | None = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.kind == "rates_uniform" and (self.high is None or not 0 < self.value <= self.high):
            raise ValueError("rates_uniform needs 0 < low <= high")
        if self.kind in ("rates_const", "rates_scale") and self.value <= 0:
            raise ValueError("rates must stay positive")


@dataclass(frozen=True)
class SimConfig:
    period: float = 1.0
    horizon: float = 1000.0
    seed: int = 0
    grad_mode: str = "protocol"  # protocol | oracle
    alpha: float = 0.2
    mu0: float = 0.25
    epsilon: float = 0.1
    step_mode: str = "practical"  # practical | theory | fixed
    step_scale: float = 1.0
    gamma: float | None = None
    rate_bound: float = 1.0
    n_bar: int | None = None
    consensus_iters: int = 200
    events: tuple[Event, ...] = ()
    eviction: str = "soft"  # hard | soft
    probe_fraction: float = 1.0
    drop_prob: float = 0.0
    bound_alpha: float | None = None
    track_bounds: bool = True
    check_every: int = 1

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("period must be positive")
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")
        if self.grad_mode not in ("protocol", "oracle"):
            raise ValueError(f"unknown gradient mode {self.grad_mode!r}")
        if self.step_mode not in ("practical", "theory", "fixed"):
            raise ValueError(f"unknown step mode {self.step_mode!r}")
        if self.step_mode == "fixed" and not self.gamma:
            raise ValueError("fixed step mode needs gamma")
        if self.eviction not in ("hard", "soft"):
            raise ValueError(f"unknown eviction mode {self.eviction!r}")
        if not 0 < self.probe_fraction <= 1 or not 0 <= self.drop_prob < 1:
            raise ValueError("probe_fraction must be in (0, 1] and drop_prob in [0, 1)")
        SurrogateParams(self.alpha)

    @property
    def n_periods(self) -> int:
        return int(math.floor(self.horizon / self.period + 1e-9))


@dataclass
class MetricsRow:
    t: float
    F_heu: float
    L_tilde: float
    L_upper: float
    frac_cache_total: float
    int_cache_total: int
    violation: float
    measured_gain: float
    msg_ms: int
    msg_mr: int
    msg_e: int
    msg_consensus: int


@dataclass
class SimResult:
    rows: list[MetricsRow]
    state: GameState
    contents: np.ndarray
    sizes: np.ndarray
    net: Network
    demand: Demand
    params: GameParams
    c0_bar: float
    counters: MessageCounters
    regimes: list[dict] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)


# ---------------------------------------------------------------------------
# eviction and serving

def evict(y_v, cap: int, mode: str = "hard", designated=()) -> tuple[int, set[int]]:
    """Integer cache size from the fractional row and the items kept.

    Hard mode floors ``1'y_v``, soft mode rounds it to the nearest integer;
    the largest entries are kept (ties to the smaller item id) and the
    designated items are always among them.
    """
    y_v = np.asarray(y_v, dtype=float)
    des = np.zeros(len(y_v), dtype=bool)
    des[list(designated)] = True
    X, sizes = evict_all(y_v[None, :], np.array([cap]), des[None, :], mode)
    return int(sizes[0]), set(np.flatnonzero(X[0]).tolist())


def evict_all(Y: np.ndarray, caps: np.ndarray, designated: np.ndarray, mode: str = "hard"):
    """Row-wise :func:`evict`; returns (0/1 contents matrix, sizes)."""
    total = Y.sum(axis=1)
    if mode == "hard":
        sizes = np.floor(total + 1e-9)
    elif mode == "soft":
        sizes = np.floor(total + 0.5)
    else:
        raise ValueError(f"unknown eviction mode {mode!r}")
    sizes = np.minimum(sizes, caps).astype(int)
    sizes = np.maximum(sizes, designated.sum(axis=1))
    key = np.where(designated, 2.0, Y)
    order = np.argsort(-key, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(Y.shape[1])[None, :].repeat(Y.shape[0], 0), axis=1)
    X = (rank < sizes[:, None]).astype(float)
    return X, sizes


def measured_gain(net: Network, request: Request, contents) -> float:
    """Cost saved for one request: the hops beyond the first node holding the item."""
    contents = np.asarray(contents)
    p, i = request.path, request.item
    for h, v in enumerate(p):
        if contents[v, i]:
            return float(sum(net.weights[(p[k + 1], p[k])] for k in range(h, len(p) - 1)))
    return 0.0


def _saved_per_request(table, X) -> np.ndarray:
    covered = 1.0 - np.cumprod(1.0 - table.values(X), axis=1)
    return (table.hop_w * covered).sum(axis=1)


# ---------------------------------------------------------------------------
# events

def apply_event(
    net: Network,
    demand: Demand,
    state: GameState,
    event: Event,
    epsilon: float,
    rng: np.random.Generator | None = None,
) -> tuple[Network, Demand, GameState]:
    if event.kind == "rates_uniform":
        rng = rng or np.random.default_rng()
        demand = demand.with_rates(rng.uniform(event.value, event.high, len(demand)))
    elif event.kind == "rates_const":
        demand = demand.with_rates(np.full(len(demand), event.value))
    elif event.kind == "rates_scale":
        demand = demand.scaled(event.value)
    else:
        new_M = int(event.value) if event.kind == "budget" else net.budget + int(event.value)
        if new_M < net.designated_count:
            raise ValueError(f"budget {new_M} below designated count {net.designated_count}")
        net = net.with_budget(new_M)
        state = game.rebase_budget(state, net.n_nodes, new_M, epsilon)
    return net, demand, state


def validate_events(net: Network, events) -> None:
    M = net.budget
    for ev in sorted(events, key=lambda e: e.time):
        if ev.kind in ("budget", "budget_delta"):
            M = int(ev.value) if ev.kind == "budget" else M + int(ev.value)
            if M < net.designated_count:
                raise ValueError(f"event at t={ev.time} drops budget below designated count")


# ---------------------------------------------------------------------------
# main loop

def _upper_bound(net, demand, alpha) -> float:
    if len(demand) == 0:
        return 0.0
    return solve_relaxation(net, demand, SurrogateParams(alpha)).L_upper


def run(net: Network, demand: Demand, config: SimConfig, start_events: tuple[Event, ...] = ()) -> SimResult:
    """Simulate the algorithm for ``config.horizon`` time units.

    ``start_events`` are applied before the first period (e.g. drawing the
    initial rates) using the same event stream as scheduled events.
    """
    validate_events(net, tuple(start_events) + tuple(config.events))
    T = config.period
    arrivals = stream(config.seed, "arrivals")
    probes_rng = stream(config.seed, "probes")
    events_rng = stream(config.seed, "events")
    edges = EdgeArrays.of(net)
    counters = MessageCounters()
    shape = (net.n_nodes, net.n_items)

    state = game.init_state(net, net.budget, config.epsilon, net.servers_only())
    for ev in start_events:
        net, demand, state = apply_event(net, demand, state, ev, config.epsilon, events_rng)

    c0_bar, steps = estimate_c0_bar(
        net, demand, config.n_bar, config.consensus_iters, config.rate_bound
    )
    counters.consensus = steps * len(edges.src)
    if c0_bar <= 0:
        c0_bar = 1.0
    mu = config.mu0 * c0_bar
    if config.step_mode == "practical":
        gamma = config.step_scale * game.step_bound_practical(c0_bar, config.mu0, config.alpha)
    elif config.step_mode == "theory":
        gamma = config.step_scale * game.step_bound(max(baseline_cost(net, demand), 1e-12), config.alpha, mu)
    else:
        gamma = float(config.gamma)
    params = GameParams(mu, gamma, config.alpha)
    bound_alpha = config.bound_alpha or config.alpha

    table = table_for(net, demand)
    rates = demand.rates
    regimes: list[dict] = []

    def new_regime(t0: float):
        upper = _upper_bound(net, demand, bound_alpha) if config.track_bounds else math.nan
        regimes.append({"start": t0, "L_upper": upper, "budget": net.budget})
        return upper

    L_upper = new_regime(0.0)
    X, sizes = evict_all(state.Y, net.cap_array, net.designated, config.eviction)
    saved = _saved_per_request(table, X)
    pending = sorted(config.events, key=lambda e: e.time)
    rows: list[MetricsRow] = []
    scale = 1.0 / (config.probe_fraction * T)

    for k in range(config.n_periods):
        t = (k + 1) * T
        counts = arrivals.poisson(rates * T)
        gain_measured = float(counts @ saved) / T

        if config.grad_mode == "oracle":
            grad = table_grad(table, rates, state.Y, config.alpha, shape)
        else:
            sent = counts if config.probe_fraction == 1 else probes_rng.binomial(counts, config.probe_fraction)
            if config.drop_prob > 0:
                reached = probes_rng.binomial(sent, 1 - config.drop_prob)
                replied = probes_rng.binomial(reached, 1 - config.drop_prob)
            else:
                reached = replied = sent
            probe = probe_all(table, state.Y, config.alpha)
            counters.m_s += int(sent @ probe.hops)
            counters.m_r += int(reached @ probe.hops)
            grad = scatter_samples(table, probe.samples, replied * scale, shape)

        delivered = None
        if config.drop_prob > 0:
            delivered = probes_rng.random(len(edges.src)) >= config.drop_prob
        counters.e += len(edges.src)
        state = game.game_round(net, state, params, grad, edges, delivered)

        X, sizes = evict_all(state.Y, net.cap_array, net.designated, config.eviction)

        while pending and pending[0].time <= t + 1e-9:
            ev = pending.pop(0)
            net, demand, state = apply_event(net, demand, state, ev, config.epsilon, events_rng)
            table, rates = table_for(net, demand), demand.rates
            L_upper = new_regime(t)

        saved = _saved_per_request(table, X)
        if config.check_every and k % config.check_every == 0:
            drift = abs(state.imbalance())
            if drift > 1e-6 * (1.0 + net.budget):
                raise InvariantBreach(f"conservation drift {drift:.3g} at t={t}")
        rows.append(
            MetricsRow(
                t=t,
                F_heu=float(rates @ saved),
                L_tilde=table_gain(table, rates, state.Y, "sat", config.alpha),
                L_upper=L_upper,
                frac_cache_total=float(state.Y.sum()),
                int_cache_total=int(sizes.sum()),
                violation=state.violation(),
                measured_gain=gain_measured,
                msg_ms=counters.m_s,
                msg_mr=counters.m_r,
                msg_e=counters.e,
                msg_consensus=counters.consensus,
            )
        )
    return SimResult(rows, state, X, sizes, net, demand, params, c0_bar, counters, regimes)


def write_metrics(rows, path: Path) -> None:
    """Write rows as CSV atomically (temp file then rename)."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for r in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in astuple_row(r)])
    tmp.replace(path)


def astuple_row(r: MetricsRow) -> tuple:
    return tuple(getattr(r, f.name) for f in fields(MetricsRow))


def config_dict(config: SimConfig) -> dict:
    d = asdict(config)
    d["events"] = [asdict(e) for e in config.events]
    return d
