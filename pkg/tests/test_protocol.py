import numpy as np
import pytest
from hypothesis import given, strategies as st

from cachegain.model import Demand, Network, Request
from cachegain.objective import SurrogateParams, baseline_cost, sat_prime, smooth_gain_grad, table_for
from cachegain.protocol import (
    ConsensusState,
    GradientAccumulator,
    MessageCounters,
    consensus_matrix,
    consensus_step,
    estimate_c0_bar,
    forward_probe,
    local_c0,
    period_estimate,
    probe_all,
    probe_path_weight,
    reverse_probe,
    run_consensus,
    scatter_samples,
    second_eigenvalue_modulus,
)

from conftest import A, B, C, make_triangle
from oracles import random_feasible_Y, random_instance

ALPHA = 0.2


def test_forward_probe_triangle(triangle, half_half):
    net, dem = triangle
    rec = forward_probe(net, dem.requests[0], half_half, ALPHA)
    assert rec.nodes == (A, B, C)
    assert rec.m_s == pytest.approx((0.5, 1.0, 2.0))


def test_forward_probe_early_stop():
    net = Network.build(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)], [{3}], 4, 4)
    Y = np.array([[1.0], [1.0], [0.0], [1.0]])
    rec = forward_probe(net, Request(0, (0, 1, 2, 3)), Y, ALPHA)
    assert rec.nodes == (0, 1)
    empty = forward_probe(net, Request(0, (0, 1, 2, 3)), np.array([[0.0], [0.0], [0.0], [1.0]]), ALPHA)
    assert empty.nodes == (0, 1, 2, 3)


def test_reverse_probe_triangle(triangle, half_half):
    net, dem = triangle
    rec = forward_probe(net, dem.requests[0], half_half, ALPHA)
    t = reverse_probe(net, rec, ALPHA)
    assert t == {A: pytest.approx(2.0), B: pytest.approx(1.0), C: 0.0}
    G = smooth_gain_grad(net, dem, half_half, SurrogateParams(ALPHA))
    assert t[A] == pytest.approx(G[A, 0]) and t[B] == pytest.approx(G[B, 0])


def test_reverse_probe_saturated():
    net = Network.build(3, [(0, 1, 1.0), (1, 2, 1.0)], [{2}], 3, 3)
    Y = np.array([[1.0], [1.0], [1.0]])
    rec = forward_probe(net, Request(0, (0, 1, 2)), Y, ALPHA)
    t = reverse_probe(net, rec, ALPHA)
    assert rec.nodes == (0, 1) and t[1] == 0.0
    assert t[0] == pytest.approx(sat_prime(1.0, ALPHA))
    # a request issued at the server itself carries no gradient
    at_server = forward_probe(net, Request(0, (2,)), Y, ALPHA)
    assert reverse_probe(net, at_server, ALPHA) == {2: 0.0}


@given(st.integers(0, 100_000))
def test_probe_messages_monotone_and_exact(seed):
    rng = np.random.default_rng(seed)
    net, dem = random_instance(rng)
    Y = random_feasible_Y(net, rng)
    est = np.zeros((net.n_nodes, net.n_items))
    for k, (r, lam) in enumerate(zip(dem.requests, dem.rates)):
        rec = forward_probe(net, r, Y, ALPHA, request_id=k)
        t = reverse_probe(net, rec, ALPHA)
        assert all(b >= a for a, b in zip(rec.m_s, rec.m_s[1:]))
        assert all(a >= b for a, b in zip(rec.m_r, rec.m_r[1:]))
        # nothing beyond the stop node would have contributed
        prefix = np.cumsum([Y[v, r.item] for v in r.path])
        assert np.all(sat_prime(prefix[len(rec.nodes) - 1:], ALPHA) == 0) or len(rec.nodes) == len(r.path)
        for v, tv in t.items():
            est[v, r.item] += lam * tv
    G = smooth_gain_grad(net, dem, Y, SurrogateParams(ALPHA))
    assert np.allclose(est, G, rtol=1e-10, atol=1e-12 * max(1.0, baseline_cost(net, dem)))


@given(st.integers(0, 100_000))
def test_vectorized_probe_pass_matches_messages(seed):
    rng = np.random.default_rng(seed)
    net, dem = random_instance(rng)
    Y = random_feasible_Y(net, rng)
    table = table_for(net, dem)
    probe = probe_all(table, Y, ALPHA)
    for k, r in enumerate(dem.requests):
        rec = forward_probe(net, r, Y, ALPHA)
        t = reverse_probe(net, rec, ALPHA)
        assert probe.hops[k] == len(rec.nodes) - 1
        assert np.allclose(probe.samples[k, : len(rec.nodes)], [t[v] for v in rec.nodes])
    z = scatter_samples(table, probe.samples, dem.rates, Y.shape)
    assert np.allclose(z, smooth_gain_grad(net, dem, Y, SurrogateParams(ALPHA)), rtol=1e-10, atol=1e-12)


def test_period_estimate():
    acc = GradientAccumulator(period=2.0)
    assert not period_estimate(acc, (2, 2)).any()
    acc.record(1, {0: 1.0, 1: 0.5})
    acc.record(1, {0: 3.0})
    z = period_estimate(acc, (2, 2))
    assert z[0, 1] == pytest.approx(2.0) and z[1, 1] == pytest.approx(0.25)
    assert not acc.samples


def _mc_estimates(net, dem, Y, periods, seed):
    table = table_for(net, dem)
    probe = probe_all(table, Y, ALPHA)
    rng = np.random.default_rng(seed)
    counts = rng.poisson(dem.rates, size=(periods, len(dem)))
    return np.stack([scatter_samples(table, probe.samples, c, Y.shape) for c in counts])


def test_estimator_unbiased_on_triangle(triangle, half_half):
    net, dem = triangle
    z = _mc_estimates(net, dem, half_half, 10_000, seed=1)
    se = z[:, A, 0].std(ddof=1) / np.sqrt(len(z))
    assert abs(z[:, A, 0].mean() - 2.0) <= 3 * se
    doubled = _mc_estimates(net, dem.scaled(2.0), half_half, 10_000, seed=2)
    se2 = doubled[:, A, 0].std(ddof=1) / np.sqrt(len(z))
    assert abs(doubled[:, A, 0].mean() - 4.0) <= 3 * se2


def test_path_weights(triangle):
    net, _ = triangle
    assert probe_path_weight(net, (A, B, C)) == pytest.approx(3.0)
    assert probe_path_weight(net, (B,)) == 0.0
    assert probe_path_weight(net, (A, B, C)) == pytest.approx(
        probe_path_weight(net, (A, B)) + probe_path_weight(net, (B, C)))


def test_local_c0(triangle):
    net, dem = triangle
    assert [local_c0(net, dem, v) for v in range(3)] == [pytest.approx(3.0), 0.0, 0.0]


@given(st.integers(0, 100_000))
def test_local_c0_dominates(seed):
    rng = np.random.default_rng(seed)
    net, dem = random_instance(rng)
    bound = float(dem.rates.max())
    total = sum(local_c0(net, dem, v, bound) for v in range(net.n_nodes))
    assert total >= baseline_cost(net, dem) - 1e-12


def test_consensus_two_nodes():
    net = Network.build(2, [(0, 1, 1.0)], [{0}], 1, 1)
    s = consensus_step(net, ConsensusState(np.array([4.0, 0.0]), "constant-edge", 0.5))
    assert np.allclose(s.s, [2.0, 2.0])


def test_consensus_local_degree_path():
    net = Network.build(3, [(0, 1, 1.0), (1, 2, 1.0)], [{0}], 1, 1)
    A_ = consensus_matrix(net)
    expected = np.array([[0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.5]])
    assert np.allclose(A_, expected)
    assert np.allclose(consensus_step(net, ConsensusState(np.array([1.0, 0, 0]))).s, [0.5, 0.5, 0])


def test_consensus_invalid_weight():
    net = Network.build(3, [(0, 1, 1.0), (1, 2, 1.0)], [{0}], 1, 1)
    for bad in (None, 0.0, 2 / 3, 1.0):
        with pytest.raises(ValueError):
            consensus_matrix(net, "constant-edge", bad)
    with pytest.raises(ValueError):
        consensus_matrix(net, "metropolis")


@given(st.integers(0, 100_000), st.sampled_from(["local-degree", "constant-edge"]))
def test_consensus_geometric_rate(seed, scheme):
    rng = np.random.default_rng(seed)
    net, _ = random_instance(rng, n_nodes=int(rng.integers(2, 9)))
    limit = 2.0 / max(net.degree[u] + net.degree[v] for u, v in net.edges)
    w = 0.9 * limit if scheme == "constant-edge" else None
    A_ = consensus_matrix(net, scheme, w)
    assert np.allclose(A_, A_.T) and np.allclose(A_.sum(axis=1), 1.0)
    lam2 = second_eigenvalue_modulus(A_)
    s = rng.normal(0, 5, net.n_nodes)
    mean = s.mean()
    err0 = np.linalg.norm(s - mean)
    for k in range(1, 30):
        s = A_ @ s
        assert abs(s.sum() - mean * net.n_nodes) <= 1e-12 * max(1.0, abs(mean) * net.n_nodes)
        assert np.linalg.norm(s - mean) <= lam2**k * err0 + 1e-12


def test_run_consensus_stops_on_spread():
    net = Network.build(3, [(0, 1, 1.0), (1, 2, 1.0)], [{0}], 1, 1)
    s, steps = run_consensus(net, [3.0, 0.0, 0.0], tol=1e-9)
    assert np.allclose(s, 1.0, atol=1e-9) and steps < 200


def test_c0_bar_triangle(triangle):
    net, dem = triangle
    value, _ = estimate_c0_bar(net, dem)
    assert value == pytest.approx(3.0, rel=1e-8)
    bigger, _ = estimate_c0_bar(net, dem, n_bar=6)
    assert bigger == pytest.approx(6.0, rel=1e-8)


def test_message_bytes():
    c = MessageCounters(m_s=2, m_r=1, e=0, consensus=3)
    assert c.bytes() == {"m_s": 24, "m_r": 12, "e": 0, "consensus": 36}
