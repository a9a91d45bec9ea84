import numpy as np
import pytest
from hypothesis import given, strategies as st

from cachegain.model import (
    Demand,
    Network,
    Request,
    is_feasible_D1,
    is_feasible_D2,
    read_demand,
    read_graph,
    read_servers,
    shortest_path,
    validate_demand,
    validate_network,
    write_demand,
    write_graph,
    write_servers,
)

from conftest import A, B, C, make_triangle
from oracles import feasible_placements, random_instance


def path_net():
    return Network.build(3, [(0, 1, 1.0), (1, 2, 1.0)], [{2}], 2, 2)


def test_valid_path_network():
    assert validate_network(path_net()) is None


def test_disconnected_reported():
    net = Network.build(4, [(0, 1, 1.0), (2, 3, 1.0)], [{0}], 2, 2)
    assert "disconnected" in validate_network(net)


def test_missing_server_reported():
    net = Network.build(3, [(0, 1, 1.0), (1, 2, 1.0)], [{2}, set()], 2, 2)
    assert "no designated server" in validate_network(net)


def test_negative_weight_reported():
    net = Network.build(2, [(0, 1, -1.0)], [{0}], 1, 1)
    assert "weight" in validate_network(net)


def test_budget_below_designated_reported():
    net = Network.build(2, [(0, 1, 1.0)], [{0}, {1}], 1, 1)
    assert "budget" in validate_network(net)


def test_servers_only_feasible_D1():
    net, _ = make_triangle(budget=3)
    assert is_feasible_D1(net, net.servers_only())


def test_cap_violation_rejected():
    net = Network.build(3, [(A, B, 1.0), (B, C, 2.0)], [{C}, {A}], 1, 3)
    X = net.servers_only()
    X[A, 0] = 1  # node a now holds two items with cap 1
    assert not is_feasible_D1(net, X)


def test_budget_violation_rejected():
    net, _ = make_triangle(caps=1, budget=2)
    X = np.ones((3, 1))
    assert X.sum() == net.budget + 1
    assert not is_feasible_D1(net, X)
    assert not is_feasible_D2(net, X)


def test_D2_examples(triangle, half_half):
    net, _ = triangle
    assert is_feasible_D2(net, half_half)
    bad = half_half.copy()
    bad[A, 0] = 1.2
    assert not is_feasible_D2(net, bad)
    missing = half_half.copy()
    missing[C, 0] = 0.5
    assert not is_feasible_D2(net, missing)


def test_fractional_not_in_D1(triangle, half_half):
    assert not is_feasible_D1(triangle[0], half_half)


def test_shape_mismatch_raises(triangle):
    with pytest.raises(ValueError):
        is_feasible_D2(triangle[0], np.zeros((2, 1)))
    with pytest.raises(ValueError):
        is_feasible_D1(triangle[0], np.zeros((3, 2)))


def test_shortest_path_examples(triangle):
    assert shortest_path(path_net(), 0, 2) == (0, 1, 2)
    assert shortest_path(triangle[0], A, C) == (A, B, C)
    # square 0-1-3 and 0-2-3, equal cost: lexicographically smallest wins
    sq = Network.build(4, [(0, 1, 1.0), (0, 2, 1.0), (1, 3, 1.0), (2, 3, 1.0)], [{3}], 1, 1)
    assert shortest_path(sq, 0, 3) == (0, 1, 3)
    assert shortest_path(sq, 3, 3) == (3,)


def test_validate_demand_catches_bad_paths(triangle):
    net, dem = triangle
    assert validate_demand(net, dem) is None
    loop = Demand((Request(0, (A, B, A, C)),), np.ones(1))
    assert validate_demand(net, loop) is not None
    wrong_end = Demand((Request(0, (A, B)),), np.ones(1))
    assert validate_demand(net, wrong_end) is not None
    zero_rate = Demand((Request(0, (A, B, C)),), np.zeros(1))
    assert validate_demand(net, zero_rate) is not None


def test_file_round_trip(tmp_path):
    net, dem = random_instance(np.random.default_rng(3), n_nodes=6, n_items=3, n_requests=5)
    write_graph(net, tmp_path / "g.txt")
    write_servers(net, tmp_path / "s.txt")
    write_demand(dem, tmp_path / "d.txt")
    n, edges = read_graph(tmp_path / "g.txt")
    net2 = Network.build(n, edges, read_servers(tmp_path / "s.txt"), net.caps, net.budget)
    assert net2.edges == net.edges and net2.weights == net.weights and net2.servers == net.servers
    dem2 = read_demand(net2, tmp_path / "d.txt")
    assert [r.path for r in dem2.requests] == [r.path for r in dem.requests]
    assert np.array_equal(dem2.rates, dem.rates)


@given(st.integers(0, 10_000))
def test_D1_subset_of_D2(seed):
    net, _ = random_instance(np.random.default_rng(seed), n_nodes=3, n_items=2)
    for X in feasible_placements(net):
        assert is_feasible_D1(net, X)
        assert is_feasible_D2(net, X)


@given(st.integers(0, 10_000))
def test_shortest_paths_well_routed(seed):
    net, dem = random_instance(np.random.default_rng(seed))
    assert validate_network(net) is None
    assert validate_demand(net, dem) is None
    for r in dem.requests:
        assert len(set(r.path)) == len(r.path)
        assert r.path[-1] in net.servers[r.item]
