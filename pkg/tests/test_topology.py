import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flownet.constitutive import CapacitiveLaw, ResistiveLaw
from flownet.topology import (
    Branch,
    NetworkError,
    Node,
    build_network,
    partition_branches,
    potential_differences,
    reduced_incidence,
)

CAP = CapacitiveLaw.linear(1.0)
LAW = ResistiveLaw.linear(1.0)


def two_tank_nodes():
    return [Node("P1", "dynamic", CAP), Node("P2", "dynamic", CAP),
            Node("T1", "terminal"), Node("T2", "datum")]


def two_tank_branches(controlled=False):
    k = "controlled" if controlled else "resistive"
    law = None if controlled else LAW
    return [Branch("F1", "T1", "P1", "resistive", LAW), Branch("F2", "P1", "T2", k, law),
            Branch("F3", "T1", "P2", "resistive", LAW), Branch("F4", "P2", "T2", k, law)]


def test_two_tank_incidence():
    net = build_network(two_tank_nodes(), two_tank_branches())
    assert net.node_ids == ["P1", "P2", "T1", "T2"]
    assert net.A_full.shape == (4, 4)
    col = net.A_full[:, 0]
    assert col[net.node_index("T1")] == 1 and col[net.node_index("P1")] == -1
    expected = np.array([[-1, 1, 0, 0], [0, 0, -1, 1], [1, 0, 1, 0], [0, -1, 0, -1]])
    np.testing.assert_array_equal(net.A_full, expected)
    R = reduced_incidence(net)
    assert R.shape == (3, 4)
    np.testing.assert_array_equal(R, expected[:3])


def test_single_datum_no_branches():
    net = build_network([Node("G", "datum")], [])
    assert net.A_full.shape == (1, 0)


def test_one_node_reduced():
    net = build_network([Node("P", "dynamic", CAP), Node("G", "datum")],
                        [Branch("F", "P", "G", "resistive", LAW)])
    np.testing.assert_array_equal(reduced_incidence(net), [[1]])
    flipped = build_network([Node("P", "dynamic", CAP), Node("G", "datum")],
                            [Branch("F", "G", "P", "resistive", LAW)])
    np.testing.assert_array_equal(reduced_incidence(flipped), [[-1]])


def test_closed_loop_column_sums():
    net = build_network([Node("P", "dynamic", CAP), Node("G", "datum")],
                        [Branch("a", "P", "G", "resistive", LAW),
                         Branch("b", "G", "P", "resistive", LAW)])
    R = reduced_incidence(net)
    assert R.shape == (1, 2)
    np.testing.assert_array_equal(net.A_full.sum(axis=0), [0, 0])


@pytest.mark.parametrize("nodes, branches, message", [
    ([Node("P", "dynamic", CAP), Node("G", "datum")],
     [Branch("F", "P", "P", "resistive", LAW)], "self-loop"),
    ([Node("P", "dynamic", CAP), Node("P", "datum")], [], "duplicate"),
    ([Node("P", "dynamic", CAP), Node("G", "datum")],
     [Branch("F", "P", "X", "resistive", LAW)], "unknown node"),
    ([Node("P", "dynamic", CAP)], [], "exactly one datum"),
    ([Node("G", "datum"), Node("H", "datum")], [], "exactly one datum"),
    ([Node("P", "dynamic"), Node("G", "datum")], [], "capacitive"),
    ([Node("P", "dynamic", CAP), Node("G", "datum")],
     [Branch("F", "P", "G", "resistive")], "needs a resistive law"),
    ([Node("P", "dynamic", CAP), Node("T", "terminal"), Node("G", "datum")],
     [Branch("F", "P", "T", "production", LAW)], "production"),
])
def test_build_errors(nodes, branches, message):
    with pytest.raises(NetworkError, match=message):
        build_network(nodes, branches)


def test_partitions():
    net = build_network(two_tank_nodes(), two_tank_branches(controlled=True))
    parts = partition_branches(net)
    assert [net.branch_ids[j] for j in net.partitions["K"]] == ["F2", "F4"]
    assert [net.branch_ids[j] for j in net.partitions["R"]] == ["F1", "F3"]
    plain = build_network(two_tank_nodes(), two_tank_branches())
    assert partition_branches(plain)["A_K"].shape == (3, 0)
    assert parts["A_R"].shape == (3, 2)
    terminal_only = build_network([Node("T", "terminal"), Node("G", "datum")],
                                  [Branch("S", "T", "G", "terminal-source")])
    p = partition_branches(terminal_only)
    assert p["A_R"].shape[1] == 0 and p["A_K"].shape[1] == 0 and p["A_T"].shape[1] == 1


def test_incidence_is_read_only():
    net = build_network(two_tank_nodes(), two_tank_branches())
    with pytest.raises(ValueError):
        net.A_full[0, 0] = 5


@st.composite
def random_graph(draw):
    n = draw(st.integers(2, 8))
    edges = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
                          .filter(lambda e: e[0] != e[1]), min_size=1, max_size=16))
    w = draw(st.lists(st.floats(-100, 100), min_size=n, max_size=n))
    return n, edges, w


@settings(max_examples=100, deadline=None)
@given(random_graph())
def test_random_graph_invariants(graph):
    n, edges, w = graph
    ids = [f"N{i}" for i in range(n)]
    nodes = [Node(i, "dynamic", CAP) for i in ids[:-1]] + [Node(ids[-1], "datum")]
    branches = [Branch(f"B{k}", ids[a], ids[b], "resistive", LAW) for k, (a, b) in enumerate(edges)]
    net = build_network(nodes, branches)
    A = net.A_full
    assert np.all((A == 1).sum(axis=0) == 1) and np.all((A == -1).sum(axis=0) == 1)
    assert np.all(np.abs(A).sum(axis=0) == 2)
    np.testing.assert_array_equal(net.A_reduced, A[:-1])
    parts = net.partitions
    cover = np.sort(np.concatenate(list(parts.values())))
    np.testing.assert_array_equal(cover, np.arange(len(branches)))
    # W = tail minus head, in canonical order (here declaration order already)
    W = potential_differences(net, w)
    direct = [w[a] - w[b] for a, b in edges]
    np.testing.assert_allclose(W, direct, rtol=0, atol=1e-12)
    # any flow assignment: total node balance over all nodes vanishes
    F = np.arange(1.0, len(branches) + 1)
    assert (A @ F).sum() == 0.0
