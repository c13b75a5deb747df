from pathlib import Path

import numpy as np
import pytest

from flownet.constitutive import CapacitiveLaw, ResistiveLaw
from flownet.dynamics import BoundaryConditions, numerical_jacobian, assemble_rhs, step_rk4
from flownet.io import load_document
from flownet.topology import Branch, Node, build_network

ROOT = Path(__file__).resolve().parents[1]
NETWORKS = ROOT / "networks"

# two-tank oracle values, derived by hand from the node balances
W_STAR = np.array([4 / 3, 12 / 7])
Z_STAR = np.array([8 / 3, 24 / 7])
G_STAR = 400 / 21


@pytest.fixture
def two_tank_doc():
    return load_document(NETWORKS / "two_tank.json")


@pytest.fixture
def two_tank(two_tank_doc):
    return two_tank_doc.network(), two_tank_doc.boundary()


@pytest.fixture
def controlled_doc():
    return load_document(NETWORKS / "two_tank_controlled.json")


def random_linear_network(rng, max_dynamic=6, closed=False):
    """Connected linear network; every dynamic node also links to a fixed node.

    Closed networks have no terminals and an isolated datum.
    """
    n = int(rng.integers(1 if not closed else 2, max_dynamic + 1))
    dyn = [f"P{i}" for i in range(n)]
    nodes = [Node(d, "dynamic", CapacitiveLaw.linear(float(rng.uniform(0.5, 2.0)))) for d in dyn]
    branches = []
    k = 0

    def link(a, b):
        nonlocal k
        if rng.random() < 0.5:
            a, b = b, a
        branches.append(Branch(f"F{k}", a, b, "resistive",
                               ResistiveLaw.linear(float(rng.uniform(0.5, 2.0)))))
        k += 1

    for i in range(1, n):
        link(dyn[i], dyn[int(rng.integers(0, i))])
    for _ in range(int(rng.integers(0, n))):
        a, b = rng.choice(n, size=2, replace=False) if n > 1 else (0, 0)
        if a != b:
            link(dyn[a], dyn[b])
    pots = {"G": 0.0}
    if not closed:
        terms = [f"T{j}" for j in range(int(rng.integers(1, 3)))]
        nodes += [Node(t, "terminal") for t in terms]
        fixed = terms + ["G"]
        for d in dyn:
            link(d, fixed[int(rng.integers(0, len(fixed)))])
        pots.update({t: float(rng.uniform(-5, 5)) for t in terms})
    nodes.append(Node("G", "datum"))
    return build_network(nodes, branches), BoundaryConditions(pots)


def integrate_to_steady(net, bc, Z0=None, tol=1e-11, max_steps=200000, record=None):
    """RK4 at a step below the stability limit until the rate vanishes."""
    rhs = assemble_rhs(net, bc)
    Z = np.zeros(net.n_dynamic) if Z0 is None else np.asarray(Z0, dtype=float)
    rho = max(np.abs(np.linalg.eigvals(numerical_jacobian(rhs, Z))))
    dt = 1.0 / rho
    for _ in range(max_steps):
        if record is not None:
            record.append(Z)
        r = rhs(Z)
        if np.max(np.abs(r)) < tol:
            return Z
        Z = step_rk4(Z, rhs, dt)
    raise AssertionError("no steady state reached")


def pytest_terminal_summary(terminalreporter):
    """Print the one-line verdicts recorded by the acceptance suite."""
    lines = [value for reports in terminalreporter.stats.values() for rep in reports
             if getattr(rep, "when", None) == "call"
             for key, value in getattr(rep, "user_properties", []) if key == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
