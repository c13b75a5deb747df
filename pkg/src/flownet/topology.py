"""Process network graphs and their incidence matrices.

Orientation: a branch points from ``tail`` to ``head``. Flow is positive in the
arrow direction and the potential difference across the branch is
``w[tail] - w[head]``. Column ``j`` of the incidence matrix has ``+1`` in the
tail row (flow leaves) and ``-1`` in the head row (flow enters).

Nodes are stored in canonical order: dynamic nodes, then terminals, then the
datum node, each group in declaration order. The reduced incidence matrix is
the full one without its last (datum) row.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .constitutive import CapacitiveLaw, ResistiveLaw

NODE_KINDS = ("dynamic", "terminal", "datum")
BRANCH_KINDS = ("resistive", "controlled", "terminal-source", "production")


class NetworkError(ValueError):
    """Raised for structurally invalid networks."""


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    capacitance: CapacitiveLaw | None = None


@dataclass(frozen=True)
class Branch:
    id: str
    tail: str
    head: str
    kind: str = "resistive"
    law: ResistiveLaw | None = None


@dataclass(frozen=True, eq=False)
class ProcessNetwork:
    """Validated, immutable network. Build with :func:`build_network`."""

    nodes: tuple[Node, ...]
    branches: tuple[Branch, ...]
    A_full: np.ndarray = field(repr=False)
    partitions: Mapping[str, np.ndarray] = field(repr=False)

    @property
    def A_reduced(self) -> np.ndarray:
        return self.A_full[:-1]

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    @property
    def branch_ids(self) -> list[str]:
        return [b.id for b in self.branches]

    @property
    def dynamic_ids(self) -> list[str]:
        return [n.id for n in self.nodes if n.kind == "dynamic"]

    @property
    def terminal_ids(self) -> list[str]:
        return [n.id for n in self.nodes if n.kind == "terminal"]

    @property
    def boundary_ids(self) -> list[str]:
        """Terminals followed by the datum: every node with an imposed value."""
        return [n.id for n in self.nodes if n.kind != "dynamic"]

    @property
    def datum_id(self) -> str:
        return self.nodes[-1].id

    @property
    def n_dynamic(self) -> int:
        return sum(1 for n in self.nodes if n.kind == "dynamic")

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    @property
    def A_dynamic(self) -> np.ndarray:
        """Incidence rows of the dynamic nodes."""
        return self.A_full[: self.n_dynamic]

    def node_index(self, node_id: str) -> int:
        return self.node_ids.index(node_id)

    def branch_index(self, branch_id: str) -> int:
        return self.branch_ids.index(branch_id)

    def node(self, node_id: str) -> Node:
        return self.nodes[self.node_index(node_id)]

    def branch(self, branch_id: str) -> Branch:
        return self.branches[self.branch_index(branch_id)]

    @property
    def capacities(self) -> list[CapacitiveLaw]:
        return [n.capacitance for n in self.nodes if n.kind == "dynamic"]

    @property
    def is_closed(self) -> bool:
        """No branch touches a terminal or the datum."""
        n_dyn = self.n_dynamic
        return not np.any(self.A_full[n_dyn:])

    def with_laws(self, laws: Mapping[str, ResistiveLaw]) -> "ProcessNetwork":
        """Copy with some branch laws replaced."""
        unknown = set(laws) - set(self.branch_ids)
        if unknown:
            raise NetworkError(f"unknown branches {sorted(unknown)}")
        branches = [replace(b, law=laws.get(b.id, b.law)) for b in self.branches]
        return build_network(self.nodes, branches)


def build_network(nodes: Iterable[Node], branches: Iterable[Branch]) -> ProcessNetwork:
    """Validate nodes and branches and materialize the incidence matrices."""
    nodes = list(nodes)
    branches = list(branches)

    seen: set[str] = set()
    for n in nodes:
        if n.id in seen:
            raise NetworkError(f"duplicate node id {n.id!r}")
        seen.add(n.id)
        if n.kind not in NODE_KINDS:
            raise NetworkError(f"node {n.id!r}: unknown kind {n.kind!r}")
        if n.kind == "dynamic" and n.capacitance is None:
            raise NetworkError(f"dynamic node {n.id!r} has no capacitive law")
        if n.kind != "dynamic" and n.capacitance is not None:
            raise NetworkError(f"{n.kind} node {n.id!r} cannot carry a capacitive law")
    datums = [n for n in nodes if n.kind == "datum"]
    if len(datums) != 1:
        raise NetworkError(f"expected exactly one datum node, found {len(datums)}")

    ordered = ([n for n in nodes if n.kind == "dynamic"]
               + [n for n in nodes if n.kind == "terminal"] + datums)
    row = {n.id: i for i, n in enumerate(ordered)}
    kind_of = {n.id: n.kind for n in ordered}

    bseen: set[str] = set()
    sourced: set[str] = set()
    for b in branches:
        if b.id in bseen or b.id in seen:
            raise NetworkError(f"duplicate id {b.id!r}")
        bseen.add(b.id)
        for end in (b.tail, b.head):
            if end not in row:
                raise NetworkError(f"branch {b.id!r} references unknown node {end!r}")
        if b.tail == b.head:
            raise NetworkError(f"branch {b.id!r} is a self-loop on {b.tail!r}")
        if b.kind not in BRANCH_KINDS:
            raise NetworkError(f"branch {b.id!r}: unknown kind {b.kind!r}")
        ends = {kind_of[b.tail], kind_of[b.head]}
        if b.kind in ("resistive", "production") and b.law is None:
            raise NetworkError(f"{b.kind} branch {b.id!r} needs a resistive law")
        if b.kind == "production" and ends != {"dynamic", "datum"}:
            raise NetworkError(f"production branch {b.id!r} must join a dynamic node to the datum")
        if b.kind == "controlled" and "dynamic" not in ends:
            raise NetworkError(f"controlled branch {b.id!r} must touch a dynamic node")
        if b.kind == "terminal-source":
            if b.law is not None:
                raise NetworkError(f"terminal-source branch {b.id!r} cannot carry a law")
            if ends != {"terminal", "datum"}:
                raise NetworkError(
                    f"terminal-source branch {b.id!r} must join a terminal to the datum")
            term = b.tail if kind_of[b.tail] == "terminal" else b.head
            if term in sourced:
                raise NetworkError(f"terminal {term!r} has more than one terminal-source branch")
            sourced.add(term)

    A = np.zeros((len(ordered), len(branches)), dtype=int)
    for j, b in enumerate(branches):
        A[row[b.tail], j] = 1
        A[row[b.head], j] = -1
    A.setflags(write=False)

    kinds = np.array([b.kind for b in branches], dtype=object)
    parts = {
        "R": np.flatnonzero((kinds == "resistive") | (kinds == "production")),
        "K": np.flatnonzero(kinds == "controlled"),
        "T": np.flatnonzero(kinds == "terminal-source"),
    }
    return ProcessNetwork(tuple(ordered), tuple(branches), A, parts)


def reduced_incidence(net: ProcessNetwork) -> np.ndarray:
    """Incidence matrix without the datum row."""
    return net.A_reduced


def partition_branches(net: ProcessNetwork) -> dict[str, np.ndarray]:
    """Column slices ``A_R``, ``A_K``, ``A_T`` of the reduced incidence matrix."""
    A = net.A_reduced
    return {f"A_{k}": A[:, idx] for k, idx in net.partitions.items()}


def potential_differences(net: ProcessNetwork, w: Sequence[float]) -> np.ndarray:
    """``W = A^T w`` for a full potential vector in canonical node order."""
    return net.A_full.T @ np.asarray(w, dtype=float)
