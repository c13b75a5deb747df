"""Direct proportional inventory control.

Each controller actuates one branch incident to its node and assigns the flow
that balances the measured flows at the node minus a proportional correction,
so an unsaturated controlled node relaxes as ``dZ/dt = -K_C (Z - Z_c)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import quad

from .constitutive import CapacitiveLaw, invert_capacitive
from .dynamics import BoundaryConditions, assemble_rhs
from .topology import ProcessNetwork


class ControlError(ValueError):
    """Invalid controller assignment."""


@dataclass(frozen=True)
class ControllerSpec:
    node: str
    branch: str
    gain: float
    setpoint: float
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.gain > 0:
            raise ControlError(f"controller on {self.node!r}: gain must be positive")
        if self.bounds is not None:
            lo, hi = (float(v) for v in self.bounds)
            if lo > hi:
                raise ControlError(f"controller on {self.node!r}: lower bound above upper")
            object.__setattr__(self, "bounds", (lo, hi))

    def clamp(self, flow: float) -> float:
        if self.bounds is None:
            return flow
        return min(max(flow, self.bounds[0]), self.bounds[1])


def validate_controllers(net: ProcessNetwork, ctrls: Sequence[ControllerSpec]) -> None:
    """Check directness, uniqueness and the diagonal structure of ``A_K``."""
    nodes = [c.node for c in ctrls]
    if len(set(nodes)) != len(nodes):
        raise ControlError("a node has more than one controller")
    branches = [c.branch for c in ctrls]
    if len(set(branches)) != len(branches):
        raise ControlError("a branch is actuated by more than one controller")
    for c in ctrls:
        if c.node not in net.dynamic_ids:
            raise ControlError(f"controller node {c.node!r} is not a dynamic node")
        if c.branch not in net.branch_ids:
            raise ControlError(f"unknown actuated branch {c.branch!r}")
        b = net.branch(c.branch)
        if b.kind != "controlled":
            raise ControlError(f"actuated branch {c.branch!r} is not of kind 'controlled'")
        if c.node not in (b.tail, b.head):
            raise ControlError(f"branch {c.branch!r} is not incident to {c.node!r} (not direct)")
    A_K = actuation_matrix(net, ctrls)
    if np.any(A_K - np.diag(np.diag(A_K))):
        raise ControlError("actuated branches join controlled nodes; A_K is not diagonal")


def actuation_matrix(net: ProcessNetwork, ctrls: Sequence[ControllerSpec]) -> np.ndarray:
    """``A_K``: controlled-node rows by actuated-branch columns, in controller order."""
    rows = [net.node_index(c.node) for c in ctrls]
    cols = [net.branch_index(c.branch) for c in ctrls]
    return net.A_full[np.ix_(rows, cols)]


def control_flow(ctrl: ControllerSpec, measured_inflows: Sequence[float], Z: float,
                 actuated_leaves: bool = True) -> float:
    """Actuated flow for one controller, in the actuated branch's arrow direction.

    ``measured_inflows`` are the other flows at the node, signed positive when
    entering it. ``actuated_leaves`` tells whether the actuated branch points
    out of the node (demand) or into it (supply).
    """
    demand = math.fsum(measured_inflows) + ctrl.gain * (Z - ctrl.setpoint)
    flow = demand if actuated_leaves else -demand
    return ctrl.clamp(flow)


def control_matrix_law(net: ProcessNetwork, ctrls: Sequence[ControllerSpec],
                       F: np.ndarray, Z: Sequence[float]) -> np.ndarray:
    """Actuated flows for all controllers at once.

    ``F`` holds the current flows of every branch; entries of actuated branches
    are ignored. Returns ``-A_K^-1 A_M F_M + A_K^-1 K_C (Z - Z_c)`` per
    controller, clamped to its bounds.
    """
    validate_controllers(net, ctrls)
    A_K = actuation_matrix(net, ctrls)
    rows = [net.node_index(c.node) for c in ctrls]
    act = [net.branch_index(c.branch) for c in ctrls]
    measured = np.setdiff1d(np.arange(net.n_branches), act)
    A_M = net.A_full[np.ix_(rows, measured)]
    F_M = np.asarray(F, dtype=float)[measured]
    if np.any(np.isnan(F_M[np.any(A_M != 0, axis=0)])):
        raise ControlError("a measured flow at a controlled node is undefined")
    F_M = np.nan_to_num(F_M)
    Z = np.asarray(Z, dtype=float)
    err = np.array([Z[net.dynamic_ids.index(c.node)] - c.setpoint for c in ctrls])
    gains = np.array([c.gain for c in ctrls])
    d = np.diag(A_K).astype(float)
    # correctly rounded row sums keep this bit-identical to control_flow
    inflow = np.array([math.fsum(-A_M[r] * F_M) for r in range(len(ctrls))])
    raw = (inflow + gains * err) / d
    return np.array([c.clamp(v) for c, v in zip(ctrls, raw)])


def controlled_rhs(net: ProcessNetwork, bc: BoundaryConditions,
                   ctrls: Sequence[ControllerSpec]):
    """``dZ/dt`` with actuated branches carrying controller flows."""
    validate_controllers(net, ctrls)
    return assemble_rhs(net, bc, tuple(ctrls))


def control_potential(ctrls: Sequence[ControllerSpec], caps: Sequence[CapacitiveLaw],
                      Z: Sequence[float]) -> float:
    """Reshaped potential ``sum_i K_C,i * integral_{Z_c,i}^{Z_i} (w_i(z) - w_i(Z_c,i)) dz``.

    For linear capacities this is ``1/2 sum (K_C,i / C_i) (Z_i - Z_c,i)^2``.
    ``caps`` and ``Z`` are aligned with ``ctrls``.
    """
    total = 0.0
    for c, cap, z in zip(ctrls, caps, Z):
        if cap.is_linear:
            total += 0.5 * c.gain / cap.C * (z - c.setpoint) ** 2
        else:
            wc = invert_capacitive(cap, c.setpoint)
            val, _ = quad(lambda s: invert_capacitive(cap, s) - wc, c.setpoint, z,
                          epsabs=1e-12, epsrel=1e-12)
            total += c.gain * val
    return float(total)


def controlled_nodes_potential(net: ProcessNetwork, ctrls: Sequence[ControllerSpec],
                               Z: Sequence[float]) -> float:
    """:func:`control_potential` taking the full dynamic inventory vector."""
    idx = [net.dynamic_ids.index(c.node) for c in ctrls]
    caps = [net.capacities[i] for i in idx]
    return control_potential(ctrls, caps, np.asarray(Z, dtype=float)[idx])
