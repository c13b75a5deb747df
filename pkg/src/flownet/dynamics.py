"""Network ODE right-hand side, fixed-step integrators and trajectories.

The state is the inventory vector ``Z`` of the dynamic nodes. Node potentials
follow from the capacitive laws, branch flows from the resistive laws, and the
node balances give ``dZ/dt = -A_dyn F``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

from .constitutive import (
    LawError,
    eval_capacitive,
    eval_resistive,
    invert_capacitive,
)
from .topology import ProcessNetwork

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12
METHODS = ("euler", "rk4", "adaptive")


class DivergenceError(RuntimeError):
    """Integration blew up or the step violates the linear stability bound."""


class BoundaryError(ValueError):
    """Incomplete boundary conditions or an unsolvable terminal relation."""


@dataclass(frozen=True)
class BoundaryConditions:
    """Constant terminal values.

    Every terminal gets exactly one of a potential or an injected flow (net
    flow from the terminal into the network). The datum potential defaults to 0.
    """

    potentials: Mapping[str, float] = field(default_factory=dict)
    flows: Mapping[str, float] = field(default_factory=dict)

    def validate(self, net: ProcessNetwork) -> None:
        both = set(self.potentials) & set(self.flows)
        if both:
            raise BoundaryError(f"terminals with two boundary values: {sorted(both)}")
        known = set(net.boundary_ids)
        extra = (set(self.potentials) | set(self.flows)) - known
        if extra:
            raise BoundaryError(f"boundary values for non-terminal nodes: {sorted(extra)}")
        missing = [t for t in net.terminal_ids
                   if t not in self.potentials and t not in self.flows]
        if missing:
            raise BoundaryError(f"terminals without boundary values: {missing}")
        if net.datum_id in self.flows:
            raise BoundaryError("the datum node takes a potential, not a flow")

    def potential_of(self, node_id: str) -> float | None:
        return self.potentials.get(node_id)

    def is_flow_terminal(self, node_id: str) -> bool:
        return node_id in self.flows


def boundary_potential_vector(net: ProcessNetwork, bc: BoundaryConditions) -> np.ndarray:
    """Potentials of terminals and datum in canonical order (NaN for flow terminals)."""
    out = []
    for nid in net.boundary_ids:
        if nid in bc.flows:
            out.append(np.nan)
        else:
            out.append(float(bc.potentials.get(nid, 0.0)))
    return np.array(out)


def potentials_from_inventory(net: ProcessNetwork, Z: Sequence[float]) -> np.ndarray:
    return np.array([invert_capacitive(c, z) for c, z in zip(net.capacities, Z)])


def inventory_from_potentials(net: ProcessNetwork, w: Sequence[float]) -> np.ndarray:
    return np.array([eval_capacitive(c, x) for c, x in zip(net.capacities, w)])


def _law_flows(net: ProcessNetwork, w_full: np.ndarray) -> np.ndarray:
    # NaN marks branches without a law (controlled without law, terminal-source)
    W = net.A_full.T @ w_full
    F = np.full(net.n_branches, np.nan)
    for j, b in enumerate(net.branches):
        if b.law is not None:
            F[j] = eval_resistive(b.law, W[j])
    return F


def _solve_flow_terminal(net: ProcessNetwork, t_row: int, injected: float,
                         w_full: np.ndarray) -> float:
    # potential x at which the terminal's law branches carry `injected` net outflow
    A = net.A_full
    name = net.nodes[t_row].id
    links = []
    for j in np.flatnonzero(A[t_row]):
        law = net.branches[j].law
        if law is None:
            continue
        other = int(next(i for i in np.flatnonzero(A[:, j]) if i != t_row))
        if np.isnan(w_full[other]):
            raise BoundaryError(f"flow terminal {name!r} joins another flow terminal")
        links.append((int(A[t_row, j]), law, w_full[other]))
    if not links:
        raise BoundaryError(f"flow terminal {name!r} has no resistive branch")

    def residual(x: float) -> float:
        # branch leaving the terminal: W = x - w_other; entering: W = w_other - x
        return sum(s * eval_resistive(law, s * (x - wo)) for s, law, wo in links) - injected

    if all(law.is_linear for _, law, _ in links):
        return -residual(0.0) / sum(law.K for _, law, _ in links)

    centre = float(np.mean([wo for _, _, wo in links]))
    span = 1.0
    for _ in range(60):
        lo, hi = centre - span, centre + span
        try:
            r_lo, r_hi = residual(lo), residual(hi)
        except LawError as exc:
            raise BoundaryError(f"flow terminal {name!r}: {exc}") from exc
        if r_lo <= 0.0 <= r_hi and r_lo < r_hi:
            return brentq(residual, lo, hi, xtol=1e-14, rtol=1e-14)
        span *= 2.0
    raise BoundaryError(f"flow terminal {name!r}: singular relation, no potential carries {injected}")


def node_potentials(net: ProcessNetwork, bc: BoundaryConditions,
                    w_dyn: Sequence[float]) -> np.ndarray:
    """Full potential vector: dynamic values, boundary values, solved flow terminals."""
    n_dyn = net.n_dynamic
    w = np.empty(len(net.nodes))
    w[:n_dyn] = w_dyn
    w[n_dyn:] = boundary_potential_vector(net, bc)
    for i in range(n_dyn, len(net.nodes)):
        nid = net.nodes[i].id
        if nid in bc.flows:
            w[i] = _solve_flow_terminal(net, i, float(bc.flows[nid]), w)
    return w


def fill_terminal_sources(net: ProcessNetwork, F: np.ndarray) -> np.ndarray:
    # a terminal-source branch closes the balance of its terminal
    A = net.A_full
    for j in net.partitions["T"]:
        b = net.branches[j]
        t = net.node_index(b.tail if net.node(b.tail).kind == "terminal" else b.head)
        others = [k for k in np.flatnonzero(A[t]) if k != j]
        F[j] = -sum(A[t, k] * F[k] for k in others) / A[t, j]
    return F


def flows_at(net: ProcessNetwork, bc: BoundaryConditions, Z: Sequence[float],
             controllers: Sequence = ()) -> tuple[np.ndarray, np.ndarray]:
    """Node potentials and branch flows at inventory ``Z``.

    Returns ``(w_full, F)`` in canonical node order and branch order.
    """
    Z = np.asarray(Z, dtype=float)
    w_full = node_potentials(net, bc, potentials_from_inventory(net, Z))
    F = _law_flows(net, w_full)
    if controllers:
        from .control import control_matrix_law

        idx = [net.branch_index(c.branch) for c in controllers]
        F[idx] = control_matrix_law(net, controllers, F, Z)
    missing = [net.branches[j].id for j in np.flatnonzero(np.isnan(F))
               if net.branches[j].kind != "terminal-source"]
    if missing:
        raise ValueError(f"branches without a law or controller: {missing}")
    return w_full, fill_terminal_sources(net, F)


def assemble_rhs(net: ProcessNetwork, bc: BoundaryConditions,
                 controllers: Sequence = ()) -> Callable[[np.ndarray], np.ndarray]:
    """State derivative function ``Z -> dZ/dt``."""
    bc.validate(net)
    A_dyn = net.A_dynamic

    def rhs(Z):
        _, F = flows_at(net, bc, Z, controllers)
        return -(A_dyn @ F)

    return rhs


def step_euler(Z, rhs, dt: float) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    return Z + dt * rhs(Z)


def step_rk4(Z, rhs, dt: float) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    k1 = rhs(Z)
    k2 = rhs(Z + 0.5 * dt * k1)
    k3 = rhs(Z + 0.5 * dt * k2)
    k4 = rhs(Z + dt * k3)
    return Z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_adaptive(Z, rhs, dt: float, rtol: float = 1e-6, atol: float = 1e-9,
                  max_halvings: int = 30) -> np.ndarray:
    """Advance by ``dt`` with step-doubling RK4: sub-steps are halved until a
    full step and two half steps agree."""
    Z = np.asarray(Z, dtype=float)
    t, h = 0.0, dt
    while t < dt * (1.0 - 1e-12):
        h = min(h, dt - t)
        for _ in range(max_halvings):
            full = step_rk4(Z, rhs, h)
            half = step_rk4(step_rk4(Z, rhs, 0.5 * h), rhs, 0.5 * h)
            if np.all(np.abs(full - half) <= atol + rtol * np.abs(half)):
                break
            h *= 0.5
        else:
            raise DivergenceError("adaptive step size underflow")
        Z, t = half, t + h
        h *= 2.0
    return Z


_STEPPERS = {"euler": step_euler, "rk4": step_rk4, "adaptive": step_adaptive}


def _amplification(J: np.ndarray, dt: float, method: str) -> np.ndarray:
    n = J.shape[0]
    hJ = dt * J
    if method == "euler":
        return np.eye(n) + hJ
    # classical RK4 stability polynomial
    hJ2 = hJ @ hJ
    hJ3 = hJ2 @ hJ
    return np.eye(n) + hJ + hJ2 / 2.0 + hJ3 / 6.0 + hJ3 @ hJ / 24.0


def numerical_jacobian(rhs, Z: np.ndarray, rel: float = 1e-6) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    n = Z.size
    J = np.empty((n, n))
    for k in range(n):
        h = rel * max(1.0, abs(Z[k]))
        e = np.zeros(n)
        e[k] = h
        J[:, k] = (rhs(Z + e) - rhs(Z - e)) / (2.0 * h)
    return J


def check_step_stability(rhs, Z: np.ndarray, dt: float, method: str) -> float:
    """Spectral radius of the linearized one-step map at ``Z``.

    Raises DivergenceError above 1: the step exceeds the stability bound.
    """
    if method not in ("euler", "rk4") or np.size(Z) == 0:
        return 0.0
    try:
        J = numerical_jacobian(rhs, Z)
    except LawError:
        return 0.0
    rho = float(np.max(np.abs(np.linalg.eigvals(_amplification(J, dt, method)))))
    if rho > 1.0 + 1e-9:
        raise DivergenceError(
            f"dt={dt} exceeds the {method} stability bound (amplification {rho:.6g})")
    return rho


@dataclass
class Trajectory:
    """Sampled solution. Rows are time instants; columns follow network order."""

    times: np.ndarray
    w: np.ndarray
    Z: np.ndarray
    F: np.ndarray
    terminal_outputs: np.ndarray
    node_ids: list[str]
    branch_ids: list[str]
    boundary_ids: list[str]

    @property
    def final_w(self) -> np.ndarray:
        return self.w[-1]

    @property
    def final_Z(self) -> np.ndarray:
        return self.Z[-1]


def terminal_outputs(net: ProcessNetwork, bc: BoundaryConditions, Z: Sequence[float],
                     controllers: Sequence = ()) -> dict[str, float]:
    """Outputs at terminals and datum.

    Potential-specified nodes report the net flow they inject into the network
    (negative when the network drains into them). Flow-specified terminals
    report the potential implied by the injected flow.
    """
    w_full, F = flows_at(net, bc, Z, controllers)
    return _outputs(net, bc, w_full, F)


def _outputs(net, bc, w_full, F) -> dict[str, float]:
    A = net.A_full
    out = {}
    for nid in net.boundary_ids:
        i = net.node_index(nid)
        if nid in bc.flows:
            out[nid] = float(w_full[i])
        else:
            cols = [j for j in np.flatnonzero(A[i]) if j not in net.partitions["T"]]
            out[nid] = float(sum(A[i, j] * F[j] for j in cols))
    return out


def simulate(net: ProcessNetwork, bc: BoundaryConditions, Z0: Sequence[float],
             dt: float, t_end: float, method: str = "euler",
             controllers: Sequence = (), check_stability: bool = True,
             rtol: float = 1e-6, atol: float = 1e-9) -> Trajectory:
    """Integrate from ``Z0`` and record every step up to ``t_end``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    Z = np.asarray(Z0, dtype=float)
    if Z.shape != (net.n_dynamic,):
        raise ValueError(f"Z0 must have {net.n_dynamic} entries")
    rhs = assemble_rhs(net, bc, controllers)
    if check_stability and t_end > 0:
        check_step_stability(rhs, Z, dt, method)
    stepper = _STEPPERS[method]
    n_steps = int(round(t_end / dt))

    states = [Z]
    for k in range(n_steps):
        if method == "adaptive":
            Z = step_adaptive(Z, rhs, dt, rtol=rtol, atol=atol)
        else:
            Z = stepper(Z, rhs, dt)
        if not np.all(np.isfinite(Z)) or np.any(np.abs(Z) > DIVERGENCE_LIMIT):
            raise DivergenceError(f"state diverged at step {k + 1} (t={(k + 1) * dt:g})")
        states.append(Z)

    Zs = np.array(states)
    ws, Fs, outs = [], [], []
    for Zk in Zs:
        w_full, F = flows_at(net, bc, Zk, controllers)
        ws.append(w_full[: net.n_dynamic])
        Fs.append(F)
        o = _outputs(net, bc, w_full, F)
        outs.append([o[nid] for nid in net.boundary_ids])
    log.debug("simulated %d steps with %s", n_steps, method)
    return Trajectory(
        times=np.arange(n_steps + 1) * dt,
        w=np.array(ws).reshape(len(Zs), net.n_dynamic),
        Z=Zs.reshape(len(Zs), net.n_dynamic),
        F=np.array(Fs).reshape(len(Zs), net.n_branches),
        terminal_outputs=np.array(outs).reshape(len(Zs), len(net.boundary_ids)),
        node_ids=net.dynamic_ids,
        branch_ids=net.branch_ids,
        boundary_ids=net.boundary_ids,
    )
