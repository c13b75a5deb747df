"""Content, co-content and potential functions; steady state by minimization.

The co-content ``G*(w) = sum_b integral_0^{W_b} F_b dW`` over the law-bearing
branches is minimized over the free node potentials (dynamic nodes and
flow-specified terminals). Its gradient is the node flow imbalance, so the
minimizer satisfies the conservation laws at every free node.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from .constitutive import (
    cocontent_branch,
    content_branch,
    eval_resistive,
    slope_capacitive,
    slope_resistive,
)
from .dynamics import (
    BoundaryConditions,
    fill_terminal_sources,
    boundary_potential_vector,
    inventory_from_potentials,
    node_potentials,
    potentials_from_inventory,
)
from .topology import ProcessNetwork


class SingularNetworkError(ValueError):
    """A free node has no resistive path to a fixed potential."""


class ConvergenceError(RuntimeError):
    """Newton iteration did not reach the requested residual."""


@dataclass
class SteadyStateSolution:
    w_star: np.ndarray
    Z_star: np.ndarray
    F_star: np.ndarray
    G_star: float
    kkt_residual: float
    iterations: int


def _law_columns(net: ProcessNetwork) -> np.ndarray:
    return np.array([j for j, b in enumerate(net.branches) if b.law is not None], dtype=int)


def _free_rows(net: ProcessNetwork, bc: BoundaryConditions) -> np.ndarray:
    n_dyn = net.n_dynamic
    flow_t = [net.node_index(t) for t in net.terminal_ids if t in bc.flows]
    return np.array(list(range(n_dyn)) + flow_t, dtype=int)


def _injections(net: ProcessNetwork, bc: BoundaryConditions, free: np.ndarray) -> np.ndarray:
    inj = np.zeros(free.size)
    for k, i in enumerate(free):
        nid = net.nodes[i].id
        if nid in bc.flows:
            inj[k] = float(bc.flows[nid])
    return inj


def _full_from_free(net, bc, free, x) -> np.ndarray:
    w = np.empty(len(net.nodes))
    w[: net.n_dynamic] = 0.0
    w[net.n_dynamic:] = boundary_potential_vector(net, bc)
    w[free] = x
    return w


def _check_law_branches(net: ProcessNetwork) -> None:
    missing = [b.id for b in net.branches
               if b.law is None and b.kind != "terminal-source"]
    if missing:
        raise ValueError(f"steady state needs a law on every branch; missing {missing}")


def cocontent(net: ProcessNetwork, bc: BoundaryConditions, w: Sequence[float]) -> float:
    """Co-content at dynamic-node potentials ``w``.

    Flow-specified terminals take the potential implied by their injected
    flow and add ``-F_inj * w_T``.
    """
    w_full = node_potentials(net, bc, w)
    return _cocontent_full(net, bc, w_full)


def _cocontent_full(net, bc, w_full) -> float:
    W = net.A_full.T @ w_full
    total = sum(cocontent_branch(b.law, W[j])
                for j, b in enumerate(net.branches) if b.law is not None)
    for t, f in bc.flows.items():
        total -= float(f) * w_full[net.node_index(t)]
    return float(total)


def content(net: ProcessNetwork, F: Sequence[float]) -> float:
    """Content ``sum_b integral_0^{F_b} W dF`` over the law-bearing branches."""
    F = np.asarray(F, dtype=float)
    return float(sum(content_branch(b.law, F[j])
                     for j, b in enumerate(net.branches) if b.law is not None))


def branch_flows(net: ProcessNetwork, w_full: np.ndarray) -> np.ndarray:
    """Law flows for a full potential vector; zero on law-free branches."""
    W = net.A_full.T @ w_full
    return np.array([eval_resistive(b.law, W[j]) if b.law is not None else 0.0
                     for j, b in enumerate(net.branches)])


def node_balance(net: ProcessNetwork, bc: BoundaryConditions, w: Sequence[float]) -> np.ndarray:
    """Net outflow ``A_dyn F`` at each dynamic node: the co-content gradient."""
    w_full = node_potentials(net, bc, w)
    return net.A_dynamic @ branch_flows(net, w_full)


def kkt_residual(net: ProcessNetwork, bc: BoundaryConditions, w: Sequence[float]) -> float:
    """Largest node flow imbalance at potentials ``w``."""
    bal = node_balance(net, bc, w)
    return float(np.max(np.abs(bal))) if bal.size else 0.0


def _check_connected(net: ProcessNetwork, bc: BoundaryConditions) -> None:
    # every free node needs a law path to a fixed-potential node
    n = len(net.nodes)
    adj = np.zeros((n, n), dtype=bool)
    for j in _law_columns(net):
        i, k = np.flatnonzero(net.A_full[:, j])
        adj[i, k] = adj[k, i] = True
    _, labels = connected_components(adj, directed=False)
    fixed = {labels[net.node_index(nid)] for nid in net.boundary_ids if nid not in bc.flows}
    for i in _free_rows(net, bc):
        if labels[i] not in fixed:
            raise SingularNetworkError(
                f"node {net.nodes[i].id!r} has no resistive path to a fixed potential "
                "(singular Hessian)")


def _gradient_hessian(net, bc, free, x, cols):
    w_full = _full_from_free(net, bc, free, x)
    W = net.A_full.T @ w_full
    A_f = net.A_full[np.ix_(free, cols)].astype(float)
    F = np.array([eval_resistive(net.branches[j].law, W[j]) for j in cols])
    dF = np.array([slope_resistive(net.branches[j].law, W[j]) for j in cols])
    grad = A_f @ F - _injections(net, bc, free)
    hess = (A_f * dF) @ A_f.T
    return grad, hess


def solve_steady(net: ProcessNetwork, bc: BoundaryConditions, max_iter: int = 200,
                 tol: float = 1e-10) -> SteadyStateSolution:
    """Minimize the co-content over the free potentials.

    All-linear networks are solved with one symmetric positive-definite linear
    solve; otherwise damped Newton with a backtracking line search is used.
    """
    bc.validate(net)
    _check_law_branches(net)
    _check_connected(net, bc)
    free = _free_rows(net, bc)
    cols = _law_columns(net)
    fixed = boundary_potential_vector(net, bc)
    start = float(np.nanmean(fixed)) if np.any(~np.isnan(fixed)) else 0.0
    x = np.full(free.size, start)
    iterations = 0

    if all(net.branches[j].law.is_linear for j in cols):
        grad, hess = _gradient_hessian(net, bc, free, x, cols)
        x = x - scipy.linalg.solve(hess, grad, assume_a="pos")
        iterations = 1
    else:
        def objective(v):
            return _cocontent_full(net, bc, _full_from_free(net, bc, free, v))

        for iterations in range(1, max_iter + 1):
            grad, hess = _gradient_hessian(net, bc, free, x, cols)
            if np.max(np.abs(grad), initial=0.0) < tol:
                break
            step = _newton_direction(hess, grad)
            g0, t = objective(x), 1.0
            slope = float(grad @ step)
            while objective(x + t * step) > g0 + 1e-4 * t * slope and t > 1e-12:
                t *= 0.5
            x = x + t * step
        else:
            grad, _ = _gradient_hessian(net, bc, free, x, cols)
            if np.max(np.abs(grad), initial=0.0) >= tol:
                raise ConvergenceError(
                    f"Newton did not converge in {max_iter} iterations "
                    f"(residual {np.max(np.abs(grad)):.3g})")

    w_full = _full_from_free(net, bc, free, x)
    w_dyn = w_full[: net.n_dynamic]
    F = fill_terminal_sources(net, branch_flows(net, w_full))
    bal = net.A_dynamic @ F
    return SteadyStateSolution(
        w_star=w_dyn,
        Z_star=inventory_from_potentials(net, w_dyn),
        F_star=F,
        G_star=_cocontent_full(net, bc, w_full),
        kkt_residual=float(np.max(np.abs(bal), initial=0.0)),
        iterations=iterations,
    )


def _newton_direction(hess: np.ndarray, grad: np.ndarray) -> np.ndarray:
    # ridge grows until the (possibly flat) Hessian factors
    mu = 0.0
    scale = max(1.0, float(np.max(np.abs(np.diag(hess)), initial=1.0)))
    for _ in range(20):
        try:
            c = scipy.linalg.cho_factor(hess + mu * np.eye(len(grad)))
            return -scipy.linalg.cho_solve(c, grad)
        except np.linalg.LinAlgError:
            mu = 1e-10 * scale if mu == 0.0 else mu * 10.0
    return -grad


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


def potential(net: ProcessNetwork, bc: BoundaryConditions, Z: Sequence[float],
              method: str = "auto") -> float:
    """Network potential ``P(Z)``, a Lyapunov function of the uncontrolled dynamics.

    ``P(Z)`` is the line integral from 0 to ``Z`` of the weighted imbalance
    ``(dw/dZ) * A_dyn F(w(Z))`` plus the terminal term ``G*(w(0))``. Its
    gradient field satisfies ``dZ/dt = -(dZ/dw) * grad P``, so ``P`` descends
    along trajectories and its minimizer is the steady state. All-linear
    networks use the closed-form quadratic ``G*(C^-1 Z)``; otherwise 32-point
    Gauss-Legendre quadrature along the straight path, split where a tabulated
    capacity changes slope.
    """
    Z = np.asarray(Z, dtype=float)
    linear = (all(c.is_linear for c in net.capacities)
              and all(b.law.is_linear for b in net.branches if b.law is not None))
    if method == "closed" or (method == "auto" and linear):
        return cocontent(net, bc, potentials_from_inventory(net, Z))
    zero = np.zeros_like(Z)
    terminal_term = cocontent(net, bc, potentials_from_inventory(net, zero))
    total = 0.0
    cuts = _path_breaks(net, Z)
    for a, b in zip(cuts[:-1], cuts[1:]):
        for s, wt in zip(a + (b - a) * 0.5 * (_GL_NODES + 1.0), (b - a) * 0.5 * _GL_WEIGHTS):
            w = potentials_from_inventory(net, s * Z)
            dwdZ = np.array([1.0 / slope_capacitive(c, x) for c, x in zip(net.capacities, w)])
            total += wt * float((dwdZ * node_balance(net, bc, w)) @ Z)
    return terminal_term + total


def _path_breaks(net: ProcessNetwork, Z: np.ndarray) -> np.ndarray:
    # tabulated capacities have slope jumps; the rule is applied between them
    cuts = {0.0, 1.0}
    for cap, z in zip(net.capacities, Z):
        if cap.form == "tabulated" and z != 0.0:
            for _, zk in cap.points:
                s = zk / z
                if 0.0 < s < 1.0:
                    cuts.add(float(s))
    return np.array(sorted(cuts))


def potential_gradient(net: ProcessNetwork, bc: BoundaryConditions,
                       Z: Sequence[float]) -> np.ndarray:
    """Analytic ``grad_Z P = (dw/dZ) * A_dyn F``."""
    w = potentials_from_inventory(net, Z)
    dwdZ = np.array([1.0 / slope_capacitive(c, x) for c, x in zip(net.capacities, w)])
    return dwdZ * node_balance(net, bc, w)


@dataclass
class ConvexityReport:
    samples: list[np.ndarray]
    hessians: list[np.ndarray]
    min_eigenvalues: list[float]

    @property
    def convex(self) -> bool:
        return all(e >= -1e-6 for e in self.min_eigenvalues)


def convexity_check(net: ProcessNetwork, bc: BoundaryConditions,
                    w_samples: Sequence[Sequence[float]], h: float = 1e-5) -> ConvexityReport:
    """Finite-difference Hessian of the co-content at each sample point."""
    if len(w_samples) == 0:
        raise ValueError("need at least one sample")
    hessians, mins = [], []
    samples = [np.asarray(w, dtype=float) for w in w_samples]
    for w in samples:
        n = w.size
        H = np.empty((n, n))
        f0 = cocontent(net, bc, w)
        for i in range(n):
            for k in range(i, n):
                ei = np.zeros(n)
                ek = np.zeros(n)
                ei[i] = h
                ek[k] = h
                if i == k:
                    val = (cocontent(net, bc, w + ei) - 2 * f0 + cocontent(net, bc, w - ei)) / h**2
                else:
                    val = (cocontent(net, bc, w + ei + ek) - cocontent(net, bc, w + ei - ek)
                           - cocontent(net, bc, w - ei + ek)
                           + cocontent(net, bc, w - ei - ek)) / (4 * h * h)
                H[i, k] = H[k, i] = val
        hessians.append(H)
        mins.append(float(np.min(np.linalg.eigvalsh(H))) if n else 0.0)
    return ConvexityReport(samples, hessians, mins)
