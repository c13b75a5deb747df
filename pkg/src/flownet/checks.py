"""Runnable invariant checks over a network document.

Each check returns a :class:`CheckResult`; a check that does not apply to the
network (for example ``control`` without controllers) passes as skipped.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constitutive import is_passive
from .control import controlled_nodes_potential
from .dynamics import assemble_rhs, numerical_jacobian, simulate
from .io import NetworkDocument
from .variational import (
    ConvergenceError,
    SingularNetworkError,
    cocontent,
    convexity_check,
    node_balance,
    potential,
    solve_steady,
)

CHECKS = ("conservation", "kkt", "lyapunov", "gradcheck", "control", "passivity")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    skipped: bool = False


def _horizon(rhs, Z0: np.ndarray, settle: float = 20.0, max_steps: int = 20000):
    """Step size and end time from the linearized rates at ``Z0``."""
    J = numerical_jacobian(rhs, Z0)
    rates = np.abs(np.linalg.eigvals(J))
    rates = rates[rates > 1e-12]
    if rates.size == 0:
        return 0.1, 10.0
    dt = 0.5 / rates.max()
    t_end = min(settle / rates.min(), max_steps * dt)
    return dt, t_end


def check_conservation(doc: NetworkDocument, tol: float = 1e-9) -> CheckResult:
    """Inventory change equals the net boundary injection at every step."""
    net, bc = doc.network(), doc.boundary()
    rhs = assemble_rhs(net, bc, doc.controllers)
    Z0 = np.zeros(net.n_dynamic)
    dt, t_end = _horizon(rhs, Z0)
    tr = simulate(net, bc, Z0, dt, min(t_end, 200 * dt), "euler", doc.controllers)
    boundary = [net.node_index(n) for n in net.boundary_ids]
    inflow = -(net.A_full[boundary].astype(float) @ tr.F.T).sum(axis=0)
    dtotal = np.diff(tr.Z.sum(axis=1))
    # Euler: the change over a step is dt times the flows at its start
    err = np.abs(dtotal + dt * inflow[:-1])
    scale = max(1.0, float(np.max(np.abs(tr.Z))))
    worst = float(err.max(initial=0.0))
    return CheckResult("conservation", worst <= tol * scale,
                       {"max_step_error": worst, "steps": len(dtotal)})


def check_kkt(doc: NetworkDocument, tol: float = 1e-9) -> CheckResult:
    """Steady state solves, its residual is small and the co-content is convex there."""
    net, bc = doc.network(), doc.boundary()
    if any(b.law is None for b in net.branches if b.kind != "terminal-source"):
        return CheckResult("kkt", True, {"reason": "branches without laws"}, skipped=True)
    try:
        sol = solve_steady(net, bc)
    except (SingularNetworkError, ConvergenceError) as exc:
        return CheckResult("kkt", False, {"error": str(exc)})
    conv = convexity_check(net, bc, [sol.w_star])
    ok = sol.kkt_residual < tol and conv.convex
    return CheckResult("kkt", ok, {"residual": sol.kkt_residual,
                                   "min_hessian_eigenvalue": conv.min_eigenvalues[0]})


def check_lyapunov(doc: NetworkDocument, tol: float = 1e-9) -> CheckResult:
    """The potential does not increase along a simulated trajectory.

    Controlled networks use the reshaped potential when every dynamic node is
    controlled; otherwise the check is skipped for them.
    """
    net, bc = doc.network(), doc.boundary()
    ctrls = doc.controllers
    if ctrls and len(ctrls) != net.n_dynamic:
        return CheckResult("lyapunov", True, {"reason": "partially controlled"}, skipped=True)
    if not ctrls and any(b.law is None for b in net.branches if b.kind != "terminal-source"):
        return CheckResult("lyapunov", True, {"reason": "branches without laws"}, skipped=True)
    rhs = assemble_rhs(net, bc, ctrls)
    Z0 = np.zeros(net.n_dynamic)
    dt, t_end = _horizon(rhs, Z0)
    tr = simulate(net, bc, Z0, dt, min(t_end, 500 * dt), "rk4", ctrls)
    if ctrls:
        P = np.array([controlled_nodes_potential(net, ctrls, Z) for Z in tr.Z])
    else:
        P = np.array([potential(net, bc, Z) for Z in tr.Z])
    rise = float(np.max(np.diff(P), initial=0.0))
    return CheckResult("lyapunov", rise <= tol * max(1.0, float(np.max(np.abs(P)))),
                       {"max_increase": rise, "P_start": float(P[0]), "P_end": float(P[-1])})


def check_gradcheck(doc: NetworkDocument, samples: int = 20, seed: int = 0,
                    tol: float = 1e-5) -> CheckResult:
    """Finite-difference gradient of the co-content equals the node imbalance."""
    net, bc = doc.network(), doc.boundary()
    rng = np.random.Generator(np.random.Philox(seed))
    fixed = [v for v in bc.potentials.values()]
    span = max(1.0, max((abs(v) for v in fixed), default=1.0))
    worst = 0.0
    for _ in range(samples):
        w = rng.uniform(-span, span, size=net.n_dynamic)
        g = node_balance(net, bc, w)
        fd = np.empty_like(w)
        for i in range(w.size):
            h = 1e-6 * max(1.0, abs(w[i]))
            e = np.zeros_like(w)
            e[i] = h
            fd[i] = (cocontent(net, bc, w + e) - cocontent(net, bc, w - e)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(fd - g)) / max(1.0, np.max(np.abs(g)))))
    return CheckResult("gradcheck", worst < tol, {"max_relative_error": worst,
                                                  "samples": samples})


def check_control(doc: NetworkDocument, tol: float = 1e-6) -> CheckResult:
    """Controlled nodes settle at their setpoints and actuated flows respect bounds."""
    net, bc = doc.network(), doc.boundary()
    ctrls = doc.controllers
    if not ctrls:
        return CheckResult("control", True, {"reason": "no controllers"}, skipped=True)
    rhs = assemble_rhs(net, bc, ctrls)
    Z0 = np.zeros(net.n_dynamic)
    dt, t_end = _horizon(rhs, Z0, settle=30.0)
    tr = simulate(net, bc, Z0, dt, t_end, "rk4", ctrls)
    idx = [net.dynamic_ids.index(c.node) for c in ctrls]
    err = float(np.max(np.abs(tr.Z[-1, idx] - [c.setpoint for c in ctrls])))
    in_bounds = True
    for c in ctrls:
        if c.bounds is not None:
            f = tr.F[:, net.branch_index(c.branch)]
            in_bounds &= bool(np.all((f >= c.bounds[0] - 1e-12) & (f <= c.bounds[1] + 1e-12)))
    return CheckResult("control", err < tol and in_bounds,
                       {"setpoint_error": err, "within_bounds": in_bounds})


def check_passivity(doc: NetworkDocument) -> CheckResult:
    """Every resistive law satisfies ``W * F >= 0``."""
    net = doc.network()
    bad = [b.id for b in net.branches if b.law is not None and not is_passive(b.law)]
    return CheckResult("passivity", not bad, {"non_passive": ",".join(bad) or "none"})


_RUNNERS = {
    "conservation": check_conservation,
    "kkt": check_kkt,
    "lyapunov": check_lyapunov,
    "gradcheck": check_gradcheck,
    "control": check_control,
    "passivity": check_passivity,
}


def run_checks(doc: NetworkDocument, names=CHECKS) -> list[CheckResult]:
    results = []
    for name in names:
        if name not in _RUNNERS:
            raise ValueError(f"unknown check {name!r}")
        try:
            results.append(_RUNNERS[name](doc))
        except Exception as exc:  # a crashing check is a failing check
            results.append(CheckResult(name, False, {"error": f"{type(exc).__name__}: {exc}"}))
    return results
