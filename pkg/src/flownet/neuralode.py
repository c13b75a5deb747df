"""Topology-masked neural ODE for learning constitutive parameters.

The network has one hidden unit per branch and one input/output unit per node.
Hidden pre-activations are branch flows ``F = w @ H`` with ``H[i, b] = K_b A[i, b]``;
output pre-activations are potential rates ``dw = F @ O.T`` with
``O[i, b] = -A[i, b] / C_i`` on dynamic rows and zero on boundary rows. An
explicit Euler step ``w + dt * act(act(w H) O^T)`` gives the next state.
Weights outside the incidence pattern are pruned to exactly zero.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import BoundaryConditions, inventory_from_potentials, simulate
from .topology import ProcessNetwork

ACTIVATIONS = ("identity", "relu", "tanh")
DIVERGENCE_LIMIT = 1e12


class TrainingDivergence(RuntimeError):
    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


def _act(name: str, x: np.ndarray) -> np.ndarray:
    if name == "identity":
        return x
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    raise ValueError(f"unknown activation {name!r}")


def _dact(name: str, x: np.ndarray) -> np.ndarray:
    if name == "identity":
        return np.ones_like(x)
    if name == "relu":
        # right derivative at the kink
        return (x >= 0.0).astype(float)
    if name == "tanh":
        return 1.0 - np.tanh(x) ** 2
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class SparseNeuralODE:
    """Two-layer masked network; weights are stored as full matrices.

    ``tied=True`` trains one conductance per branch (shared by the branch's
    two hidden entries) and one inverse capacitance per node. ``tied=False``
    trains every unmasked entry independently.
    """

    node_ids: list[str]
    branch_ids: list[str]
    n_dynamic: int
    incidence: np.ndarray
    hidden_weights: np.ndarray
    output_weights: np.ndarray
    act_hidden: str = "relu"
    act_output: str = "relu"
    dt: float = 0.02
    tied: bool = True
    train_capacity: bool = False

    def __post_init__(self):
        for a in (self.act_hidden, self.act_output):
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        A = np.asarray(self.incidence)
        self.incidence = A
        self.hidden_weights = np.array(self.hidden_weights, dtype=float)
        self.output_weights = np.array(self.output_weights, dtype=float)
        prune(self)

    @property
    def mask_hidden(self) -> np.ndarray:
        return self.incidence != 0

    @property
    def mask_output(self) -> np.ndarray:
        m = self.incidence != 0
        m[self.n_dynamic:] = False
        return m

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def conductance(self) -> np.ndarray:
        """Per-branch conductance read from the hidden layer."""
        A = self.incidence
        counts = np.maximum(np.abs(A).sum(axis=0), 1)
        return (self.hidden_weights * A).sum(axis=0) / counts

    @property
    def inv_capacitance(self) -> np.ndarray:
        """Per-dynamic-node ``1/C`` read from the output layer."""
        A = self.incidence[: self.n_dynamic]
        counts = np.maximum(np.abs(A).sum(axis=1), 1)
        return -(self.output_weights[: self.n_dynamic] * A).sum(axis=1) / counts

    def set_parameters(self, conductance=None, inv_capacitance=None) -> None:
        A = self.incidence.astype(float)
        if conductance is not None:
            self.hidden_weights = A * np.asarray(conductance, dtype=float)[None, :]
        if inv_capacitance is not None:
            O = -A.copy()
            O[: self.n_dynamic] *= np.asarray(inv_capacitance, dtype=float)[:, None]
            O[self.n_dynamic:] = 0.0
            self.output_weights = O
        prune(self)

    def copy(self) -> "SparseNeuralODE":
        return SparseNeuralODE(
            list(self.node_ids), list(self.branch_ids), self.n_dynamic, self.incidence.copy(),
            self.hidden_weights.copy(), self.output_weights.copy(), self.act_hidden,
            self.act_output, self.dt, self.tied, self.train_capacity)


def prune(model: SparseNeuralODE) -> SparseNeuralODE:
    """Zero every weight outside the incidence masks (in place, idempotent)."""
    model.hidden_weights[~model.mask_hidden] = 0.0
    model.output_weights[~model.mask_output] = 0.0
    return model


def build_model(net: ProcessNetwork, act_hidden: str = "relu", act_output: str = "relu",
                dt: float = 0.02, init_seed: int | None = 0, conductance=None,
                tied: bool = True, train_capacity: bool = False) -> SparseNeuralODE:
    """Masked model for ``net``.

    Conductances are drawn uniformly from (0, 1] unless given; inverse
    capacitances come from the network's linear capacitive laws.
    """
    caps = net.capacities
    if not all(c.is_linear for c in caps):
        raise ValueError("the neural model needs linear capacitive laws")
    A = net.A_full.copy()
    if conductance is not None:
        H = A * np.asarray(conductance, dtype=float)[None, :]
    else:
        rng = np.random.Generator(np.random.Philox(init_seed))
        # uniform on (0, 1], orientation sign from the incidence
        shape = net.n_branches if tied else A.shape
        H = A * (1.0 - rng.uniform(0.0, 1.0, size=shape))
    model = SparseNeuralODE(
        node_ids=net.node_ids, branch_ids=net.branch_ids, n_dynamic=net.n_dynamic,
        incidence=A, hidden_weights=H, output_weights=np.zeros(A.shape),
        act_hidden=act_hidden, act_output=act_output, dt=dt, tied=tied,
        train_capacity=train_capacity)
    model.set_parameters(inv_capacitance=[1.0 / c.C for c in caps])
    return model


def true_conductances(net: ProcessNetwork) -> np.ndarray:
    """Conductances of linear laws (NaN where a branch has none)."""
    return np.array([b.law.K if b.law is not None and b.law.is_linear else np.nan
                     for b in net.branches])


def model_from_network(net: ProcessNetwork, act_hidden: str = "identity",
                       act_output: str = "identity", dt: float = 0.02) -> SparseNeuralODE:
    """Model loaded with the network's own linear conductances."""
    k = np.nan_to_num(true_conductances(net))
    return build_model(net, act_hidden, act_output, dt, conductance=k)


# forward pass -------------------------------------------------------------

def vector_field(model: SparseNeuralODE, w: np.ndarray) -> np.ndarray:
    """Continuous-time rate ``act(act(w H) O^T)``; works on batches."""
    h = _act(model.act_hidden, w @ model.hidden_weights)
    return _act(model.act_output, h @ model.output_weights.T)


def forward_step(model: SparseNeuralODE, w: np.ndarray) -> np.ndarray:
    """One Euler step; ``w`` holds all node potentials, terminals included."""
    w = np.asarray(w, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        out = w + model.dt * vector_field(model, w)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite value in forward step")
    return out


def rollout(model: SparseNeuralODE, w0: np.ndarray, steps: int) -> np.ndarray:
    """Repeated forward steps; returns ``steps + 1`` states including ``w0``."""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    w = np.asarray(w0, dtype=float)
    out = [w]
    for k in range(steps):
        w = forward_step(model, w)
        if np.any(np.abs(w) > DIVERGENCE_LIMIT):
            raise FloatingPointError(f"rollout diverged at step {k + 1}")
        out.append(w)
    return np.stack(out, axis=-2)


def loss_mse(pred: np.ndarray, obs: np.ndarray, node_subset: Sequence[int] | None = None) -> float:
    """Mean squared error over time and the selected nodes."""
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if pred.shape[-2] != obs.shape[-2]:
        raise ValueError("prediction and observation lengths differ")
    if node_subset is not None:
        pred = pred[..., list(node_subset)]
        obs = obs[..., list(node_subset)]
    return float(np.mean((pred - obs) ** 2))


# gradients ----------------------------------------------------------------

@dataclass
class Gradient:
    """Loss and its gradient w.r.t. the weight matrices (masked)."""

    loss: float
    hidden: np.ndarray
    output: np.ndarray

    def parameters(self, model: SparseNeuralODE) -> tuple[np.ndarray, np.ndarray]:
        """Chain rule onto per-branch conductances and per-node inverse capacities."""
        A = model.incidence.astype(float)
        d_k = (self.hidden * A).sum(axis=0)
        d_c = -(self.output[: model.n_dynamic] * A[: model.n_dynamic]).sum(axis=1)
        return d_k, d_c


def _prepare(model: SparseNeuralODE, w0, obs_window):
    w0 = np.atleast_2d(np.asarray(w0, dtype=float))
    obs = np.asarray(obs_window, dtype=float)
    if obs.ndim == 2:
        obs = obs[None]
    if obs.shape[1] < 2:
        raise ValueError("observation window needs at least 2 points")
    if w0.shape[0] != obs.shape[0]:
        raise ValueError("batch sizes of w0 and observations differ")
    return w0, obs


def _loss_scale(obs: np.ndarray) -> float:
    B, L, n = obs.shape
    return 1.0 / (B * (L - 1) * n)


def window_loss(model: SparseNeuralODE, w0, obs_window) -> float:
    """MSE of an Euler rollout from ``w0`` against observations 1..L-1.

    ``w0`` holds the full node vector (B, n_nodes) or (n_nodes,); ``obs_window``
    holds dynamic-node observations (B, L, n_dyn) or (L, n_dyn), whose first
    row is the initial instant and is not scored.
    """
    w0, obs = _prepare(model, w0, obs_window)
    pred = rollout(model, w0, obs.shape[1] - 1)
    return loss_mse(pred[:, 1:, : model.n_dynamic], obs[:, 1:])


def grad_bptt(model: SparseNeuralODE, w0, obs_window) -> Gradient:
    """Exact reverse-mode gradient through the unrolled Euler steps."""
    w0, obs = _prepare(model, w0, obs_window)
    H, O, dt = model.hidden_weights, model.output_weights, model.dt
    n_dyn = model.n_dynamic
    L = obs.shape[1]
    scale = _loss_scale(obs)

    ws, pre_h, hs, pre_o = [w0], [], [], []
    w = w0
    for _ in range(L - 1):
        a = w @ H
        h = _act(model.act_hidden, a)
        b = h @ O.T
        w = w + dt * _act(model.act_output, b)
        pre_h.append(a)
        hs.append(h)
        pre_o.append(b)
        ws.append(w)

    resid = np.stack(ws[1:], axis=1)[:, :, :n_dyn] - obs[:, 1:]
    loss = float(np.sum(resid**2) * scale)

    dH = np.zeros_like(H)
    dO = np.zeros_like(O)
    g = np.zeros_like(w0)
    for t in range(L - 2, -1, -1):
        g[:, :n_dyn] += 2.0 * scale * resid[:, t]
        d_b = dt * g * _dact(model.act_output, pre_o[t])
        dO += d_b.T @ hs[t]
        d_a = (d_b @ O) * _dact(model.act_hidden, pre_h[t])
        dH += ws[t].T @ d_a
        g = g + d_a @ H.T
    dH[~model.mask_hidden] = 0.0
    dO[~model.mask_output] = 0.0
    return Gradient(loss, dH, dO)


def _rk4(f, y, dt):
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def grad_adjoint(model: SparseNeuralODE, w0, obs_window) -> Gradient:
    """Continuous adjoint gradient of the ODE initial value problem.

    The predictions are the model's own Euler rollout, so the loss equals
    :func:`window_loss`. Going backward, the augmented state (potentials,
    adjoint, weight gradients) is integrated with RK4 from each prediction to
    the previous grid instant; the adjoint jumps by the loss gradient at every
    observation. The result differs from :func:`grad_bptt` by O(dt), the gap
    between the continuous and the Euler-discretized sensitivity.
    """
    w0, obs = _prepare(model, w0, obs_window)
    H, O, dt = model.hidden_weights, model.output_weights, model.dt
    n_dyn = model.n_dynamic
    B, L, _ = obs.shape
    n = w0.shape[1]
    scale = _loss_scale(obs)

    ws = [w0]
    for _ in range(L - 1):
        ws.append(ws[-1] + dt * vector_field(model, ws[-1]))
    resid = np.stack(ws[1:], axis=1)[:, :, :n_dyn] - obs[:, 1:]
    loss = float(np.sum(resid**2) * scale)

    nH, nO = H.size, O.size

    def augmented(y):
        # y = [w | a | gH | gO] per batch row; returns d/dt in forward time
        w = y[:, :n]
        adj = y[:, n:2 * n]
        pa = w @ H
        h = _act(model.act_hidden, pa)
        pb = h @ O.T
        dw = _act(model.act_output, pb)
        d_b = adj * _dact(model.act_output, pb)
        d_a = (d_b @ O) * _dact(model.act_hidden, pa)
        da = -(d_a @ H.T)
        gH = -np.einsum("bi,bj->bij", w, d_a).reshape(B, nH)
        gO = -np.einsum("bi,bj->bij", d_b, h).reshape(B, nO)
        return np.concatenate([dw, da, gH, gO], axis=1)

    adj = np.zeros((B, n))
    grads = np.zeros((B, nH + nO))
    for t in range(L - 1, 0, -1):
        adj[:, :n_dyn] += 2.0 * scale * resid[:, t - 1]
        y = np.concatenate([ws[t], adj, grads], axis=1)
        y = _rk4(augmented, y, -dt)
        adj = y[:, n:2 * n]
        grads = y[:, 2 * n:]
    dH = grads[:, :nH].sum(axis=0).reshape(H.shape)
    dO = grads[:, nH:].sum(axis=0).reshape(O.shape)
    dH[~model.mask_hidden] = 0.0
    dO[~model.mask_output] = 0.0
    return Gradient(loss, dH, dO)


GRADIENT_METHODS = {"bptt": grad_bptt, "adjoint": grad_adjoint}


# data ---------------------------------------------------------------------

@dataclass
class Dataset:
    """Observed potential trajectories on a uniform grid."""

    times: np.ndarray
    w_obs: np.ndarray
    node_ids: list[str]
    boundary_potentials: dict[str, float]
    noise_frac: float
    noise_std: np.ndarray
    seed: int
    w_clean: np.ndarray | None = None
    Z: np.ndarray | None = None
    F: np.ndarray | None = None
    branch_ids: list[str] = field(default_factory=list)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def check_grid(self, rtol: float = 1e-9) -> None:
        if len(self.times) > 2:
            d = np.diff(self.times)
            if np.max(np.abs(d - d[0])) > rtol * max(1.0, abs(d[0])) * 10:
                raise ValueError("dataset time grid is not uniform")


def generate_data(net: ProcessNetwork, bc: BoundaryConditions, w0: Sequence[float],
                  dt: float, steps: int, noise_frac: float, seed: int) -> Dataset:
    """Euler simulation from potentials ``w0`` plus seeded Gaussian noise.

    Node ``i`` gets noise with standard deviation ``noise_frac`` times the
    standard deviation of its noiseless trajectory.
    """
    if noise_frac < 0:
        raise ValueError("noise fraction must be nonnegative")
    Z0 = inventory_from_potentials(net, w0)
    traj = simulate(net, bc, Z0, dt, steps * dt, method="euler")
    w_clean = traj.w
    std = noise_frac * np.std(w_clean, axis=0)
    rng = np.random.Generator(np.random.Philox(seed))
    noise = rng.standard_normal(w_clean.shape) * std[None, :]
    w_obs = w_clean + noise if noise_frac > 0 else w_clean.copy()
    bpot = {nid: float(bc.potentials.get(nid, 0.0)) for nid in net.boundary_ids
            if nid not in bc.flows}
    return Dataset(times=traj.times, w_obs=w_obs, node_ids=net.dynamic_ids,
                   boundary_potentials=bpot, noise_frac=float(noise_frac), noise_std=std,
                   seed=int(seed), w_clean=w_clean, Z=traj.Z, F=traj.F,
                   branch_ids=net.branch_ids)


def full_state(model: SparseNeuralODE, w_dyn: np.ndarray,
               boundary_potentials: dict[str, float]) -> np.ndarray:
    """Stack dynamic potentials with the fixed boundary potentials."""
    w_dyn = np.atleast_2d(np.asarray(w_dyn, dtype=float))
    bnd = np.array([boundary_potentials.get(nid, 0.0) for nid in model.node_ids[model.n_dynamic:]])
    return np.concatenate([w_dyn, np.broadcast_to(bnd, (w_dyn.shape[0], bnd.size))], axis=1)


# training -----------------------------------------------------------------

@dataclass
class TrainingConfig:
    iterations: int = 1000
    window_length: int = 50
    batch_size: int = 16
    learning_rate: float = 0.05
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    gradient_method: str = "bptt"
    min_conductance: float = 1e-6
    roundoff_ulps: float = 64.0
    check_masks: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.window_length < 2:
            raise ValueError("window_length must be at least 2")
        if not all(0.0 < b < 1.0 for b in self.betas):
            raise ValueError("moment decay rates must lie in (0, 1)")
        if self.gradient_method not in GRADIENT_METHODS:
            raise ValueError(f"unknown gradient method {self.gradient_method!r}")


@dataclass
class TrainingReport:
    loss_history: list[float]
    conductance: dict[str, float]
    inv_capacitance: dict[str, float]
    ratios: dict[str, float]
    wall_time: float
    eval_loss: float
    model: SparseNeuralODE = field(repr=False)

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1]


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        b1, b2 = self.betas
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad**2
        m_hat = self.m / (1 - b1**self.t)
        v_hat = self.v / (1 - b2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def sample_windows(dataset: Dataset, length: int, batch: int,
                   rng: np.random.Generator) -> np.ndarray:
    n = len(dataset.times)
    if length > n:
        raise ValueError(f"window length {length} exceeds dataset length {n}")
    starts = rng.integers(0, n - length + 1, size=batch)
    return starts[:, None] + np.arange(length)[None, :]


def _flatten(model: SparseNeuralODE) -> np.ndarray:
    if model.tied:
        parts = [model.conductance]
        if model.train_capacity:
            parts.append(model.inv_capacitance)
        return np.concatenate(parts)
    parts = [model.hidden_weights[model.mask_hidden]]
    if model.train_capacity:
        parts.append(model.output_weights[model.mask_output])
    return np.concatenate(parts)


def _project(model: SparseNeuralODE, theta: np.ndarray, floor: float) -> np.ndarray:
    # passivity: conductances stay positive, which also keeps relu units alive
    theta = theta.copy()
    if model.tied:
        nf = len(model.branch_ids)
        theta[:nf] = np.maximum(theta[:nf], floor)
    else:
        nh = int(model.mask_hidden.sum())
        sign = model.incidence[model.mask_hidden].astype(float)
        theta[:nh] = sign * np.maximum(sign * theta[:nh], floor)
    return theta


def _unflatten(model: SparseNeuralODE, theta: np.ndarray) -> None:
    if model.tied:
        nf = len(model.branch_ids)
        c = theta[nf:] if model.train_capacity else None
        model.set_parameters(theta[:nf], c)
        return
    nh = int(model.mask_hidden.sum())
    model.hidden_weights[model.mask_hidden] = theta[:nh]
    if model.train_capacity:
        model.output_weights[model.mask_output] = theta[nh:]
    prune(model)


def _flat_grad(model: SparseNeuralODE, g: Gradient) -> np.ndarray:
    if model.tied:
        d_k, d_c = g.parameters(model)
        return np.concatenate([d_k, d_c]) if model.train_capacity else d_k
    parts = [g.hidden[model.mask_hidden]]
    if model.train_capacity:
        parts.append(g.output[model.mask_output])
    return np.concatenate(parts)


def evaluation_loss(model: SparseNeuralODE, dataset: Dataset, window_length: int) -> float:
    """Mean Euler-rollout loss over consecutive windows tiling the dataset."""
    n = len(dataset.times)
    L = min(window_length, n)
    starts = np.arange(0, n - L + 1, L - 1)
    idx = starts[:, None] + np.arange(L)[None, :]
    obs = dataset.w_obs[idx]
    return window_loss(model, full_state(model, obs[:, 0], dataset.boundary_potentials), obs)


def train(model: SparseNeuralODE, dataset: Dataset, config: TrainingConfig) -> TrainingReport:
    """Fit the model to random windows of the dataset; returns a trained copy."""
    if abs(dataset.dt - model.dt) > 1e-9 * max(1.0, model.dt):
        raise ValueError(f"dataset spacing {dataset.dt} differs from model dt {model.dt}")
    dataset.check_grid()
    model = model.copy()
    grad_fn = GRADIENT_METHODS[config.gradient_method]
    rng = np.random.Generator(np.random.Philox(config.seed))
    opt = Adam(config.learning_rate, config.betas, config.eps)
    theta = _flatten(model)
    history: list[float] = []
    start = time.perf_counter()
    for it in range(config.iterations):
        idx = sample_windows(dataset, config.window_length, config.batch_size, rng)
        obs = dataset.w_obs[idx]
        w0 = full_state(model, obs[:, 0], dataset.boundary_potentials)
        try:
            # overflow shows up as a non-finite loss and is reported below
            with np.errstate(over="ignore", invalid="ignore"):
                g = grad_fn(model, w0, obs)
        except FloatingPointError as exc:
            raise TrainingDivergence(it, str(exc)) from exc
        if not np.isfinite(g.loss):
            raise TrainingDivergence(it, "loss is not finite")
        history.append(g.loss)
        grad = _flat_grad(model, g)
        # residuals at round-off level carry no information; Adam would
        # normalize their noise up to full-size steps
        floor = (config.roundoff_ulps * np.finfo(float).eps * np.max(np.abs(obs))) ** 2
        if g.loss <= floor:
            grad = np.zeros_like(grad)
        theta = _project(model, opt.step(theta, grad), config.min_conductance)
        _unflatten(model, theta)
        if config.check_masks:
            assert not np.any(model.hidden_weights[~model.mask_hidden])
            assert not np.any(model.output_weights[~model.mask_output])
    wall = time.perf_counter() - start

    k = model.conductance
    c = model.inv_capacitance
    ratios = {}
    A = model.incidence[: model.n_dynamic]
    for b, bid in enumerate(model.branch_ids):
        for i in np.flatnonzero(A[:, b]):
            ratios[f"{bid}/{model.node_ids[i]}"] = float(k[b] * c[i])
    return TrainingReport(
        loss_history=history,
        conductance={bid: float(v) for bid, v in zip(model.branch_ids, k)},
        inv_capacitance={nid: float(v) for nid, v in zip(model.node_ids, c)},
        ratios=ratios,
        wall_time=wall,
        eval_loss=evaluation_loss(model, dataset, config.window_length),
        model=model,
    )


def rollout_error(model: SparseNeuralODE, net: ProcessNetwork, bc: BoundaryConditions,
                  w0_dyn: Sequence[float], steps: int) -> float:
    """Largest per-node RMS error of a rollout against the Euler simulator,
    relative to that node's signal range."""
    Z0 = inventory_from_potentials(net, w0_dyn)
    ref = simulate(net, bc, Z0, model.dt, steps * model.dt, method="euler").w
    bpot = {nid: float(bc.potentials.get(nid, 0.0)) for nid in net.boundary_ids}
    pred = rollout(model, full_state(model, w0_dyn, bpot)[0], steps)[:, : model.n_dynamic]
    rms = np.sqrt(np.mean((pred - ref) ** 2, axis=0))
    span = np.ptp(ref, axis=0)
    return float(np.max(rms / np.where(span > 0, span, 1.0)))
