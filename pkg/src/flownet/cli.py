"""Command-line front end.

Reports go to stdout as ``key=value`` lines. Exit codes:

    0  success
    1  a check or steady-state residual test failed
    2  bad arguments or malformed network document
    3  simulation diverged
    4  file could not be read or written
    5  steady state did not converge or the network is singular
    6  training diverged
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io as fio
from .checks import CHECKS, run_checks
from .dynamics import DivergenceError, assemble_rhs, simulate
from .neuralode import (
    ACTIVATIONS,
    TrainingConfig,
    TrainingDivergence,
    build_model,
    full_state,
    generate_data,
    rollout,
    train,
)
from .variational import ConvergenceError, SingularNetworkError, cocontent, solve_steady

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_DIVERGED, EXIT_IO, EXIT_STEADY, EXIT_TRAINING = range(7)
STEADY_RATE_TOL = 1e-6
KKT_TOL = 1e-9

log = logging.getLogger("flownet")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def emit(key: str, value) -> None:
    print(f"{key}={_fmt(value)}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _default_seed() -> int:
    raw = os.environ.get("FLOWNET_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise CliError(EXIT_PARSE, f"FLOWNET_SEED must be an integer, got {raw!r}")


def _load(path: str, strict: bool = True) -> fio.NetworkDocument:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}")
    try:
        return fio.parse_document(text, strict=strict)
    except fio.DocumentError as exc:
        raise CliError(EXIT_PARSE, f"{path}: {exc}")


def _plot(kind: str, path: str | None, *args, **kwargs) -> None:
    if not path:
        return
    from . import plotting

    getattr(plotting, kind)(*args, path=path, **kwargs)
    emit("plot", path)


# commands -----------------------------------------------------------------

def cmd_simulate(args) -> int:
    doc = _load(args.network)
    net, bc = doc.network(), doc.boundary()
    if len(args.z0) != net.n_dynamic:
        raise CliError(EXIT_PARSE, f"--z0 needs {net.n_dynamic} values, got {len(args.z0)}")
    try:
        tr = simulate(net, bc, args.z0, args.dt, args.t_end, args.method, doc.controllers)
    except DivergenceError as exc:
        raise CliError(EXIT_DIVERGED, str(exc))
    fio.write_trajectory_csv(tr, args.out)
    rate = assemble_rhs(net, bc, doc.controllers)(tr.final_Z)
    rate_inf = float(np.max(np.abs(rate), initial=0.0))
    emit("rows", len(tr.times))
    emit("t_final", tr.times[-1])
    for nid, w, z in zip(tr.node_ids, tr.final_w, tr.final_Z):
        emit(f"w_{nid}", w)
        emit(f"Z_{nid}", z)
    emit("cocontent", cocontent(net, bc, tr.final_w))
    emit("rate_inf", rate_inf)
    emit("steady", rate_inf < STEADY_RATE_TOL)
    _plot("plot_trajectory", args.plot, tr.times, tr.w, tr.node_ids)
    return EXIT_OK


def cmd_steady(args) -> int:
    doc = _load(args.network)
    net, bc = doc.network(), doc.boundary()
    try:
        sol = solve_steady(net, bc)
    except (SingularNetworkError, ConvergenceError) as exc:
        raise CliError(EXIT_STEADY, str(exc))
    report = {}
    for nid, w, z in zip(net.dynamic_ids, sol.w_star, sol.Z_star):
        report[f"w_{nid}"] = float(w)
        report[f"Z_{nid}"] = float(z)
    for bid, f in zip(net.branch_ids, sol.F_star):
        report[f"F_{bid}"] = float(f)
    report["G_star"] = sol.G_star
    report["kkt_residual"] = sol.kkt_residual
    report["iterations"] = sol.iterations
    for k, v in report.items():
        emit(k, v)
    if args.out:
        Path(args.out).write_text("".join(f"{k}={_fmt(v)}\n" for k, v in report.items()))
    return EXIT_OK if sol.kkt_residual < KKT_TOL else EXIT_FAIL


def cmd_gen_data(args) -> int:
    doc = _load(args.network)
    net, bc = doc.network(), doc.boundary()
    if len(args.w0) != net.n_dynamic:
        raise CliError(EXIT_PARSE, f"--w0 needs {net.n_dynamic} values, got {len(args.w0)}")
    if args.noise < 0:
        raise CliError(EXIT_PARSE, "--noise must be nonnegative")
    seed = _default_seed() if args.seed is None else args.seed
    try:
        ds = generate_data(net, bc, args.w0, args.dt, args.steps, args.noise, seed)
    except DivergenceError as exc:
        raise CliError(EXIT_DIVERGED, str(exc))
    fio.write_dataset_csv(ds, args.out)
    emit("rows", len(ds.times))
    emit("seed", seed)
    emit("noise_frac", args.noise)
    for nid, s in zip(ds.node_ids, ds.noise_std):
        emit(f"noise_std_{nid}", s)
    _plot("plot_trajectory", args.plot, ds.times, ds.w_clean, ds.node_ids, observed=ds.w_obs)
    return EXIT_OK


def cmd_train(args) -> int:
    doc = _load(args.network)
    net = doc.network()
    try:
        ds = fio.read_dataset_csv(args.data)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {args.data}: {exc.strerror or exc}")
    except (ValueError, KeyError, StopIteration) as exc:
        raise CliError(EXIT_PARSE, f"{args.data}: malformed dataset ({exc})")
    if ds.node_ids != net.dynamic_ids:
        raise CliError(EXIT_PARSE, f"dataset nodes {ds.node_ids} do not match network "
                                   f"dynamic nodes {net.dynamic_ids}")
    seed = _default_seed() if args.seed is None else args.seed
    try:
        config = TrainingConfig(iterations=args.iters, window_length=args.window,
                                batch_size=args.batch, learning_rate=args.lr, seed=seed,
                                gradient_method=args.grad)
        model = build_model(net, args.act_hidden, args.act_output, dt=ds.dt, init_seed=seed,
                            tied=not args.untied, train_capacity=args.train_capacity)
        report = train(model, ds, config)
    except TrainingDivergence as exc:
        raise CliError(EXIT_TRAINING, str(exc))
    except ValueError as exc:
        raise CliError(EXIT_PARSE, str(exc))

    provenance = {
        "dataset": str(args.data),
        "dataset_seed": ds.seed,
        "noise_frac": ds.noise_frac,
        "config": {k: v for k, v in vars(config).items()},
    }
    fio.save_checkpoint(report.model, args.out, provenance)
    summary = {
        "iterations": len(report.loss_history),
        "final_loss": report.final_loss,
        "eval_loss": report.eval_loss,
        "conductance": report.conductance,
        "inv_capacitance": report.inv_capacitance,
        "ratios": report.ratios,
        "wall_time": report.wall_time,
        "loss_history": report.loss_history,
    }
    report_path = args.report or str(Path(args.out).with_suffix(".report.json"))
    Path(report_path).write_text(json.dumps(summary, indent=2) + "\n")

    emit("checkpoint", args.out)
    emit("report", report_path)
    emit("iterations", summary["iterations"])
    emit("final_loss", report.final_loss)
    emit("eval_loss", report.eval_loss)
    truth = {b.id: b.law.K for b in net.branches
             if b.law is not None and b.law.form in ("linear", "relu")}
    for bid, k in report.conductance.items():
        emit(f"K_{bid}", k)
        if bid in truth and not args.train_capacity:
            emit(f"K_relerr_{bid}", abs(k / truth[bid] - 1.0))
    if args.train_capacity:
        for key, r in report.ratios.items():
            emit(f"ratio_{key}", r)
    emit("wall_time", report.wall_time)
    if args.plot:
        w0 = full_state(report.model, ds.w_obs[0], ds.boundary_potentials)[0]
        pred = rollout(report.model, w0, len(ds.times) - 1)[:, : net.n_dynamic]
        _plot("plot_trajectory", args.plot, ds.times, pred, ds.node_ids, observed=ds.w_obs)
    return EXIT_OK


def cmd_check(args) -> int:
    doc = _load(args.network, strict=False)
    names = [n.strip() for n in args.checks.split(",") if n.strip()]
    unknown = sorted(set(names) - set(CHECKS))
    if unknown:
        raise CliError(EXIT_PARSE, f"unknown checks {unknown}; choose from {','.join(CHECKS)}")
    results = run_checks(doc, names)
    for r in results:
        emit(f"check_{r.name}", "skip" if r.skipped else ("pass" if r.passed else "fail"))
        for k, v in r.detail.items():
            emit(f"{r.name}_{k}", v)
    ok = all(r.passed for r in results)
    emit("all_passed", ok)
    return EXIT_OK if ok else EXIT_FAIL


# parser -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_PARSE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flownet", description=__doc__.splitlines()[0],
                epilog="Exit codes: 0 ok, 1 check failed, 2 parse, 3 divergence, 4 I/O, "
                       "5 steady-state failure, 6 training divergence.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="integrate the network dynamics")
    s.add_argument("--network", required=True)
    s.add_argument("--z0", required=True, type=_floats, help="initial inventories, comma-separated")
    s.add_argument("--dt", required=True, type=float)
    s.add_argument("--t-end", required=True, type=float)
    s.add_argument("--method", default="euler", choices=["euler", "rk4", "adaptive"])
    s.add_argument("--out", required=True, help="trajectory CSV")
    s.add_argument("--plot", help="also write a figure (PNG/PDF/SVG by extension)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("steady", help="minimize the co-content")
    s.add_argument("--network", required=True)
    s.add_argument("--out", help="write the report to a file as well")
    s.set_defaults(func=cmd_steady)

    s = sub.add_parser("gen-data", help="simulate and add Gaussian measurement noise")
    s.add_argument("--network", required=True)
    s.add_argument("--w0", required=True, type=_floats, help="initial potentials, comma-separated")
    s.add_argument("--dt", required=True, type=float)
    s.add_argument("--steps", required=True, type=int)
    s.add_argument("--noise", required=True, type=float,
                   help="noise std as a fraction of each node's trajectory std")
    s.add_argument("--seed", type=int, help="defaults to $FLOWNET_SEED or 0")
    s.add_argument("--out", required=True)
    s.add_argument("--plot")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="fit the structured neural ODE to a dataset")
    s.add_argument("--network", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--iters", type=int, default=1000)
    s.add_argument("--lr", type=float, default=0.05)
    s.add_argument("--window", type=int, default=50)
    s.add_argument("--batch", type=int, default=16)
    s.add_argument("--seed", type=int, help="defaults to $FLOWNET_SEED or 0")
    s.add_argument("--grad", default="bptt", choices=["bptt", "adjoint"])
    s.add_argument("--act-hidden", default="relu", choices=ACTIVATIONS)
    s.add_argument("--act-output", default="relu", choices=ACTIVATIONS)
    s.add_argument("--untied", action="store_true", help="train every unmasked weight")
    s.add_argument("--train-capacity", action="store_true",
                   help="also train 1/C; only conductance/capacity ratios are identifiable")
    s.add_argument("--out", required=True, help="checkpoint JSON")
    s.add_argument("--report", help="report JSON (default: next to the checkpoint)")
    s.add_argument("--plot")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("check", help="run invariant checks")
    s.add_argument("--network", required=True)
    s.add_argument("--checks", default=",".join(CHECKS))
    s.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
