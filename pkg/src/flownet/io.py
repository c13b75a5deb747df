"""Network documents, trajectory/dataset CSV files and model checkpoints.

A network document is JSON::

    {
      "format_version": "1.0",
      "nodes": [{"id": "P1", "kind": "dynamic", "capacitance": 2.0},
                {"id": "T2", "kind": "datum", "potential": 0.0}],
      "terminals": [{"id": "T1", "boundary": "potential", "value": 4.0}],
      "branches": [{"id": "F1", "from": "T1", "to": "P1", "kind": "resistive",
                    "law": {"form": "linear", "K": 1.0}}],
      "controllers": [{"node": "P1", "branch": "F2", "gain": 1.0,
                       "setpoint": 1.0, "bounds": [0.0, 4.0]}]
    }

Unknown keys are errors.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .constitutive import CapacitiveLaw, LawError, ResistiveLaw
from .control import ControlError, ControllerSpec, validate_controllers
from .dynamics import BoundaryConditions, Trajectory
from .topology import Branch, NetworkError, Node, ProcessNetwork, build_network

SUPPORTED_VERSIONS = ("1.0",)
GENERATOR_VERSION = "flownet-datagen/1"


class DocumentError(ValueError):
    """Malformed network document."""


@dataclass(frozen=True)
class Terminal:
    id: str
    boundary: str
    value: float


@dataclass(frozen=True)
class NetworkDocument:
    format_version: str
    nodes: tuple[Node, ...]
    datum_potential: float
    terminals: tuple[Terminal, ...]
    branches: tuple[Branch, ...]
    controllers: tuple[ControllerSpec, ...]

    def network(self) -> ProcessNetwork:
        term_nodes = [Node(t.id, "terminal") for t in self.terminals]
        return build_network(list(self.nodes) + term_nodes, self.branches)

    def boundary(self) -> BoundaryConditions:
        datum = next(n.id for n in self.nodes if n.kind == "datum")
        pots = {datum: self.datum_potential}
        flows = {}
        for t in self.terminals:
            (pots if t.boundary == "potential" else flows)[t.id] = t.value
        return BoundaryConditions(pots, flows)


def _keys(obj: dict, allowed: set[str], required: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise DocumentError(f"{where}: expected an object")
    extra = set(obj) - allowed
    if extra:
        raise DocumentError(f"{where}: unknown keys {sorted(extra)}")
    missing = required - set(obj)
    if missing:
        raise DocumentError(f"{where}: missing keys {sorted(missing)}")


def _num(v: Any, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise DocumentError(f"{where}: expected a number, got {v!r}")
    return float(v)


_RES_KEYS = {"linear": {"K"}, "relu": {"K"}, "tanh": {"K", "scale"}, "tabulated": {"points"}}
_CAP_KEYS = {"linear": {"C"}, "tabulated": {"points"}}


def _resistive(block: dict, where: str, strict: bool) -> ResistiveLaw:
    form = block.get("form") if isinstance(block, dict) else None
    if form not in _RES_KEYS:
        raise DocumentError(f"{where}: unknown resistive form {form!r}")
    keys = _RES_KEYS[form]
    _keys(block, keys | {"form"}, keys | {"form"}, where)
    if form == "tabulated":
        return ResistiveLaw("tabulated", points=tuple(map(tuple, block["points"])),
                            validate=strict)
    return ResistiveLaw(form, K=_num(block["K"], where),
                        scale=_num(block.get("scale", 1.0), where), validate=strict)


def _capacitive(block: dict, where: str) -> CapacitiveLaw:
    form = block.get("form") if isinstance(block, dict) else None
    if form not in _CAP_KEYS:
        raise DocumentError(f"{where}: unknown capacitive form {form!r}")
    keys = _CAP_KEYS[form]
    _keys(block, keys | {"form"}, keys | {"form"}, where)
    if form == "tabulated":
        return CapacitiveLaw("tabulated", points=tuple(map(tuple, block["points"])))
    return CapacitiveLaw("linear", C=_num(block["C"], where))


def parse_document(source: str | dict, strict: bool = True) -> NetworkDocument:
    """Parse and validate a network document.

    ``strict=False`` accepts laws with non-positive conductance so that
    diagnostics can report them.
    """
    try:
        data = json.loads(source) if isinstance(source, str) else source
    except json.JSONDecodeError as exc:
        raise DocumentError(f"invalid JSON: {exc}") from exc
    try:
        doc = _parse(data, strict)
        net = doc.network()
        doc.boundary().validate(net)
        if doc.controllers:
            validate_controllers(net, doc.controllers)
    except (LawError, NetworkError, ControlError) as exc:
        raise DocumentError(str(exc)) from exc
    except ValueError as exc:
        if isinstance(exc, DocumentError):
            raise
        raise DocumentError(str(exc)) from exc
    return doc


def _parse(data: dict, strict: bool) -> NetworkDocument:
    _keys(data, {"format_version", "nodes", "terminals", "branches", "controllers"},
          {"format_version", "nodes", "branches"}, "document")
    version = data["format_version"]
    if version not in SUPPORTED_VERSIONS:
        raise DocumentError(f"unsupported format_version {version!r}")

    nodes = []
    datum_potential = 0.0
    for k, nd in enumerate(data["nodes"]):
        where = f"nodes[{k}]"
        _keys(nd, {"id", "kind", "capacitance", "capacitive_law", "potential"},
              {"id", "kind"}, where)
        kind = nd["kind"]
        if kind == "dynamic":
            if ("capacitance" in nd) == ("capacitive_law" in nd):
                raise DocumentError(f"{where}: give exactly one of capacitance, capacitive_law")
            if "potential" in nd:
                raise DocumentError(f"{where}: only the datum takes a potential")
            cap = (CapacitiveLaw.linear(_num(nd["capacitance"], where)) if "capacitance" in nd
                   else _capacitive(nd["capacitive_law"], where + ".capacitive_law"))
            nodes.append(Node(str(nd["id"]), "dynamic", cap))
        elif kind == "datum":
            if "capacitance" in nd or "capacitive_law" in nd:
                raise DocumentError(f"{where}: the datum has no capacitive law")
            datum_potential = _num(nd.get("potential", 0.0), where)
            nodes.append(Node(str(nd["id"]), "datum"))
        else:
            raise DocumentError(f"{where}: node kind must be 'dynamic' or 'datum', got {kind!r}")

    terminals = []
    for k, t in enumerate(data.get("terminals", [])):
        where = f"terminals[{k}]"
        _keys(t, {"id", "boundary", "value"}, {"id", "boundary", "value"}, where)
        if t["boundary"] not in ("potential", "flow"):
            raise DocumentError(f"{where}: boundary must be 'potential' or 'flow'")
        terminals.append(Terminal(str(t["id"]), t["boundary"], _num(t["value"], where)))

    branches = []
    for k, b in enumerate(data["branches"]):
        where = f"branches[{k}]"
        _keys(b, {"id", "from", "to", "kind", "law"}, {"id", "from", "to", "kind"}, where)
        law = _resistive(b["law"], where + ".law", strict) if "law" in b else None
        branches.append(Branch(str(b["id"]), str(b["from"]), str(b["to"]), b["kind"], law))

    controllers = []
    for k, c in enumerate(data.get("controllers", [])):
        where = f"controllers[{k}]"
        _keys(c, {"node", "branch", "gain", "setpoint", "bounds"},
              {"node", "branch", "gain", "setpoint"}, where)
        bounds = None
        if c.get("bounds") is not None:
            if len(c["bounds"]) != 2:
                raise DocumentError(f"{where}: bounds must be [lower, upper]")
            bounds = (_num(c["bounds"][0], where), _num(c["bounds"][1], where))
        controllers.append(ControllerSpec(str(c["node"]), str(c["branch"]),
                                          _num(c["gain"], where), _num(c["setpoint"], where),
                                          bounds))
    return NetworkDocument(version, tuple(nodes), datum_potential, tuple(terminals),
                           tuple(branches), tuple(controllers))


def _law_block(law: ResistiveLaw) -> dict:
    if law.form == "tabulated":
        return {"form": "tabulated", "points": [list(p) for p in law.points]}
    block = {"form": law.form, "K": law.K}
    if law.form == "tanh":
        block["scale"] = law.scale
    return block


def document_to_dict(doc: NetworkDocument) -> dict:
    nodes = []
    for n in doc.nodes:
        if n.kind == "datum":
            nodes.append({"id": n.id, "kind": "datum", "potential": doc.datum_potential})
        elif n.capacitance.is_linear:
            nodes.append({"id": n.id, "kind": "dynamic", "capacitance": n.capacitance.C})
        else:
            nodes.append({"id": n.id, "kind": "dynamic", "capacitive_law": {
                "form": "tabulated", "points": [list(p) for p in n.capacitance.points]}})
    out = {
        "format_version": doc.format_version,
        "nodes": nodes,
        "terminals": [{"id": t.id, "boundary": t.boundary, "value": t.value}
                      for t in doc.terminals],
        "branches": [],
        "controllers": [],
    }
    for b in doc.branches:
        entry = {"id": b.id, "from": b.tail, "to": b.head, "kind": b.kind}
        if b.law is not None:
            entry["law"] = _law_block(b.law)
        out["branches"].append(entry)
    for c in doc.controllers:
        entry = {"node": c.node, "branch": c.branch, "gain": c.gain, "setpoint": c.setpoint}
        if c.bounds is not None:
            entry["bounds"] = list(c.bounds)
        out["controllers"].append(entry)
    return out


def serialize_document(doc: NetworkDocument) -> str:
    return json.dumps(document_to_dict(doc), indent=2) + "\n"


def load_document(path: str | Path, strict: bool = True) -> NetworkDocument:
    return parse_document(Path(path).read_text(), strict=strict)


# CSV ----------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def trajectory_header(traj: Trajectory) -> list[str]:
    return (["t"] + [f"w_{n}" for n in traj.node_ids] + [f"Z_{n}" for n in traj.node_ids]
            + [f"F_{b}" for b in traj.branch_ids])


def write_trajectory_csv(traj: Trajectory, path: str | Path,
                         comments: list[str] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for line in comments or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(trajectory_header(traj))
        for k, t in enumerate(traj.times):
            writer.writerow([_fmt(t)] + [_fmt(v) for v in traj.w[k]]
                            + [_fmt(v) for v in traj.Z[k]] + [_fmt(v) for v in traj.F[k]])


def read_csv_columns(path: str | Path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Read ``# key=value`` comment metadata and numeric columns."""
    meta: dict[str, str] = {}
    rows = []
    with open(path, newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
            else:
                lines.append(line)
    reader = csv.reader(lines)
    header = next(reader)
    rows = [[float(v) for v in r] for r in reader if r]
    arr = np.array(rows).reshape(len(rows), len(header))
    return meta, {h: arr[:, i] for i, h in enumerate(header)}


def write_dataset_csv(ds, path: str | Path) -> None:
    """Dataset file: trajectory columns with noisy ``w`` and a metadata header.

    ``Z`` and ``F`` columns hold the noiseless simulation.
    """
    traj = Trajectory(ds.times, ds.w_obs, ds.Z, ds.F, np.zeros((len(ds.times), 0)),
                      ds.node_ids, ds.branch_ids, [])
    comments = [
        f"generator={GENERATOR_VERSION}",
        f"seed={ds.seed}",
        f"noise_frac={_fmt(ds.noise_frac)}",
        "noise_model=gaussian, std = noise_frac * per-node std of noiseless w; w columns only",
        "noise_std=" + json.dumps({n: float(s) for n, s in zip(ds.node_ids, ds.noise_std)}),
        "boundary_potentials=" + json.dumps(ds.boundary_potentials),
    ]
    write_trajectory_csv(traj, path, comments)


def read_dataset_csv(path: str | Path):
    from .neuralode import Dataset

    meta, cols = read_csv_columns(path)
    w_names = [c for c in cols if c.startswith("w_")]
    node_ids = [c[2:] for c in w_names]
    branch_ids = [c[2:] for c in cols if c.startswith("F_")]
    w = np.column_stack([cols[c] for c in w_names]) if w_names else np.zeros((len(cols["t"]), 0))
    Z = np.column_stack([cols[f"Z_{n}"] for n in node_ids]) if node_ids else None
    F = np.column_stack([cols[f"F_{b}"] for b in branch_ids]) if branch_ids else None
    std = json.loads(meta.get("noise_std", "{}"))
    return Dataset(
        times=cols["t"], w_obs=w, node_ids=node_ids,
        boundary_potentials={k: float(v) for k, v in
                             json.loads(meta.get("boundary_potentials", "{}")).items()},
        noise_frac=float(meta.get("noise_frac", 0.0)),
        noise_std=np.array([std.get(n, 0.0) for n in node_ids]),
        seed=int(meta.get("seed", 0)), Z=Z, F=F, branch_ids=branch_ids)


# checkpoints --------------------------------------------------------------

def model_to_dict(model, provenance: dict | None = None) -> dict:
    return {
        "format": "flownet-checkpoint",
        "version": 1,
        "node_ids": list(model.node_ids),
        "branch_ids": list(model.branch_ids),
        "n_dynamic": model.n_dynamic,
        "incidence": model.incidence.tolist(),
        "mask_hidden": model.mask_hidden.tolist(),
        "mask_output": model.mask_output.tolist(),
        "hidden_weights": model.hidden_weights.tolist(),
        "output_weights": model.output_weights.tolist(),
        "act_hidden": model.act_hidden,
        "act_output": model.act_output,
        "dt": model.dt,
        "tied": model.tied,
        "train_capacity": model.train_capacity,
        "provenance": provenance or {},
    }


def save_checkpoint(model, path: str | Path, provenance: dict | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, provenance), indent=2) + "\n")


def load_checkpoint(path: str | Path):
    from .neuralode import SparseNeuralODE

    d = json.loads(Path(path).read_text())
    if d.get("format") != "flownet-checkpoint":
        raise DocumentError("not a flownet checkpoint")
    model = SparseNeuralODE(
        d["node_ids"], d["branch_ids"], d["n_dynamic"], np.array(d["incidence"], dtype=int),
        np.array(d["hidden_weights"]), np.array(d["output_weights"]), d["act_hidden"],
        d["act_output"], d["dt"], d["tied"], d["train_capacity"])
    if not (np.array_equal(model.mask_hidden, np.array(d["mask_hidden"]))
            and np.array_equal(model.mask_output, np.array(d["mask_output"]))):
        raise DocumentError("checkpoint masks do not match its incidence matrix")
    return model, d.get("provenance", {})
