import json

import numpy as np
import pytest

from conftest import NETWORKS, random_linear_network
from flownet.checks import CHECKS, check_conservation, check_lyapunov, run_checks
from flownet.io import parse_document


def doc_from(mutate, name="two_tank.json", strict=True):
    raw = json.loads((NETWORKS / name).read_text())
    mutate(raw)
    return parse_document(raw, strict=strict)


def by_name(results):
    return {r.name: r for r in results}


def test_two_tank_all_pass(two_tank_doc):
    res = by_name(run_checks(two_tank_doc))
    assert set(res) == set(CHECKS)
    assert all(r.passed for r in res.values())
    assert res["control"].skipped
    assert not res["kkt"].skipped and res["kkt"].detail["residual"] < 1e-9


def test_controlled_two_tank(controlled_doc):
    res = by_name(run_checks(controlled_doc))
    assert all(r.passed for r in res.values())
    assert not res["control"].skipped
    assert res["control"].detail["setpoint_error"] < 1e-6
    assert res["kkt"].skipped
    assert not res["lyapunov"].skipped


def test_negative_conductance_fails_passivity():
    doc = doc_from(lambda d: d["branches"][1]["law"].update(K=-2.0), strict=False)
    res = by_name(run_checks(doc, ["passivity"]))
    assert not res["passivity"].passed
    assert res["passivity"].detail["non_passive"] == "F2"


def test_tabulated_and_nonlinear_network_passes():
    def mutate(d):
        d["nodes"][0].pop("capacitance")
        d["nodes"][0]["capacitive_law"] = {"form": "tabulated",
                                           "points": [[-50, -100], [0, 0], [1, 2], [50, 150]]}
        d["branches"][0]["law"] = {"form": "tanh", "K": 1.0, "scale": 0.5}
    res = run_checks(doc_from(mutate))
    assert all(r.passed for r in res), [(r.name, r.detail) for r in res]


def test_saturated_controller_check():
    def mutate(d):
        d["controllers"][0]["bounds"] = [0.0, 4.0]
        d["controllers"][1]["bounds"] = [0.0, 9.5]
    res = by_name(run_checks(doc_from(mutate, "two_tank_controlled.json"), ["control"]))
    assert res["control"].passed and res["control"].detail["within_bounds"]


def test_crashing_check_is_a_failure():
    # a singular network cannot be solved, so the kkt check reports a failure
    def mutate(d):
        d["nodes"].insert(0, {"id": "Q", "kind": "dynamic", "capacitance": 1.0})
    res = by_name(run_checks(doc_from(mutate), ["kkt"]))
    assert not res["kkt"].passed and "error" in res["kkt"].detail


def test_unknown_check(two_tank_doc):
    with pytest.raises(ValueError):
        run_checks(two_tank_doc, ["nope"])


def _document(net, bc):
    nodes = [{"id": n.id, "kind": n.kind, **({"capacitance": n.capacitance.C}
                                              if n.kind == "dynamic" else {"potential": 0.0})}
             for n in net.nodes if n.kind != "terminal"]
    terms = [{"id": n.id, "boundary": "potential", "value": bc.potentials[n.id]}
             for n in net.nodes if n.kind == "terminal"]
    branches = [{"id": b.id, "from": b.tail, "to": b.head, "kind": "resistive",
                 "law": {"form": "linear", "K": b.law.K}} for b in net.branches]
    return parse_document({"format_version": "1.0", "nodes": nodes, "terminals": terms,
                           "branches": branches})


@pytest.mark.parametrize("seed", range(5))
def test_random_networks_pass(seed):
    doc = _document(*random_linear_network(np.random.default_rng(seed)))
    assert check_conservation(doc).passed
    assert check_lyapunov(doc).passed
