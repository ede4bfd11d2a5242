import json
import math
from dataclasses import replace
from importlib import resources

import pytest
from hypothesis import given, settings, strategies as st

from flexdom.caseio import CaseFormatError, emit_matpower, emit_native, load_case, parse_matpower, parse_native
from flexdom.network import Branch, Bus, BusKind, Generator, Network

from conftest import two_bus

MINIMAL = """
mpc.baseMVA = 10;
mpc.bus = [
 1 3 0   0  0 0 1 1 0 12.66 1 1.05 0.95;
 2 1 100 20 0 0 1 1 0 12.66 1 1.05 0.95;
];
mpc.branch = [
 1 2 0.01 0.02 0 0 0 0 0 0 1 -360 360;
];
"""


def bundled_text(name):
    return (resources.files("flexdom") / "data" / name).read_text(encoding="utf-8")


def test_bundled_matpower_counts():
    net = parse_matpower(bundled_text("case33bw.m"))
    assert len(net.buses) == 33 and len(net.branches) == 32
    # standard feeder totals: 3715 kW and 2300 kvar on a 10 MVA base
    p, q = net.total_load()
    assert math.isclose(p, 0.3715, rel_tol=1e-12) and math.isclose(q, 0.23, rel_tol=1e-12)


def test_matpower_divides_by_base():
    net = parse_matpower(MINIMAL)
    assert net.buses[1].p_load == 10.0 and net.buses[1].q_load == 2.0
    assert net.substation.id == 1
    assert (net.buses[1].v_min, net.buses[1].v_max) == (0.95, 1.05)
    assert math.isinf(net.branches[0].s_max)


def test_matpower_scientific_notation_and_comments():
    text = (MINIMAL.replace("100 20", "1.0e2 2E1").replace("0.01 0.02", "1e-2 .02")
            .replace("0.95;\n];", "0.95; % load in MW\n];", 1))
    net = parse_matpower(text)
    assert net.buses[1].p_load == 10.0 and net.branches[0].x == 0.02


@pytest.mark.parametrize("edit, message", [
    (lambda t: t.replace("mpc.bus = [", "mpc.busdata = ["), "mpc.bus"),
    (lambda t: t.replace(" 1 3 0", " 1 1 0"), "type-3"),
    (lambda t: t.replace(" 2 1 100", " 1 1 100"), "duplicate bus id 1"),
    (lambda t: t.replace(" 1 2 0.01 0.02 0 0 0 0 0 0 1 -360 360;", " 1 2 0.01;"), "columns"),
])
@pytest.mark.filterwarnings("ignore:ignoring unsupported field")
def test_matpower_errors(edit, message):
    with pytest.raises(CaseFormatError, match=message):
        parse_matpower(edit(MINIMAL))


def test_matpower_unknown_field_warns():
    with pytest.warns(UserWarning, match="mpc.areas"):
        parse_matpower(MINIMAL + "mpc.areas = [1 1];\n")


def test_matpower_duplicate_reports_line():
    text = MINIMAL.replace(" 2 1 100", " 1 1 100")
    with pytest.raises(CaseFormatError, match=r"line \d+"):
        parse_matpower(text)


def test_matpower_rejects_quadratic_cost():
    text = MINIMAL + """
mpc.gen = [ 1 0 0 10 -10 1 10 1 10 -10; ];
mpc.gencost = [ 2 0 0 3 0.1 40 0; ];
"""
    with pytest.raises(CaseFormatError, match="nonlinear"):
        parse_matpower(text)


def test_matpower_linear_cost():
    text = MINIMAL + """
mpc.gen = [ 1 0 0 10 -10 1 10 1 10 -10; ];
mpc.gencost = [ 2 0 0 2 40 0; ];
"""
    net = parse_matpower(text)
    assert net.substation_cost == 40 and net.generators[0].p_max == 1.0


def test_matpower_round_trip(case33):
    back = parse_matpower(emit_matpower(case33))
    assert back.branches == case33.branches
    for a, b in zip(back.buses, case33.buses):
        assert math.isclose(a.p_load, b.p_load, rel_tol=1e-12)
        assert math.isclose(a.q_load, b.q_load, rel_tol=1e-12)


def test_native_capacitors_in_pu():
    net = load_case("case33bw")
    caps = {b.id: b.cap_q_max for b in net.buses if b.cap_q_max > 0}
    assert caps == {10: 0.1, 20: 0.1, 30: 0.1}


def minimal_doc():
    return {
        "schema_version": "1.0", "base_mva": 10.0,
        "buses": [{"id": 1, "type": "substation"}, {"id": 2, "pd_mw": 10.0, "qd_mvar": 5.0}],
        "branches": [{"from": 1, "to": 2, "r": 0.01, "x": 0.02}],
        "generators": [], "dgs": [], "capacitors": [],
    }


def test_native_defaults():
    net = parse_native(json.dumps(minimal_doc()))
    assert len(net.generators) == 1 and net.dg_indices() == []
    assert net.load_profile == (1.0,) * 24
    assert (net.buses[1].p_load, net.buses[1].q_load) == (1.0, 0.5)


@pytest.mark.parametrize("edit, path", [
    (lambda d: d.pop("buses"), "buses"),
    (lambda d: d["branches"][0].update(r="x"), "branches"),
    (lambda d: d.update(schema_version="9.9"), "schema_version"),
    (lambda d: d.update(profile=[1.0] * 3), "profile"),
])
def test_native_schema_errors_name_the_field(edit, path):
    doc = minimal_doc()
    edit(doc)
    with pytest.raises(CaseFormatError, match=path):
        parse_native(json.dumps(doc))


def test_native_unknown_bus_reference():
    doc = minimal_doc()
    doc["capacitors"] = [{"bus": 9, "q_max_mvar": 1.0}]
    with pytest.raises(CaseFormatError, match=r"capacitors\[0\].bus"):
        parse_native(json.dumps(doc))


def test_native_round_trip_bundled(case33):
    assert parse_native(emit_native(case33)) == case33


def test_native_round_trip_minimal():
    net = two_bus()
    text = emit_native(net)
    doc = json.loads(text)
    assert len(doc["buses"]) == 2 and len(doc["branches"]) == 1
    assert "profile" not in doc
    assert parse_native(text) == net
    doc["profile"] = [1.0] * 24
    assert parse_native(json.dumps(doc)) == net


finite = st.floats(min_value=0.0, max_value=5.0, allow_nan=False, allow_subnormal=False)


@settings(max_examples=60, deadline=None)
@given(p=finite, q=finite, r=st.floats(1e-4, 1.0), x=st.floats(1e-4, 1.0),
       base=st.sampled_from([1.0, 3.0, 10.0, 12.66, 100.0]), cap=finite,
       dg=st.tuples(finite, finite))
def test_native_round_trip_property(p, q, r, x, base, cap, dg):
    net = Network(
        [Bus(1, BusKind.SUBSTATION), Bus(2, p_load=p, q_load=q, cap_q_max=cap)],
        [Branch(1, 2, r, x, s_max=2.0)],
        [Generator(1, -10, 10, -10, 10, 50.0), Generator(2, 0.0, dg[0], -dg[1], dg[1], 40.0)],
        base_mva=base, substation_cost=50.0)
    assert parse_native(emit_native(net)) == net


def test_load_case_unknown():
    with pytest.raises(FileNotFoundError):
        load_case("no_such_case")


def test_load_case_from_path(tmp_path, case33):
    path = tmp_path / "c.json"
    path.write_text(emit_native(replace(case33, substation_cost=55.0)))
    assert load_case(path).substation_cost == 55.0
    m = tmp_path / "c.m"
    m.write_text(MINIMAL)
    assert len(load_case(m).buses) == 2
