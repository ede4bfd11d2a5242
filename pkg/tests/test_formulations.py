import math

import numpy as np
import pytest

from flexdom.formulations import (
    OPTIMIZATION_CLASS, audit, build, build_acopf, build_distflow, build_lindistflow, build_socp,
    distflow_point_to_socp, extract_controls, interface_values,
)
from flexdom.ipm import solve, solve_dispatch
from flexdom.network import FormulationKind
from flexdom.nlp import check_derivatives, random_interior_point
from flexdom.oracle import bfs_power_flow, random_controls

from conftest import distflow_point, tinyfeeder_oracle, two_bus

K = FormulationKind


def max_violation(problem, x):
    res = problem.residual(x)
    eq = problem.eq_mask
    worst = max(np.abs(res[eq]).max(initial=0.0), np.maximum(res[~eq], 0.0).max(initial=0.0))
    bounds = np.maximum(np.maximum(problem.lower - x, x - problem.upper), 0.0).max()
    return float(max(worst, bounds))


def count(problem, prefix):
    return sum(v.name.startswith(prefix + "[") for v in problem.variables)


def test_acopf_structure(case33):
    prob = build_acopf(case33)
    assert count(prob, "p") == count(prob, "q") == 2 * 32
    assert count(prob, "d") == 33
    root = prob.variables[prob.index["d[1]"]]
    assert root.lower == root.upper == 0.0
    assert sum(v.lower == v.upper for v in prob.variables if v.name.startswith("d[")) == 1
    assert prob.constraints[prob.constraints.index(next(
        c for c in prob.constraints if c.name == "line_capacity"))].size == 32


@pytest.mark.parametrize("kind", list(K))
def test_audit_complete(case33, kind):
    prob = build(case33, kind)
    assert all(not missing for missing in audit(prob, kind).values())


def test_audit_reports_missing_block(case33):
    prob = build_distflow(case33)
    stripped = type(prob)(prob.variables, prob.objective,
                          [c for c in prob.constraints if c.name != "current_definition"],
                          prob.interface)
    assert audit(stripped, K.DISTFLOW)["power flow"] == ["current_definition"]


def test_optimization_classes(case33):
    assert OPTIMIZATION_CLASS == {K.AC_OPF: "NLP", K.DISTFLOW: "NLP", K.DISTFLOW_SOCP: "SOCP",
                                  K.LINDISTFLOW: "LP"}
    assert build_lindistflow(case33).is_linear
    assert not build_socp(case33).is_linear


@pytest.mark.parametrize("kind", [K.AC_OPF, K.LINDISTFLOW])
def test_zero_impedance_identity(kind):
    net = two_bus(r=0.0, x=0.0)
    prob = build(net, kind)
    res = solve(prob)
    assert res.optimal
    p, q = interface_values(prob, res.x)
    assert abs(p - 1.0) <= 1e-9 and abs(q - 0.5) <= 1e-9
    name = "v[2]" if kind == K.AC_OPF else "w[2]"
    assert abs(res.x[prob.index[name]] - 1.0) <= 1e-9


@pytest.mark.parametrize("kind", [K.DISTFLOW, K.DISTFLOW_SOCP])
def test_zero_impedance_rejected(kind):
    with pytest.raises(ValueError, match="zero impedance"):
        build(two_bus(r=0.0, x=0.0), kind)


@pytest.mark.parametrize("kind", [K.AC_OPF, K.DISTFLOW, K.DISTFLOW_SOCP])
def test_tinyfeeder_matches_fixed_point(tinyfeeder, kind):
    p_ref, q_ref, _ = tinyfeeder_oracle()
    prob = build(tinyfeeder, kind)
    res = solve(prob)
    assert res.optimal
    p, q = interface_values(prob, res.x)
    assert abs(p - p_ref) <= 1e-8 and abs(q - q_ref) <= 1e-8


def test_tinyfeeder_cone_tight_at_distflow_solution(tinyfeeder):
    df = build_distflow(tinyfeeder)
    so = build_socp(tinyfeeder)
    x = solve(df).x
    y = distflow_point_to_socp(df, so, x)
    p, q, l, w = (y[so.index[n]] for n in ("p[1-2]", "q[1-2]", "l[1-2]", "w[1]"))
    assert abs(p * p + q * q - l * w) <= 1e-12
    assert max_violation(so, y) <= 1e-9


def test_tinyfeeder_lindistflow_lossless(tinyfeeder):
    prob = build_lindistflow(tinyfeeder)
    x = solve(prob).x
    assert interface_values(prob, x) == pytest.approx((1.0, 0.5), abs=1e-12)


def test_lindistflow_capacitor_range():
    net = two_bus(cap=0.5)
    prob = build_lindistflow(net)
    _, iq = prob.interface
    lo = solve(prob.with_objective([(iq, 1.0)])).x[iq]
    hi = solve(prob.with_objective([(iq, -1.0)])).x[iq]
    # an interior point optimum sits about tol/10 inside an active bound
    assert lo == pytest.approx(0.0, abs=1e-8) and hi == pytest.approx(0.5, abs=1e-8)


def test_lindistflow_balance_identity_at_random_optima(case33_h14):
    prob = build_lindistflow(case33_h14)
    rng = np.random.default_rng(11)
    p_load, _ = case33_h14.total_load()
    for _ in range(10):
        c = rng.normal(size=prob.n)
        res = solve(prob.with_objective(list(enumerate(c))))
        assert res.optimal
        dg = sum(res.x[prob.index[f"pg[{k}]"]] for k in case33_h14.dg_indices())
        p_se, _ = interface_values(prob, res.x)
        assert abs(p_se - (p_load - dg)) <= 1e-12


def test_oracle_states_satisfy_distflow(case33_h14):
    prob = build_distflow(case33_h14)
    rng = np.random.default_rng(5)
    for _ in range(20):
        controls = random_controls(case33_h14, rng)
        pf = bfs_power_flow(case33_h14, controls)
        assert pf.converged
        x = distflow_point(prob, case33_h14, pf, controls)
        res = prob.residual(x)
        assert np.abs(res[prob.eq_mask]).max() <= 1e-9


def test_relaxation_contains_distflow_points(case33_h14):
    df = build_distflow(case33_h14)
    so = build_socp(case33_h14)
    rng = np.random.default_rng(6)
    for _ in range(20):
        controls = random_controls(case33_h14, rng)
        pf = bfs_power_flow(case33_h14, controls)
        x = distflow_point(df, case33_h14, pf, controls)
        if max_violation(df, x) > 1e-9:
            continue  # outside the technical limits, not a DistFlow-feasible point
        y = distflow_point_to_socp(df, so, x)
        assert max_violation(so, y) <= 1e-9


def test_exactness_acopf_vs_distflow_dispatch(case33_h14):
    ac = solve_dispatch(case33_h14, K.AC_OPF)
    df = solve_dispatch(case33_h14, K.DISTFLOW)
    assert ac.optimal and df.optimal
    pa = interface_values(build_acopf(case33_h14), ac.x)
    pd = interface_values(build_distflow(case33_h14), df.x)
    assert np.allclose(pa, pd, atol=1e-5, rtol=0)
    assert abs(ac.objective - df.objective) <= 1e-5 * max(1.0, abs(df.objective))


@pytest.mark.parametrize("kind", list(K))
def test_derivatives_few_points(case33_h14, kind):
    prob = build(case33_h14, kind)
    rng = np.random.default_rng(21)
    for _ in range(3):
        x = random_interior_point(prob, rng)
        assert all(c.passed for c in check_derivatives(prob, x, 1e-6, 1e-5))


def test_extract_controls_round_trip(case33):
    prob = build_distflow(case33)
    x = random_interior_point(prob, np.random.default_rng(2))
    ctl = extract_controls(prob, case33, x)
    assert set(ctl.dg) == set(case33.dg_indices()) and set(ctl.cap) == {10, 20, 30}
    assert ctl.within_limits(case33)
    k = case33.dg_indices()[0]
    assert ctl.dg[k] == (x[prob.index[f"pg[{k}]"]], x[prob.index[f"qg[{k}]"]])


def test_flat_start(case33):
    prob = build_distflow(case33)
    init = {v.name: v.init for v in prob.variables}
    assert all(init[f"v[{b.id}]"] == 1.0 for b in case33.buses)
    assert all(init[n] == 0.01 for n in init if n.startswith("l["))
    socp = build_socp(case33)
    assert all(v.init == 1.0 for v in socp.variables if v.name.startswith("w["))


def test_current_bound(case33):
    prob = build_distflow(case33)
    br = case33.branches[0]
    var = prob.variables[prob.index[f"l[{br.from_bus}-{br.to_bus}]"]]
    v_min = case33.buses[case33.bus_index[br.from_bus]].v_min
    assert var.lower == 0.0
    assert var.upper == (br.s_max / v_min) ** 2 or (math.isinf(br.s_max) and math.isinf(var.upper))
