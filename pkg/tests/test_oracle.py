from dataclasses import replace

import numpy as np
import pytest

from flexdom.network import Generator
from flexdom.oracle import (
    ControlSetting, bfs_power_flow, is_technically_feasible, mc_sample, random_controls,
)

from conftest import tinyfeeder_oracle, two_bus


def scaled(network, factor):
    return replace(network, buses=tuple(
        replace(b, p_load=b.p_load * factor, q_load=b.q_load * factor) for b in network.buses))


def test_tinyfeeder_matches_fixed_point(tinyfeeder):
    p, q, l = tinyfeeder_oracle()
    pf = bfs_power_flow(tinyfeeder)
    assert pf.converged
    assert pf.p_se == pytest.approx(p, abs=1e-10)
    assert pf.q_se == pytest.approx(q, abs=1e-10)
    assert pf.l[1, 2] == pytest.approx(l, abs=1e-10)
    # v2^2 = v1^2 - 2 (r p + x q) + (r^2 + x^2) l
    v2 = 1.0 - 2 * (0.01 * p + 0.02 * q) + (0.01 ** 2 + 0.02 ** 2) * l
    assert pf.v[2] ** 2 == pytest.approx(v2, abs=1e-10)


def test_zero_impedance_is_lossless():
    pf = bfs_power_flow(two_bus(r=0.0, x=0.0))
    assert pf.converged
    assert (pf.p_se, pf.q_se) == (1.0, 0.5)
    assert pf.v[2] == 1.0 and pf.l[1, 2] == 1.25


def test_base_case_matches_published_values(case33):
    # the standard 33-bus base case: 202.68 kW and 135.14 kvar of losses,
    # lowest voltage 0.9131 pu at bus 18
    pf = bfs_power_flow(case33)
    assert pf.converged
    assert (pf.p_se - 0.3715) * 1e4 == pytest.approx(202.68, abs=0.01)
    assert (pf.q_se - 0.23) * 1e4 == pytest.approx(135.14, abs=0.01)
    assert min(pf.v, key=pf.v.get) == 18
    assert pf.v[18] == pytest.approx(0.9131, abs=1e-4)


def test_voltage_decreases_along_every_path(case33):
    pf = bfs_power_flow(case33)
    for br in case33.branches:
        assert pf.v[br.to_bus] < pf.v[br.from_bus]


def test_energy_identity(case33):
    ctl = random_controls(case33, np.random.default_rng(5))
    pf = bfs_power_flow(case33, ctl)
    p_load, q_load = case33.total_load()
    losses_p = sum(br.r * pf.l[br.from_bus, br.to_bus] for br in case33.branches)
    losses_q = sum(br.x * pf.l[br.from_bus, br.to_bus] for br in case33.branches)
    p_dg = sum(p for p, _ in ctl.dg.values())
    q_inj = sum(q for _, q in ctl.dg.values()) + sum(ctl.cap.values())
    assert pf.p_se == pytest.approx(p_load - p_dg + losses_p, abs=1e-10)
    assert pf.q_se == pytest.approx(q_load - q_inj + losses_q, abs=1e-10)


def test_branch_keys_follow_the_tree(case33):
    pf = bfs_power_flow(case33)
    assert set(pf.p) == {(br.from_bus, br.to_bus) for br in case33.branches}
    assert set(pf.v) == {b.id for b in case33.buses}


def test_flows_cancel_when_voltage_terms_do():
    # export of 1 pu with q = 0.5 makes r p + x q vanish on the first pass;
    # the losses must still be picked up
    net = two_bus(dgs=[Generator(2, 0.0, 2.0, 0.0, 0.0)])
    pf = bfs_power_flow(net, ControlSetting({1: (2.0, 0.0)}))
    l = pf.l[1, 2]
    assert l > 1.2
    assert l == pytest.approx(pf.p[1, 2] ** 2 + pf.q[1, 2] ** 2, rel=1e-10)
    assert pf.p_se == pytest.approx(-1.0 + 0.01 * l, abs=1e-12)


def test_heavy_load_violates_voltage(case33):
    ok, violations = is_technically_feasible(bfs_power_flow(scaled(case33, 2)), case33)
    assert not ok
    assert any(v.startswith("bus 6:") for v in violations)


def test_collapse_is_not_converged(case33):
    pf = bfs_power_flow(scaled(case33, 20))
    assert not pf.converged
    ok, violations = is_technically_feasible(pf, case33)
    assert not ok and violations[0] == "power flow did not converge"


def test_zero_load_is_feasible(case33):
    pf = bfs_power_flow(scaled(case33, 0.0))
    assert pf.p_se == 0.0 and pf.q_se == 0.0
    assert is_technically_feasible(pf, case33)[0]


def test_branch_limit_violation():
    net = two_bus()
    net = replace(net, branches=(replace(net.branches[0], s_max=1.0),))
    ok, violations = is_technically_feasible(bfs_power_flow(net), net)
    assert not ok and "branch 1-2" in violations[0]


def test_controls_within_limits(case33):
    ctl = random_controls(case33, np.random.default_rng(0))
    assert ctl.within_limits(case33)
    k = next(iter(ctl.dg))
    too_big = ControlSetting({k: (case33.generators[k].p_max + 1.0, 0.0)})
    assert not too_big.within_limits(case33)
    assert not ControlSetting(cap={10: 1.0}).within_limits(case33)


def test_monte_carlo_is_deterministic(case33_h14):
    a = mc_sample(case33_h14, 50, seed=3)
    b = mc_sample(case33_h14, 50, seed=3)
    assert np.array_equal(a.points(), b.points())
    assert a.n_drawn == 50 and 0 < len(a) <= 50
    assert not np.array_equal(a.points(), mc_sample(case33_h14, 50, seed=4).points())


def test_monte_carlo_prefix_is_stable(case33_h14):
    # per-sample child seeds: the first draws do not depend on n
    short = mc_sample(case33_h14, 10, seed=1).points()
    long = mc_sample(case33_h14, 40, seed=1).points()
    assert np.array_equal(long[:len(short)], short) or len(short) == 0


def test_monte_carlo_without_resources():
    run = mc_sample(two_bus(), 20)
    assert len(np.unique(run.points(), axis=0)) == 1
    assert run.acceptance_rate == 1.0


def test_monte_carlo_rejects_bad_n(tinyfeeder):
    with pytest.raises(ValueError):
        mc_sample(tinyfeeder, 0)
