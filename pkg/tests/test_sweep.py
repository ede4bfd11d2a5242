from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flexdom.ipm import IpmOptions
from flexdom.network import FormulationKind, Generator
from flexdom.oracle import ControlSetting, bfs_power_flow
from flexdom.sweep import (
    Side, SweepConfig, SweepError, band_centers, band_edges, is_partition, max_band_excursion,
    q_range, sweep_boundary, sweep_hours,
)

from conftest import two_bus

K = FormulationKind


@settings(max_examples=200, deadline=None)
@given(lo=st.floats(-5, 5), width=st.floats(1e-6, 10), k=st.integers(1, 500))
def test_band_edges_partition(lo, width, k):
    hi = lo + width
    edges = band_edges(lo, hi, k)
    assert len(edges) == k + 1
    assert is_partition(edges, lo, hi)
    assert np.all(np.diff(edges) > 0)
    centers = band_centers(edges)
    assert np.all((edges[:-1] < centers) & (centers < edges[1:]))


def test_band_edges_equal_width():
    edges = band_edges(-1.0, 1.0, 4)
    assert edges.tolist() == [-1.0, -0.5, 0.0, 0.5, 1.0]


@pytest.mark.parametrize("n", [0, 2, 3, 7, 201])
def test_config_rejects_bad_point_counts(n):
    with pytest.raises(ValueError):
        SweepConfig(K.LINDISTFLOW, n_points=n)


def test_config_defaults():
    cfg = SweepConfig(K.DISTFLOW)
    assert (cfg.n_points, cfg.n_bands, cfg.band_relax, cfg.warm_start_chain) == (200, 100, 1e-8, True)


def test_q_range_without_flexibility():
    net = two_bus()
    assert q_range(net, K.LINDISTFLOW) == pytest.approx((0.5, 0.5), abs=1e-9)


def test_q_range_capacitor():
    lo, hi = q_range(two_bus(cap=0.5), K.LINDISTFLOW)
    assert lo == pytest.approx(0.0, abs=1e-8) and hi == pytest.approx(0.5, abs=1e-8)
    assert hi - lo == pytest.approx(0.5, abs=2e-8)


def test_degenerate_range_gives_two_points():
    b = sweep_boundary(two_bus(), SweepConfig(K.LINDISTFLOW, n_points=4))
    assert len(b) == 2 and {pt.side for pt in b} == {Side.UPPER, Side.LOWER}
    assert all(pt.band_index == 1 and pt.optimal for pt in b)
    assert [(pt.p_se, pt.q_se) for pt in b] == pytest.approx([(1.0, 0.5), (1.0, 0.5)], abs=1e-9)


def dg_feeder():
    return two_bus(dgs=[Generator(2, 0.0, 2.0, 0.0, 0.0, 40.0)])


def test_dg_range_lossless():
    b = sweep_boundary(dg_feeder(), SweepConfig(K.LINDISTFLOW, n_points=4))
    upper, lower = b.side(Side.UPPER), b.side(Side.LOWER)
    assert upper[0].p_se == pytest.approx(1.0, abs=1e-8)
    assert lower[0].p_se == pytest.approx(-1.0, abs=1e-8)


def test_dg_range_with_losses_matches_power_flow():
    net = dg_feeder()
    b = sweep_boundary(net, SweepConfig(K.DISTFLOW, n_points=4))
    # l depends on |1 - p_dg| only, so q_se peaks at both DG extremes and the
    # top band holds the largest import (p_dg = 0) and export (p_dg = 2)
    top_upper, top_lower = b.side(Side.UPPER)[-1], b.side(Side.LOWER)[-1]
    for pt, p_dg in ((top_upper, 0.0), (top_lower, 2.0)):
        pf = bfs_power_flow(net, ControlSetting({1: (p_dg, 0.0)}))
        assert pt.p_se == pytest.approx(pf.p_se, abs=1e-7)
        assert pt.q_se == pytest.approx(pf.q_se, abs=1e-7)
    assert top_upper.p_se > 1.0 and top_lower.p_se > -1.0  # losses raise the import
    for pt in b:
        pf = bfs_power_flow(net, b.controls(pt, net))
        assert (pt.p_se, pt.q_se) == pytest.approx((pf.p_se, pf.q_se), abs=1e-7)


def test_q_max_escapes_the_dispatch_local_optimum():
    # q_se is convex in p_dg, so both DG limits are local maxima; the cheap
    # DG puts the dispatch at p_dg = 2, the lower of the two peaks
    net = dg_feeder()
    b = sweep_boundary(net, SweepConfig(K.DISTFLOW, n_points=4))
    peak = bfs_power_flow(net, ControlSetting({1: (0.0, 0.0)})).q_se
    assert b.q_max == pytest.approx(peak, abs=1e-7)
    assert b.q_max > bfs_power_flow(net, ControlSetting({1: (2.0, 0.0)})).q_se + 1e-3


@pytest.fixture(scope="module")
def lin20(case33_h14):
    return sweep_boundary(case33_h14, SweepConfig(K.LINDISTFLOW, n_points=20))


def test_small_sweep_shape(lin20):
    assert len(lin20) == 20
    assert [pt.side for pt in lin20] == [Side.UPPER] * 10 + [Side.LOWER] * 10
    assert [pt.band_index for pt in lin20] == list(range(1, 11)) * 2
    assert all(pt.optimal for pt in lin20)
    assert is_partition(lin20.edges, lin20.q_min, lin20.q_max)
    assert max_band_excursion(lin20) <= 1e-8


def test_small_sweep_controls(lin20, case33_h14):
    ctl = lin20.controls(lin20[0], case33_h14)
    assert ctl.within_limits(case33_h14)
    assert set(ctl.cap) == {10, 20, 30}


def side_values(boundary, side):
    pts = boundary.side(side)
    return np.array([pt.p_se for pt in pts])


def assert_concave(values, tol):
    # second differences of equally spaced samples
    assert np.all(np.diff(values, 2) <= tol)


@pytest.mark.parametrize("kind", [K.LINDISTFLOW, K.DISTFLOW_SOCP])
def test_convex_models_give_convex_region(case33_h14, kind):
    b = sweep_boundary(case33_h14, SweepConfig(kind, n_points=20))
    assert_concave(side_values(b, Side.UPPER), 1e-6)
    assert_concave(-side_values(b, Side.LOWER), 1e-6)


@pytest.mark.parametrize("kind", [K.LINDISTFLOW, K.DISTFLOW_SOCP])
def test_warm_chain_matches_cold(case33_h14, kind):
    warm = sweep_boundary(case33_h14, SweepConfig(kind, n_points=20))
    cold = sweep_boundary(case33_h14, SweepConfig(kind, n_points=20, warm_start_chain=False))
    for a, b in zip(warm, cold):
        assert (a.side, a.band_index) == (b.side, b.band_index)
        assert abs(a.p_se - b.p_se) <= 1e-6


def test_sweep_failure_raises(case33_h14):
    with pytest.raises(SweepError):
        sweep_boundary(case33_h14, SweepConfig(K.AC_OPF, n_points=4, solver=IpmOptions(max_iter=1)))


def test_invalid_network_rejected():
    with pytest.raises(ValueError, match="zero impedance"):
        sweep_boundary(two_bus(r=0.0, x=0.0), SweepConfig(K.DISTFLOW, n_points=4))


def test_sweep_hours_constant_profile(case33):
    net = replace(case33, load_profile=(0.9,) * 24)
    out = sweep_hours(net, SweepConfig(K.LINDISTFLOW, n_points=8), {3, 17})
    a, b = out[3], out[17]
    assert [(p.p_se, p.q_se) for p in a] == [(p.p_se, p.q_se) for p in b]


def test_sweep_hours_four_periods(case33):
    out = sweep_hours(case33, SweepConfig(K.LINDISTFLOW, n_points=8), range(12, 16))
    assert sorted(out) == [12, 13, 14, 15]
    assert all(len(b) == 8 for b in out.values())


def test_sweep_hours_range_checked(case33):
    with pytest.raises(ValueError):
        sweep_hours(case33, SweepConfig(K.LINDISTFLOW, n_points=4), {0, 14})
