"""Shared fixtures: small hand-checkable feeders and the 33-bus hour-14 sweeps."""

from __future__ import annotations

import pytest

from flexdom.caseio import load_case
from flexdom.network import Branch, Bus, BusKind, FormulationKind, Generator, Network, scale_loads
from flexdom.region import assemble_polygon
from flexdom.sweep import SweepConfig, sweep_boundary

HOUR = 14


def two_bus(r=0.01, x=0.02, p_load=1.0, q_load=0.5, cap=0.0, dgs=()) -> Network:
    """Substation bus 1 feeding a single load at bus 2."""
    buses = [Bus(1, BusKind.SUBSTATION), Bus(2, p_load=p_load, q_load=q_load, cap_q_max=cap)]
    gens = [Generator(1, -10.0, 10.0, -10.0, 10.0)] + list(dgs)
    return Network(buses, [Branch(1, 2, r, x)], gens)


def tinyfeeder_oracle() -> tuple[float, float, float]:
    """Scalar fixed point of l = p^2 + q^2 with p = 1 + 0.01 l, q = 0.5 + 0.02 l
    (substation at 1 pu), iterated to machine precision."""
    l = 0.0
    for _ in range(200):
        p = 1.0 + 0.01 * l
        q = 0.5 + 0.02 * l
        l = p * p + q * q
    return 1.0 + 0.01 * l, 0.5 + 0.02 * l, l


@pytest.fixture
def tinyfeeder() -> Network:
    return two_bus()


@pytest.fixture(scope="session")
def case33() -> Network:
    return load_case("case33bw")


@pytest.fixture(scope="session")
def case33_h14(case33) -> Network:
    return scale_loads(case33, HOUR)


@pytest.fixture(scope="session")
def boundaries(case33_h14):
    """Full 200-point sweeps of all four formulations (about 80 s on one core)."""
    return {kind: sweep_boundary(case33_h14, SweepConfig(kind)) for kind in FormulationKind}


@pytest.fixture(scope="session")
def polygons(boundaries):
    return {kind: assemble_polygon(b) for kind, b in boundaries.items()}


def make_problem(variables, objective, blocks, interface=(0, 0), constant=0.0):
    """NlpProblem from ``blocks = [(name, kind, [(label, terms, const), ...]), ...]``
    where ``terms`` are ``(coef, (i, j, ...))`` monomials."""
    from flexdom.nlp import NlpProblem, PolynomialBuilder

    built = []
    for name, kind, rows in blocks:
        b = PolynomialBuilder(name, kind)
        for label, terms, const in rows:
            b.add_row(label, terms, const)
        built.append(b.build())
    return NlpProblem(variables, objective, built, interface, objective_constant=constant)


def distflow_point(problem, network, pf, controls):
    """DistFlow variable vector holding a power flow solution."""
    import numpy as np

    ix = problem.index
    x = problem.init.copy()
    for bus, v in pf.v.items():
        x[ix[f"v[{bus}]"]] = v
    for (i, j), val in pf.p.items():
        x[ix[f"p[{i}-{j}]"]] = val
        x[ix[f"q[{i}-{j}]"]] = pf.q[i, j]
        x[ix[f"l[{i}-{j}]"]] = pf.l[i, j]
    sub = network.substation_generator()
    x[ix[f"pg[{sub}]"]] = pf.p_se
    x[ix[f"qg[{sub}]"]] = pf.q_se
    for k, (p, q) in controls.dg.items():
        x[ix[f"pg[{k}]"]], x[ix[f"qg[{k}]"]] = p, q
    for bus, q in controls.cap.items():
        x[ix[f"qc[{bus}]"]] = q
    return np.asarray(x)


# one line per acceptance criterion, printed after the test run
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}  {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
