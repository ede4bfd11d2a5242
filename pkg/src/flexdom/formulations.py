"""Builders turning a :class:`~flexdom.network.Network` into NLPs.

Four models of the same grid:

============  ===================  =============
model         power flow           class
============  ===================  =============
AC-OPF        true representation  NLP
DistFlow      true representation  NLP
SOCP          relaxation           SOCP
LinDistFlow   approximation        LP
============  ===================  =============

Every constraint block and every bound-carrying variable is tagged with the
name of the relation it implements so :func:`audit` can check that each
model contains its full constraint set.

Variable names encode the network element: ``v[3]``, ``w[3]``, ``d[3]``
(voltage, squared voltage, angle at bus 3), ``p[2-3]``/``q[2-3]``/``l[2-3]``
(sending-end flow and squared current on branch 2-3), ``pg[k]``/``qg[k]``
(generator ``k``), ``qc[10]`` (capacitor at bus 10).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import FormulationKind, Network, Topology, orient_radial, validate
from .oracle import ControlSetting
from .nlp import EQ, INEQ, Constraint, NlpProblem, PolynomialBuilder, Variable

# relation tags
OBJECTIVE = "interface_cost"
NODAL_P = "nodal_p_balance"
NODAL_Q = "nodal_q_balance"
BRANCH_P = "branch_p_flow"
BRANCH_Q = "branch_q_flow"
GEN_P = "gen_p_limits"
GEN_Q = "gen_q_limits"
LINE = "line_capacity"
VOLT = "voltage_limits"
CAP = "capacitor_limits"
SUB_V = "substation_voltage"
SUB_X = "substation_exchange"
P_REC = "p_recursion"
Q_REC = "q_recursion"
DROP = "voltage_drop"
CURRENT = "current_definition"
NET_P = "net_p_withdrawal"
NET_Q = "net_q_withdrawal"
SQ_DROP = "squared_voltage_drop"
CONE = "conic_current"
SQ_VOLT = "squared_voltage_limits"
SUB_W = "substation_squared_voltage"
LIN_P = "lossless_p_recursion"
LIN_Q = "lossless_q_recursion"
LIN_DROP = "linear_voltage_drop"
DIRECTED = "directed_flow_limits"

REQUIRED_TAGS: dict[FormulationKind, dict[str, tuple[str, ...]]] = {
    FormulationKind.AC_OPF: {
        "objective": (OBJECTIVE,),
        "power flow": (NODAL_P, NODAL_Q, BRANCH_P, BRANCH_Q),
        "technical limits": (GEN_P, GEN_Q, LINE, VOLT, CAP),
        "substation": (SUB_V, SUB_X),
    },
    FormulationKind.DISTFLOW: {
        "objective": (OBJECTIVE,),
        "power flow": (P_REC, Q_REC, DROP, CURRENT, NET_P, NET_Q),
        "technical limits": (GEN_P, GEN_Q, LINE, VOLT, CAP),
        "substation": (SUB_V, SUB_X),
    },
    FormulationKind.DISTFLOW_SOCP: {
        "objective": (OBJECTIVE,),
        "power flow": (P_REC, Q_REC, SQ_DROP, CONE, SQ_VOLT, NET_P, NET_Q),
        "technical limits": (GEN_P, GEN_Q, LINE, CAP, SQ_VOLT),
        "substation": (SUB_X, SUB_W),
    },
    FormulationKind.LINDISTFLOW: {
        "objective": (OBJECTIVE,),
        "power flow": (LIN_P, LIN_Q, LIN_DROP, NET_P, NET_Q),
        "technical limits": (GEN_P, GEN_Q, CAP, SQ_VOLT, DIRECTED),
        "substation": (SUB_X, SUB_W),
    },
}

OPTIMIZATION_CLASS = {
    FormulationKind.AC_OPF: "NLP",
    FormulationKind.DISTFLOW: "NLP",
    FormulationKind.DISTFLOW_SOCP: "SOCP",
    FormulationKind.LINDISTFLOW: "LP",
}


@dataclass(frozen=True)
class BuildOptions:
    flat_current: float = 0.01


class AcBranchFlow(Constraint):
    """Polar-form sending-end flow definitions ``flow - f(v_i, v_j, d_i - d_j) = 0``.

    With ``y = 1/(r + jx) = Y exp(j*theta)`` and total shunt ``b``::

        p_ij = v_i^2 Y cos(theta) - v_i v_j Y cos(d_i - d_j - theta)
        q_ij = -v_i^2 (Y sin(theta) + b/2) - v_i v_j Y sin(d_i - d_j - theta)
    """

    def __init__(self, name: str, reactive: bool, labels, flow, vi, vj, di, dj,
                 admittance, angle, shunt):
        self.name = name
        self.kind = EQ
        self.labels = tuple(labels)
        self.reactive = reactive
        self.flow = np.asarray(flow, dtype=np.intp)
        self.vi = np.asarray(vi, dtype=np.intp)
        self.vj = np.asarray(vj, dtype=np.intp)
        self.di = np.asarray(di, dtype=np.intp)
        self.dj = np.asarray(dj, dtype=np.intp)
        self.Y = np.asarray(admittance, dtype=float)
        self.theta = np.asarray(angle, dtype=float)
        if reactive:
            self.quad = -(self.Y * np.sin(self.theta) + 0.5 * np.asarray(shunt, dtype=float))
        else:
            self.quad = self.Y * np.cos(self.theta)
        rows = np.arange(self.size)
        cols = [self.flow, self.vi, self.vj, self.di, self.dj]
        self.jac_rows = np.tile(rows, 5)
        self.jac_cols = np.concatenate(cols)
        vars4 = [self.vi, self.vj, self.di, self.dj]
        self.hess_rows = np.concatenate([a for a in vars4 for _ in vars4])
        self.hess_cols = np.concatenate([b for _ in vars4 for b in vars4])

    def _trig(self, x):
        ang = x[self.di] - x[self.dj] - self.theta
        return x[self.vi], x[self.vj], np.cos(ang), np.sin(ang)

    def residual(self, x):
        vi, vj, c, s = self._trig(x)
        mixed = s if self.reactive else c
        return x[self.flow] - (self.quad * vi * vi - self.Y * vi * vj * mixed)

    def jacobian(self, x):
        vi, vj, c, s = self._trig(x)
        Y = self.Y
        if self.reactive:
            # d/d(angle) of sin is cos
            d_vi = 2 * self.quad * vi - Y * vj * s
            d_vj = -Y * vi * s
            d_di = -Y * vi * vj * c
        else:
            d_vi = 2 * self.quad * vi - Y * vj * c
            d_vj = -Y * vi * c
            d_di = Y * vi * vj * s
        one = np.ones(self.size)
        return np.concatenate([one, -d_vi, -d_vj, -d_di, d_di])

    def hessian(self, x, weights):
        vi, vj, c, s = self._trig(x)
        Y = self.Y
        if self.reactive:
            # second derivatives of q (expression, not residual)
            h_vivi = 2 * self.quad
            h_vivj = -Y * s
            h_vidi = -Y * vj * c
            h_vjdi = -Y * vi * c
            h_didi = Y * vi * vj * s
        else:
            h_vivi = 2 * self.quad
            h_vivj = -Y * c
            h_vidi = Y * vj * s
            h_vjdi = Y * vi * s
            h_didi = Y * vi * vj * c
        zero = np.zeros(self.size)
        # order (vi, vj, di, dj); angle enters through di - dj
        block = [
            [h_vivi, h_vivj, h_vidi, -h_vidi],
            [h_vivj, zero, h_vjdi, -h_vjdi],
            [h_vidi, h_vjdi, h_didi, -h_didi],
            [-h_vidi, -h_vjdi, -h_didi, h_didi],
        ]
        w = -weights  # residual = flow - expression
        return np.concatenate([w * block[a][b] for a in range(4) for b in range(4)])


class _Layout:
    """Collects variables and hands out indices."""

    def __init__(self):
        self.variables: list[Variable] = []
        self.index: dict[str, int] = {}

    def add(self, name, lower=-math.inf, upper=math.inf, init=0.0, tag="") -> int:
        self.index[name] = len(self.variables)
        self.variables.append(Variable(name, lower, upper, init, tag))
        return self.index[name]


def _prepare(network: Network, kind: FormulationKind) -> tuple[Network, Topology]:
    problems = validate(network, kind)
    if problems:
        raise ValueError("invalid network: " + "; ".join(problems))
    network = orient_radial(network)
    return network, Topology.of(network)


def branch_label(network: Network, k: int) -> str:
    br = network.branches[k]
    return f"{br.from_bus}-{br.to_bus}"


def lossless_flows(network: Network, topo: Topology) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Branch flows with every DG and capacitor at mid-range and no losses."""
    net_p = np.array([b.p_load for b in network.buses])
    net_q = np.array([b.q_load - 0.5 * b.cap_q_max for b in network.buses])
    index = network.bus_index
    for k in network.dg_indices():
        g = network.generators[k]
        net_p[index[g.bus]] -= 0.5 * (g.p_min + g.p_max)
        net_q[index[g.bus]] -= 0.5 * (g.q_min + g.q_max)
    p = np.zeros(len(network.branches))
    q = np.zeros(len(network.branches))
    acc_p = net_p.copy()
    acc_q = net_q.copy()
    for bus in reversed(topo.order):
        k = topo.parent_branch[bus]
        if k >= 0:
            p[k] = acc_p[bus]
            q[k] = acc_q[bus]
            acc_p[topo.frm[k]] += acc_p[bus]
            acc_q[topo.frm[k]] += acc_q[bus]
    return p, q, float(acc_p[topo.root]), float(acc_q[topo.root])


def _add_injections(lay: _Layout, network: Network, sub_p: float, sub_q: float) -> None:
    sub = network.substation_generator()
    for k, g in enumerate(network.generators):
        if k == sub:
            pinit = min(max(sub_p, g.p_min), g.p_max)
            qinit = min(max(sub_q, g.q_min), g.q_max)
            lay.add(f"pg[{k}]", g.p_min, g.p_max, pinit, GEN_P + "+" + SUB_X)
            lay.add(f"qg[{k}]", g.q_min, g.q_max, qinit, GEN_Q + "+" + SUB_X)
        else:
            lay.add(f"pg[{k}]", g.p_min, g.p_max, 0.5 * (g.p_min + g.p_max), GEN_P)
            lay.add(f"qg[{k}]", g.q_min, g.q_max, 0.5 * (g.q_min + g.q_max), GEN_Q)
    for bus in network.buses:
        if bus.cap_q_max > 0.0:
            lay.add(f"qc[{bus.id}]", 0.0, bus.cap_q_max, 0.5 * bus.cap_q_max, CAP)


def _injection_terms(lay: _Layout, network: Network, bus_id: int, sign: float):
    """Linear terms for +sign * (generation + capacitor) at a bus, as (p_terms, q_terms)."""
    pt, qt = [], []
    for k, g in enumerate(network.generators):
        if g.bus == bus_id:
            pt.append((sign, [lay.index[f"pg[{k}]"]]))
            qt.append((sign, [lay.index[f"qg[{k}]"]]))
    name = f"qc[{bus_id}]"
    if name in lay.index:
        qt.append((sign, [lay.index[name]]))
    return pt, qt


def _dispatch_objective(lay: _Layout, network: Network) -> list[tuple[int, float]]:
    sub = network.substation_generator()
    obj = []
    for k, g in enumerate(network.generators):
        cost = network.substation_cost if k == sub else g.cost
        if cost:
            obj.append((lay.index[f"pg[{k}]"], cost))
    return obj


def _finish(lay: _Layout, network: Network, blocks, kind: FormulationKind) -> NlpProblem:
    sub = network.substation_generator()
    return NlpProblem(
        variables=tuple(lay.variables),
        objective=tuple(_dispatch_objective(lay, network)),
        constraints=tuple(b for b in blocks if b.size),
        interface=(lay.index[f"pg[{sub}]"], lay.index[f"qg[{sub}]"]),
        name=kind.value,
        index=dict(lay.index),
    )


def _line_limits(lay: _Layout, network: Network, pname: str, qname: str):
    lim = PolynomialBuilder(LINE, INEQ)
    for k, br in enumerate(network.branches):
        if math.isfinite(br.s_max):
            lab = branch_label(network, k)
            ip, iq = lay.index[f"{pname}[{lab}]"], lay.index[f"{qname}[{lab}]"]
            lim.add_row(f"{LINE}[{lab}]", [(1.0, [ip, ip]), (1.0, [iq, iq])], -br.s_max ** 2)
    return lim.build()


def build_acopf(network: Network, options: BuildOptions = BuildOptions()) -> NlpProblem:
    """Polar AC-OPF with directed flow variables for both branch orientations."""
    kind = FormulationKind.AC_OPF
    network, topo = _prepare(network, kind)
    lay = _Layout()
    p0, q0, sub_p, sub_q = lossless_flows(network, topo)
    root_id = network.substation.id
    for bus in network.buses:
        lay.add(f"v[{bus.id}]", bus.v_min, bus.v_max, 1.0, VOLT)
    for bus in network.buses:
        if bus.id == root_id:
            lay.add(f"d[{bus.id}]", 0.0, 0.0, 0.0)
        else:
            lay.add(f"d[{bus.id}]")
    for k, br in enumerate(network.branches):
        lab = branch_label(network, k)
        rev = f"{br.to_bus}-{br.from_bus}"
        lay.add(f"p[{lab}]", init=p0[k])
        lay.add(f"q[{lab}]", init=q0[k])
        lay.add(f"p[{rev}]", init=-p0[k])
        lay.add(f"q[{rev}]", init=-q0[k])
    _add_injections(lay, network, sub_p, sub_q)
    ix = lay.index

    flows = {"p": [], "q": []}
    coupling = PolynomialBuilder(BRANCH_P + "+" + BRANCH_Q)
    for k, br in enumerate(network.branches):
        lab = branch_label(network, k)
        i, j = br.from_bus, br.to_bus
        if br.zero_impedance:
            # both ends share voltage; flows pass through, shunt draws b/2 v^2 per end
            rev = f"{j}-{i}"
            coupling.add_row(f"v[{lab}]", [(1.0, [ix[f"v[{i}]"]]), (-1.0, [ix[f"v[{j}]"]])])
            coupling.add_row(f"d[{lab}]", [(1.0, [ix[f"d[{i}]"]]), (-1.0, [ix[f"d[{j}]"]])])
            coupling.add_row(f"p[{lab}]", [(1.0, [ix[f"p[{lab}]"]]), (1.0, [ix[f"p[{rev}]"]])])
            vi, vj = ix[f"v[{i}]"], ix[f"v[{j}]"]
            coupling.add_row(f"q[{lab}]", [
                (1.0, [ix[f"q[{lab}]"]]), (1.0, [ix[f"q[{rev}]"]]),
                (0.5 * br.b_shunt, [vi, vi]), (0.5 * br.b_shunt, [vj, vj]),
            ])
            continue
        Y, theta = br.series_admittance()
        for a, b in ((i, j), (j, i)):
            for which in ("p", "q"):
                flows[which].append((f"{which}[{a}-{b}]", ix[f"{which}[{a}-{b}]"],
                                     ix[f"v[{a}]"], ix[f"v[{b}]"], ix[f"d[{a}]"], ix[f"d[{b}]"],
                                     Y, theta, br.b_shunt))
    blocks: list[Constraint] = []
    for which, tag in (("p", BRANCH_P), ("q", BRANCH_Q)):
        rows = flows[which]
        if rows:
            cols = list(zip(*rows))
            blocks.append(AcBranchFlow(tag, which == "q", *cols))
    blocks.append(coupling.build())

    bal_p = PolynomialBuilder(NODAL_P)
    bal_q = PolynomialBuilder(NODAL_Q)
    for bus in network.buses:
        gp, gq = _injection_terms(lay, network, bus.id, 1.0)
        out_p = [(-1.0, [ix[f"p[{bus.id}-{other}]"]]) for other in _neighbours(network, bus.id)]
        out_q = [(-1.0, [ix[f"q[{bus.id}-{other}]"]]) for other in _neighbours(network, bus.id)]
        bal_p.add_row(f"{NODAL_P}[{bus.id}]", gp + out_p, -bus.p_load)
        bal_q.add_row(f"{NODAL_Q}[{bus.id}]", gq + out_q, -bus.q_load)
    blocks += [bal_p.build(), bal_q.build(), _line_limits(lay, network, "p", "q")]

    slack = PolynomialBuilder(SUB_V)
    slack.add_row(SUB_V, [(1.0, [ix[f"v[{root_id}]"]])], -1.0)
    blocks.append(slack.build())
    return _finish(lay, network, blocks, kind)


def _neighbours(network: Network, bus_id: int) -> list[int]:
    out = []
    for br in network.branches:
        if br.from_bus == bus_id:
            out.append(br.to_bus)
        elif br.to_bus == bus_id:
            out.append(br.from_bus)
    return out


def _branch_flow_family(network: Network, kind: FormulationKind,
                        options: BuildOptions) -> NlpProblem:
    network, topo = _prepare(network, kind)
    lay = _Layout()
    p0, q0, sub_p, sub_q = lossless_flows(network, topo)
    root_id = network.substation.id
    squared = kind != FormulationKind.DISTFLOW
    lossless = kind == FormulationKind.LINDISTFLOW
    vname = "w" if squared else "v"
    for bus in network.buses:
        if squared:
            lay.add(f"w[{bus.id}]", bus.v_min ** 2, bus.v_max ** 2, 1.0, SQ_VOLT)
        else:
            lay.add(f"v[{bus.id}]", bus.v_min, bus.v_max, 1.0, VOLT)
    buses = {bus.id: bus for bus in network.buses}
    for k, br in enumerate(network.branches):
        lab = branch_label(network, k)
        if lossless:
            lay.add(f"p[{lab}]", upper=br.p_max, init=min(p0[k], br.p_max - 1e-3), tag=DIRECTED)
            lay.add(f"q[{lab}]", upper=br.q_max, init=min(q0[k], br.q_max - 1e-3), tag=DIRECTED)
        else:
            lay.add(f"p[{lab}]", init=p0[k])
            lay.add(f"q[{lab}]", init=q0[k])
            l_max = (br.s_max / buses[br.from_bus].v_min) ** 2
            lay.add(f"l[{lab}]", 0.0, l_max, min(options.flat_current, 0.5 * l_max))
    _add_injections(lay, network, sub_p, sub_q)
    ix = lay.index

    if lossless:
        rec_p = PolynomialBuilder(f"{LIN_P}+{NET_P}")
        rec_q = PolynomialBuilder(f"{LIN_Q}+{NET_Q}")
    else:
        rec_p = PolynomialBuilder(f"{P_REC}+{NET_P}")
        rec_q = PolynomialBuilder(f"{Q_REC}+{NET_Q}")
    drop = PolynomialBuilder({FormulationKind.DISTFLOW: DROP,
                              FormulationKind.DISTFLOW_SOCP: SQ_DROP,
                              FormulationKind.LINDISTFLOW: LIN_DROP}[kind])
    current = PolynomialBuilder(CONE if squared else CURRENT, INEQ if squared else EQ)

    for k, br in enumerate(network.branches):
        lab = branch_label(network, k)
        i, j = br.from_bus, br.to_bus
        ip, iq = ix[f"p[{lab}]"], ix[f"q[{lab}]"]
        child = topo.children[network.bus_index[j]]
        gp, gq = _injection_terms(lay, network, j, 1.0)
        terms_p = [(1.0, [ip])] + [(-1.0, [ix[f"p[{branch_label(network, c)}]"]]) for c in child] + gp
        terms_q = [(1.0, [iq])] + [(-1.0, [ix[f"q[{branch_label(network, c)}]"]]) for c in child] + gq
        vi, vj = ix[f"{vname}[{i}]"], ix[f"{vname}[{j}]"]
        z2 = br.r ** 2 + br.x ** 2
        if lossless:
            rec_p.add_row(lab, terms_p, -buses[j].p_load)
            rec_q.add_row(lab, terms_q, -buses[j].q_load)
            drop.add_row(lab, [(1.0, [vi]), (-1.0, [vj]), (-2 * br.r, [ip]), (-2 * br.x, [iq])])
            continue
        il = ix[f"l[{lab}]"]
        rec_p.add_row(lab, terms_p + [(-br.r, [il])], -buses[j].p_load)
        rec_q.add_row(lab, terms_q + [(-br.x, [il])], -buses[j].q_load)
        if squared:
            drop.add_row(lab, [(1.0, [vj]), (-1.0, [vi]), (-z2, [il]),
                               (2 * br.r, [ip]), (2 * br.x, [iq])])
            # p^2 + q^2 + ((l - w)/2)^2 - ((l + w)/2)^2; like terms merge to p^2 + q^2 - l w
            current.add_row(lab, [(1.0, [ip, ip]), (1.0, [iq, iq]),
                                  (0.25, [il, il]), (-0.5, [il, vi]), (0.25, [vi, vi]),
                                  (-0.25, [il, il]), (-0.5, [il, vi]), (-0.25, [vi, vi])])
        else:
            drop.add_row(lab, [(1.0, [vj, vj]), (-1.0, [vi, vi]), (-z2, [il]),
                               (2 * br.r, [ip]), (2 * br.x, [iq])])
            current.add_row(lab, [(1.0, [ip, ip]), (1.0, [iq, iq]), (-1.0, [il, vi, vi])])

    root = PolynomialBuilder(f"{NODAL_P}+{SUB_X}")
    gp, gq = _injection_terms(lay, network, root_id, 1.0)
    root_children = topo.children[topo.root]
    root_bus = buses[root_id]
    root.add_row(f"{NODAL_P}[{root_id}]",
                 gp + [(-1.0, [ix[f"p[{branch_label(network, c)}]"]]) for c in root_children],
                 -root_bus.p_load)
    root.add_row(f"{NODAL_Q}[{root_id}]",
                 gq + [(-1.0, [ix[f"q[{branch_label(network, c)}]"]]) for c in root_children],
                 -root_bus.q_load)

    slack = PolynomialBuilder(SUB_W if squared else SUB_V)
    slack.add_row(slack.name, [(1.0, [ix[f"{vname}[{root_id}]"]])], -1.0)

    blocks = [rec_p.build(), rec_q.build(), drop.build(), root.build(), slack.build()]
    if not lossless:
        blocks.insert(3, current.build())
        blocks.append(_line_limits(lay, network, "p", "q"))
    return _finish(lay, network, blocks, kind)


def build_distflow(network: Network, options: BuildOptions = BuildOptions()) -> NlpProblem:
    """Exact branch-flow model with voltage magnitudes and squared currents."""
    return _branch_flow_family(network, FormulationKind.DISTFLOW, options)


def build_socp(network: Network, options: BuildOptions = BuildOptions()) -> NlpProblem:
    """Second-order-cone relaxation of DistFlow in squared voltages."""
    return _branch_flow_family(network, FormulationKind.DISTFLOW_SOCP, options)


def build_lindistflow(network: Network, options: BuildOptions = BuildOptions()) -> NlpProblem:
    """Lossless linearization of DistFlow."""
    return _branch_flow_family(network, FormulationKind.LINDISTFLOW, options)


BUILDERS = {
    FormulationKind.AC_OPF: build_acopf,
    FormulationKind.DISTFLOW: build_distflow,
    FormulationKind.DISTFLOW_SOCP: build_socp,
    FormulationKind.LINDISTFLOW: build_lindistflow,
}


def build(network: Network, kind: FormulationKind, options: BuildOptions = BuildOptions()) -> NlpProblem:
    return BUILDERS[kind](network, options)


def audit(problem: NlpProblem, kind: FormulationKind) -> dict[str, list[str]]:
    """Relations of each constraint group that ``problem`` lacks (empty lists = complete)."""
    present = problem.equation_tags()
    if problem.objective:
        present.add(OBJECTIVE)
    return {
        group: [tag for tag in tags if tag not in present]
        for group, tags in REQUIRED_TAGS[kind].items()
    }


def extract_controls(problem: NlpProblem, network: Network, x: np.ndarray) -> ControlSetting:
    """DG and capacitor set-points of a solution, for replay in a power flow."""
    ix = problem.index
    dg = {k: (float(x[ix[f"pg[{k}]"]]), float(x[ix[f"qg[{k}]"]])) for k in network.dg_indices()}
    cap = {b: float(x[ix[f"qc[{b}]"]]) for b in network.capacitor_buses()}
    return ControlSetting(dg, cap)


def interface_values(problem: NlpProblem, x: np.ndarray) -> tuple[float, float]:
    ip, iq = problem.interface
    return float(x[ip]), float(x[iq])


def distflow_point_to_socp(distflow: NlpProblem, socp: NlpProblem, x: np.ndarray) -> np.ndarray:
    """Map a DistFlow point into SOCP variables through ``w = v**2``."""
    y = np.zeros(socp.n)
    for name, k in socp.index.items():
        if name.startswith("w["):
            y[k] = x[distflow.index["v" + name[1:]]] ** 2
        else:
            y[k] = x[distflow.index[name]]
    return y
