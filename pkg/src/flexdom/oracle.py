"""Independent checks: radial power flow by backward-forward sweep and a
Monte Carlo sampler of feasible operating points.

Nothing here touches the optimization models. The sweep walks the feeder
tree directly with plain Python arithmetic, so agreement with the solver is
evidence rather than a restatement of the same code.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .network import Network

TOLERANCE = 1e-12
MAX_ITERATIONS = 100


@dataclass(frozen=True)
class ControlSetting:
    """Set-points of the flexible resources, all pu.

    ``dg`` maps a generator index to its ``(p, q)``; ``cap`` maps a bus id to
    its capacitor output.
    """

    dg: dict[int, tuple[float, float]] = field(default_factory=dict)
    cap: dict[int, float] = field(default_factory=dict)

    def within_limits(self, network: Network, tol: float = 1e-9) -> bool:
        for k, (p, q) in self.dg.items():
            g = network.generators[k]
            if not (g.p_min - tol <= p <= g.p_max + tol and g.q_min - tol <= q <= g.q_max + tol):
                return False
        caps = {bus.id: bus.cap_q_max for bus in network.buses}
        return all(-tol <= q <= caps.get(b, 0.0) + tol for b, q in self.cap.items())


@dataclass
class PfSolution:
    """Power flow state; branch quantities are keyed by ``(from_bus, to_bus)``
    in the parent-to-child direction."""

    v: dict[int, float]
    p: dict[tuple[int, int], float]
    q: dict[tuple[int, int], float]
    l: dict[tuple[int, int], float]
    p_se: float
    q_se: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class _Tree:
    root: int
    order: tuple[int, ...]  # breadth first from the root
    parent: dict[int, tuple[int, tuple[float, float]]]  # child -> (parent, (r, x))

    @classmethod
    def of(cls, network: Network) -> "_Tree":
        adjacency: dict[int, list[tuple[int, float, float]]] = {b.id: [] for b in network.buses}
        for br in network.branches:
            adjacency[br.from_bus].append((br.to_bus, br.r, br.x))
            adjacency[br.to_bus].append((br.from_bus, br.r, br.x))
        root = network.substation.id
        parent: dict[int, tuple[int, tuple[float, float]]] = {}
        order = [root]
        seen = {root}
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for v, r, x in adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    parent[v] = (u, (r, x))
                    order.append(v)
                    queue.append(v)
        if len(order) != len(network.buses):
            raise ValueError("network is not connected")
        return cls(root, tuple(order), parent)


def _net_withdrawal(network: Network, controls: ControlSetting) -> tuple[dict, dict]:
    p = {b.id: b.p_load for b in network.buses}
    q = {b.id: b.q_load for b in network.buses}
    for k, (pg, qg) in controls.dg.items():
        bus = network.generators[k].bus
        p[bus] -= pg
        q[bus] -= qg
    for bus, qc in controls.cap.items():
        q[bus] -= qc
    return p, q


def bfs_power_flow(network: Network, controls: ControlSetting | None = None,
                   tol: float = TOLERANCE, max_iter: int = MAX_ITERATIONS) -> PfSolution:
    """Constant-power radial load flow with the substation held at 1 pu.

    Each pass accumulates branch flows leaf to root including the ``r l`` and
    ``x l`` losses of the previous pass, then walks root to leaf updating
    squared voltages; it stops once no voltage and no squared current moves by
    more than ``tol``. The returned ``l`` is the one the flows were built from.
    Branch shunts are ignored.
    """
    controls = controls or ControlSetting()
    tree = _Tree.of(network)
    net_p, net_q = _net_withdrawal(network, controls)
    v2 = {b: 1.0 for b in tree.order}
    l = {(par, child): 0.0 for child, (par, _) in tree.parent.items()}
    p: dict[tuple[int, int], float] = {}
    q: dict[tuple[int, int], float] = {}
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        acc_p = dict(net_p)
        acc_q = dict(net_q)
        for child in reversed(tree.order[1:]):
            par, (r, x) = tree.parent[child]
            key = (par, child)
            p[key] = acc_p[child] + r * l[key]
            q[key] = acc_q[child] + x * l[key]
            acc_p[par] += p[key]
            acc_q[par] += q[key]
        p_se, q_se = acc_p[tree.root], acc_q[tree.root]

        change = 0.0
        for child in tree.order[1:]:
            par, (r, x) = tree.parent[child]
            key = (par, child)
            new = v2[par] - 2.0 * (r * p[key] + x * q[key]) + (r * r + x * x) * l[key]
            if new <= 0.0:
                # voltage collapse: the load is beyond what the feeder can carry
                return _result(v2, p, q, l, p_se, q_se, False, it)
            change = max(change, abs(math.sqrt(new) - math.sqrt(v2[child])))
            v2[child] = new
        new_l = {key: (p[key] ** 2 + q[key] ** 2) / v2[key[0]] for key in l}
        # the current must settle too: a pass whose flows happen to leave
        # every voltage unchanged is not yet a fixed point
        change = max(change, max((abs(new_l[key] - l[key]) for key in l), default=0.0))
        if change < tol:
            converged = True
            break
        l = new_l
    return _result(v2, p, q, l, p_se, q_se, converged, it)


def _result(v2, p, q, l, p_se, q_se, converged, it) -> PfSolution:
    v = {b: math.sqrt(max(val, 0.0)) for b, val in v2.items()}
    return PfSolution(v, dict(p), dict(q), dict(l), float(p_se), float(q_se), converged, it)


def is_technically_feasible(solution: PfSolution, network: Network,
                            tol: float = 1e-9) -> tuple[bool, list[str]]:
    """Voltage limits at every bus and apparent-power limits at the sending end."""
    violations = []
    if not solution.converged:
        violations.append("power flow did not converge")
    for bus in network.buses:
        v = solution.v.get(bus.id, math.nan)
        if not bus.v_min - tol <= v <= bus.v_max + tol:
            violations.append(f"bus {bus.id}: v = {v:.6f} outside [{bus.v_min}, {bus.v_max}]")
    limits = {}
    for br in network.branches:
        limits[(br.from_bus, br.to_bus)] = br.s_max
        limits[(br.to_bus, br.from_bus)] = br.s_max
    for key, p in solution.p.items():
        s = math.hypot(p, solution.q[key])
        if s > limits[key] + tol:
            violations.append(f"branch {key[0]}-{key[1]}: |s| = {s:.6f} above {limits[key]}")
    return not violations, violations


@dataclass
class MonteCarloRun:
    samples: list[tuple[ControlSetting, PfSolution]]
    n_drawn: int
    seed: int

    @property
    def acceptance_rate(self) -> float:
        return len(self.samples) / self.n_drawn if self.n_drawn else 0.0

    def __iter__(self):
        return iter(self.samples)

    def __len__(self) -> int:
        return len(self.samples)

    def points(self) -> np.ndarray:
        return np.array([(sol.p_se, sol.q_se) for _, sol in self.samples]).reshape(-1, 2)


def random_controls(network: Network, rng: np.random.Generator) -> ControlSetting:
    """Uniform draw of every DG and capacitor within its box."""
    dg = {}
    for k in network.dg_indices():
        g = network.generators[k]
        dg[k] = (float(rng.uniform(g.p_min, g.p_max)), float(rng.uniform(g.q_min, g.q_max)))
    cap = {b.id: float(rng.uniform(0.0, b.cap_q_max)) for b in network.buses if b.cap_q_max > 0}
    return ControlSetting(dg, cap)


def _evaluate(network: Network, seed_seq: np.random.SeedSequence):
    controls = random_controls(network, np.random.default_rng(seed_seq))
    sol = bfs_power_flow(network, controls)
    ok, _ = is_technically_feasible(sol, network)
    return (controls, sol) if ok else None


def mc_sample(network: Network, n: int, seed: int = 0) -> MonteCarloRun:
    """Draw ``n`` control settings and keep the converged, feasible ones.

    Every sample has its own child seed, so the outcome does not depend on
    evaluation order.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    children = np.random.SeedSequence(seed).spawn(n)
    kept = [res for res in (_evaluate(network, s) for s in children) if res is not None]
    return MonteCarloRun(kept, n, seed)
