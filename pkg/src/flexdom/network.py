"""Radial distribution network model.

All electrical quantities are stored per-unit on ``base_mva``. Networks are
immutable; the transforming helpers (:func:`orient_radial`,
:func:`scale_loads`) return new instances.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from enum import Enum

HOURS = 24


class BusKind(str, Enum):
    SUBSTATION = "substation"
    PQ = "pq"


class FormulationKind(str, Enum):
    """The four single-period OPF models."""

    AC_OPF = "acopf"
    DISTFLOW = "distflow"
    DISTFLOW_SOCP = "socp"
    LINDISTFLOW = "lindistflow"

    @property
    def label(self) -> str:
        return _LABELS[self]

    @property
    def needs_impedance(self) -> bool:
        # loss and drop equations degenerate on zero-impedance branches
        return self in (FormulationKind.DISTFLOW, FormulationKind.DISTFLOW_SOCP)

    @classmethod
    def parse(cls, text: str) -> "FormulationKind":
        key = text.strip().lower().replace("-", "").replace("_", "")
        for kind in cls:
            if key in (kind.value, kind.label.lower().replace("-", "")):
                return kind
        aliases = {"ac": cls.AC_OPF, "distflowsocp": cls.DISTFLOW_SOCP, "lin": cls.LINDISTFLOW}
        if key in aliases:
            return aliases[key]
        raise ValueError(f"unknown formulation {text!r}")


_LABELS = {
    FormulationKind.AC_OPF: "AC-OPF",
    FormulationKind.DISTFLOW: "DistFlow",
    FormulationKind.DISTFLOW_SOCP: "DistFlow-SOCP",
    FormulationKind.LINDISTFLOW: "LinDistFlow",
}


@dataclass(frozen=True)
class Bus:
    """A network node.

    Attributes:
        id: Bus number. The substation is conventionally bus 1.
        kind: Substation (the TSO-DSO interface) or an ordinary PQ bus.
        p_load, q_load: Fixed demand [pu].
        v_min, v_max: Voltage magnitude limits [pu].
        cap_q_max: Capacitor bank capacity [pu], 0 if none.
    """

    id: int
    kind: BusKind = BusKind.PQ
    p_load: float = 0.0
    q_load: float = 0.0
    v_min: float = 0.9
    v_max: float = 1.1
    cap_q_max: float = 0.0

    @property
    def is_substation(self) -> bool:
        return self.kind == BusKind.SUBSTATION


@dataclass(frozen=True)
class Branch:
    """A line between two buses, impedances in pu.

    ``p_max``/``q_max`` are the directed flow limits used by the linearized
    model; ``s_max`` is the apparent-power limit of the nonlinear ones.
    """

    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt: float = 0.0
    s_max: float = math.inf
    p_max: float = math.inf
    q_max: float = math.inf

    @property
    def zero_impedance(self) -> bool:
        return self.r == 0.0 and self.x == 0.0

    def series_admittance(self) -> tuple[float, float]:
        """Return ``(Y_L, theta_L)``, magnitude and angle of 1/(r + jx)."""
        y = 1.0 / complex(self.r, self.x)
        return abs(y), math.atan2(y.imag, y.real)

    def flipped(self) -> "Branch":
        return replace(self, from_bus=self.to_bus, to_bus=self.from_bus)


@dataclass(frozen=True)
class Generator:
    """Dispatchable injection. The one sitting on the substation bus is the
    TSO exchange; every other generator is a flexible DG."""

    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    cost: float = 0.0


DEFAULT_PROFILE: tuple[float, ...] = (
    0.62, 0.58, 0.55, 0.54, 0.55, 0.60, 0.70, 0.80, 0.87, 0.90, 0.92, 0.93,
    0.92, 0.90, 0.89, 0.90, 0.93, 0.98, 1.00, 0.98, 0.93, 0.85, 0.76, 0.68,
)


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    base_mva: float = 10.0
    base_kv: float = 12.66
    substation_cost: float = 50.0
    load_profile: tuple[float, ...] = field(default=(1.0,) * HOURS)

    def __post_init__(self) -> None:
        # accept lists from callers; keep the instance hashable and immutable
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "load_profile", tuple(float(v) for v in self.load_profile))

    @property
    def substation(self) -> Bus:
        for bus in self.buses:
            if bus.is_substation:
                return bus
        raise ValueError("network has no substation bus")

    @property
    def bus_index(self) -> dict[int, int]:
        return {bus.id: k for k, bus in enumerate(self.buses)}

    def substation_generator(self) -> int:
        """Index into ``generators`` of the TSO exchange generator."""
        root = self.substation.id
        for k, gen in enumerate(self.generators):
            if gen.bus == root:
                return k
        raise ValueError("no generator at the substation bus")

    def dg_indices(self) -> list[int]:
        sub = self.substation_generator()
        return [k for k in range(len(self.generators)) if k != sub]

    def capacitor_buses(self) -> list[int]:
        return [bus.id for bus in self.buses if bus.cap_q_max > 0.0]

    def total_load(self) -> tuple[float, float]:
        return (
            math.fsum(b.p_load for b in self.buses),
            math.fsum(b.q_load for b in self.buses),
        )


def pu_to_physical(value: float, base: float) -> float:
    return value * base


def physical_to_pu(value: float, base: float) -> float:
    return value / base


def _graph_violations(network: Network) -> list[str]:
    ids = {bus.id for bus in network.buses}
    adjacency: dict[int, list[int]] = defaultdict(list)
    for br in network.branches:
        if br.from_bus in ids and br.to_bus in ids:
            adjacency[br.from_bus].append(br.to_bus)
            adjacency[br.to_bus].append(br.from_bus)
    out = []
    if len(network.branches) != len(network.buses) - 1:
        out.append(
            f"graph not radial: {len(network.branches)} branches for "
            f"{len(network.buses)} buses"
        )
    if ids:
        start = next(iter(sorted(ids)))
        seen = {start}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        if seen != ids:
            out.append(f"graph not connected: buses {sorted(ids - seen)} unreachable")
    return out


def validate(network: Network, kind: FormulationKind | None = None) -> list[str]:
    """Return every invariant violation of ``network``; empty means valid.

    Zero-impedance branches are only acceptable for formulations that do not
    divide through the branch impedance (AC-OPF, LinDistFlow). With
    ``kind=None`` the strictest rule (DistFlow family) applies.
    """
    out: list[str] = []
    if network.base_mva <= 0 or network.base_kv <= 0:
        out.append("per-unit bases must be positive")

    ids = [bus.id for bus in network.buses]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        out.append(f"duplicate bus ids {dupes}")
    n_sub = sum(bus.is_substation for bus in network.buses)
    if n_sub == 0:
        out.append("no substation")
    elif n_sub > 1:
        out.append("multiple substations")

    for bus in network.buses:
        if not 0.0 < bus.v_min < bus.v_max:
            out.append(f"bus {bus.id}: need 0 < v_min < v_max, got {bus.v_min}, {bus.v_max}")
        if bus.cap_q_max < 0.0:
            out.append(f"bus {bus.id}: negative capacitor capacity")
        if bus.p_load < 0.0 or bus.q_load < 0.0:
            out.append(f"bus {bus.id}: negative load")

    strict = kind is None or kind.needs_impedance
    known = set(ids)
    for k, br in enumerate(network.branches):
        tag = f"branch {k} ({br.from_bus}-{br.to_bus})"
        if br.from_bus not in known or br.to_bus not in known:
            out.append(f"{tag}: unknown bus")
        if br.from_bus == br.to_bus:
            out.append(f"{tag}: self loop")
        if br.r < 0.0 or br.x < 0.0:
            out.append(f"{tag}: negative impedance")
        elif br.zero_impedance and strict:
            out.append(f"{tag}: zero impedance (r = x = 0)")
        if not (br.s_max > 0.0 and br.p_max > 0.0 and br.q_max > 0.0):
            out.append(f"{tag}: flow limits must be positive")

    for k, gen in enumerate(network.generators):
        if gen.bus not in known:
            out.append(f"generator {k}: unknown bus {gen.bus}")
        if gen.p_min > gen.p_max or gen.q_min > gen.q_max:
            out.append(f"generator {k}: inverted limits")
    if n_sub == 1 and not any(g.bus == network.substation.id for g in network.generators):
        out.append("no generator at the substation bus")

    if len(network.load_profile) != HOURS:
        out.append(f"load profile must have {HOURS} entries")
    elif any(v < 0.0 or not math.isfinite(v) for v in network.load_profile):
        out.append("load profile entries must be finite and non-negative")

    if not dupes and not any("unknown bus" in v for v in out):
        out.extend(_graph_violations(network))
    return out


def orient_radial(network: Network) -> Network:
    """Point every branch away from the substation (parent -> child).

    Branch order is preserved, so an already oriented network comes back
    unchanged.
    """
    problems = [v for v in _graph_violations(network)]
    if problems:
        raise ValueError("; ".join(problems))
    root = network.substation.id
    adjacency: dict[int, list[int]] = defaultdict(list)
    for br in network.branches:
        adjacency[br.from_bus].append(br.to_bus)
        adjacency[br.to_bus].append(br.from_bus)
    depth = {root: 0}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in adjacency[u]:
            if v not in depth:
                depth[v] = depth[u] + 1
                queue.append(v)
    branches = tuple(
        br if depth[br.from_bus] < depth[br.to_bus] else br.flipped()
        for br in network.branches
    )
    if branches == network.branches:
        return network
    return replace(network, branches=branches)


def scale_loads(network: Network, hour: int) -> Network:
    """Scale every load by the profile multiplier of ``hour`` (1-based)."""
    if not 1 <= hour <= HOURS:
        raise ValueError(f"hour must be in 1..{HOURS}, got {hour}")
    factor = network.load_profile[hour - 1]
    if factor == 1.0:
        return network
    buses = tuple(
        replace(bus, p_load=bus.p_load * factor, q_load=bus.q_load * factor)
        for bus in network.buses
    )
    return replace(network, buses=buses)


@dataclass(frozen=True)
class Topology:
    """Index view of an oriented radial network.

    ``order`` lists bus positions root first (breadth first) and
    ``parent_branch[k]`` is the branch feeding bus position ``k`` (-1 at the
    root).
    """

    root: int
    order: tuple[int, ...]
    parent_branch: tuple[int, ...]
    children: tuple[tuple[int, ...], ...]  # outgoing branch indices per bus position
    frm: tuple[int, ...]
    to: tuple[int, ...]

    @classmethod
    def of(cls, network: Network) -> "Topology":
        index = network.bus_index
        n = len(network.buses)
        frm = tuple(index[br.from_bus] for br in network.branches)
        to = tuple(index[br.to_bus] for br in network.branches)
        parent = [-1] * n
        children: list[list[int]] = [[] for _ in range(n)]
        for k, (i, j) in enumerate(zip(frm, to)):
            if parent[j] != -1:
                raise ValueError(f"bus {network.buses[j].id} has two parent branches")
            parent[j] = k
            children[i].append(k)
        root = index[network.substation.id]
        if parent[root] != -1:
            raise ValueError("network is not oriented away from the substation")
        order = [root]
        for u in order:
            order.extend(to[k] for k in children[u])
        if len(order) != n:
            raise ValueError("network is not oriented away from the substation")
        return cls(root, tuple(order), tuple(parent), tuple(map(tuple, children)), frm, to)
