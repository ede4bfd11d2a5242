"""Epsilon-constraint construction of the feasible P-Q region at the substation.

The reactive range ``[q_min, q_max]`` reachable at the interface is split
into ``K = N/2`` equal bands. Inside each band the active exchange is
maximized (upper side) and minimized (lower side) with every DG and
capacitor free within its limits and the loads fixed. Each optimum is one
vertex of the region boundary.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .formulations import OPTIMIZATION_CLASS, build, extract_controls, interface_values
from .ipm import IpmOptions, IpmResult, Status, WarmStart, solve
from .network import FormulationKind, Network, scale_loads, validate
from .nlp import NlpProblem
from .oracle import ControlSetting

log = logging.getLogger(__name__)

# intervals narrower than this are treated as a single q value
DEGENERATE_WIDTH = 1e-7
MAX_FAILED_FRACTION = 0.10
# objective gain for a refined band optimum to replace the current one
IMPROVEMENT = 1e-9


class Side(str, Enum):
    UPPER = "upper"  # max p_se
    LOWER = "lower"  # min p_se


class SweepError(RuntimeError):
    """The sweep could not produce a usable boundary.

    ``boundary`` carries whatever was computed before giving up, if anything.
    """

    def __init__(self, message: str, boundary: "Boundary | None" = None):
        super().__init__(message)
        self.boundary = boundary


@dataclass(frozen=True)
class SweepConfig:
    kind: FormulationKind
    n_points: int = 200
    band_relax: float = 1e-8
    warm_start_chain: bool = True
    solver: IpmOptions = field(default_factory=IpmOptions)
    # nonconvex models only: sweeps re-solving every band from its
    # neighbours' optima, keeping the better local optimum
    refine_passes: int = 4

    def __post_init__(self) -> None:
        if self.n_points < 4 or self.n_points % 2:
            raise ValueError(f"n_points must be even and >= 4, got {self.n_points}")
        if self.band_relax < 0:
            raise ValueError("band_relax must be non-negative")
        if self.refine_passes < 0:
            raise ValueError("refine_passes must be non-negative")

    @property
    def n_bands(self) -> int:
        return self.n_points // 2


@dataclass(frozen=True)
class BoundaryPoint:
    p_se: float
    q_se: float
    side: Side
    band_index: int  # 1-based
    status: Status
    solve_time: float
    iterations: int = 0
    kkt_residual: float = math.nan
    x: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def optimal(self) -> bool:
        return self.status == Status.OPTIMAL


@dataclass
class Boundary:
    """Sweep output. Iterating yields the points ordered by (side, band)."""

    kind: FormulationKind
    points: list[BoundaryPoint]
    q_min: float
    q_max: float
    edges: np.ndarray  # band k spans edges[k-1] .. edges[k]
    wall_time: float
    band_relax: float = 0.0
    problem: NlpProblem | None = field(default=None, repr=False)

    def __iter__(self):
        return iter(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, k):
        return self.points[k]

    @property
    def failed(self) -> list[BoundaryPoint]:
        return [pt for pt in self.points if not pt.optimal]

    def side(self, side: Side) -> list[BoundaryPoint]:
        return [pt for pt in self.points if pt.side == side]

    def band(self, k: int) -> tuple[float, float]:
        return float(self.edges[k - 1]), float(self.edges[k])

    def controls(self, point: BoundaryPoint, network: Network) -> ControlSetting:
        """DG and capacitor set-points behind a boundary point."""
        if self.problem is None or point.x is None:
            raise ValueError("boundary carries no solutions")
        return extract_controls(self.problem, network, point.x)


def band_edges(q_min: float, q_max: float, n_bands: int) -> np.ndarray:
    """``n_bands + 1`` edges splitting ``[q_min, q_max]`` into equal bands.

    The end points are reproduced exactly and adjacent bands share the same
    float as their common edge, so the bands partition the interval.
    """
    eps = (q_max - q_min) / n_bands
    edges = q_min + eps * np.arange(n_bands + 1)
    edges[0], edges[-1] = q_min, q_max
    return edges


def band_centers(edges: np.ndarray) -> np.ndarray:
    return 0.5 * (edges[:-1] + edges[1:])


def _extremal(problem: NlpProblem, index: int, sign: float, options: IpmOptions,
              warm: WarmStart | None) -> IpmResult:
    return _solve_band(problem.with_objective([(index, sign)]), options, warm)


def q_range(network: Network, kind: FormulationKind,
            options: IpmOptions = IpmOptions()) -> tuple[float, float]:
    """Smallest and largest reactive exchange over the feasible set of ``kind``."""
    lo, hi, _ = _q_range(build(network, kind), options, None, OPTIMIZATION_CLASS[kind] == "NLP")
    return lo, hi


def _q_range(problem: NlpProblem, options: IpmOptions, warm: WarmStart | None,
             nonconvex: bool = False):
    _, iq = problem.interface
    results = []
    for sign in (1.0, -1.0):
        res = _extremal(problem, iq, sign, options, warm)
        if nonconvex and warm is not None:
            # the extremes of a nonconvex model can have several local
            # optima; a cold start often lands on a different one
            cold = solve(problem.with_objective([(iq, sign)]), options)
            if cold.optimal and (not res.optimal or cold.objective < res.objective - IMPROVEMENT):
                cold.iterations += res.iterations
                cold.wall_time += res.wall_time
                res = cold
        if not res.optimal:
            what = "min" if sign > 0 else "max"
            raise SweepError(
                f"{problem.name}: {what} q_se solve ended with {res.status.value} "
                f"after {res.iterations} iterations ({res.message or 'no message'})")
        results.append(res)
    q_lo = float(results[0].x[iq])
    q_hi = float(results[1].x[iq])
    if q_lo > q_hi:
        # both solves converged to the same value up to tolerance
        q_lo = q_hi = 0.5 * (q_lo + q_hi)
    return q_lo, q_hi, results


def sweep_boundary(network: Network, config: SweepConfig) -> Boundary:
    """Trace the upper and lower boundary of the P-Q region.

    Raises :class:`SweepError` if an extremal q solve fails or more than a
    tenth of the band solves do not reach optimality.
    """
    problems = validate(network, config.kind)
    if problems:
        raise ValueError("invalid network: " + "; ".join(problems))
    t0 = time.perf_counter()
    options = config.solver
    problem = build(network, config.kind)
    ip, iq = problem.interface

    base = solve(problem, options)
    base_warm = WarmStart(base.x) if base.optimal else None
    nonconvex = OPTIMIZATION_CLASS[config.kind] == "NLP"
    q_min, q_max, _ = _q_range(problem, options, base_warm, nonconvex)

    if q_max - q_min <= DEGENERATE_WIDTH:
        n_bands = 1
        edges = np.array([q_min, q_max])
    else:
        n_bands = config.n_bands
        edges = band_edges(q_min, q_max, n_bands)

    q_lower, q_upper = problem.variables[iq].lower, problem.variables[iq].upper
    band_problems = {}
    points: list[BoundaryPoint] = []
    for side, sign in ((Side.UPPER, -1.0), (Side.LOWER, 1.0)):
        objective = problem.with_objective([(ip, sign)])
        for k in range(1, n_bands + 1):
            # the solver relaxes bounds internally; keep that inside band_relax
            lo_edge, hi_edge = edges[k - 1], edges[k]
            lo = max(q_lower, lo_edge - _margin(lo_edge, config.band_relax, options))
            hi = min(q_upper, hi_edge + _margin(hi_edge, config.band_relax, options))
            band_problems[side, k] = objective.with_bounds({iq: (lo, hi)})

        results: dict[int, IpmResult] = {}
        warm = base_warm
        for k in range(1, n_bands + 1):
            res = _solve_band(band_problems[side, k], options,
                              warm if config.warm_start_chain else None)
            results[k] = res
            if res.optimal:
                warm = res.warm_start()
        if nonconvex and n_bands > 1:
            _refine(band_problems, side, results, n_bands, options, config.refine_passes)

        for k in range(1, n_bands + 1):
            res = results[k]
            p_se, q_se = interface_values(problem, res.x)
            points.append(BoundaryPoint(p_se, q_se, side, k, res.status, res.wall_time,
                                        res.iterations, res.kkt_residual, res.x))
            if not res.optimal:
                log.warning("%s %s band %d: %s (%s)", config.kind.value, side.value, k,
                            res.status.value, res.message)

    boundary = Boundary(config.kind, points, q_min, q_max, edges,
                        time.perf_counter() - t0, config.band_relax, problem)
    n_failed = len(boundary.failed)
    if n_failed > MAX_FAILED_FRACTION * len(points):
        raise SweepError(f"{config.kind.value}: {n_failed} of {len(points)} band solves failed",
                         boundary)
    return boundary


def _margin(edge: float, band_relax: float, options: IpmOptions) -> float:
    return band_relax - min(band_relax, options.bound_relax * max(1.0, abs(edge)))


def _solve_band(problem: NlpProblem, options: IpmOptions, warm: WarmStart | None) -> IpmResult:
    res = solve(problem, options, warm)
    if not res.optimal and warm is not None:
        # a warm start far from the band optimum can stall; retry cold
        retry = solve(problem, options)
        if retry.optimal:
            retry.wall_time += res.wall_time
            retry.iterations += res.iterations
            return retry
    return res


def _refine(band_problems, side: Side, results: dict[int, IpmResult], n_bands: int,
            options: IpmOptions, max_passes: int) -> None:
    """Alternate descending and ascending passes that re-solve each band from
    its neighbour's current optimum and keep whichever optimum is better.

    The extreme-p problems of the nonconvex models have many local optima;
    a single chained pass gets trapped on whichever branch it started on.
    """
    for npass in range(max_passes):
        order = range(n_bands - 1, 0, -1) if npass % 2 == 0 else range(2, n_bands + 1)
        step = 1 if npass % 2 == 0 else -1
        improved = 0
        for k in order:
            neighbour = results[k + step]
            if not neighbour.optimal:
                continue
            prob = band_problems[side, k]
            current = results[k]
            res = solve(prob, options, neighbour.warm_start())
            spent = res.wall_time
            if res.optimal and (not current.optimal or res.objective < current.objective - IMPROVEMENT):
                res.wall_time += current.wall_time
                res.iterations += current.iterations
                results[k] = res
                improved += 1
            else:
                current.wall_time += spent
                current.iterations += res.iterations
        log.debug("%s refine pass %d improved %d bands", side.value, npass + 1, improved)
        if npass > 0 and improved == 0:
            break


def _sweep_hour(args):
    network, config, hour = args
    try:
        return hour, sweep_boundary(scale_loads(network, hour), config)
    except (SweepError, ValueError) as exc:
        return hour, exc


def sweep_hours(network: Network, config: SweepConfig, hours,
                workers: int = 1) -> dict[int, Boundary | Exception]:
    """Independent single-period sweeps; a failing hour maps to its exception."""
    hours = sorted(set(hours))
    bad = [h for h in hours if not 1 <= h <= len(network.load_profile)]
    if bad:
        raise ValueError(f"hours out of range: {bad}")
    jobs = [(network, config, h) for h in hours]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_sweep_hour, jobs))
    else:
        results = [_sweep_hour(job) for job in jobs]
    return dict(results)


def max_band_excursion(boundary: Boundary) -> float:
    """Largest distance of an optimal point's q_se outside its band (0 if none)."""
    worst = 0.0
    for pt in boundary:
        if pt.optimal:
            lo, hi = boundary.band(pt.band_index)
            worst = max(worst, lo - pt.q_se, pt.q_se - hi)
    return worst


def is_partition(edges: np.ndarray, q_min: float, q_max: float) -> bool:
    """Bands cover ``[q_min, q_max]`` exactly, in order, without overlap."""
    return (
        len(edges) >= 2
        and edges[0] == q_min
        and edges[-1] == q_max
        and bool(np.all(np.diff(edges) >= 0.0))
        and math.isfinite(float(edges.sum()))
    )
