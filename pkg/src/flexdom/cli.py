"""Command line front end: ``flexdom region | verify | dispatch``.

Exit codes: 0 success, 1 configuration error, 2 solve failure,
3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .caseio import CaseFormatError, load_case
from .formulations import build, distflow_point_to_socp, extract_controls
from .ipm import IpmOptions, solve_dispatch
from .network import HOURS, FormulationKind, Network, scale_loads, validate
from .nlp import check_derivatives, random_interior_point
from .oracle import bfs_power_flow, mc_sample
from .region import (RegionError, assemble_polygon, boundary_distance, compare, contains,
                     polygon_area)
from .sweep import Boundary, SweepConfig, SweepError, sweep_boundary

log = logging.getLogger("flexdom")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVE, EXIT_VERIFY = 0, 1, 2, 3

CSV_COLUMNS = ("hour", "formulation", "side", "band_index", "p_se_pu", "q_se_pu",
               "status", "iterations", "solve_ms")

# verify thresholds
DERIVATIVE_POINTS = 100
DERIVATIVE_TOL = 1e-5
MC_SAMPLES = 5000
MC_MIN_FEASIBLE = 1000
DILATION = 1e-3
RELAX_TOL = 1e-6
ROUND_TRIP_TOL = 1e-5


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    case: str = "case33bw"
    formulations: tuple[FormulationKind, ...] = tuple(FormulationKind)
    hours: tuple[int, ...] = (14,)
    n_points: int = 200
    out: Path = Path("flexdom_out")
    seed: int = 0
    parallel: bool = False
    tol: float = 1e-8

    def __post_init__(self) -> None:
        if not self.formulations:
            raise ConfigError("no formulations requested")
        if not self.hours:
            raise ConfigError("no hours requested")
        bad = [h for h in self.hours if not 1 <= h <= HOURS]
        if bad:
            raise ConfigError(f"hours out of range 1..{HOURS}: {bad}")
        if self.n_points < 4 or self.n_points % 2:
            raise ConfigError(f"--points must be even and >= 4, got {self.n_points}")
        if not self.tol > 0:
            raise ConfigError("--tol must be positive")

    @property
    def solver(self) -> IpmOptions:
        return IpmOptions(tol_kkt=self.tol)

    def sweep_config(self, kind: FormulationKind) -> SweepConfig:
        return SweepConfig(kind, n_points=self.n_points, solver=self.solver)


def parse_hours(text: str) -> tuple[int, ...]:
    """``"14"``, ``"12-15"`` or a comma list of both."""
    hours: set[int] = set()
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part:
                a, b = (int(v) for v in part.split("-", 1))
                if a > b:
                    raise ConfigError(f"empty hour range {part!r}")
                hours.update(range(a, b + 1))
            elif part:
                hours.add(int(part))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"cannot parse hours {text!r}") from None
    return tuple(sorted(hours))


def parse_formulations(text: str) -> tuple[FormulationKind, ...]:
    names = [v.strip() for v in text.split(",") if v.strip()]
    try:
        kinds = [FormulationKind.parse(v) for v in names]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return tuple(dict.fromkeys(kinds))


def _load(config: RunConfig) -> Network:
    try:
        network = load_case(config.case)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    except CaseFormatError as exc:
        raise ConfigError(f"{config.case}: {exc}") from None
    for kind in config.formulations:
        problems = validate(network, kind)
        if problems:
            raise ConfigError(f"invalid network for {kind.value}: " + "; ".join(problems))
    return network


# ----------------------------------------------------------------- region

def _sweep_job(args):
    network, config, hour, kind = args
    try:
        return hour, kind, sweep_boundary(scale_loads(network, hour), config.sweep_config(kind))
    except SweepError as exc:
        return hour, kind, exc


def run_sweeps(network: Network, config: RunConfig) -> dict:
    jobs = [(network, config, h, k) for h in config.hours for k in config.formulations]
    if config.parallel and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(len(jobs), os.cpu_count() or 1)) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(job) for job in jobs]
    return {(h, k): res for h, k, res in results}


def write_csv(path: Path, hour: int, boundary: Boundary) -> int:
    rows = 0
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for pt in boundary:
            if not pt.optimal:
                continue
            writer.writerow([hour, boundary.kind.value, pt.side.value, pt.band_index,
                             repr(pt.p_se), repr(pt.q_se), pt.status.value, pt.iterations,
                             f"{1e3 * pt.solve_time:.3f}"])
            rows += 1
    return rows


def region_metrics(boundaries: dict[FormulationKind, Boundary]) -> dict:
    polygons = {}
    for kind, b in boundaries.items():
        try:
            polygons[kind] = assemble_polygon(b)
        except RegionError as exc:
            log.warning("%s: no polygon (%s)", kind.value, exc)
    ref = polygons.get(FormulationKind.DISTFLOW)
    out = {}
    for kind, b in boundaries.items():
        entry = {
            "area_pu2": None, "hausdorff_vs_distflow": None, "sym_diff_vs_distflow": None,
            "max_import_p": None, "max_export_p": None,
            "total_wall_ms": 1e3 * b.wall_time,
            "failed_bands": [{"side": pt.side.value, "band_index": pt.band_index,
                              "status": pt.status.value} for pt in b.failed],
        }
        poly = polygons.get(kind)
        if poly is not None:
            entry["area_pu2"] = polygon_area(poly)
            entry["max_import_p"] = float(poly.p.max())
            entry["max_export_p"] = float(poly.p.min())
            if ref is not None:
                m = compare(poly, ref)
                entry["hausdorff_vs_distflow"] = m.hausdorff_vs_ref
                entry["sym_diff_vs_distflow"] = m.sym_diff_area_vs_ref
        out[kind.value] = entry
    return out


def cmd_region(config: RunConfig) -> int:
    network = _load(config)
    config.out.mkdir(parents=True, exist_ok=True)
    results = run_sweeps(network, config)
    metrics: dict[str, dict] = {}
    errors = []
    for hour in config.hours:
        done: dict[FormulationKind, Boundary] = {}
        for kind in config.formulations:
            res = results[hour, kind]
            if isinstance(res, SweepError):
                errors.append({"hour": hour, "formulation": kind.value, "error": str(res)})
                if res.boundary is None:
                    continue
                res = res.boundary
            done[kind] = res
            rows = write_csv(config.out / f"hour{hour:02d}_{kind.value}.csv", hour, res)
            log.info("hour %d %s: %d points in %.1f s", hour, kind.value, rows, res.wall_time)
        metrics[str(hour)] = region_metrics(done)
        (config.out / f"hour{hour:02d}.svg").write_text(
            render_svg(done, title=f"{Path(config.case).stem}, hour {hour}"))
    (config.out / "metrics.json").write_text(json.dumps(metrics, indent=1))
    if errors:
        _report({"error": "solve failure", "details": errors}, config.out)
        return EXIT_SOLVE
    return EXIT_OK


# ----------------------------------------------------------------- verify

@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _derivative_check(network: Network, kind: FormulationKind, seed: int) -> CheckResult:
    problem = build(network, kind)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(DERIVATIVE_POINTS):
        x = random_interior_point(problem, rng)
        for chk in check_derivatives(problem, x, rel_tol=DERIVATIVE_TOL):
            worst = max(worst, chk.max_rel_error)
    return CheckResult(f"derivatives {kind.value}", worst <= DERIVATIVE_TOL,
                       f"max rel error {worst:.2e}")


def verify_checks(network: Network, config: RunConfig) -> list[CheckResult]:
    hour = config.hours[0]
    net = scale_loads(network, hour)
    checks = [_derivative_check(net, kind, config.seed) for kind in FormulationKind]

    distflow = sweep_boundary(net, SweepConfig(FormulationKind.DISTFLOW, config.n_points,
                                               solver=config.solver))
    socp = sweep_boundary(net, SweepConfig(FormulationKind.DISTFLOW_SOCP, config.n_points,
                                           solver=config.solver))
    poly_d = assemble_polygon(distflow)
    poly_s = assemble_polygon(socp)

    worst = 0.0
    for pt in distflow:
        if pt.optimal:
            y = distflow_point_to_socp(distflow.problem, socp.problem, pt.x)
            res = socp.problem.residual(y)
            eq = socp.problem.eq_mask
            worst = max(worst, float(np.abs(res[eq]).max()), float(np.maximum(res[~eq], 0).max()))
    checks.append(CheckResult("relaxation containment (vertices)", worst <= RELAX_TOL,
                              f"max SOCP residual {worst:.2e}"))
    gap = polygon_area(poly_s) - polygon_area(poly_d)
    checks.append(CheckResult("relaxation containment (area)", gap >= -RELAX_TOL,
                              f"SOCP - DistFlow area {gap:.3e} pu^2"))

    worst = 0.0
    for pt in distflow:
        if pt.optimal:
            pf = bfs_power_flow(net, extract_controls(distflow.problem, net, pt.x))
            worst = max(worst, abs(pf.p_se - pt.p_se), abs(pf.q_se - pt.q_se))
    checks.append(CheckResult("oracle round trip", worst <= ROUND_TRIP_TOL,
                              f"max interface mismatch {worst:.2e} pu"))

    run = mc_sample(net, MC_SAMPLES, config.seed)
    pts = run.points()
    inside = sum(contains(poly_d, pt, DILATION) for pt in pts)
    margin = float(boundary_distance(poly_d, pts).min()) if len(pts) else float("nan")
    checks.append(CheckResult(
        "oracle containment", len(pts) >= MC_MIN_FEASIBLE and inside == len(pts),
        f"{inside}/{len(pts)} feasible samples inside (of {run.n_drawn} drawn), "
        f"closest {margin:.2e} pu from the boundary"))
    return checks


def cmd_verify(config: RunConfig) -> int:
    network = _load(config)
    try:
        checks = verify_checks(network, config)
    except (SweepError, RegionError) as exc:
        _report({"error": "solve failure", "details": str(exc)}, None)
        return EXIT_SOLVE
    width = max(len(c.name) for c in checks)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  {c.detail}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


# --------------------------------------------------------------- dispatch

def dispatch_report(network: Network, config: RunConfig) -> tuple[dict, bool]:
    out: dict[str, dict] = {}
    ok = True
    for hour in config.hours:
        net = scale_loads(network, hour)
        entry = {}
        for kind in config.formulations:
            problem = build(net, kind)
            res = solve_dispatch(net, kind, config.solver)
            ip, iq = problem.interface
            controls = extract_controls(problem, net, res.x)
            ok &= res.optimal
            entry[kind.value] = {
                "status": res.status.value,
                "objective": res.objective,
                "p_se": float(res.x[ip]),
                "q_se": float(res.x[iq]),
                "dg": [{"generator": k, "bus": net.generators[k].bus, "p": p, "q": q}
                       for k, (p, q) in controls.dg.items()],
                "capacitors": [{"bus": b, "q": q} for b, q in controls.cap.items()],
                "iterations": res.iterations,
            }
        out[str(hour)] = entry
    return out, ok


def cmd_dispatch(config: RunConfig) -> int:
    network = _load(config)
    report, ok = dispatch_report(network, config)
    print(json.dumps(report, indent=1))
    return EXIT_OK if ok else EXIT_SOLVE


# -------------------------------------------------------------------- svg

STYLES = {
    FormulationKind.LINDISTFLOW: ("#000000", "circle"),
    FormulationKind.DISTFLOW_SOCP: ("#1f5fbf", "square"),
    FormulationKind.DISTFLOW: ("#d62728", "star"),
    FormulationKind.AC_OPF: ("#2ca02c", "cross"),
}


def _marker(shape: str, x: float, y: float, colour: str, r: float = 2.2) -> str:
    if shape == "circle":
        return f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r}" fill="none" stroke="{colour}"/>'
    if shape == "square":
        return (f'<rect x="{x - r:.2f}" y="{y - r:.2f}" width="{2 * r}" height="{2 * r}" '
                f'fill="none" stroke="{colour}"/>')
    if shape == "cross":
        return (f'<path d="M{x - r:.2f},{y - r:.2f}L{x + r:.2f},{y + r:.2f}'
                f'M{x - r:.2f},{y + r:.2f}L{x + r:.2f},{y - r:.2f}" stroke="{colour}"/>')
    angles = np.pi / 2 + np.arange(10) * np.pi / 5
    radii = np.where(np.arange(10) % 2 == 0, 1.4 * r, 0.6 * r)
    pts = " ".join(f"{x + a * np.cos(t):.2f},{y - a * np.sin(t):.2f}" for a, t in zip(radii, angles))
    return f'<polygon points="{pts}" fill="{colour}" stroke="none"/>'


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    span = hi - lo
    raw = span / n
    step = 10 ** np.floor(np.log10(raw))
    for mult in (1, 2, 5, 10):
        if mult * step >= raw:
            step *= mult
            break
    return np.arange(np.ceil(lo / step) * step, hi + 1e-12 * span, step)


def render_svg(boundaries: dict[FormulationKind, Boundary], title: str = "",
               width: int = 640, height: int = 480) -> str:
    """Boundary points of every formulation in the P-Q plane, one trace each."""
    traces = {}
    for kind, b in boundaries.items():
        try:
            traces[kind] = assemble_polygon(b).vertices
        except RegionError:
            traces[kind] = np.array([(pt.p_se, pt.q_se) for pt in b if pt.optimal]).reshape(-1, 2)
    left, right, top, bottom = 70, 150, 40, 50
    pts = np.vstack([v for v in traces.values() if len(v)] or [np.zeros((1, 2))])
    (p0, q0), (p1, q1) = pts.min(axis=0), pts.max(axis=0)
    pad_p = 0.05 * (p1 - p0 or 1.0)
    pad_q = 0.05 * (q1 - q0 or 1.0)
    p0, p1, q0, q1 = p0 - pad_p, p1 + pad_p, q0 - pad_q, q1 + pad_q
    plot_w, plot_h = width - left - right, height - top - bottom

    def sx(p):
        return left + (p - p0) / (p1 - p0) * plot_w

    def sy(q):
        return top + (q1 - q) / (q1 - q0) * plot_h

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>']
    for t in _ticks(p0, p1):
        x = sx(t)
        out.append(f'<line x1="{x:.2f}" y1="{top}" x2="{x:.2f}" y2="{top + plot_h}" stroke="#ddd"/>')
        out.append(f'<text x="{x:.2f}" y="{top + plot_h + 15}" text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(q0, q1):
        y = sy(t)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + plot_w}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">{t:.3g}</text>')
    out.append(f'<text x="{left + plot_w / 2}" y="{height - 12}" text-anchor="middle">'
               f'P at substation (pu)</text>')
    out.append(f'<text x="18" y="{top + plot_h / 2}" text-anchor="middle" '
               f'transform="rotate(-90 18 {top + plot_h / 2})">Q at substation (pu)</text>')
    if title:
        out.append(f'<text x="{left + plot_w / 2}" y="{top - 14}" text-anchor="middle" '
                   f'font-size="13">{title}</text>')
    for row, (kind, verts) in enumerate(traces.items()):
        colour, shape = STYLES[kind]
        if len(verts):
            ring = np.vstack([verts, verts[:1]])
            path = " ".join(f"{sx(p):.2f},{sy(q):.2f}" for p, q in ring)
            out.append(f'<polyline points="{path}" fill="none" stroke="{colour}" '
                       f'stroke-width="0.8"/>')
            out.extend(_marker(shape, sx(p), sy(q), colour) for p, q in verts)
        ly = top + 14 + 18 * row
        out.append(_marker(shape, left + plot_w + 18, ly, colour))
        out.append(f'<text x="{left + plot_w + 30}" y="{ly + 4}">{kind.label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ------------------------------------------------------------------- main

def _report(doc: dict, out: Path | None) -> None:
    text = json.dumps(doc)
    print(text, file=sys.stderr)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flexdom", description="P-Q flexibility regions of radial distribution feeders.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("region", "sweep region boundaries, write CSV, metrics and SVG"),
                       ("verify", "derivative, relaxation and oracle checks"),
                       ("dispatch", "cost-optimal dispatch as JSON")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--case", default="case33bw",
                       help="case file (.json native or MATPOWER .m) or bundled case name")
        p.add_argument("--formulations", default=",".join(k.value for k in FormulationKind),
                       help="comma list of acopf, distflow, socp, lindistflow")
        p.add_argument("--hours", default="14", help="e.g. 14, 12-15 or 1,3,5-7")
        p.add_argument("--points", type=int, default=200, help="boundary points per sweep (even)")
        p.add_argument("--out", default="flexdom_out", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--parallel", action="store_true",
                       help="run (hour, formulation) sweeps in separate processes")
        p.add_argument("--tol", type=float, default=1e-8, help="solver KKT tolerance")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        case=args.case, formulations=parse_formulations(args.formulations),
        hours=parse_hours(args.hours), n_points=args.points, out=Path(args.out),
        seed=args.seed, parallel=args.parallel, tol=args.tol)


COMMANDS = {"region": cmd_region, "verify": cmd_verify, "dispatch": cmd_dispatch}


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("FLEXDOM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        config = config_from_args(args)
        code = COMMANDS[args.command](config)
    except ConfigError as exc:
        _report({"error": "configuration", "details": str(exc)}, None)
        return EXIT_CONFIG
    log.info("%s finished in %.1f s with exit code %d", args.command, time.perf_counter() - t0, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
