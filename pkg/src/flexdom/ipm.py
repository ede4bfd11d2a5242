"""Primal-dual interior-point method for :class:`~flexdom.nlp.NlpProblem`.

The method follows the usual line-search recipe:

* inequalities get slacks ``h(x) + s = 0, s >= 0``; every bound is handled by
  a logarithmic barrier,
* Newton steps on the primal-dual system are computed from the symmetric
  indefinite KKT matrix, factored with LAPACK's Bunch-Kaufman ``sytrf``;
  when the inertia is wrong the Hessian block is regularized with
  ``delta * I``, doubling ``delta`` until it is right,
* steps are clipped by the fraction-to-boundary rule and accepted by a
  backtracking filter search on constraint violation and barrier objective,
  with second-order corrections against the Maratos effect,
* when no step is acceptable, a restoration phase reduces the constraint
  violation alone; if that stalls the problem is reported infeasible,
  unless the point is already feasible and passes the KKT test with
  freshly fitted multipliers (degenerate optima without a nearby interior),
* the barrier parameter decreases monotonically once the barrier
  subproblem is solved to within ``10 mu``.

The same code handles LPs, SOCPs written as smooth quadratic inequalities,
and general nonconvex NLPs.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from functools import lru_cache
from enum import Enum

import numpy as np
from scipy.linalg import lapack
from scipy.optimize import lsq_linear

from .nlp import NlpEvaluationError, NlpProblem

log = logging.getLogger(__name__)

# filter line search constants (the customary interior-point defaults)
GAMMA_THETA = 1e-5
GAMMA_PHI = 1e-8
GAMMA_ALPHA = 0.05
SWITCH_DELTA = 1.0
SWITCH_S_THETA = 1.1
SWITCH_S_PHI = 2.3
ARMIJO_ETA = 1e-4
FILTER_THETA_MAX = 1e4
FILTER_THETA_MIN = 1e-4
# barrier update: solve each subproblem to KAPPA_EPS * mu, then shrink mu
KAPPA_EPS = 10.0
MU_SUPERLINEAR = 1.5
# bound multipliers stay within this factor of mu / gap
KAPPA_SIGMA = 1e10
RESTORATION_MAX_ITER = 200
# weight of the constraint violation in the restoration objective
RESTORATION_RHO = 1000.0
# bounds this close count as active in the final zero-barrier KKT test
ACTIVE_GAP = 1e-4


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible_detected"
    ITERATION_LIMIT = "iteration_limit"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class IpmOptions:
    tol_kkt: float = 1e-8
    max_iter: int = 200
    mu_init: float = 0.1
    mu_reduce: float = 0.2
    fraction_to_boundary: float = 0.995
    inertia_regularization: float = 1e-8
    bound_relax: float = 1e-10
    bound_push: float = 1e-2
    warm_mu_init: float = 1e-4
    warm_bound_push: float = 1e-5
    max_regularization: float = 1e20
    second_order_correction: bool = True

    def __post_init__(self) -> None:
        positive = (self.tol_kkt, self.max_iter, self.mu_init, self.mu_reduce,
                    self.fraction_to_boundary, self.inertia_regularization)
        if any(v <= 0 for v in positive) or self.bound_relax < 0:
            raise ValueError("solver options must be positive")
        if not (0 < self.fraction_to_boundary < 1 and 0 < self.mu_reduce < 1):
            raise ValueError("fraction_to_boundary and mu_reduce must lie in (0, 1)")


@dataclass
class IpmResult:
    status: Status
    x: np.ndarray
    duals_eq: np.ndarray
    duals_ineq: np.ndarray
    duals_bounds: np.ndarray  # z_upper - z_lower per variable
    kkt_residual: float
    iterations: int
    wall_time: float
    objective: float = math.nan
    primal_infeasibility: float = math.nan
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == Status.OPTIMAL

    def warm_start(self) -> "WarmStart":
        return WarmStart(self.x.copy(), self.duals_eq.copy(), self.duals_ineq.copy(),
                         self.duals_bounds.copy())


@dataclass
class WarmStart:
    x: np.ndarray
    duals_eq: np.ndarray | None = None
    duals_ineq: np.ndarray | None = None
    duals_bounds: np.ndarray | None = None


def inertia(ldu: np.ndarray, ipiv: np.ndarray, zero_tol: float) -> tuple[int, int, int]:
    """Eigenvalue sign counts of a matrix factored by ``dsytrf(lower=1)``.

    A 2x2 pivot block is flagged by two equal negative ``ipiv`` entries;
    consecutive blocks are paired off from the start of each negative run.
    """
    n = ldu.shape[0]
    diag = np.diagonal(ldu)
    two = ipiv < 0
    idx = np.arange(n)
    starts = two & ~np.concatenate([[False], two[:-1]])
    run_start = np.maximum.accumulate(np.where(starts, idx, 0))
    first = two & ((idx - run_start) % 2 == 0)

    single = diag[~two]
    k = np.flatnonzero(first)
    a, c = diag[k], diag[k + 1]
    b = ldu[k + 1, k]
    # eigenvalues of each 2x2 pivot; the small one via det / big to avoid
    # cancellation
    half = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    big = np.where(half != 0.0, half + np.copysign(rad, half), rad)
    with np.errstate(divide="ignore", invalid="ignore"):
        small = np.where(big != 0.0, (a * c - b * b) / big, 0.0)
    ev = np.concatenate([single, big, small])
    zero = int(np.count_nonzero(np.abs(ev) <= zero_tol))
    pos = int(np.count_nonzero(ev > zero_tol))
    return pos, n - pos - zero, zero


class _Factorization:
    def __init__(self, ldu, ipiv):
        self.ldu = ldu
        self.ipiv = ipiv

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        sol, info = lapack.dsytrs(self.ldu, self.ipiv, rhs, lower=1)
        if info != 0:
            raise np.linalg.LinAlgError(f"dsytrs failed with info={info}")
        return sol


class _NormalFactorization:
    """Cholesky of ``J D^-1 J^T`` for a diagonal positive (1,1) block ``D``.

    Used for LPs whose variables all carry a barrier term: the KKT matrix
    then has the right inertia whenever ``J`` has full row rank.
    """

    def __init__(self, chol, d_inv, jac):
        self.chol = chol
        self.d_inv = d_inv
        self.jac = jac

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        nz = self.d_inv.size
        r1, r2 = rhs[:nz], rhs[nz:]
        dy, info = lapack.dpotrs(self.chol, self.jac @ (self.d_inv * r1) - r2, lower=1)
        if info != 0:
            raise np.linalg.LinAlgError(f"dpotrs failed with info={info}")
        return np.concatenate([self.d_inv * (r1 - self.jac.T @ dy), dy])


def _normal_factor(sigma, jac):
    d_inv = 1.0 / sigma
    normal = (jac * d_inv) @ jac.T
    chol, info = lapack.dpotrf(normal, lower=1)
    if info != 0:
        return None
    # an ill-conditioned Cholesky is no better than the indefinite path
    piv = np.diagonal(chol)
    if piv.min(initial=np.inf) <= 1e-10 * max(1.0, piv.max(initial=0.0)):
        return None
    return _NormalFactorization(chol, d_inv, jac)


@lru_cache(maxsize=32)
def _sytrf_lwork(size: int) -> int:
    work, info = lapack.dsytrf_lwork(size, lower=1)
    return max(1, int(work)) if info == 0 else max(1, 64 * size)


class _State:
    """Iterate in the reduced space of free variables plus slacks."""

    def __init__(self, problem: NlpProblem, options: IpmOptions, warm: WarmStart | None):
        self.problem = problem
        lo = problem.lower.astype(float)
        hi = problem.upper.astype(float)
        fixed = lo == hi
        self.free = np.flatnonzero(~fixed)
        self.fixed = np.flatnonzero(fixed)
        self.fixed_values = lo[fixed]
        self.n = problem.n
        self.eq = problem.eq_mask
        self.ineq_rows = np.flatnonzero(~self.eq)
        self.nx = self.free.size
        self.ns = self.ineq_rows.size
        self.nz = self.nx + self.ns
        self.m = problem.m

        relax = options.bound_relax
        lo_f = lo[self.free] - relax * np.maximum(1.0, np.abs(lo[self.free]))
        hi_f = hi[self.free] + relax * np.maximum(1.0, np.abs(hi[self.free]))
        self.lower = np.concatenate([lo_f, np.full(self.ns, -relax)])
        self.upper = np.concatenate([hi_f, np.full(self.ns, np.inf)])
        self.has_l = np.isfinite(self.lower)
        self.has_u = np.isfinite(self.upper)
        cost = problem.cost
        self.grad_f = np.concatenate([cost[self.free], np.zeros(self.ns)])
        # slacks enter the inequality rows with coefficient one
        self.slack_rows = self.ineq_rows
        self.slack_cols = self.nx + np.arange(self.ns)

    def full_x(self, z: np.ndarray) -> np.ndarray:
        x = np.empty(self.n)
        x[self.free] = z[:self.nx]
        x[self.fixed] = self.fixed_values
        return x

    def push_inside(self, z: np.ndarray, push: float) -> np.ndarray:
        lo, hi = self.lower, self.upper
        width = hi - lo
        pl = np.where(self.has_l, np.minimum(push * np.maximum(1.0, np.abs(lo)), 0.5 * width), 0.0)
        pu = np.where(self.has_u, np.minimum(push * np.maximum(1.0, np.abs(hi)), 0.5 * width), 0.0)
        # both-bounded zero-width intervals after relaxation end up at the midpoint
        z = np.where(self.has_l, np.maximum(z, lo + pl), z)
        z = np.where(self.has_u, np.minimum(z, hi - pu), z)
        return z

    def evaluate(self, z: np.ndarray):
        x = self.full_x(z)
        ev = self.problem.eval_all(x)
        c = ev.residual.copy()
        c[self.slack_rows] += z[self.nx:]
        jac = np.zeros((self.m, self.nz))
        jac[:, :self.nx] = ev.jacobian[:, self.free]
        jac[self.slack_rows, self.slack_cols] = 1.0
        return ev, c, jac


def _fraction_to_boundary(v, dv, gap_mask, tau):
    """Largest alpha in (0, 1] keeping v + alpha dv >= (1 - tau) v on gap_mask (v > 0)."""
    neg = gap_mask & (dv < 0)
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))


def solve(problem: NlpProblem, options: IpmOptions = IpmOptions(),
          warm_start: WarmStart | None = None) -> IpmResult:
    """Minimize ``problem``; see the module docstring for the method."""
    t0 = time.perf_counter()
    st = _State(problem, options, warm_start)
    nx, nz, m = st.nx, st.nz, st.m
    lo, hi, has_l, has_u = st.lower, st.upper, st.has_l, st.has_u
    tau_min = options.fraction_to_boundary

    x0 = problem.init if warm_start is None else np.asarray(warm_start.x, dtype=float)
    if x0.shape != (problem.n,):
        raise ValueError("warm start has the wrong dimension")
    # a small barrier only pays off when the duals come along with x
    primal_dual = warm_start is not None and warm_start.duals_eq is not None
    push = options.warm_bound_push if primal_dual else options.bound_push
    mu = options.warm_mu_init if primal_dual else options.mu_init

    z = np.concatenate([x0[st.free], np.zeros(st.ns)])
    try:
        ev, c, jac = st.evaluate(z)
    except NlpEvaluationError as exc:
        return _failure(st, z, Status.NUMERICAL_FAILURE, str(exc), t0)
    # slacks from the constraint values
    z[nx:] = np.maximum(-ev.residual[st.ineq_rows], 0.0)
    z = st.push_inside(z, push)

    y = np.zeros(m)
    zl = np.zeros(nz)
    zu = np.zeros(nz)
    if warm_start is not None and warm_start.duals_eq is not None:
        y[st.eq] = warm_start.duals_eq
        y[~st.eq] = np.maximum(warm_start.duals_ineq, 0.0)
        net = np.concatenate([warm_start.duals_bounds[st.free], np.zeros(st.ns)])
        zl = np.where(has_l, np.maximum(-net, 0.0), 0.0)
        zu = np.where(has_u, np.maximum(net, 0.0), 0.0)
        zl[nx:] = y[st.ineq_rows]
    gap_l = np.where(has_l, z - lo, 1.0)
    gap_u = np.where(has_u, hi - z, 1.0)
    # keep bound multipliers consistent with the barrier parameter
    zl = np.where(has_l, np.maximum(zl, mu / gap_l), 0.0)
    zu = np.where(has_u, np.maximum(zu, mu / gap_u), 0.0)
    if warm_start is None:
        y = _least_squares_duals(st, jac, zl, zu)

    delta_last = 0.0
    it = 0
    status = Status.ITERATION_LIMIT
    message = ""
    err0 = math.inf
    try:
        ev, c, jac = st.evaluate(z)
        theta0 = float(np.abs(c).sum())
        theta_max = FILTER_THETA_MAX * max(1.0, theta0)
        theta_min = FILTER_THETA_MIN * max(1.0, theta0)
        filt = _Filter(theta_max)
        for it in range(options.max_iter + 1):
            gap_l = np.where(has_l, z - lo, 1.0)
            gap_u = np.where(has_u, hi - z, 1.0)
            grad_lag = st.grad_f + jac.T @ y - zl + zu
            s_d = max(1.0, max(np.abs(y).max(initial=0.0), zl.max(initial=0.0),
                               zu.max(initial=0.0)) / 100.0)
            infeas = float(np.abs(c).max(initial=0.0))
            stat = float(np.abs(grad_lag).max(initial=0.0)) / s_d

            def complementarity(target):
                cl = np.abs(np.where(has_l, gap_l * zl - target, 0.0)).max(initial=0.0)
                cu = np.abs(np.where(has_u, gap_u * zu - target, 0.0)).max(initial=0.0)
                return max(cl, cu) / s_d

            err0 = max(stat, infeas, complementarity(0.0))
            if err0 <= options.tol_kkt:
                status = Status.OPTIMAL
                break
            if it == options.max_iter:
                break
            mu_floor = options.tol_kkt / 10.0
            while mu > mu_floor and max(stat, infeas, complementarity(mu)) <= KAPPA_EPS * mu:
                mu = max(mu_floor, min(options.mu_reduce * mu, mu ** MU_SUPERLINEAR))
                filt.reset()
            tau = max(tau_min, 1.0 - mu)

            sigma = np.where(has_l, zl / gap_l, 0.0) + np.where(has_u, zu / gap_u, 0.0)
            hess = np.zeros((nz, nz))
            if not problem.is_linear:
                hx = ev.hessian(y)
                hess[:nx, :nx] = hx[np.ix_(st.free, st.free)]
            grad_phi = (st.grad_f - np.where(has_l, mu / gap_l, 0.0)
                        + np.where(has_u, mu / gap_u, 0.0))
            rhs = -np.concatenate([grad_phi + jac.T @ y, c])

            fac = None
            if problem.is_linear and sigma.min(initial=1.0) > 0.0:
                fac = _normal_factor(sigma, jac)
            if fac is None:
                fac, delta_last = _factor(hess, sigma, jac, delta_last, mu, options)
            if fac is None:
                status = Status.NUMERICAL_FAILURE
                message = "KKT matrix singular after maximal regularization"
                break
            sol = fac.solve(rhs)
            dz, dy = sol[:nz], sol[nz:]

            alpha_max = _fraction_to_boundary(gap_l, dz, has_l, tau)
            alpha_max = min(alpha_max, _fraction_to_boundary(gap_u, -dz, has_u, tau))

            def barrier(zz):
                gl = zz[has_l] - lo[has_l]
                gu = hi[has_u] - zz[has_u]
                if np.any(gl <= 0) or np.any(gu <= 0):
                    return math.inf
                return float(st.grad_f @ zz) - mu * (np.log(gl).sum() + np.log(gu).sum())

            theta = float(np.abs(c).sum())
            phi = barrier(z)
            dphi = float(grad_phi @ dz)
            search = _LineSearch(filt, theta, phi, dphi, theta_min)
            alpha = alpha_max
            alpha_min = search.alpha_min()
            trial = None
            while alpha >= alpha_min:
                z_try = z + alpha * dz
                try:
                    ev_t, c_t, jac_t = st.evaluate(z_try)
                    theta_t, phi_t = float(np.abs(c_t).sum()), barrier(z_try)
                except NlpEvaluationError:
                    theta_t = phi_t = math.inf
                if search.accepts(alpha, theta_t, phi_t):
                    trial = (z_try, ev_t, c_t, jac_t)
                    break
                if (alpha == alpha_max and options.second_order_correction
                        and math.isfinite(theta_t) and theta_t >= theta and theta > 0):
                    a0 = alpha
                    trial = _second_order_correction(
                        st, fac, grad_phi, jac, y, c, c_t, alpha, z, tau,
                        lambda zz, cc: search.accepts(a0, float(np.abs(cc).sum()), barrier(zz)))
                    if trial is not None:
                        break
                alpha *= 0.5

            if trial is None:
                # no acceptable step along the Newton direction: restore feasibility
                filt.add(theta, phi)
                restored = _restore(st, z, c, jac, filt, barrier, mu, options)
                if restored is None:
                    final = _final_duals(st, z, jac) if theta <= options.tol_kkt else None
                    if final is not None and final[3] <= options.tol_kkt:
                        # degenerate solutions (a bound pinned by an equality,
                        # no interior nearby) stall the barrier method right
                        # at the optimum; the zero-barrier test accepts them
                        y, zl, zu, err0 = final
                        status = Status.OPTIMAL
                        message = "accepted on the zero-barrier KKT test after the line search stalled"
                    elif theta <= options.tol_kkt:
                        status = Status.NUMERICAL_FAILURE
                        message = "line search failed at a feasible point"
                    else:
                        status = Status.INFEASIBLE
                        message = "converged to a point of locally minimal infeasibility"
                    break
                z, ev, c, jac = restored
                gap_l = np.where(has_l, z - lo, 1.0)
                gap_u = np.where(has_u, hi - z, 1.0)
                zl = np.where(has_l, np.minimum(np.maximum(zl, mu / gap_l), KAPPA_SIGMA * mu / gap_l), 0.0)
                zu = np.where(has_u, np.minimum(np.maximum(zu, mu / gap_u), KAPPA_SIGMA * mu / gap_u), 0.0)
                y = _least_squares_duals(st, jac, zl, zu)
                log.debug("it %3d mu %.1e err %.2e inf %.2e restoration", it, mu, err0,
                          float(np.abs(c).max(initial=0.0)))
                continue
            if search.h_type:
                filt.add(theta, phi)

            z_new, ev, c, jac = trial
            dzl = np.where(has_l, mu / gap_l - zl - np.where(has_l, zl / gap_l, 0.0) * dz, 0.0)
            dzu = np.where(has_u, mu / gap_u - zu + np.where(has_u, zu / gap_u, 0.0) * dz, 0.0)
            alpha_z = min(_fraction_to_boundary(zl, dzl, has_l, tau),
                          _fraction_to_boundary(zu, dzu, has_u, tau))
            z = z_new
            y = y + alpha_z * dy
            zl = zl + alpha_z * dzl
            zu = zu + alpha_z * dzu
            # safeguard keeping multipliers within a band around mu / gap
            gap_l = np.where(has_l, z - lo, 1.0)
            gap_u = np.where(has_u, hi - z, 1.0)
            zl = np.where(has_l, np.clip(zl, mu / (KAPPA_SIGMA * gap_l), KAPPA_SIGMA * mu / gap_l), 0.0)
            zu = np.where(has_u, np.clip(zu, mu / (KAPPA_SIGMA * gap_u), KAPPA_SIGMA * mu / gap_u), 0.0)
            log.debug("it %3d mu %.1e err %.2e inf %.2e alpha %.2e delta %.1e",
                      it, mu, err0, float(np.abs(c).max(initial=0.0)), alpha, delta_last)
    except NlpEvaluationError as exc:
        status = Status.NUMERICAL_FAILURE
        message = str(exc)
    except np.linalg.LinAlgError as exc:
        status = Status.NUMERICAL_FAILURE
        message = str(exc)

    x = st.full_x(z)
    net = np.zeros(problem.n)
    net[st.free] = (zu - zl)[:nx]
    return IpmResult(
        status=status, x=x, duals_eq=y[st.eq].copy(), duals_ineq=y[~st.eq].copy(),
        duals_bounds=net, kkt_residual=float(err0), iterations=it,
        wall_time=time.perf_counter() - t0, objective=float(problem.cost @ x) + problem.objective_constant,
        primal_infeasibility=float(np.abs(problem.residual(x)[st.eq]).max(initial=0.0)),
        message=message,
    )


def _failure(st: _State, z, status, message, t0) -> IpmResult:
    x = st.full_x(z)
    return IpmResult(status, x, np.zeros(int(st.eq.sum())), np.zeros(st.ns), np.zeros(st.n),
                     math.inf, 0, time.perf_counter() - t0, message=message)


def _least_squares_duals(st: _State, jac: np.ndarray, zl, zu) -> np.ndarray:
    """Multipliers minimizing the stationarity residual at the start point."""
    if st.m == 0:
        return np.zeros(0)
    rhs = -(st.grad_f - zl + zu)
    y, *_ = np.linalg.lstsq(jac.T, rhs, rcond=None)
    if not np.all(np.isfinite(y)) or np.abs(y).max(initial=0.0) > 1e3:
        return np.zeros(st.m)
    # inequality multipliers must stay non-negative
    y[st.ineq_rows] = np.maximum(y[st.ineq_rows], 0.0)
    return y


def _final_duals(st: _State, z, jac):
    """Multipliers for the plain (zero-barrier) KKT conditions at ``z`` and the
    resulting scaled error, as ``(y, zl, zu, err)``.

    Bound multipliers are only given to bounds within ``ACTIVE_GAP``; the
    least-squares fit keeps inequality and bound multipliers non-negative.
    """
    gap_l = np.where(st.has_l, z - st.lower, np.inf)
    gap_u = np.where(st.has_u, st.upper - z, np.inf)
    act_l = np.flatnonzero(gap_l <= ACTIVE_GAP)
    act_u = np.flatnonzero(gap_u <= ACTIVE_GAP)
    nz, m = jac.shape[1], st.m
    eye = np.eye(nz)
    a = np.hstack([jac.T, -eye[:, act_l], eye[:, act_u]])
    lb = np.concatenate([np.full(m, -np.inf), np.zeros(act_l.size + act_u.size)])
    lb[st.ineq_rows] = 0.0
    if a.shape[1] == 0:
        return None
    fit = lsq_linear(a, -st.grad_f, bounds=(lb, np.inf))
    y = fit.x[:m]
    zl = np.zeros(nz)
    zu = np.zeros(nz)
    zl[act_l] = fit.x[m:m + act_l.size]
    zu[act_u] = fit.x[m + act_l.size:]
    s_d = max(1.0, np.abs(fit.x).max(initial=0.0) / 100.0)
    stat = float(np.abs(st.grad_f + jac.T @ y - zl + zu).max(initial=0.0)) / s_d
    compl = max(float((gap_l[act_l] * zl[act_l]).max(initial=0.0)),
                float((gap_u[act_u] * zu[act_u]).max(initial=0.0))) / s_d
    return y, zl, zu, max(stat, compl)


def _factor(hess, sigma, jac, delta_last, mu, options: IpmOptions):
    nz = hess.shape[0]
    m = jac.shape[0]
    size = nz + m
    kkt = np.zeros((size, size))
    kkt[:nz, :nz] = hess
    kkt[np.arange(nz), np.arange(nz)] += sigma
    kkt[nz:, :nz] = jac
    kkt[:nz, nz:] = jac.T
    scale = max(1.0, float(np.abs(kkt).max(initial=0.0)))
    # only pivots at the level of rounding noise count as zero; tiny but
    # genuine eigenvalues appear when sigma is huge near an active bound
    zero_tol = 1e-6 * np.finfo(float).eps * scale

    delta_w = 0.0
    delta_c = 0.0
    for _ in range(200):
        mat = kkt.copy()
        if delta_w:
            mat[np.arange(nz), np.arange(nz)] += delta_w
        if delta_c:
            mat[np.arange(nz, size), np.arange(nz, size)] -= delta_c
        ldu, ipiv, info = lapack.dsytrf(mat, lower=1, lwork=_sytrf_lwork(size))
        if info < 0:
            return None, delta_last
        pos, neg, zero = inertia(ldu, ipiv, zero_tol)
        if info == 0 and pos == nz and neg == m and zero == 0:
            if delta_w:
                delta_last = delta_w
            return _Factorization(ldu, ipiv), delta_last
        if (zero or info > 0 or neg < m) and m:
            # too few negative pivots: the constraint Jacobian is (nearly)
            # rank deficient, which only a dual regularization repairs
            if delta_c == 0.0:
                delta_c = 1e-8 * mu ** 0.25
                continue
            delta_c = min(10.0 * delta_c, 1e-2)
            if neg < m:
                continue
        if delta_w == 0.0:
            delta_w = max(options.inertia_regularization, delta_last / 2.0)
        else:
            delta_w *= 2.0
        if delta_w > options.max_regularization:
            return None, delta_last
    return None, delta_last


class _Filter:
    """Pairs ``(theta, phi)`` that later iterates must improve upon, stored
    with their sufficient-decrease margins already applied."""

    def __init__(self, theta_max: float):
        self.theta_max = theta_max
        self.entries: list[tuple[float, float]] = []

    def reset(self) -> None:
        self.entries = []

    def add(self, theta: float, phi: float) -> None:
        self.entries.append(((1.0 - GAMMA_THETA) * theta, phi - GAMMA_PHI * theta))

    def acceptable(self, theta: float, phi: float) -> bool:
        if not (theta <= self.theta_max and math.isfinite(phi)):
            return False
        return all(theta < t or phi < f for t, f in self.entries)


class _LineSearch:
    """Acceptance test for trial points along one search direction."""

    def __init__(self, filt: _Filter, theta: float, phi: float, dphi: float, theta_min: float):
        self.filt = filt
        self.theta = theta
        self.phi = phi
        self.dphi = dphi
        self.theta_min = theta_min
        self.h_type = True

    def _switching(self, alpha: float) -> bool:
        return self.dphi < 0 and alpha * (-self.dphi) ** SWITCH_S_PHI > \
            SWITCH_DELTA * self.theta ** SWITCH_S_THETA

    def alpha_min(self) -> float:
        a = GAMMA_THETA
        if self.dphi < 0:
            a = min(a, GAMMA_PHI * self.theta / -self.dphi)
            if self.theta <= self.theta_min:
                a = min(a, SWITCH_DELTA * self.theta ** SWITCH_S_THETA / (-self.dphi) ** SWITCH_S_PHI)
        return max(GAMMA_ALPHA * a, 1e-14)

    def accepts(self, alpha: float, theta_t: float, phi_t: float) -> bool:
        if not (math.isfinite(theta_t) and self.filt.acceptable(theta_t, phi_t)):
            return False
        if self.theta <= self.theta_min and self._switching(alpha):
            # objective-type step: Armijo on the barrier function alone
            self.h_type = False
            return phi_t <= self.phi + ARMIJO_ETA * alpha * self.dphi
        self.h_type = True
        return (theta_t <= (1.0 - GAMMA_THETA) * self.theta
                or phi_t <= self.phi - GAMMA_PHI * self.theta)


def _elastic(c: np.ndarray, rho: float, mu: float):
    """Barrier-smoothed ``rho |c|`` per row.

    ``psi(c) = min rho (p + n) - mu (log p + log n)`` over ``p - n = c``,
    solved in closed form; returns ``psi``, its first and second derivatives.
    """
    a = (mu - rho * c) / (2.0 * rho)
    n = a + np.sqrt(a * a + mu * c / (2.0 * rho))
    p = c + n
    psi = rho * (p + n) - mu * (np.log(p) + np.log(n))
    return psi, rho - mu / p, mu / (p * p + n * n)


def _restore(st: _State, z, c, jac, filt: _Filter, barrier, mu: float, options: IpmOptions):
    """Reduce the constraint violation until the filter accepts the point.

    Minimizes ``sum psi(c_i) + zeta/2 ||D (z - z_R)||^2`` over the bounds by
    a primal-dual barrier Newton method, ``psi`` being the smoothed absolute
    value of :func:`_elastic`. Returns ``(z, ev, c, jac)``, or None when the
    violation cannot be reduced further, which signals local infeasibility.
    """
    lo, hi, has_l, has_u = st.lower, st.upper, st.has_l, st.has_u
    nx, nz = st.nx, st.nz
    theta0 = float(np.abs(c).sum())
    mu_r = max(mu, float(np.abs(c).max(initial=0.0)))
    mu_floor = options.tol_kkt / 10.0
    z_ref = z.copy()
    d2 = np.minimum(1.0, 1.0 / np.maximum(np.abs(z_ref), 1e-300)) ** 2
    gap_l = np.where(has_l, z - lo, 1.0)
    gap_u = np.where(has_u, hi - z, 1.0)
    zl = np.where(has_l, mu_r / gap_l, 0.0)
    zu = np.where(has_u, mu_r / gap_u, 0.0)
    ev = None
    delta = 0.0
    for k in range(RESTORATION_MAX_ITER):
        theta = float(np.abs(c).sum())
        if ev is not None and theta <= 0.9 * theta0 and filt.acceptable(theta, barrier(z)):
            return z, ev, c, jac
        zeta = math.sqrt(mu_r)
        _, lam, curv = _elastic(c, RESTORATION_RHO, mu_r)
        grad = jac.T @ lam + zeta * d2 * (z - z_ref)
        gap_l = np.where(has_l, z - lo, 1.0)
        gap_u = np.where(has_u, hi - z, 1.0)
        stat = float(np.abs(grad - zl + zu).max(initial=0.0))
        comp = max(np.abs(np.where(has_l, gap_l * zl - mu_r, 0.0)).max(initial=0.0),
                   np.abs(np.where(has_u, gap_u * zu - mu_r, 0.0)).max(initial=0.0))
        if max(stat, comp) <= KAPPA_EPS * mu_r:
            if mu_r <= mu_floor:
                return None
            mu_r = max(mu_floor, min(0.2 * mu_r, mu_r ** MU_SUPERLINEAR))
            continue
        tau = max(options.fraction_to_boundary, 1.0 - mu_r)

        def merit(zz, cc):
            gl = zz[has_l] - lo[has_l]
            gu = hi[has_u] - zz[has_u]
            if np.any(gl <= 0) or np.any(gu <= 0):
                return math.inf
            psi, _, _ = _elastic(cc, RESTORATION_RHO, mu_r)
            return (float(psi.sum()) + 0.5 * zeta * float(d2 @ (zz - z_ref) ** 2)
                    - mu_r * (np.log(gl).sum() + np.log(gu).sum()))

        hess = (jac.T * curv) @ jac
        if ev is None:
            ev = st.problem.eval_all(st.full_x(z))
        hx = ev.hessian(lam)
        hess[:nx, :nx] += hx[np.ix_(st.free, st.free)]
        sigma = np.where(has_l, zl / gap_l, 0.0) + np.where(has_u, zu / gap_u, 0.0)
        hess[np.arange(nz), np.arange(nz)] += zeta * d2 + sigma
        grad_phi = grad - np.where(has_l, mu_r / gap_l, 0.0) + np.where(has_u, mu_r / gap_u, 0.0)
        # convexify until Cholesky succeeds
        delta = 0.0 if delta == 0.0 else delta / 4.0
        while True:
            chol, info = lapack.dpotrf(hess + delta * np.eye(nz), lower=1)
            if info == 0:
                break
            delta = max(1e-8, 8.0 * delta)
            if delta > options.max_regularization:
                return None
        dz, info = lapack.dpotrs(chol, -grad_phi, lower=1)
        if info != 0:
            return None
        alpha = min(_fraction_to_boundary(gap_l, dz, has_l, tau),
                    _fraction_to_boundary(gap_u, -dz, has_u, tau))
        f0 = merit(z, c)
        slope = float(grad_phi @ dz)
        trial = None
        while alpha > 1e-14:
            try:
                ev_t, c_t, jac_t = st.evaluate(z + alpha * dz)
                if merit(z + alpha * dz, c_t) <= f0 + ARMIJO_ETA * alpha * slope:
                    trial = (z + alpha * dz, ev_t, c_t, jac_t)
                    break
            except NlpEvaluationError:
                pass
            alpha *= 0.5
        if trial is None:
            return None
        dzl = np.where(has_l, mu_r / gap_l - zl - zl / gap_l * dz, 0.0)
        dzu = np.where(has_u, mu_r / gap_u - zu + zu / gap_u * dz, 0.0)
        alpha_z = min(_fraction_to_boundary(zl, dzl, has_l, tau),
                      _fraction_to_boundary(zu, dzu, has_u, tau))
        z, ev, c, jac = trial
        zl = zl + alpha_z * dzl
        zu = zu + alpha_z * dzu
        gap_l = np.where(has_l, z - lo, 1.0)
        gap_u = np.where(has_u, hi - z, 1.0)
        zl = np.where(has_l, np.clip(zl, mu_r / (KAPPA_SIGMA * gap_l), KAPPA_SIGMA * mu_r / gap_l), 0.0)
        zu = np.where(has_u, np.clip(zu, mu_r / (KAPPA_SIGMA * gap_u), KAPPA_SIGMA * mu_r / gap_u), 0.0)
        log.debug("    restoration %3d mu %.1e inf %.2e alpha %.2e", k, mu_r,
                  float(np.abs(c).max(initial=0.0)), alpha)
    return None

def _second_order_correction(st, fac, grad_phi, jac, y, c, c_trial, alpha, z, tau,
                             acceptable, max_tries: int = 4):
    """Up to ``max_tries`` corrected trial points after a rejected full step.

    Each correction re-solves with the same factorization and the constraint
    residual replaced by ``alpha * c_soc + c(trial)``; returns the accepted
    ``(z, ev, c, jac)`` or None.
    """
    c_soc = c.copy()
    c_prev = c_trial
    theta_prev = float(np.abs(c_trial).sum())
    for _ in range(max_tries):
        c_soc = alpha * c_soc + c_prev
        try:
            sol = fac.solve(-np.concatenate([grad_phi + jac.T @ y, c_soc]))
        except np.linalg.LinAlgError:
            return None
        d = sol[:st.nz]
        gap_l = np.where(st.has_l, z - st.lower, 1.0)
        gap_u = np.where(st.has_u, st.upper - z, 1.0)
        alpha = min(_fraction_to_boundary(gap_l, d, st.has_l, tau),
                    _fraction_to_boundary(gap_u, -d, st.has_u, tau))
        z_soc = z + alpha * d
        try:
            ev_s, c_s, jac_s = st.evaluate(z_soc)
        except NlpEvaluationError:
            return None
        if acceptable(z_soc, c_s):
            return z_soc, ev_s, c_s, jac_s
        theta = float(np.abs(c_s).sum())
        # give up once the corrections stop reducing infeasibility
        if theta > 0.99 * theta_prev:
            return None
        theta_prev = theta
        c_prev = c_s
    return None


def kkt_report(problem: NlpProblem, result: IpmResult) -> dict[str, float]:
    """Recompute the unscaled first-order conditions at a result, from scratch."""
    x = result.x
    ev = problem.eval_all(x)
    eq = problem.eq_mask
    y = np.zeros(problem.m)
    y[eq] = result.duals_eq
    y[~eq] = result.duals_ineq
    grad = problem.cost + ev.jacobian.T @ y + result.duals_bounds
    lo, hi = problem.lower, problem.upper
    fixed = lo == hi
    grad[fixed] = 0.0
    viol = np.concatenate([np.abs(ev.residual[eq]), np.maximum(ev.residual[~eq], 0.0)])
    s_d = max(1.0, float(np.abs(np.concatenate([y, result.duals_bounds])).max(initial=0.0)) / 100.0)
    return {
        "stationarity": float(np.abs(grad).max(initial=0.0)) / s_d,
        "primal": float(viol.max(initial=0.0)),
        "bound_violation": float(np.maximum(np.maximum(lo - x, x - hi), 0.0).max(initial=0.0)),
        "dual_sign": float(np.maximum(-result.duals_ineq, 0.0).max(initial=0.0)),
    }


def solve_dispatch(network, kind, options: IpmOptions = IpmOptions(),
                   warm_start: WarmStart | None = None) -> IpmResult:
    """Cost-minimizing dispatch (interface cost plus DG cost) under ``kind``."""
    from .formulations import build

    return solve(build(network, kind), options, warm_start)
