"""Smooth nonlinear programs with a linear objective and analytic derivatives.

A problem is a list of :class:`Variable` plus a list of constraint blocks.
Each block evaluates a vector of residuals with a fixed Jacobian and
Hessian sparsity pattern, which lets the solver assemble dense KKT matrices
with a single ``bincount`` per iteration.

Equality rows mean ``g(x) = 0``, inequality rows mean ``h(x) <= 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

EQ = "eq"
INEQ = "ineq"


class NlpEvaluationError(FloatingPointError):
    """A callback produced a non-finite value."""


@dataclass(frozen=True)
class Variable:
    name: str
    lower: float = -math.inf
    upper: float = math.inf
    init: float = 0.0
    tag: str = ""  # equation implemented by the bounds, if any

    def __post_init__(self) -> None:
        if not self.lower <= self.upper:
            raise ValueError(f"{self.name}: lower bound above upper bound")
        clipped = min(max(self.init, self.lower), self.upper)
        if clipped != self.init:
            object.__setattr__(self, "init", clipped)


class Constraint:
    """Base class for a block of constraint rows sharing one equation tag.

    Subclasses set ``jac_rows``/``jac_cols`` and ``hess_rows``/``hess_cols``
    (local row indices, global variable indices) once, and implement
    :meth:`residual`, :meth:`jacobian` and :meth:`hessian`, the latter two
    returning values aligned with those patterns. Duplicate pattern entries
    are summed on assembly. Hessian patterns list both triangles.
    """

    name: str
    kind: str
    labels: tuple[str, ...]
    jac_rows: np.ndarray
    jac_cols: np.ndarray
    hess_rows: np.ndarray
    hess_cols: np.ndarray

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def is_linear(self) -> bool:
        return self.hess_rows.size == 0

    def residual(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Values of sum_k weights[k] * Hessian(row k) on the Hessian pattern."""
        raise NotImplementedError

    def dense_jacobian(self, x: np.ndarray, n: int) -> np.ndarray:
        out = np.zeros((self.size, n))
        np.add.at(out, (self.jac_rows, self.jac_cols), self.jacobian(x))
        return out

    def dense_hessian(self, x: np.ndarray, weights: np.ndarray, n: int) -> np.ndarray:
        out = np.zeros((n, n))
        if self.hess_rows.size:
            np.add.at(out, (self.hess_rows, self.hess_cols), self.hessian(x, weights))
        return out


class PolynomialConstraint(Constraint):
    """Rows that are sums of monomials ``coef * x[i1] * x[i2] * ...`` plus a constant.

    Covers every linear, quadratic and cubic (``l * v**2``) relation of the
    branch-flow models. Usually assembled through :class:`PolynomialBuilder`.
    """

    def __init__(self, name: str, kind: str, labels: Sequence[str],
                 terms: Iterable[tuple[int, float, tuple[int, ...]]],
                 constants: Sequence[float]):
        if kind not in (EQ, INEQ):
            raise ValueError(f"bad constraint kind {kind!r}")
        self.name = name
        self.kind = kind
        self.labels = tuple(labels)
        self.constants = np.asarray(constants, dtype=float)
        by_degree: dict[int, list[tuple[int, float, tuple[int, ...]]]] = {}
        for row, coef, idx in terms:
            if coef != 0.0:
                by_degree.setdefault(len(idx), []).append((row, coef, tuple(idx)))
        self._groups = []
        jr, jc, hr, hc = [], [], [], []
        for degree, items in sorted(by_degree.items()):
            rows = np.array([t[0] for t in items], dtype=np.intp)
            coefs = np.array([t[1] for t in items], dtype=float)
            idx = np.array([t[2] for t in items], dtype=np.intp).reshape(len(items), degree)
            self._groups.append((degree, rows, coefs, idx))
            for a in range(degree):
                jr.append(rows)
                jc.append(idx[:, a])
            for a in range(degree):
                for b in range(degree):
                    if a != b:
                        hr.append(idx[:, a])
                        hc.append(idx[:, b])
        empty = np.zeros(0, dtype=np.intp)
        self.jac_rows = np.concatenate(jr) if jr else empty
        self.jac_cols = np.concatenate(jc) if jc else empty
        self.hess_rows = np.concatenate(hr) if hr else empty
        self.hess_cols = np.concatenate(hc) if hc else empty

    @staticmethod
    def _partial(x: np.ndarray, idx: np.ndarray, skip: tuple[int, ...]) -> np.ndarray:
        out = np.ones(idx.shape[0])
        for c in range(idx.shape[1]):
            if c not in skip:
                out = out * x[idx[:, c]]
        return out

    def residual(self, x: np.ndarray) -> np.ndarray:
        out = self.constants.copy()
        for _, rows, coefs, idx in self._groups:
            out += np.bincount(rows, weights=coefs * self._partial(x, idx, ()),
                               minlength=self.size)
        return out

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        parts = []
        for degree, _, coefs, idx in self._groups:
            for a in range(degree):
                parts.append(coefs * self._partial(x, idx, (a,)))
        return np.concatenate(parts) if parts else np.zeros(0)

    def hessian(self, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        parts = []
        for degree, rows, coefs, idx in self._groups:
            w = coefs * weights[rows]
            for a in range(degree):
                for b in range(degree):
                    if a != b:
                        parts.append(w * self._partial(x, idx, (a, b)))
        return np.concatenate(parts) if parts else np.zeros(0)


class PolynomialBuilder:
    """Accumulate rows for a :class:`PolynomialConstraint`."""

    def __init__(self, name: str, kind: str = EQ):
        self.name = name
        self.kind = kind
        self.labels: list[str] = []
        self.terms: list[tuple[int, float, tuple[int, ...]]] = []
        self.constants: list[float] = []

    def add_row(self, label: str, terms: Iterable[tuple[float, Sequence[int]]],
                constant: float = 0.0) -> None:
        row = len(self.labels)
        self.labels.append(label)
        self.constants.append(constant)
        self.terms.extend((row, float(c), tuple(idx)) for c, idx in terms)

    def build(self) -> PolynomialConstraint:
        merged: dict[tuple[int, tuple[int, ...]], float] = {}
        for row, coef, idx in self.terms:
            key = (row, tuple(sorted(idx)))
            merged[key] = merged.get(key, 0.0) + coef
        terms = [(row, coef, idx) for (row, idx), coef in merged.items() if coef != 0.0]
        return PolynomialConstraint(self.name, self.kind, self.labels, terms, self.constants)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class Evaluation:
    """Everything the solver needs at one point."""

    objective: float
    residual: np.ndarray
    jacobian: np.ndarray  # dense, rows in constraint order
    problem: "NlpProblem"
    x: np.ndarray

    def hessian(self, weights: np.ndarray) -> np.ndarray:
        """Hessian of the Lagrangian (the objective is linear, so only constraints)."""
        return self.problem.dense_hessian(self.x, weights)


@dataclass(frozen=True)
class NlpProblem:
    """``min c.x + c0`` subject to constraint blocks and variable bounds.

    ``interface`` holds the indices of the substation exchange variables
    ``(p_se, q_se)``.
    """

    variables: tuple[Variable, ...]
    objective: tuple[tuple[int, float], ...]
    constraints: tuple[Constraint, ...]
    interface: tuple[int, int]
    objective_constant: float = 0.0
    name: str = ""
    index: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "objective", tuple((int(i), float(c)) for i, c in self.objective))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        n = len(self.variables)
        for i, _ in self.objective:
            if not 0 <= i < n:
                raise ValueError(f"objective index {i} out of range")
        if not all(0 <= i < n for i in self.interface):
            raise ValueError("interface indices out of range")
        if not self.index:
            object.__setattr__(self, "index", {v.name: k for k, v in enumerate(self.variables)})

    # -- structure ---------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.variables)

    @cached_property
    def m(self) -> int:
        return sum(c.size for c in self.constraints)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.cumsum([0] + [c.size for c in self.constraints])

    @cached_property
    def eq_mask(self) -> np.ndarray:
        return np.concatenate(
            [np.full(c.size, c.kind == EQ) for c in self.constraints]
        ) if self.constraints else np.zeros(0, dtype=bool)

    @cached_property
    def row_labels(self) -> tuple[str, ...]:
        # bare labels get the block name so every row is identifiable
        return tuple(lab if "[" in lab else f"{c.name}[{lab}]"
                     for c in self.constraints for lab in c.labels)

    @cached_property
    def is_linear(self) -> bool:
        return all(c.is_linear for c in self.constraints)

    @cached_property
    def lower(self) -> np.ndarray:
        return np.array([v.lower for v in self.variables])

    @cached_property
    def upper(self) -> np.ndarray:
        return np.array([v.upper for v in self.variables])

    @cached_property
    def init(self) -> np.ndarray:
        return np.array([v.init for v in self.variables])

    @cached_property
    def cost(self) -> np.ndarray:
        c = np.zeros(self.n)
        for i, coef in self.objective:
            c[i] += coef
        return c

    @cached_property
    def _jac_flat(self) -> np.ndarray:
        parts = [
            (c.jac_rows + off) * self.n + c.jac_cols
            for c, off in zip(self.constraints, self.offsets)
        ]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.intp)

    @cached_property
    def _hess_flat(self) -> np.ndarray:
        parts = [c.hess_rows * self.n + c.hess_cols for c in self.constraints]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.intp)

    @cached_property
    def _nonlinear(self) -> tuple[int, ...]:
        return tuple(k for k, c in enumerate(self.constraints) if not c.is_linear)

    @cached_property
    def jacobian_pattern(self) -> tuple[np.ndarray, np.ndarray]:
        return np.divmod(self._jac_flat, self.n)

    # -- variants ----------------------------------------------------------

    def with_objective(self, objective: Iterable[tuple[int, float]], constant: float = 0.0) -> "NlpProblem":
        return self._derive(objective=tuple(objective), objective_constant=constant)

    def with_bounds(self, bounds: dict[int, tuple[float, float]]) -> "NlpProblem":
        variables = list(self.variables)
        for i, (lo, hi) in bounds.items():
            variables[i] = replace(variables[i], lower=lo, upper=hi)
        return self._derive(variables=tuple(variables))

    def _derive(self, **changes) -> "NlpProblem":
        new = replace(self, **changes)
        # structural caches stay valid when only bounds or objective change
        for key in ("m", "offsets", "eq_mask", "row_labels", "is_linear",
                    "_jac_flat", "_hess_flat", "_nonlinear", "jacobian_pattern"):
            if key in self.__dict__:
                new.__dict__[key] = self.__dict__[key]
        return new

    # -- evaluation --------------------------------------------------------

    def residual(self, x: np.ndarray) -> np.ndarray:
        if not self.constraints:
            return np.zeros(0)
        return np.concatenate([c.residual(x) for c in self.constraints])

    def dense_jacobian(self, x: np.ndarray) -> np.ndarray:
        if not self.constraints:
            return np.zeros((0, self.n))
        vals = np.concatenate([c.jacobian(x) for c in self.constraints])
        return np.bincount(self._jac_flat, weights=vals,
                           minlength=self.m * self.n).reshape(self.m, self.n)

    def dense_hessian(self, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        n = self.n
        if not self._nonlinear:
            return np.zeros((n, n))
        vals = []
        flats = []
        for k in self._nonlinear:
            c = self.constraints[k]
            lo, hi = self.offsets[k], self.offsets[k + 1]
            vals.append(c.hessian(x, weights[lo:hi]))
            flats.append(c.hess_rows * n + c.hess_cols)
        hess = np.bincount(np.concatenate(flats), weights=np.concatenate(vals),
                           minlength=n * n).reshape(n, n)
        # blocks sum into (i, j) and (j, i) in different orders; average the
        # rounding away so the result is exactly symmetric
        return 0.5 * (hess + hess.T)

    def eval_all(self, x: np.ndarray) -> Evaluation:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected {self.n} values, got shape {x.shape}")
        objective = float(self.cost @ x) + self.objective_constant
        residual = self.residual(x)
        jac = self.dense_jacobian(x)
        if not np.all(np.isfinite(residual)) or not np.all(np.isfinite(jac)):
            bad = np.flatnonzero(~np.isfinite(residual) | ~np.all(np.isfinite(jac), axis=1))
            raise NlpEvaluationError(f"non-finite value in constraint {self.row_labels[bad[0]]}")
        return Evaluation(objective, residual, jac, self, x)

    def constraint_rows(self, name: str) -> slice:
        for k, c in enumerate(self.constraints):
            if c.name == name:
                return slice(self.offsets[k], self.offsets[k + 1])
        raise KeyError(name)

    def equation_tags(self) -> set[str]:
        """Equation tags implemented by constraints and variable bounds."""
        tags = set()
        for c in self.constraints:
            tags.update(t for t in c.name.split("+") if t)
        for v in self.variables:
            tags.update(t for t in v.tag.split("+") if t)
        return tags


@dataclass(frozen=True)
class DerivativeCheck:
    name: str
    max_rel_error: float
    passed: bool


def check_derivatives(problem: NlpProblem, x: np.ndarray, step: float = 1e-6,
                      rel_tol: float = 1e-5) -> list[DerivativeCheck]:
    """Compare analytic Jacobians and Hessians with central differences.

    The error of an entry is ``|fd - analytic| / max(1, |analytic|)``; one
    result per constraint block, covering all its rows.
    """
    x = np.asarray(x, dtype=float)
    n = problem.n
    out = []
    for c in problem.constraints:
        jac = c.dense_jacobian(x, n)
        fd_jac = np.empty_like(jac)
        fd_hess = np.empty((c.size, n, n))
        for j in range(n):
            xp = x.copy()
            xm = x.copy()
            xp[j] += step
            xm[j] -= step
            fd_jac[:, j] = (c.residual(xp) - c.residual(xm)) / (2 * step)
            fd_hess[:, :, j] = (c.dense_jacobian(xp, n) - c.dense_jacobian(xm, n)) / (2 * step)
        err = np.abs(fd_jac - jac) / np.maximum(1.0, np.abs(jac))
        worst = float(err.max()) if err.size else 0.0
        for k in range(c.size):
            weights = np.zeros(c.size)
            weights[k] = 1.0
            hess = c.dense_hessian(x, weights, n)
            if not np.array_equal(hess, hess.T):
                worst = math.inf
                break
            e = np.abs(fd_hess[k] - hess) / np.maximum(1.0, np.abs(hess))
            worst = max(worst, float(e.max()))
        out.append(DerivativeCheck(c.name, worst, worst <= rel_tol))
    return out


def random_interior_point(problem: NlpProblem, rng: np.random.Generator,
                          margin: float = 1e-3, spread: float = 1.0) -> np.ndarray:
    """Uniform point inside the bounds, shrunk by ``margin``; unbounded
    coordinates are drawn within ``spread`` of the initial value."""
    lo = problem.lower.copy()
    hi = problem.upper.copy()
    init = problem.init
    lo = np.where(np.isfinite(lo), lo, init - spread)
    hi = np.where(np.isfinite(hi), hi, init + spread)
    width = hi - lo
    return lo + margin * width + rng.random(problem.n) * width * (1 - 2 * margin)
