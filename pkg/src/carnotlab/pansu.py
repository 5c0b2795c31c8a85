"""Pansu difference quotients and Gateaux differential estimation for real-valued maps.

For ``f: G -> R`` the rescaled map ``delta_(1/lam) o L_f(p)^-1 o f o L_p o delta_lam``
evaluates to ``(f(p delta_lam(u)) - f(p)) / lam``.  A differential is estimated by
tabulating this quotient along a decreasing ``lam`` schedule, testing each
direction for a Cauchy tail and then measuring how far the limit map is from a
homogeneous homomorphism on the sampled directions.  Every estimate only sees
finitely many directions, so a ``differentiable`` verdict is evidence, not proof.

The domain may be a :class:`CarnotGroup` or an :class:`LpSpace`; both element
types provide ``*``, ``inverse()`` and ``dilate()``.
"""
from __future__ import annotations

import ast
import csv
import io
import math
import operator
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .carnot_group import CarnotGroup, GroupElement, dilate
from .errors import ConfigError, DomainError
from .homogeneous_metric import HomogeneousNorm, default_norm, distance, norm
from .lp_scalable import LpElement, LpSpace, lp_distance, lp_norm

DEFAULT_SCHEDULE = tuple(2.0 ** (-n) for n in range(1, 21))
DEFAULT_T_SAMPLES = (-2.0, -1.0, -0.5, 0.5, 2.0, 3.0)
GAP_WINDOW = 4
VERDICTS = ("differentiable", "not_converged", "not_homomorphism")


class EvaluationError(RuntimeError):
    """The function evaluator failed; carries the quotient arguments."""


# functions ---------------------------------------------------------------


@dataclass
class ScalarFunction:
    """Real-valued function on a group or lp space.

    ``serial`` functions are never evaluated from worker processes.
    """

    evaluator: Callable
    label: str = "f"
    lipschitz: float | None = None
    serial: bool = False

    def __call__(self, g):
        return self.evaluator(g)


def _element_norm(n: HomogeneousNorm | None, g) -> float:
    if isinstance(g, LpElement):
        return lp_norm(g)
    return norm(n or default_norm(g.group), g)


def _element_distance(n: HomogeneousNorm | None, a, b) -> float:
    if isinstance(a, LpElement):
        return lp_distance(a, b)
    return distance(n or default_norm(a.group), a, b)


@dataclass
class Coordinate:
    index: int
    component: int | None = None

    def __call__(self, g):
        if isinstance(g, LpElement):
            return g.entry(self.component or 0).coords[self.index]
        return g.coords[self.index]


@dataclass
class Linear:
    """``<a, g_1>``: a linear form on the first-layer coordinates."""

    weights: tuple

    def __call__(self, g):
        return sum(w * c for w, c in zip(self.weights, g.coords))


@dataclass
class NormOf:
    norm: HomogeneousNorm | None = None

    def __call__(self, g):
        return _element_norm(self.norm, g)


@dataclass
class DistanceTo:
    point: object
    norm: HomogeneousNorm | None = None

    def __call__(self, g):
        return _element_distance(self.norm, self.point, g)


@dataclass
class MaxDistance:
    points: tuple
    norm: HomogeneousNorm | None = None

    def __call__(self, g):
        return max(_element_distance(self.norm, q, g) for q in self.points)


def coordinate_function(index: int, component: int | None = None, label: str | None = None) -> ScalarFunction:
    return ScalarFunction(Coordinate(index, component), label or f"coordinate({index})")


def linear_function(weights: Sequence) -> ScalarFunction:
    return ScalarFunction(Linear(tuple(weights)), f"linear{tuple(weights)}")


def norm_function(n: HomogeneousNorm | None = None) -> ScalarFunction:
    return ScalarFunction(NormOf(n), "norm", lipschitz=1.0)


def distance_function(q, n: HomogeneousNorm | None = None) -> ScalarFunction:
    return ScalarFunction(DistanceTo(q, n), "distance", lipschitz=1.0)


def max_distance_function(qs: Sequence, n: HomogeneousNorm | None = None) -> ScalarFunction:
    return ScalarFunction(MaxDistance(tuple(qs), n), "max_distance", lipschitz=1.0)


# expression grammar --------------------------------------------------------

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {
    "abs": abs,
    "sqrt": math.sqrt,
    "exp": math.exp,
    "log": math.log,
    "sin": math.sin,
    "cos": math.cos,
    "min": min,
    "max": max,
}
_CONSTS = {"pi": math.pi, "e": math.e}


def _variables(dim: int, heisenberg: bool) -> dict[str, int]:
    names = {f"x{i + 1}": i for i in range(dim)}
    if heisenberg:
        names.update({"x": 0, "y": 1, "t": 2})
    return names


class Expression:
    """Arithmetic expression over coordinates (``x1..xn``; ``x, y, t`` on the
    Heisenberg group), ``norm`` and the functions ``abs sqrt exp log sin cos min max``."""

    def __init__(self, source: str, group: CarnotGroup, n: HomogeneousNorm | None = None):
        self.source = source
        self.group = group
        self.norm = n or default_norm(group)
        self._vars = _variables(group.dim, group.rank == 2 and group.step == 2)
        try:
            tree = ast.parse(source.strip(), mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse expression {source!r} at column {exc.offset}: {exc.msg}") from None
        self._validate(tree.body)
        self._tree = tree.body

    def __getstate__(self):
        return {"source": self.source, "group": self.group, "norm": self.norm}

    def __setstate__(self, state):
        self.__init__(state["source"], state["group"], state["norm"])

    def _fail(self, node: ast.AST, what: str):
        col = getattr(node, "col_offset", 0) + 1
        raise ConfigError(f"{what} at column {col} of expression {self.source!r}")

    def _validate(self, node: ast.AST) -> None:
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                self._fail(node, "only numeric literals are allowed")
        elif isinstance(node, ast.Name):
            if node.id not in self._vars and node.id not in _CONSTS and node.id != "norm":
                self._fail(node, f"unknown name {node.id!r}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                self._fail(node, "unsupported operator")
            self._validate(node.left)
            self._validate(node.right)
        elif isinstance(node, ast.UnaryOp):
            if type(node.op) not in _UNARY:
                self._fail(node, "unsupported unary operator")
            self._validate(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
                self._fail(node, "unsupported function call")
            for a in node.args:
                self._validate(a)
        else:
            self._fail(node, f"unsupported syntax {type(node).__name__}")

    def _eval(self, node: ast.AST, g: GroupElement, cache: dict):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id == "norm":
                if "norm" not in cache:
                    cache["norm"] = norm(self.norm, g)
                return cache["norm"]
            if node.id in _CONSTS:
                return _CONSTS[node.id]
            return float(g.coords[self._vars[node.id]])
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, g, cache), self._eval(node.right, g, cache))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](self._eval(node.operand, g, cache))
        return _FUNCS[node.func.id](*(self._eval(a, g, cache) for a in node.args))

    def __call__(self, g: GroupElement) -> float:
        return self._eval(self._tree, g, {})


def expression_function(source: str, group: CarnotGroup, n: HomogeneousNorm | None = None) -> ScalarFunction:
    return ScalarFunction(Expression(source, group, n), f"expr:{source}")


# quotients ---------------------------------------------------------------


def difference_quotient(f: ScalarFunction | Callable, p, lam, u) -> float:
    """``(f(p delta_lam(u)) - f(p)) / lam``."""
    if lam == 0:
        raise DomainError("lambda must be nonzero")
    try:
        return (f(p * u.dilate(lam)) - f(p)) / lam
    except Exception as exc:
        raise EvaluationError(f"evaluating {getattr(f, 'label', f)!r} failed at p={p!r}, lambda={lam!r}, u={u!r}: {exc}") from exc


def _validate_schedule(schedule: Sequence[float]) -> tuple[float, ...]:
    sched = tuple(float(s) for s in schedule)
    if len(sched) < GAP_WINDOW:
        raise DomainError(f"schedule needs at least {GAP_WINDOW} entries")
    if any(s <= 0 for s in sched) or any(b >= a for a, b in zip(sched, sched[1:])):
        raise DomainError("schedule must be positive and strictly decreasing")
    return sched


@dataclass
class DirectionLimit:
    quotients: list[float]
    limit: float
    gap: float
    converged: bool


def _direction_limit(f, p, u, schedule, tol_conv) -> DirectionLimit:
    f_p = f(p)
    qs = []
    for lam in schedule:
        try:
            qs.append(float((f(p * u.dilate(lam)) - f_p) / lam))
        except Exception as exc:
            raise EvaluationError(f"evaluating {getattr(f, 'label', f)!r} failed at p={p!r}, lambda={lam!r}, u={u!r}: {exc}") from exc
    tail = qs[-GAP_WINDOW:]
    gap = max(tail) - min(tail)
    limit = 0.5 * (qs[-1] + qs[-2])
    return DirectionLimit(qs, limit, gap, bool(gap < tol_conv and math.isfinite(gap)))


@dataclass
class DifferentialEstimate:
    point: object
    directions: list
    lambda_schedule: tuple[float, ...]
    quotient_table: list[list[float]]
    limits: list[float]
    converged: list[bool]
    gaps: list[float]
    additive_defect: float
    homogeneity_defect: float
    homomorphism_defect: float
    composite_converged: bool
    verdict: str
    tol_conv: float
    tol_hom: float
    notes: list[str] = field(default_factory=list)

    def limit_map(self) -> dict:
        return {i: v for i, v in enumerate(self.limits)}

    def quotient_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["direction", *[repr(l) for l in self.lambda_schedule]])
        for i, row in enumerate(self.quotient_table):
            w.writerow([i, *[repr(v) for v in row]])
        return buf.getvalue()

    def to_dict(self, include_table: bool = True) -> dict:
        out = {
            "point": _jsonable(self.point),
            "directions": [_jsonable(u) for u in self.directions],
            "limits": self.limits,
            "converged": self.converged,
            "gaps": self.gaps,
            "additive_defect": self.additive_defect,
            "homogeneity_defect": self.homogeneity_defect,
            "homomorphism_defect": self.homomorphism_defect,
            "composite_converged": self.composite_converged,
            "verdict": self.verdict,
            "tol_conv": self.tol_conv,
            "tol_hom": self.tol_hom,
            "notes": self.notes,
        }
        if include_table:
            out["lambda_schedule"] = list(self.lambda_schedule)
            out["quotient_table"] = self.quotient_table
        return out


def _jsonable(x):
    if hasattr(x, "to_json"):
        return x.to_json()
    return x


def estimate_differential(f, p, directions: Sequence, schedule: Sequence[float] = DEFAULT_SCHEDULE,
                          tol_conv: float = 1e-4, tol_hom: float = 1e-4, seed: int = 0,
                          extra_pairs: int = 16, t_samples: Sequence[float] = DEFAULT_T_SAMPLES
                          ) -> DifferentialEstimate:
    """Tabulate quotients along ``schedule`` and test the limit map for additivity and homogeneity.

    The homomorphism defect is ``max |Df(uv) - Df(u) - Df(v)|`` over all
    unordered pairs of directions and ``extra_pairs`` random products, plus
    ``max |Df(delta_t u) - t Df(u)|`` over ``t_samples``.  It is a lower bound on
    the true defect of the limit map.  Convergence of the composite directions
    is reported but only the listed directions gate the verdict; composite
    truncation error shows up in the defect instead.
    """
    directions = list(directions)
    if not directions:
        raise DomainError("at least one direction is required")
    sched = _validate_schedule(schedule)
    base = [_direction_limit(f, p, u, sched, tol_conv) for u in directions]
    limits = [b.limit for b in base]
    composite_ok = True
    n = len(directions)

    pairs = [(directions[i], directions[j], limits[i], limits[j]) for i in range(n) for j in range(i + 1, n)]
    rng = np.random.default_rng([seed, 7])
    for _ in range(extra_pairs if n > 0 else 0):
        a, b, c = (int(k) for k in rng.integers(0, n, size=3))
        u = directions[a] * directions[b]
        lu = _direction_limit(f, p, u, sched, tol_conv)
        composite_ok &= lu.converged
        pairs.append((u, directions[c], lu.limit, limits[c]))
    additive = 0.0
    for u, v, lu, lv in pairs:
        luv = _direction_limit(f, p, u * v, sched, tol_conv)
        composite_ok &= luv.converged
        additive = max(additive, abs(luv.limit - lu - lv))
    homog = 0.0
    for t in t_samples:
        for u, lu in zip(directions, limits):
            lt = _direction_limit(f, p, u.dilate(t), sched, tol_conv)
            composite_ok &= lt.converged
            homog = max(homog, abs(lt.limit - t * lu))
    defect = additive + homog
    converged = [b.converged for b in base]
    if not all(converged):
        verdict = "not_converged"
    elif defect >= tol_hom:
        verdict = "not_homomorphism"
    else:
        verdict = "differentiable"
    return DifferentialEstimate(
        point=p,
        directions=directions,
        lambda_schedule=sched,
        quotient_table=[b.quotients for b in base],
        limits=limits,
        converged=converged,
        gaps=[b.gap for b in base],
        additive_defect=additive,
        homogeneity_defect=homog,
        homomorphism_defect=defect,
        composite_converged=bool(composite_ok),
        verdict=verdict,
        tol_conv=tol_conv,
        tol_hom=tol_hom,
        notes=["finitely many directions tested; the differential is only probed, not certified"],
    )


# directions ------------------------------------------------------------------


def default_directions(domain, filtration_bound: int = 2) -> list:
    """First-layer basis, inverses and pairwise products.

    On an lp space the first-layer generators of the first ``filtration_bound``
    components (the generators of ``N_m``) are used, plus cross-index products.
    """
    if isinstance(domain, LpSpace):
        gens = []
        for i in range(min(filtration_bound, domain.truncation)):
            grp = domain.component(i).group
            gens.extend(domain.single(i, grp.generator(j)) for j in range(grp.rank))
    else:
        gens = [domain.generator(j) for j in range(domain.rank)]
    out = list(gens) + [g.inverse() for g in gens]
    out += [a * b for i, a in enumerate(gens) for j, b in enumerate(gens) if i != j]
    return out


@dataclass
class HorizontalGradient:
    """``u -> sum_i X_i f(p) u_i`` from central differences along ``s -> p delta_s(e_i)``."""

    values: list[float]

    def __call__(self, u) -> float:
        return math.fsum(v * float(c) for v, c in zip(self.values, u.coords))


def horizontal_gradient_oracle(f, p: GroupElement, step: float = 1e-5) -> HorizontalGradient:
    grp = p.group
    values = []
    for i in range(grp.rank):
        e = grp.generator(i)
        plus = f(p * dilate(step, e))
        minus = f(p * dilate(-step, e))
        values.append((float(plus) - float(minus)) / (2 * step))
    return HorizontalGradient(values)


# survey ----------------------------------------------------------------------


@dataclass(frozen=True)
class BoxSampler:
    """Uniform coordinates in ``[low, high]`` (Haar measure in exponential coordinates).

    ``avoid``/``avoid_radius``: reject points within that distance of ``avoid``.
    On an lp space each of the first ``support`` entries is drawn from the box.
    """

    low: float = -2.0
    high: float = 2.0
    avoid: object = None
    avoid_radius: float = 0.0
    support: int = 2

    def draw(self, domain, rng: np.random.Generator):
        for _ in range(10000):
            if isinstance(domain, LpSpace):
                entries = {}
                for i in range(min(self.support, domain.truncation)):
                    grp = domain.component(i).group
                    entries[i] = grp.element(rng.uniform(self.low, self.high, grp.dim))
                p = domain.element(entries)
            else:
                p = domain.element(rng.uniform(self.low, self.high, domain.dim))
            if self.avoid is None or _element_distance(None, self.avoid, p) >= self.avoid_radius:
                return p
        raise DomainError("sampler could not find a point outside the excluded region")


@dataclass
class PointResult:
    index: int
    estimate: DifferentialEstimate
    oracle_deviation: float | None = None

    @property
    def verdict(self) -> str:
        return self.estimate.verdict


@dataclass
class SurveyReport:
    function: str
    domain: str
    n_points: int
    seed: int
    fraction_differentiable: float
    verdict_counts: dict
    max_oracle_deviation: float | None
    points: list[dict]
    failures: list[dict]
    failure_tables: dict[int, str]
    settings: dict

    def to_dict(self) -> dict:
        return {
            "function": self.function,
            "domain": self.domain,
            "n_points": self.n_points,
            "seed": self.seed,
            "fraction_differentiable": self.fraction_differentiable,
            "verdict_counts": self.verdict_counts,
            "max_oracle_deviation": self.max_oracle_deviation,
            "points": self.points,
            "failures": self.failures,
            "settings": self.settings,
            "caveat": "each verdict probes finitely many directions; pointwise convergence on the whole group is not tested",
        }


def _survey_point(args) -> PointResult:
    f, p, directions, schedule, tol_conv, tol_hom, seed, index, oracle = args
    est = estimate_differential(f, p, directions, schedule, tol_conv, tol_hom, seed=int(seed))
    dev = None
    if oracle:
        grad = horizontal_gradient_oracle(f, p)
        dev = max(abs(grad(u) - lim) for u, lim in zip(directions, est.limits))
    return PointResult(index, est, dev)


def survey(f: ScalarFunction, domain, sampler: BoxSampler | None = None, n_points: int = 100,
           schedule: Sequence[float] = DEFAULT_SCHEDULE, tol_conv: float = 1e-4, tol_hom: float = 1e-4,
           seed: int = 0, directions: Sequence | None = None, points: Sequence | None = None,
           oracle: bool = False, jobs: int = 1) -> SurveyReport:
    """Estimate the differential at sampled points; deterministic for a fixed seed at any ``jobs``."""
    if points is None and n_points < 1:
        raise DomainError("n_points must be >= 1")
    directions = list(directions) if directions is not None else default_directions(domain)
    if not directions:
        raise DomainError("at least one direction is required")
    sched = _validate_schedule(schedule)
    sampler = sampler or BoxSampler()
    if points is None:
        points = [sampler.draw(domain, np.random.default_rng([seed, i])) for i in range(n_points)]
    points = list(points)
    seeds = np.random.SeedSequence(seed).generate_state(len(points), dtype=np.uint32)
    tasks = [(f, p, directions, sched, tol_conv, tol_hom, int(s), i, oracle) for i, (p, s) in enumerate(zip(points, seeds))]
    if jobs > 1 and not getattr(f, "serial", False) and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_survey_point, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_survey_point(t) for t in tasks]
    counts = {v: 0 for v in VERDICTS}
    rows, failures, tables = [], [], {}
    for r in results:
        counts[r.verdict] += 1
        row = {
            "index": r.index,
            "point": _jsonable(r.estimate.point),
            "verdict": r.verdict,
            "homomorphism_defect": r.estimate.homomorphism_defect,
            "max_gap": max(r.estimate.gaps),
        }
        if r.oracle_deviation is not None:
            row["oracle_deviation"] = r.oracle_deviation
        rows.append(row)
        if r.verdict != "differentiable":
            failures.append(r.estimate.to_dict(include_table=False) | {"index": r.index})
            tables[r.index] = r.estimate.quotient_csv()
    devs = [r.oracle_deviation for r in results if r.oracle_deviation is not None]
    return SurveyReport(
        function=getattr(f, "label", "f"),
        domain=getattr(domain, "label", repr(domain)),
        n_points=len(points),
        seed=seed,
        fraction_differentiable=counts["differentiable"] / len(points),
        verdict_counts=counts,
        max_oracle_deviation=max(devs) if devs else None,
        points=rows,
        failures=failures,
        failure_tables=tables,
        settings={
            "schedule": list(sched),
            "tol_conv": tol_conv,
            "tol_hom": tol_hom,
            "n_directions": len(directions),
        },
    )
