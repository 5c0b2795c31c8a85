"""lp-sums of metric scalable groups over the counting measure on N.

Elements have finite support (absent entries are identities), which is the
dense subclass every computation here lives on.  Group law, inverse and
dilations act entry-wise; the distance is ``(sum_n d_n(x_n, y_n)^p)^(1/p)``,
or the sup over entries for the ``c0`` variant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .carnot_group import CarnotGroup, GroupElement, dilate, euclidean, free_carnot, heisenberg, trial_rng
from .errors import DomainError, IncompatibleError, UnsupportedError
from .free_lie import to_rational
from .homogeneous_metric import HomogeneousNorm, default_norm, distance, norm

GeodesicOracle = Callable[[GroupElement, GroupElement, float], GroupElement]


def linear_geodesic(x: GroupElement, y: GroupElement, t) -> GroupElement:
    """Constant-speed segment in an abelian group (coordinates interpolate linearly)."""
    if not x.group.is_abelian:
        raise UnsupportedError(f"{x.group.label} is not abelian")
    if x.exact and y.exact and not isinstance(t, float):
        q = to_rational(t)
        coords = tuple(a + q * (b - a) for a, b in zip(x.coords, y.coords))
        return GroupElement(x.group, coords)
    t = float(t)
    coords = tuple(float(a) + t * (float(b) - float(a)) for a, b in zip(x.coords, y.coords))
    return GroupElement(x.group, coords, exact=False)


@dataclass(frozen=True)
class Component:
    group: CarnotGroup
    norm: HomogeneousNorm
    geodesic: GeodesicOracle | None = None

    @property
    def is_true_metric(self) -> bool:
        return self.norm.kind == "koranyi" or self.group.step == 1

    def filtration_member(self, g: GroupElement, k: int) -> bool:
        """Membership in the component's own Carnot filtration ``N_k``: all of it for ``k >= 1``."""
        return k >= 1


def carnot_component(group: CarnotGroup, n: HomogeneousNorm | None = None) -> Component:
    n = n or default_norm(group)
    return Component(group, n, linear_geodesic if group.is_abelian else None)


class LpSpace:
    """``l_p((G_n)_n)`` with components produced lazily by ``component_at``."""

    def __init__(self, component_at: Callable[[int], Component], p: float, truncation: int,
                 label: str = "lp", kind: str = "lp"):
        if kind not in ("lp", "c0"):
            raise UnsupportedError(f"unknown sum kind {kind!r}")
        if kind == "lp" and not (p >= 1 and math.isfinite(p)):
            raise DomainError(f"p must lie in [1, inf), got {p}")
        if truncation < 1:
            raise DomainError("truncation must be >= 1")
        self._component_at = lru_cache(maxsize=None)(component_at)
        self.p = float(p)
        self.truncation = int(truncation)
        self.label = label
        self.kind = kind
        self._spec = None  # set by the named constructors so the space can be pickled

    def __reduce__(self):
        if self._spec is None:
            raise TypeError("only spaces built by LpSpace.constant or LpSpace.free_tower can be pickled")
        return _space_from_spec, self._spec

    def __repr__(self) -> str:
        return f"LpSpace({self.label!r}, p={self.p:g}, truncation={self.truncation})"

    def component(self, index: int) -> Component:
        if index < 0:
            raise IndexError(index)
        return self._component_at(index)

    @classmethod
    def constant(cls, group: CarnotGroup, p: float, truncation: int,
                 n: HomogeneousNorm | None = None, kind: str = "lp") -> LpSpace:
        comp = carnot_component(group, n)
        name = "c0" if kind == "c0" else f"l{p:g}"
        space = cls(lambda i: comp, p, truncation, f"{name}({group.label})", kind)
        space._spec = ("constant", group, p, truncation, comp.norm, kind)
        return space

    @classmethod
    def free_tower(cls, p: float, truncation: int, kind: str = "lp") -> LpSpace:
        """Index ``n`` (from 0) carries ``F_{2, n+1}``."""
        name = "c0" if kind == "c0" else f"l{p:g}"
        space = cls(lambda i: carnot_component(free_carnot(2, i + 1)), p, truncation,
                    f"{name}(free_tower)", kind)
        space._spec = ("free_tower", None, p, truncation, None, kind)
        return space

    def identity(self) -> LpElement:
        return LpElement(self, {})

    def element(self, entries: Mapping[int, GroupElement | Sequence]) -> LpElement:
        out = {}
        for i, g in entries.items():
            comp = self.component(i)
            if not isinstance(g, GroupElement):
                g = comp.group.element(g)
            out[i] = g
        return LpElement(self, out)

    def single(self, index: int, g: GroupElement) -> LpElement:
        return self.element({index: g})

    def random_element(self, rng: np.random.Generator, density: float = 0.5,
                       magnitude: int = 10, exact: bool = True, scale: float = 1.0) -> LpElement:
        """Random element supported inside ``[0, truncation)``."""
        entries = {}
        for i in range(self.truncation):
            if rng.uniform() < density:
                grp = self.component(i).group
                entries[i] = grp.random_element(rng, magnitude) if exact else grp.random_float_element(rng, scale)
        return LpElement(self, entries)


def _space_from_spec(which, group, p, truncation, n, kind) -> LpSpace:
    if which == "constant":
        return LpSpace.constant(group, p, truncation, n, kind)
    return LpSpace.free_tower(p, truncation, kind)


class LpElement:
    __slots__ = ("space", "entries")

    def __init__(self, space: LpSpace, entries: Mapping[int, GroupElement]):
        clean = {}
        for i, g in entries.items():
            comp = space.component(i)
            if g.group.basis is not comp.group.basis:
                raise IncompatibleError(f"entry {i} is in {g.group.label}, component is {comp.group.label}")
            if not g.is_identity():
                clean[int(i)] = g
        self.space = space
        self.entries = dict(sorted(clean.items()))

    def _check(self, other: LpElement) -> None:
        if not isinstance(other, LpElement) or other.space is not self.space:
            raise IncompatibleError("elements belong to different lp spaces")

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(self.entries)

    def entry(self, i: int) -> GroupElement:
        g = self.entries.get(i)
        return g if g is not None else self.space.component(i).group.identity()

    def __mul__(self, other: LpElement) -> LpElement:
        self._check(other)
        idx = sorted(set(self.entries) | set(other.entries))
        return LpElement(self.space, {i: self.entry(i) * other.entry(i) for i in idx})

    def inverse(self) -> LpElement:
        return LpElement(self.space, {i: g.inverse() for i, g in self.entries.items()})

    def dilate(self, lam) -> LpElement:
        return LpElement(self.space, {i: dilate(lam, g) for i, g in self.entries.items()})

    def is_identity(self) -> bool:
        return not self.entries

    def __eq__(self, other) -> bool:
        return isinstance(other, LpElement) and other.space is self.space and other.entries == self.entries

    def __hash__(self) -> int:
        return hash(tuple((i, g.coords) for i, g in self.entries.items()))

    def __repr__(self) -> str:
        return f"LpElement({self.entries})"

    def to_json(self) -> dict:
        return {str(i): g.to_json() for i, g in self.entries.items()}


def lp_multiply(x: LpElement, y: LpElement) -> LpElement:
    return x * y


def lp_inverse(x: LpElement) -> LpElement:
    return x.inverse()


def lp_dilate(lam, x: LpElement) -> LpElement:
    return x.dilate(lam)


def _component_distances(x: LpElement, y: LpElement) -> list[float]:
    x._check(y)
    idx = sorted(set(x.entries) | set(y.entries))
    return [distance(x.space.component(i).norm, x.entry(i), y.entry(i)) for i in idx]


def lp_distance(x: LpElement, y: LpElement) -> float:
    ds = _component_distances(x, y)
    if not ds:
        return 0.0
    if x.space.kind == "c0":
        return max(ds)
    p = x.space.p
    if p == 1:
        return math.fsum(ds)
    return math.fsum(d**p for d in ds) ** (1.0 / p)


def lp_norm(x: LpElement) -> float:
    return lp_distance(x.space.identity(), x)


# filtration ----------------------------------------------------------------


@dataclass(frozen=True)
class FiltrationSubgroup:
    """``N_m = N_m^(0) x N_(m-1)^(1) x ... x N_1^(m-1) x {e} x ...`` (components indexed from 0)."""

    space: LpSpace
    m: int

    @property
    def factors(self) -> list[str]:
        return [self.space.component(i).group.label for i in range(self.m)]

    def contains(self, x: LpElement) -> bool:
        for i, g in x.entries.items():
            if i >= self.m:
                return False
            if not self.space.component(i).filtration_member(g, self.m - i):
                return False
        return True

    def distance_from(self, x: LpElement) -> float:
        """Distance from ``x`` to its truncation onto ``N_m`` (the entries past ``m`` removed)."""
        kept = LpElement(self.space, {i: g for i, g in x.entries.items() if i < self.m})
        return lp_distance(kept, x)


def filtration_subgroup(space: LpSpace, m: int) -> FiltrationSubgroup:
    if m < 1:
        raise DomainError("filtration index starts at 1")
    return FiltrationSubgroup(space, m)


def filtration_table(space: LpSpace, elements: Sequence[LpElement], max_m: int | None = None) -> list[dict]:
    """Membership of each element in ``N_1..N_max_m`` next to the support-bound oracle."""
    max_m = max_m or space.truncation
    rows = []
    for k, x in enumerate(elements):
        bound = max(x.support) + 1 if x.support else 0
        for m in range(1, max_m + 1):
            sub = filtration_subgroup(space, m)
            rows.append({
                "element": k,
                "m": m,
                "factors": "x".join(sub.factors),
                "member": sub.contains(x),
                "expected": bound <= m,
                "distance": sub.distance_from(x),
            })
    return rows


# geodesics -------------------------------------------------------------------


def lp_geodesic(x: LpElement, y: LpElement, t) -> LpElement:
    """Entry-wise constant-speed geodesic from ``x`` (``t = 0``) to ``y`` (``t = 1``)."""
    x._check(y)
    out = {}
    for i in sorted(set(x.entries) | set(y.entries)):
        comp = x.space.component(i)
        if comp.geodesic is None:
            raise UnsupportedError(f"component {i} ({comp.group.label}) has no geodesic oracle")
        out[i] = comp.geodesic(x.entry(i), y.entry(i), t)
    return LpElement(x.space, out)


def geodesic_partition_error(x: LpElement, y: LpElement, partition: Sequence) -> float:
    """Relative gap between ``sum d(gamma(t_{i-1}), gamma(t_i))`` and ``d(x, y)``."""
    pts = [lp_geodesic(x, y, t) for t in partition]
    total = math.fsum(lp_distance(a, b) for a, b in zip(pts, pts[1:]))
    d = lp_distance(x, y)
    return abs(total - d) / d if d > 0 else abs(total)


# metric axioms ---------------------------------------------------------------


@dataclass
class LpAxiomReport:
    space: str
    samples: int
    symmetry_failures: int = 0
    zero_failures: int = 0
    max_triangle_excess: float = 0.0
    triangle_checked: bool = False
    quasi_triangle_constant: float = 0.0
    max_left_invariance_error: float = 0.0
    max_homogeneity_error: float = 0.0
    triangle_tolerance: float = 1e-12
    relative_tolerance: float = 1e-10

    @property
    def ok(self) -> bool:
        good = (
            self.symmetry_failures == 0
            and self.zero_failures == 0
            and self.max_left_invariance_error < self.relative_tolerance
            and self.max_homogeneity_error < self.relative_tolerance
        )
        if self.triangle_checked:
            good = good and self.max_triangle_excess <= self.triangle_tolerance
        return good

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["ok"] = self.ok
        return out


def _rel(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale > 0 else 0.0


def lp_metric_axioms(space: LpSpace, samples: int = 10000, seed: int = 0, density: float = 0.5,
                     exact: bool = True) -> LpAxiomReport:
    """Metric axioms, left-invariance and homogeneity on random finite-support triples."""
    true_metric = all(space.component(i).is_true_metric for i in range(space.truncation))
    rep = LpAxiomReport(space.label, samples, triangle_checked=true_metric)
    for k in range(samples):
        rng = trial_rng(seed, k, 9)
        x, y, z, g = (space.random_element(rng, density, magnitude=5, exact=exact) for _ in range(4))
        t = float(rng.uniform(-4, 4))
        dxy = lp_distance(x, y)
        if lp_distance(y, x) != dxy:
            rep.symmetry_failures += 1
        if lp_distance(x, x) != 0.0 or ((dxy == 0.0) != (x == y)):
            rep.zero_failures += 1
        dyz = lp_distance(y, z)
        dxz = lp_distance(x, z)
        rep.max_triangle_excess = max(rep.max_triangle_excess, dxz - (dxy + dyz))
        if dxy + dyz > 0:
            rep.quasi_triangle_constant = max(rep.quasi_triangle_constant, dxz / (dxy + dyz))
        rep.max_left_invariance_error = max(rep.max_left_invariance_error, _rel(lp_distance(g * x, g * y), dxy))
        rep.max_homogeneity_error = max(
            rep.max_homogeneity_error, _rel(lp_distance(x.dilate(t), y.dilate(t)), abs(t) * dxy)
        )
    return rep


# box map -------------------------------------------------------------------


Curve = Callable[[float], LpElement]


@dataclass
class BoxMap:
    """Certified parameter box ``prod [0, alpha_i]`` for ``phi(t) = psi_M(t_M) ... psi_1(t_1)``."""

    space: LpSpace
    curves: Sequence[Curve]
    radius: float
    alphas: list[float]
    bounds: list[float]
    observed: list[float]
    status: str  # "certified-by-sampling" | "inconclusive"
    margin: float = 0.5
    notes: list[str] = field(default_factory=list)

    def evaluate(self, ts: Sequence[float]) -> LpElement:
        return self.partial_products(ts)[-1]

    def partial_products(self, ts: Sequence[float]) -> list[LpElement]:
        if len(ts) > len(self.curves):
            raise DomainError("more parameters than curves")
        g = self.space.identity()
        out = [g]
        for curve, t in zip(self.curves, ts):
            g = curve(t) * g
            out.append(g)
        return out[1:]

    def to_dict(self) -> dict:
        return {
            "radius": self.radius,
            "alphas": self.alphas,
            "bounds": self.bounds,
            "observed": self.observed,
            "status": self.status,
            "margin": self.margin,
            "notes": self.notes,
        }


def _grid(alpha: float, points: int) -> np.ndarray:
    return np.linspace(0.0, alpha, points)


def box_map(space: LpSpace, curves: Sequence[Curve], radius: float, grid_points: int = 17,
            k_samples: int = 64, max_halvings: int = 60, refine: int = 6, seed: int = 0) -> BoxMap:
    """Choose ``alpha_1, alpha_2, ...`` so that sampled suprema satisfy
    ``sup_{g in K_i, t <= alpha_{i+1}} d(g, psi_{i+1}(t) g) < margin * 2^-i``.

    ``K_i`` is sampled by the corner tuples and ``k_samples`` random tuples of
    the box built so far.  ``alpha_1 = 1`` unless the first curve leaves the
    ball of radius ``radius - margin`` on ``[0, 1]``, in which case it is
    bisected down as well; this keeps every truncated product inside the ball.
    """
    margin = 0.5
    if radius <= margin:
        raise DomainError(f"radius must exceed {margin}")
    rng = np.random.default_rng([seed, 31])
    e = space.identity()
    notes = []

    def first_sup(alpha: float) -> float:
        return max(lp_distance(e, curves[0](t)) for t in _grid(alpha, grid_points))

    alpha1 = 1.0
    budget1 = radius - margin
    sup1 = first_sup(alpha1)
    halvings = 0
    while sup1 >= budget1:
        halvings += 1
        if halvings > max_halvings:
            return BoxMap(space, curves, radius, [], [], [], "inconclusive", margin, ["alpha_1 search failed"])
        alpha1 /= 2
        sup1 = first_sup(alpha1)
    if halvings:
        notes.append(f"alpha_1 shrunk to {alpha1:g} to fit the target ball")
    alphas = [alpha1]
    bounds = [budget1]
    observed = [sup1]
    tuples = [[0.0], [alpha1]] + [[float(rng.uniform(0, alpha1))] for _ in range(k_samples)]
    points = [curves[0](t[0]) for t in tuples]

    for i in range(1, len(curves)):
        target = margin * 2.0 ** (-i)
        curve = curves[i]

        def sup(alpha: float) -> float:
            top = 0.0
            for t in _grid(alpha, grid_points):
                c = curve(t)
                for g in points:
                    top = max(top, lp_distance(g, c * g))
            return top

        alpha = alphas[-1]
        value = sup(alpha)
        failing = None
        halvings = 0
        while value >= target:
            halvings += 1
            if halvings > max_halvings:
                return BoxMap(space, curves, radius, alphas, bounds, observed, "inconclusive", margin,
                              notes + [f"bisection exhausted at curve {i + 1}"])
            failing = alpha
            alpha /= 2
            value = sup(alpha)
        if failing is not None:
            lo, hi = alpha, failing
            for _ in range(refine):
                mid = 0.5 * (lo + hi)
                v = sup(mid)
                if v < target:
                    lo, value = mid, v
                else:
                    hi = mid
            alpha = lo
        alphas.append(alpha)
        bounds.append(target)
        observed.append(value)
        # extend the sampled K_i by one coordinate
        new_tuples, new_points = [], []
        for tup, g in zip(tuples, points):
            if len(new_tuples) < 2:
                t = 0.0 if len(new_tuples) == 0 else alpha
            else:
                t = float(rng.uniform(0, alpha))
            new_tuples.append(tup + [t])
            new_points.append(curve(t) * g)
        tuples, points = new_tuples, new_points
    return BoxMap(space, curves, radius, alphas, bounds, observed, "certified-by-sampling", margin, notes)


@dataclass
class BoxMapCheck:
    tuples: int
    max_norm: float
    radius: float
    norm_failures: int
    tail_failures: int

    @property
    def ok(self) -> bool:
        return self.norm_failures == 0 and self.tail_failures == 0

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["ok"] = self.ok
        return out


def check_box_map(bm: BoxMap, tuples: int = 1000, seed: int = 0) -> BoxMapCheck:
    """Random parameter tuples: truncated products stay in the ball, and
    ``d(phi_j, phi_M) <= sum_{i >= j} 2^-i`` for every partial product."""
    rng = np.random.default_rng([seed, 37])
    M = len(bm.alphas)
    worst = 0.0
    norm_fail = tail_fail = 0
    for _ in range(tuples):
        ts = [float(rng.uniform(0, a)) for a in bm.alphas]
        parts = bm.partial_products(ts)
        final = parts[-1]
        size = lp_norm(final)
        worst = max(worst, size)
        if not size < bm.radius:
            norm_fail += 1
        for j in range(1, M):
            tail = math.fsum(2.0 ** (-i) for i in range(j, M))
            if lp_distance(parts[j - 1], final) > tail:
                tail_fail += 1
                break
    return BoxMapCheck(tuples, worst, bm.radius, norm_fail, tail_fail)


def one_parameter_curves(space: LpSpace, directions: Sequence[GroupElement]) -> list[Curve]:
    """``psi_i(t) = delta_t(v_i)`` placed at index ``i``."""
    curves = []
    for i, v in enumerate(directions):
        def psi(t, i=i, v=v):
            return space.single(i, dilate(float(t), v))
        curves.append(psi)
    return curves
