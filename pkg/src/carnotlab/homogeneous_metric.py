"""Homogeneous norms and left-invariant distances on Carnot groups.

``ball_box``: ``max_k c_k |g_k|^(1/k)`` over the layers ``g_k`` of the exponential
coordinates.  ``koranyi``: ``((x^2 + y^2)^2 + 16 t^2)^(1/4)`` on the Heisenberg
group, a genuine metric gauge for the group law ``t'' = t + t' + (x y' - y x')/2``.
All metric values are 64-bit floats.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .carnot_group import CarnotGroup, GroupElement, dilate, in_first_layer, trial_rng
from .errors import DomainError, IncompatibleError, UnsupportedError

KINDS = ("ball_box", "koranyi")


@dataclass(frozen=True)
class HomogeneousNorm:
    kind: str = "ball_box"
    layer_weights: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedError(f"unknown norm kind {self.kind!r}; expected one of {KINDS}")
        if any(not c > 0 for c in self.layer_weights):
            raise DomainError("layer weights must be positive")

    def weight(self, k: int) -> float:
        if k <= len(self.layer_weights):
            return float(self.layer_weights[k - 1])
        return 1.0

    def __call__(self, g: GroupElement) -> float:
        return norm(self, g)


def default_norm(group: CarnotGroup) -> HomogeneousNorm:
    if group.rank == 2 and group.step == 2:
        return HomogeneousNorm("koranyi")
    return HomogeneousNorm("ball_box")


def _require_heisenberg(group: CarnotGroup) -> None:
    if not (group.rank == 2 and group.step == 2):
        raise UnsupportedError(f"koranyi norm is only defined on the Heisenberg group, not {group.label}")


def norm(n: HomogeneousNorm, g: GroupElement) -> float:
    if n.kind == "koranyi":
        _require_heisenberg(g.group)
        x, y, t = (float(c) for c in g.coords)
        # (a^4 + b^4)^(1/4) with a = |(x, y)|, b = 2 sqrt|t|, scaled to avoid under/overflow
        a, b = math.hypot(x, y), 2.0 * math.sqrt(abs(t))
        big, small = max(a, b), min(a, b)
        if big == 0.0:
            return 0.0
        return big * math.sqrt(math.sqrt(1.0 + (small / big) ** 4))
    best = 0.0
    basis = g.group.basis
    for k in range(1, g.group.step + 1):
        r = basis.layer(k)
        size = math.hypot(*(float(c) for c in g.coords[r.start : r.stop]))
        if size:
            best = max(best, n.weight(k) * size ** (1.0 / k))
    return best


def distance(n: HomogeneousNorm, p: GroupElement, q: GroupElement) -> float:
    """``d(p, q) = |p^-1 q|``."""
    if p.group.basis is not q.group.basis:
        raise IncompatibleError("points belong to different groups")
    return norm(n, p.inverse() * q)


@dataclass
class HomothetyReport:
    direction: list[str]
    constant: float
    samples: int
    max_relative_deviation: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.max_relative_deviation < self.tolerance

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "constant": self.constant,
            "samples": self.samples,
            "max_relative_deviation": self.max_relative_deviation,
            "tolerance": self.tolerance,
            "ok": self.ok,
        }


def homothety_check(n: HomogeneousNorm, v: GroupElement, samples: Iterable[tuple[float, float]],
                    tolerance: float = 1e-9) -> HomothetyReport:
    """Compare ``d(delta_a v, delta_b v)`` with ``c |a - b|`` where ``c = d(e, v)``."""
    if not in_first_layer(v) or v.is_identity():
        raise DomainError("homothety check needs a nonzero first-layer element")
    c = norm(n, v)
    worst = 0.0
    count = 0
    for a, b in samples:
        d = distance(n, dilate(a, v), dilate(b, v))
        expected = c * abs(a - b)
        if expected == 0:
            dev = abs(d) / c
        else:
            dev = abs(d - expected) / expected
        worst = max(worst, dev)
        count += 1
    return HomothetyReport(v.to_json(), c, count, worst, tolerance)


@dataclass
class PerturbationResult:
    status: str  # "certified" | "inconclusive"
    delta: float | None
    epsilon: float
    samples: int
    iterations: int
    worst_gap: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def random_ball_element(group: CarnotGroup, n: HomogeneousNorm, radius: float,
                        rng: np.random.Generator) -> GroupElement:
    """Random element with norm strictly below ``radius``."""
    while True:
        g = group.random_float_element(rng)
        size = norm(n, g)
        if size > 0:
            break
    r = radius * rng.uniform(0.0, 1.0)
    return dilate(r / size, g)


def perturbation_bound(n: HomogeneousNorm, K: Sequence[GroupElement], epsilon: float,
                       samples: int = 2000, max_iter: int = 40, refine: int = 8,
                       seed: int = 0) -> PerturbationResult:
    """Find ``delta > 0`` with ``d(hk, k) < epsilon`` for sampled ``|h| < delta`` and all ``k`` in ``K``.

    The certificate is probabilistic: ``samples`` random ``h`` per candidate
    radius plus a short random ascent on the boundary sphere.  Candidates are
    halved from ``epsilon`` until one passes, then refined by bisection
    against the smallest failing radius.
    """
    if not K:
        raise DomainError("K must be nonempty")
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    group = K[0].group

    def spread(h: GroupElement) -> float:
        return max(distance(n, h * k, k) for k in K)

    def to_sphere(h: GroupElement, delta: float) -> GroupElement | None:
        size = norm(n, h)
        return dilate(delta * (1 - 1e-12) / size, h) if size else None

    def worst(delta: float, salt: int) -> float:
        rng = np.random.default_rng([seed, salt])
        top = 0.0
        for _ in range(samples):
            top = max(top, spread(random_ball_element(group, n, delta, rng)))
        # the boundary sphere carries the largest perturbations: sample it, then
        # climb from the best few points with shrinking random steps
        seeds = []
        for _ in range(max(1, samples // 10)):
            h = to_sphere(random_ball_element(group, n, delta, rng), delta)
            if h is not None:
                seeds.append((spread(h), h))
        seeds.sort(key=lambda s: -s[0])
        for value, h in seeds[:3]:
            step = 0.5
            for _ in range(60):
                bump = rng.normal(0.0, step, group.dim)
                cand = to_sphere(group.element([float(c + b * delta ** w) for c, b, w in
                                                zip(h.to_float(), bump, group.basis.weights)]), delta)
                if cand is not None:
                    v = spread(cand)
                    if v > value:
                        value, h = v, cand
                        continue
                step *= 0.9
            top = max(top, value)
        return top

    delta = float(epsilon)
    failing = None
    it = 0
    gap = worst(delta, it)
    while gap >= epsilon:
        it += 1
        if it >= max_iter:
            return PerturbationResult("inconclusive", None, epsilon, samples, it, gap)
        failing = delta
        delta /= 2
        gap = worst(delta, it)
    if failing is not None:
        lo, hi = delta, failing
        for j in range(refine):
            mid = 0.5 * (lo + hi)
            g = worst(mid, max_iter + j)
            if g < epsilon:
                lo, gap = mid, g
            else:
                hi = mid
        delta = lo
    return PerturbationResult("certified", delta, epsilon, samples, it, gap)


def quasi_triangle_constant(n: HomogeneousNorm, group: CarnotGroup, samples: int = 10000,
                            seed: int = 0, scale: float = 2.0) -> float:
    """Empirical ``max d(p, r) / (d(p, q) + d(q, r))`` over random float triples."""
    rng = np.random.default_rng([seed, 17])
    best = 0.0
    for _ in range(samples):
        p, q, r = (group.random_float_element(rng, scale) for _ in range(3))
        denom = distance(n, p, q) + distance(n, q, r)
        if denom > 0:
            best = max(best, distance(n, p, r) / denom)
    return best


@dataclass
class MetricAxiomReport:
    descriptor: str
    norm: str
    samples: int
    max_homogeneity_error: float = 0.0
    max_left_invariance_error: float = 0.0
    max_symmetry_error: float = 0.0
    max_inverse_norm_error: float = 0.0
    triangle_violations: int = 0
    quasi_triangle_constant: float = 0.0
    is_true_metric: bool = False
    tolerance: float = 1e-9
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        good = (
            self.max_homogeneity_error < self.tolerance
            and self.max_left_invariance_error < self.tolerance
            and self.max_symmetry_error < self.tolerance
            and self.max_inverse_norm_error < self.tolerance
        )
        if self.is_true_metric:
            good = good and self.triangle_violations == 0
        return good

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out.pop("extra")
        out.update(self.extra)
        out["ok"] = self.ok
        return out


def _rel(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale > 0 else 0.0


def metric_axioms(n: HomogeneousNorm, group: CarnotGroup, samples: int = 10000, seed: int = 0,
                  tolerance: float = 1e-9, triangle_slack: float = 1e-12) -> MetricAxiomReport:
    """Sample homogeneity, left-invariance, symmetry and the triangle inequality.

    Points are exact rationals so that group products are exact and only the
    final norm evaluation rounds.
    """
    true_metric = n.kind == "koranyi" or group.step == 1
    rep = MetricAxiomReport(group.label, n.kind, samples, is_true_metric=true_metric, tolerance=tolerance)
    for i in range(samples):
        rng = trial_rng(seed, i, 5)
        p, q, r = (group.random_element(rng, 10) for _ in range(3))
        t = float(rng.uniform(-5, 5))
        dpq = distance(n, p, q)
        rep.max_homogeneity_error = max(
            rep.max_homogeneity_error, _rel(distance(n, dilate(t, p), dilate(t, q)), abs(t) * dpq)
        )
        rep.max_left_invariance_error = max(rep.max_left_invariance_error, _rel(distance(n, r * p, r * q), dpq))
        rep.max_symmetry_error = max(rep.max_symmetry_error, _rel(distance(n, q, p), dpq))
        rep.max_inverse_norm_error = max(rep.max_inverse_norm_error, _rel(norm(n, p.inverse()), norm(n, p)))
        dqr = distance(n, q, r)
        dpr = distance(n, p, r)
        if dpr > dpq + dqr + triangle_slack * max(1.0, dpr):
            rep.triangle_violations += 1
        if dpq + dqr > 0:
            rep.quasi_triangle_constant = max(rep.quasi_triangle_constant, dpr / (dpq + dqr))
    return rep
