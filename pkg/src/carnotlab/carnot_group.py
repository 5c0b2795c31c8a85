"""Carnot groups in exponential coordinates of the first kind.

A group element is a vector of the free nilpotent Lie algebra; multiplication
is the truncated BCH product, inversion is negation, integer powers scale the
coordinates and the dilation ``delta_lam`` multiplies weight-``k`` coordinates
by ``lam**k``.  Coordinates are exact ``mpq`` rationals unless a float enters
(a float dilation factor or float coordinates), in which case the result is
marked inexact and carried in binary floating point.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from numbers import Rational
from typing import Iterable, Sequence

import numpy as np
from gmpy2 import mpq

from .errors import BoundsError, DomainError, IncompatibleError
from .free_lie import HallBasis, Q0, Q1, AlgebraVector, hall_basis, to_rational


class CarnotGroup:
    """Free Carnot group of rank ``r`` and step ``s`` (the group descriptor)."""

    def __init__(self, basis: HallBasis, label: str | None = None):
        self.basis = basis
        self.label = label or f"free({basis.rank},{basis.step})"
        self._exact, self._float = basis.bch_functions()
        self._weights = basis.weights

    def __reduce__(self):
        return (_group_from_key, (self.basis.rank, self.basis.step, self.label))

    def __repr__(self) -> str:
        return f"CarnotGroup({self.label!r}, rank={self.rank}, step={self.step})"

    def __eq__(self, other) -> bool:
        return isinstance(other, CarnotGroup) and other.basis is self.basis

    def __hash__(self) -> int:
        return hash((self.rank, self.step))

    @property
    def rank(self) -> int:
        return self.basis.rank

    @property
    def step(self) -> int:
        return self.basis.step

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def is_abelian(self) -> bool:
        return self.step == 1 or self.rank == 1

    def identity(self) -> GroupElement:
        return GroupElement(self, (Q0,) * self.dim)

    def element(self, coords: Iterable) -> GroupElement:
        coords = tuple(coords)
        if len(coords) != self.dim:
            raise IncompatibleError(f"{self.label} needs {self.dim} coordinates, got {len(coords)}")
        if any(isinstance(c, (float, np.floating)) for c in coords):
            return GroupElement(self, tuple(float(c) for c in coords), exact=False)
        return GroupElement(self, tuple(to_rational(c) for c in coords))

    def generator(self, i: int) -> GroupElement:
        coords = [Q0] * self.dim
        coords[i] = Q1
        return GroupElement(self, tuple(coords))

    def horizontal(self, coeffs: Sequence) -> GroupElement:
        """First-layer element with the given generator coefficients."""
        coords = list(coeffs) + [0] * (self.dim - self.rank)
        return self.element(coords)

    def random_element(self, rng: np.random.Generator, magnitude: int = 10,
                       min_weight: int = 1) -> GroupElement:
        """Random element with rational coordinates ``a/b``, ``|a| <= magnitude``, ``1 <= b <= magnitude``.

        Coordinates of weight below ``min_weight`` are zero.
        """
        nums = rng.integers(-magnitude, magnitude + 1, size=self.dim)
        dens = rng.integers(1, magnitude + 1, size=self.dim)
        coords = tuple(
            mpq(int(a), int(b)) if w >= min_weight else Q0
            for a, b, w in zip(nums, dens, self._weights)
        )
        return GroupElement(self, coords)

    def random_float_element(self, rng: np.random.Generator, scale: float = 1.0) -> GroupElement:
        return GroupElement(self, tuple(float(v) for v in rng.uniform(-scale, scale, self.dim)), exact=False)


@lru_cache(maxsize=None)
def _group_from_key(rank: int, step: int, label: str | None = None) -> CarnotGroup:
    return CarnotGroup(hall_basis(rank, step), label)


def free_carnot(rank: int, step: int) -> CarnotGroup:
    """The free Carnot group F_{rank,step}."""
    return _group_from_key(rank, step, f"free({rank},{step})")


def heisenberg() -> CarnotGroup:
    return _group_from_key(2, 2, "heisenberg")


def euclidean(k: int) -> CarnotGroup:
    """R^k as the step-1 Carnot group."""
    return _group_from_key(k, 1, f"euclidean({k})")


class GroupElement:
    """Element of a Carnot group given by exponential coordinates."""

    __slots__ = ("group", "coords", "exact")

    def __init__(self, group: CarnotGroup, coords: tuple, exact: bool = True):
        self.group = group
        self.coords = coords
        self.exact = exact

    def _check(self, other: GroupElement) -> None:
        if not isinstance(other, GroupElement) or other.group.basis is not self.group.basis:
            raise IncompatibleError("elements belong to different groups")

    def __mul__(self, other: GroupElement) -> GroupElement:
        self._check(other)
        if self.exact and other.exact:
            return GroupElement(self.group, self.group._exact(self.coords, other.coords))
        return GroupElement(
            self.group,
            self.group._float(_floats(self.coords), _floats(other.coords)),
            exact=False,
        )

    def inverse(self) -> GroupElement:
        return GroupElement(self.group, tuple(-c for c in self.coords), self.exact)

    def dilate(self, lam) -> GroupElement:
        return dilate(lam, self)

    def __pow__(self, n: int) -> GroupElement:
        return power(self, n)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, GroupElement)
            and other.group.basis is self.group.basis
            and other.coords == self.coords
        )

    def __hash__(self) -> int:
        return hash(self.coords)

    def __repr__(self) -> str:
        return f"{self.group.label}{tuple(str(c) for c in self.coords)}"

    def is_identity(self) -> bool:
        return not any(self.coords)

    def layer(self, weight: int) -> tuple:
        r = self.group.basis.layer(weight)
        return self.coords[r.start : r.stop]

    def to_float(self) -> np.ndarray:
        return np.array(_floats(self.coords), dtype=float)

    def as_vector(self) -> AlgebraVector:
        if not self.exact:
            raise DomainError("inexact element has no exact Lie algebra vector")
        return AlgebraVector(self.group.basis, self.coords)

    def to_json(self) -> list[str]:
        return [str(c) for c in self.coords]


def _floats(coords: tuple) -> tuple:
    return tuple(float(c) for c in coords)


def multiply(g: GroupElement, h: GroupElement) -> GroupElement:
    return g * h


def inverse(g: GroupElement) -> GroupElement:
    return g.inverse()


def _is_exact_scalar(lam) -> bool:
    return isinstance(lam, (int, Rational)) or type(lam).__name__ == "mpq"


def dilate(lam, g: GroupElement) -> GroupElement:
    """``delta_lam(g)``: weight-``k`` coordinates times ``lam**k``.

    Exact for rational ``lam``; a float ``lam`` yields an inexact element.
    """
    weights = g.group._weights
    if g.exact and _is_exact_scalar(lam):
        q = to_rational(lam)
        pw = [Q1]
        for _ in range(g.group.step):
            pw.append(pw[-1] * q)
        return GroupElement(g.group, tuple(c * pw[w] for c, w in zip(g.coords, weights)))
    lam = float(lam)
    return GroupElement(g.group, tuple(float(c) * lam**w for c, w in zip(g.coords, weights)), exact=False)


def commutator(g: GroupElement, h: GroupElement) -> GroupElement:
    """``[g, h] = g h g^-1 h^-1``."""
    return g * h * g.inverse() * h.inverse()


def power(g: GroupElement, n: int) -> GroupElement:
    """``g**n``; in exponential coordinates this scales the coordinates by ``n``."""
    if not isinstance(n, (int, np.integer)):
        raise TypeError(f"power needs an integer exponent, got {n!r}")
    n = int(n)
    if g.exact:
        q = mpq(n)
        return GroupElement(g.group, tuple(q * c for c in g.coords))
    return GroupElement(g.group, tuple(n * c for c in g.coords), exact=False)


def lcs_member(g: GroupElement, k: int) -> bool:
    """Membership in the ``k``-th term of the lower central series (graded support test)."""
    s = g.group.step
    if not 1 <= k <= s + 1:
        raise BoundsError(f"lower central series index must lie in [1, {s + 1}], got {k}")
    return all(c == 0 for c, w in zip(g.coords, g.group._weights) if w < k)


def in_lcs(g: GroupElement, k: int) -> bool:
    """Like :func:`lcs_member` but accepts any ``k >= 1`` (``G^(k)`` is trivial past the step)."""
    return lcs_member(g, min(k, g.group.step + 1))


def in_first_layer(g: GroupElement) -> bool:
    return all(c == 0 for c, w in zip(g.coords, g.group._weights) if w > 1)


def sigma(q, z: GroupElement) -> GroupElement:
    """Rational scalar multiplication ``delta_m^{-1}(z^(n m^(s-1)))`` on the last layer."""
    s = z.group.step
    if not lcs_member(z, s):
        raise DomainError("sigma is defined on the last layer G^(s) only")
    q = to_rational(q)
    n, m = int(q.numerator), int(q.denominator)
    return dilate(mpq(1, m), power(z, n * m ** (s - 1)))


def simple_commutator(elements: Sequence[GroupElement]) -> GroupElement:
    """``[x_1, [x_2, ..., [x_{k-1}, x_k]]]``."""
    y = elements[-1]
    for x in reversed(elements[:-1]):
        y = commutator(x, y)
    return y


# verification suites ------------------------------------------------------


@dataclass
class Check:
    name: str
    trials: int = 0
    passed: int = 0
    counterexample: dict | None = None

    @property
    def failures(self) -> int:
        return self.trials - self.passed

    @property
    def ok(self) -> bool:
        return self.trials == self.passed

    def record(self, ok: bool, witness: dict | None = None) -> None:
        self.trials += 1
        if ok:
            self.passed += 1
        elif self.counterexample is None:
            self.counterexample = witness

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "trials": self.trials,
            "passed": self.passed,
            "failures": self.failures,
            "counterexample": self.counterexample,
        }


@dataclass
class VerificationReport:
    suite: str
    descriptor: str
    seed: int
    checks: list[Check] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        c = Check(name)
        self.checks.append(c)
        return c

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def first_failure(self) -> str | None:
        for c in self.checks:
            if not c.ok:
                return c.name
        return None

    def to_dict(self) -> dict:
        out = {
            "suite": self.suite,
            "descriptor": self.descriptor,
            "seed": self.seed,
            "ok": self.ok,
            "checks": [c.to_dict() for c in self.checks],
        }
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def trial_rng(seed: int, trial: int, salt: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, salt, trial])


def _witness(**elements) -> dict:
    return {k: (v.to_json() if isinstance(v, GroupElement) else str(v)) for k, v in elements.items()}


def _rand_rational(rng: np.random.Generator, magnitude: int, nonzero: bool = False) -> mpq:
    while True:
        q = mpq(int(rng.integers(-magnitude, magnitude + 1)), int(rng.integers(1, magnitude + 1)))
        if q or not nonzero:
            return q


def verify_appendix_identities(group: CarnotGroup, trials: int = 100, seed: int = 0,
                               magnitude: int = 10, include_identity: bool = True) -> VerificationReport:
    """Check the four commutator identities exactly on random rational triples.

    * ``split2``: ``[xy,z] = [x,[y,z]][y,z][x,z]`` and ``[z,xy] = [z,x][z,y][[y,z],x]``
    * ``splitlemma``: ``[xy,z] = [x,z][y,z]`` and ``[z,xy] = [z,x][z,y]`` when ``[y,z]``
      is central (``z`` is drawn from ``G^(s-1)`` to force this)
    * ``cor_split``: ``[x^n,y^m] = h [x,y]^(nm)`` with ``h`` in ``G^(3)``
    * ``inverse``: ``[x^-1,y] = [x^-1,[y,x]] [x,y]^-1``
    """
    if trials < 1:
        raise BoundsError("trials must be >= 1")
    report = VerificationReport("appendix_identities", group.label, seed)
    split2 = report.check("split2")
    split = report.check("splitlemma")
    cor = report.check("cor_split")
    inv = report.check("inverse")
    s = group.step
    e = group.identity()
    for t in range(trials):
        if include_identity and t == 0:
            x = y = z = zc = e
            n = m = 1
        else:
            rng = trial_rng(seed, t, 1)
            x = group.random_element(rng, magnitude)
            y = group.random_element(rng, magnitude)
            z = group.random_element(rng, magnitude)
            zc = group.random_element(rng, magnitude, min_weight=max(s - 1, 1))
            n = int(rng.integers(1, 5))
            m = int(rng.integers(1, 5))
        C = commutator
        yz = C(y, z)
        ok = C(x * y, z) == C(x, yz) * yz * C(x, z) and C(z, x * y) == C(z, x) * C(z, y) * C(yz, x)
        split2.record(ok, _witness(x=x, y=y, z=z))

        central = C(y, zc)
        assert in_lcs(central, s), "[y, z] must be central for the split lemma"
        ok = C(x * y, zc) == C(x, zc) * C(y, zc) and C(zc, x * y) == C(zc, x) * C(zc, y)
        split.record(ok, _witness(x=x, y=y, z=zc))

        lhs = C(power(x, n), power(y, m))
        base = power(C(x, y), n * m)
        h = lhs * base.inverse()
        ok = h * base == lhs and in_lcs(h, 3)
        cor.record(ok, _witness(x=x, y=y, n=n, m=m, h=h))

        xi = x.inverse()
        ok = C(xi, y) == C(xi, C(y, x)) * C(x, y).inverse()
        inv.record(ok, _witness(x=x, y=y))
    return report


def verify_group_axioms(group: CarnotGroup, trials: int = 100, seed: int = 0,
                        magnitude: int = 10) -> VerificationReport:
    """Associativity, identity, inverses and the dilation laws on random rational data."""
    report = VerificationReport("group_axioms", group.label, seed)
    assoc = report.check("associativity")
    ident = report.check("identity")
    inv = report.check("inverse")
    comp = report.check("dilation_composition")
    auto = report.check("dilation_automorphism")
    zero = report.check("dilation_zero")
    e = group.identity()
    for t in range(trials):
        rng = trial_rng(seed, t, 2)
        g = group.random_element(rng, magnitude)
        h = group.random_element(rng, magnitude)
        k = group.random_element(rng, magnitude)
        lam = _rand_rational(rng, magnitude, nonzero=True)
        mu = _rand_rational(rng, magnitude, nonzero=True)
        assoc.record((g * h) * k == g * (h * k), _witness(g=g, h=h, k=k))
        ident.record(g * e == g and e * g == g, _witness(g=g))
        inv.record(g * g.inverse() == e and g.inverse() * g == e, _witness(g=g))
        comp.record(dilate(lam, dilate(mu, g)) == dilate(lam * mu, g), _witness(g=g, lam=lam, mu=mu))
        auto.record(dilate(lam, g * h) == dilate(lam, g) * dilate(lam, h), _witness(g=g, h=h, lam=lam))
        zero.record(dilate(0, g) == e, _witness(g=g))
    return report


def verify_dilation_lemma(group: CarnotGroup, m: int | Sequence[int] = 2, trials: int = 50,
                          seed: int = 0, weights: Sequence[int] | None = None,
                          magnitude: int = 10) -> VerificationReport:
    """For random simple commutators ``y`` of ``k`` first-layer elements,
    ``h = delta_m(y) (y^(m^k))^-1`` lies in ``G^(k+1)`` (and is trivial for ``k = s``)."""
    s = group.step
    if s < 2:
        raise BoundsError("the dilation lemma needs step >= 2")
    ms = [m] if isinstance(m, int) else list(m)
    ks = list(weights) if weights is not None else list(range(2, s + 1))
    report = VerificationReport("dilation_lemma", group.label, seed, extra={"m": ms, "k": ks})
    for k in ks:
        if not 2 <= k <= s:
            raise BoundsError(f"commutator length must lie in [2, {s}], got {k}")
        for mm in ms:
            check = report.check(f"k={k},m={mm}")
            for t in range(trials):
                rng = trial_rng(seed, t, 1000 * k + mm)
                xs = [group.horizontal([_rand_rational(rng, magnitude) for _ in range(group.rank)])
                      for _ in range(k)]
                y = simple_commutator(xs)
                h = dilate(mm, y) * power(y, mm**k).inverse()
                ok = in_lcs(h, k + 1) and (k < s or h.is_identity())
                check.record(ok, _witness(y=y, h=h))
    return report


def verify_sigma_axioms(group: CarnotGroup, trials: int = 200, seed: int = 0,
                        max_denominator: int = 12, magnitude: int = 10) -> VerificationReport:
    """The four vector-space axioms for ``sigma`` on random last-layer elements."""
    s = group.step
    report = VerificationReport("sigma_axioms", group.label, seed)
    checks = [report.check(n) for n in ("compatibility", "additivity", "unit", "distributivity")]
    for t in range(trials):
        rng = trial_rng(seed, t, 3)
        g = group.random_element(rng, magnitude, min_weight=s)
        h = group.random_element(rng, magnitude, min_weight=s)
        q = mpq(int(rng.integers(-magnitude, magnitude + 1)), int(rng.integers(1, max_denominator + 1)))
        p = mpq(int(rng.integers(-magnitude, magnitude + 1)), int(rng.integers(1, max_denominator + 1)))
        w = _witness(g=g, h=h, q=q, p=p)
        checks[0].record(sigma(q, sigma(p, g)) == sigma(q * p, g), w)
        checks[1].record(sigma(q, g) * sigma(p, g) == sigma(q + p, g), w)
        checks[2].record(sigma(1, g) == g, w)
        checks[3].record(sigma(q, g) * sigma(q, h) == sigma(q, g * h), w)
    return report
