"""Free nilpotent Lie algebras: Hall bases, exact brackets and truncated BCH.

Basis elements are Hall trees ordered by weight and, within a weight, by the
index pair of their two factors.  A tree ``[a, b]`` belongs to the basis when
``a < b`` and either ``b`` is a generator or ``b = [c, d]`` with ``c <= a``.
Brackets of basis elements are rewritten into the basis with the Jacobi
identity, which yields exact rational structure constants.

Group multiplication in exponential coordinates is the Baker-Campbell-Hausdorff
product.  The universal series is computed once per step from the Dynkin
formula inside the two-generator free algebra; substituting the coordinates of
a concrete basis gives a polynomial map which is compiled to straight-line
Python code.
"""
from __future__ import annotations

import math
import threading
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable, Sequence

from gmpy2 import mpq

from .errors import BoundsError, IncompatibleError

MAX_RANK = 8
MAX_STEP = 8
# Compiling the BCH polynomial map is quadratic-ish in the basis size.
MAX_BCH_DIM = 256

Q0 = mpq(0)
Q1 = mpq(1)


def to_rational(value) -> mpq:
    """Convert ints, Fractions, mpq, decimal strings and floats to ``mpq``."""
    if isinstance(value, bool):
        raise TypeError("booleans are not scalars")
    if isinstance(value, Fraction):
        return mpq(value.numerator, value.denominator)
    if isinstance(value, str):
        return mpq(Fraction(value))
    return mpq(value)


def mobius(n: int) -> int:
    result = 1
    p = 2
    while p * p <= n:
        if n % p == 0:
            n //= p
            if n % p == 0:
                return 0
            result = -result
        p += 1
    if n > 1:
        result = -result
    return result


def witt_dimension(rank: int, weight: int) -> int:
    """Dimension of the weight-``weight`` layer of the free Lie algebra."""
    total = sum(mobius(d) * rank ** (weight // d) for d in range(1, weight + 1) if weight % d == 0)
    return total // weight


@dataclass(frozen=True)
class HallWord:
    index: int
    weight: int
    left: int | None = None
    right: int | None = None
    letter: int | None = None

    @property
    def is_letter(self) -> bool:
        return self.letter is not None


class HallBasis:
    """Graded Hall basis of the free Lie algebra on ``rank`` generators, truncated at ``step``."""

    def __init__(self, rank: int, step: int):
        if not isinstance(rank, int) or not 1 <= rank <= MAX_RANK:
            raise BoundsError(f"rank must be an integer in [1, {MAX_RANK}], got {rank!r}")
        if not isinstance(step, int) or not 1 <= step <= MAX_STEP:
            raise BoundsError(f"step must be an integer in [1, {MAX_STEP}], got {step!r}")
        self.rank = rank
        self.step = step
        words: list[HallWord] = [HallWord(i, 1, letter=i) for i in range(rank)]
        offsets = [(0, rank)]
        lookup: dict[tuple[int, int], int] = {}
        for k in range(2, step + 1):
            pairs = []
            for wa in range(1, k // 2 + 1):
                a_start, a_stop = offsets[wa - 1]
                b_start, b_stop = offsets[k - wa - 1]
                for b in range(b_start, b_stop):
                    bw = words[b]
                    lo = a_start if bw.is_letter else max(a_start, bw.left)
                    for a in range(lo, min(a_stop, b)):
                        pairs.append((a, b))
            pairs.sort()
            start = len(words)
            for a, b in pairs:
                lookup[(a, b)] = len(words)
                words.append(HallWord(len(words), k, left=a, right=b))
            offsets.append((start, len(words)))
        self.words: tuple[HallWord, ...] = tuple(words)
        self.layer_offsets: tuple[tuple[int, int], ...] = tuple(offsets)
        self.weights: tuple[int, ...] = tuple(w.weight for w in words)
        self._lookup = lookup
        self._bracket_memo: dict[tuple[int, int], tuple[tuple[int, mpq], ...]] = {}
        self._lock = threading.Lock()
        self._bch_exact: Callable | None = None
        self._bch_float: Callable | None = None

    def __repr__(self) -> str:
        return f"HallBasis(rank={self.rank}, step={self.step}, dim={self.dim})"

    def __reduce__(self):
        return (hall_basis, (self.rank, self.step))

    @property
    def dim(self) -> int:
        return len(self.words)

    @property
    def layer_dims(self) -> list[int]:
        return [stop - start for start, stop in self.layer_offsets]

    def layer(self, weight: int) -> range:
        start, stop = self.layer_offsets[weight - 1]
        return range(start, stop)

    def label(self, index: int) -> str:
        """Bracket expression of a basis element, generators numbered from 1."""
        w = self.words[index]
        if w.is_letter:
            return str(w.letter + 1)
        return f"[{self.label(w.left)},{self.label(w.right)}]"

    def foliage(self, index: int) -> tuple[int, ...]:
        w = self.words[index]
        if w.is_letter:
            return (w.letter,)
        return self.foliage(w.left) + self.foliage(w.right)

    # structure constants -------------------------------------------------

    def bracket_basis(self, i: int, j: int) -> tuple[tuple[int, mpq], ...]:
        """``[e_i, e_j]`` expanded in the basis, as ``((k, coefficient), ...)``."""
        key = (i, j)
        hit = self._bracket_memo.get(key)
        if hit is not None:
            return hit
        with self._lock:
            result = self._rewrite(i, j)
        return result

    def _rewrite(self, a: int, b: int) -> tuple[tuple[int, mpq], ...]:
        memo = self._bracket_memo
        hit = memo.get((a, b))
        if hit is not None:
            return hit
        w = self.weights
        if a == b or w[a] + w[b] > self.step:
            out: tuple[tuple[int, mpq], ...] = ()
        elif a > b:
            out = tuple((k, -c) for k, c in self._rewrite(b, a))
        else:
            bw = self.words[b]
            if bw.is_letter or bw.left <= a:
                out = ((self._lookup[(a, b)], Q1),)
            else:
                # [a, [c, d]] = [[a, c], d] + [c, [a, d]]
                c, d = bw.left, bw.right
                acc: dict[int, mpq] = defaultdict(mpq)
                for k, v in self._rewrite(a, c):
                    for k2, v2 in self._rewrite(k, d):
                        acc[k2] += v * v2
                for k, v in self._rewrite(a, d):
                    for k2, v2 in self._rewrite(c, k):
                        acc[k2] += v * v2
                out = tuple(sorted((k, v) for k, v in acc.items() if v != 0))
        memo[(a, b)] = out
        return out

    def structure_constants(self) -> dict[tuple[int, int], tuple[tuple[int, mpq], ...]]:
        """Nonzero ``[e_i, e_j]`` for ``i < j``."""
        table = {}
        for i in range(self.dim):
            for j in range(i + 1, self.dim):
                if self.weights[i] + self.weights[j] > self.step:
                    continue
                entry = self.bracket_basis(i, j)
                if entry:
                    table[(i, j)] = entry
        return table

    # BCH ----------------------------------------------------------------

    def bch_functions(self) -> tuple[Callable, Callable]:
        """Compiled ``(exact, float)`` BCH maps on coordinate tuples."""
        if self._bch_exact is None:
            if self.dim > MAX_BCH_DIM:
                raise BoundsError(
                    f"group operations limited to dimension {MAX_BCH_DIM}; "
                    f"rank {self.rank} step {self.step} has dimension {self.dim}"
                )
            polys = bch_polynomials(self)
            exact, floating = _compile(polys, self.dim)
            with self._lock:
                self._bch_exact, self._bch_float = exact, floating
        return self._bch_exact, self._bch_float


@lru_cache(maxsize=None)
def hall_basis(r: int, s: int) -> HallBasis:
    """Hall basis of the free nilpotent Lie algebra of rank ``r`` and step ``s``."""
    return HallBasis(r, s)


# vectors -----------------------------------------------------------------


class AlgebraVector:
    """Exact coordinates of a free nilpotent Lie algebra element in a Hall basis."""

    __slots__ = ("basis", "coords")

    def __init__(self, basis: HallBasis, coords: Iterable):
        coords = tuple(to_rational(c) for c in coords)
        if len(coords) != basis.dim:
            raise IncompatibleError(f"expected {basis.dim} coordinates, got {len(coords)}")
        self.basis = basis
        self.coords = coords

    @classmethod
    def zero(cls, basis: HallBasis) -> AlgebraVector:
        return cls(basis, (Q0,) * basis.dim)

    @classmethod
    def unit(cls, basis: HallBasis, index: int) -> AlgebraVector:
        coords = [Q0] * basis.dim
        coords[index] = Q1
        return cls(basis, coords)

    def _check(self, other: AlgebraVector) -> None:
        if not isinstance(other, AlgebraVector) or other.basis is not self.basis:
            raise IncompatibleError("vectors live on different Hall bases")

    def __add__(self, other: AlgebraVector) -> AlgebraVector:
        self._check(other)
        return AlgebraVector(self.basis, (a + b for a, b in zip(self.coords, other.coords)))

    def __sub__(self, other: AlgebraVector) -> AlgebraVector:
        self._check(other)
        return AlgebraVector(self.basis, (a - b for a, b in zip(self.coords, other.coords)))

    def __neg__(self) -> AlgebraVector:
        return AlgebraVector(self.basis, (-a for a in self.coords))

    def __mul__(self, scalar) -> AlgebraVector:
        q = to_rational(scalar)
        return AlgebraVector(self.basis, (q * a for a in self.coords))

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, AlgebraVector)
            and other.basis is self.basis
            and other.coords == self.coords
        )

    def __hash__(self) -> int:
        return hash((self.basis.rank, self.basis.step, self.coords))

    def __repr__(self) -> str:
        return f"AlgebraVector({[str(c) for c in self.coords]})"

    def is_zero(self) -> bool:
        return not any(self.coords)

    def layer(self, weight: int) -> tuple[mpq, ...]:
        return self.coords[self.basis.layer(weight).start : self.basis.layer(weight).stop]

    def min_weight(self) -> int | None:
        """Smallest weight carrying a nonzero coordinate (None for zero)."""
        for i, c in enumerate(self.coords):
            if c:
                return self.basis.weights[i]
        return None


def bracket(x: AlgebraVector, y: AlgebraVector) -> AlgebraVector:
    """Exact Lie bracket; components beyond the step are dropped."""
    x._check(y)
    basis = x.basis
    out = [Q0] * basis.dim
    xs = [(i, c) for i, c in enumerate(x.coords) if c]
    ys = [(j, c) for j, c in enumerate(y.coords) if c]
    for i, a in xs:
        for j, b in ys:
            for k, c in basis.bracket_basis(i, j):
                out[k] += c * a * b
    return AlgebraVector(basis, out)


def bch(x: AlgebraVector, y: AlgebraVector) -> AlgebraVector:
    """Truncated Baker-Campbell-Hausdorff product ``log(exp x exp y)``."""
    x._check(y)
    exact, _ = x.basis.bch_functions()
    return AlgebraVector(x.basis, exact(x.coords, y.coords))


# universal BCH series ------------------------------------------------------


@lru_cache(maxsize=None)
def dynkin_word_coefficients(s: int) -> dict[tuple[int, ...], mpq]:
    """Dynkin coefficients of right-nested words in ``X = 0``, ``Y = 1`` up to length ``s``.

    ``log(exp X exp Y) = sum_w c_w [w_1, [w_2, ..., [w_{n-1}, w_n]]]``.
    """
    coeffs: dict[tuple[int, ...], mpq] = defaultdict(mpq)
    fact = [math.factorial(i) for i in range(s + 1)]

    def extend(blocks: int, word: tuple[int, ...], denom: int) -> None:
        total = len(word)
        if blocks:
            sign = 1 if blocks % 2 else -1
            coeffs[word] += mpq(sign, blocks * total * denom)
        for r in range(s - total + 1):
            for q in range(s - total - r + 1):
                if r + q:
                    extend(blocks + 1, word + (0,) * r + (1,) * q, denom * fact[r] * fact[q])

    extend(0, (), 1)
    return {w: c for w, c in coeffs.items() if c and (len(w) == 1 or w[-1] != w[-2])}


Tree = "int | tuple[Tree, Tree]"


@lru_cache(maxsize=None)
def bch_series(s: int) -> tuple[tuple[object, mpq], ...]:
    """Universal BCH series to weight ``s`` as ``(tree, coefficient)`` pairs.

    Trees are Hall trees over the letters ``0`` (X) and ``1`` (Y), nested as
    2-tuples.
    """
    basis = hall_basis(2, s)
    total = [Q0] * basis.dim
    units = [AlgebraVector.unit(basis, 0), AlgebraVector.unit(basis, 1)]
    for word, c in dynkin_word_coefficients(s).items():
        v = units[word[-1]]
        for letter in reversed(word[:-1]):
            v = bracket(units[letter], v)
        for k, a in enumerate(v.coords):
            if a:
                total[k] += c * a

    def tree(i: int):
        w = basis.words[i]
        return w.letter if w.is_letter else (tree(w.left), tree(w.right))

    return tuple((tree(i), c) for i, c in enumerate(total) if c)


# polynomial maps ---------------------------------------------------------

Poly = dict  # monomial (sorted tuple of variable ids) -> mpq


def _poly_mul(p: Poly, q: Poly) -> Poly:
    out: Poly = defaultdict(mpq)
    for m1, c1 in p.items():
        for m2, c2 in q.items():
            out[tuple(sorted(m1 + m2))] += c1 * c2
    return out


def _poly_bracket(basis: HallBasis, p: list[Poly], q: list[Poly]) -> list[Poly]:
    out: list[Poly] = [defaultdict(mpq) for _ in range(basis.dim)]
    ps = [(i, a) for i, a in enumerate(p) if a]
    qs = [(j, b) for j, b in enumerate(q) if b]
    for i, a in ps:
        for j, b in qs:
            entry = basis.bracket_basis(i, j)
            if not entry:
                continue
            prod = _poly_mul(a, b)
            for k, c in entry:
                target = out[k]
                for m, v in prod.items():
                    target[m] += c * v
    return [{m: v for m, v in poly.items() if v} for poly in out]


def bch_polynomials(basis: HallBasis) -> list[Poly]:
    """Coordinates of ``bch(x, y)`` as polynomials in ``x_0..x_{D-1}, y_0..y_{D-1}``.

    Variable ``i < D`` is ``x_i``; variable ``D + i`` is ``y_i``.
    """
    dim = basis.dim
    xs = [{(i,): Q1} for i in range(dim)]
    ys = [{(dim + i,): Q1} for i in range(dim)]
    memo: dict = {}

    def evaluate(tree) -> list[Poly]:
        if tree in memo:
            return memo[tree]
        if isinstance(tree, int):
            out = xs if tree == 0 else ys
        else:
            out = _poly_bracket(basis, evaluate(tree[0]), evaluate(tree[1]))
        memo[tree] = out
        return out

    total: list[Poly] = [defaultdict(mpq) for _ in range(dim)]
    for tree, c in bch_series(basis.step):
        for k, poly in enumerate(evaluate(tree)):
            for m, v in poly.items():
                total[k][m] += c * v
    return [{m: v for m, v in poly.items() if v} for poly in total]


def _compile(polys: Sequence[Poly], dim: int) -> tuple[Callable, Callable]:
    consts: list[mpq] = []
    index: dict[mpq, int] = {}

    def const(c: mpq) -> str:
        if c not in index:
            index[c] = len(consts)
            consts.append(c)
        return f"C[{index[c]}]"

    def var(v: int) -> str:
        return f"x{v}" if v < dim else f"y{v - dim}"

    lines = []
    for poly in polys:
        terms = []
        for mono, c in sorted(poly.items()):
            factors = "*".join(var(v) for v in mono)
            if c == 1:
                terms.append(factors)
            elif c == -1:
                terms.append(f"-{factors}")
            else:
                terms.append(f"{const(c)}*{factors}")
        lines.append(" + ".join(terms) if terms else "Z")
    names_x = ", ".join(f"x{i}" for i in range(dim))
    names_y = ", ".join(f"y{i}" for i in range(dim))
    src = (
        "def bch_map(x, y):\n"
        f"    {names_x}, = x\n"
        f"    {names_y}, = y\n"
        "    return (\n" + "".join(f"        {line},\n" for line in lines) + "    )\n"
    )
    exact_ns = {"C": consts, "Z": Q0}
    float_ns = {"C": [float(c) for c in consts], "Z": 0.0}
    exec(compile(src, f"<bch r={dim}>", "exec"), exact_ns)
    exec(compile(src, f"<bch r={dim} float>", "exec"), float_ns)
    return exact_ns["bch_map"], float_ns["bch_map"]
