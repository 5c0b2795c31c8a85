import itertools
import math
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from carnotlab.carnot_group import dilate, euclidean, free_carnot, heisenberg
from carnotlab.errors import DomainError, IncompatibleError, UnsupportedError
from carnotlab.homogeneous_metric import (
    HomogeneousNorm,
    default_norm,
    distance,
    homothety_check,
    metric_axioms,
    norm,
    perturbation_bound,
    quasi_triangle_constant,
)

H = heisenberg()
KOR = HomogeneousNorm("koranyi")
BOX = HomogeneousNorm("ball_box")

coord = st.floats(-20, 20, allow_nan=False)


def koranyi_formula(x, y, t):
    # decimal arithmetic has no practical exponent limits
    x, y, t = (Decimal(v) for v in (x, y, t))
    return float(((x * x + y * y) ** 2 + 16 * t * t).sqrt().sqrt())


def test_norm_examples():
    assert norm(KOR, H.identity()) == 0
    assert norm(KOR, H.element((1, 0, 0))) == 1
    assert distance(KOR, H.identity(), H.element((0, 0, 1))) == pytest.approx(2.0, rel=1e-15)
    g = H.element((1, 1, 1))
    assert norm(BOX, dilate(3, g)) == pytest.approx(3 * norm(BOX, g), rel=1e-12)


def test_koranyi_needs_heisenberg():
    with pytest.raises(UnsupportedError):
        norm(KOR, free_carnot(2, 3).identity())


def test_distance_group_mismatch():
    with pytest.raises(IncompatibleError):
        distance(BOX, H.identity(), euclidean(3).identity())


def test_layer_weights_and_default():
    g = H.element((0, 0, 4))
    assert norm(HomogeneousNorm("ball_box", (1.0, 3.0)), g) == pytest.approx(6.0)
    assert default_norm(H).kind == "koranyi"
    assert default_norm(free_carnot(2, 3)).kind == "ball_box"
    with pytest.raises(DomainError):
        HomogeneousNorm("ball_box", (0.0,))


@given(coord, coord, coord)
def test_koranyi_matches_formula(x, y, t):
    assert norm(KOR, H.element((x, y, t))) == pytest.approx(koranyi_formula(x, y, t), rel=1e-12)


@given(st.sampled_from([KOR, BOX]), st.lists(coord, min_size=3, max_size=3),
       st.sampled_from([-3.0, -0.5, 0.25, 2.0, 8.0]))
def test_norm_homogeneous_and_symmetric(n, c, lam):
    g = H.element(c)
    assert norm(n, dilate(lam, g)) == pytest.approx(abs(lam) * norm(n, g), rel=1e-12, abs=1e-300)
    assert norm(n, g.inverse()) == norm(n, g)
    assert (norm(n, g) == 0) == g.is_identity()


def test_homothety_examples():
    v = H.element((1, 0, 0))
    c = norm(KOR, v)
    rep = homothety_check(KOR, v, [(2.0, 5.0), (0.0, 1.0), (1.5, 1.5)])
    assert rep.ok and rep.constant == c
    assert distance(KOR, dilate(2, v), dilate(5, v)) == pytest.approx(3 * c)
    with pytest.raises(DomainError):
        homothety_check(KOR, H.element((1, 0, 1)), [(0.0, 1.0)])


def test_metric_axioms_small():
    rep = metric_axioms(KOR, H, 500, seed=1)
    assert rep.ok and rep.triangle_violations == 0
    rep = metric_axioms(BOX, free_carnot(2, 3), 300, seed=1)
    assert rep.ok and not rep.is_true_metric
    assert rep.quasi_triangle_constant >= 0.5


def test_quasi_triangle_constant_euclidean():
    # ball_box on a step-1 group is the euclidean norm
    assert quasi_triangle_constant(BOX, euclidean(2), 500) <= 1 + 1e-12


def test_perturbation_trivial_cases():
    e = H.identity()
    res = perturbation_bound(KOR, [e], 0.1, samples=200)
    assert res.status == "certified" and res.delta == pytest.approx(0.1)
    E2 = euclidean(2)
    res = perturbation_bound(BOX, [E2.element((3, 4))], 0.25, samples=200)
    assert res.status == "certified" and res.delta == 0.25


def test_perturbation_heisenberg_against_grid():
    k = H.element((1, 0, 0))
    eps = 0.1
    res = perturbation_bound(KOR, [k], eps, samples=300, seed=3)
    assert res.status == "certified" and 0 < res.delta <= eps
    # oracle: dense grid over the Koranyi ball of radius delta
    d = res.delta
    worst = 0.0
    axis = np.linspace(-d, d, 25)
    taxis = np.linspace(-d * d / 4, d * d / 4, 25)
    for x, y, t in itertools.product(axis, axis, taxis):
        h = H.element((float(x), float(y), float(t)))
        if norm(KOR, h) < d:
            worst = max(worst, distance(KOR, h * k, k))
    assert worst < eps


def test_perturbation_inconclusive_budget():
    k = H.element((50, 0, 0))
    res = perturbation_bound(KOR, [k], 1e-3, samples=20, max_iter=2)
    assert res.status == "inconclusive" and res.delta is None


def test_perturbation_rejects_bad_input():
    with pytest.raises(DomainError):
        perturbation_bound(KOR, [], 0.1)
    with pytest.raises(DomainError):
        perturbation_bound(KOR, [H.identity()], 0.0)


def test_float_tolerance_left_invariance():
    rng = np.random.default_rng(4)
    for _ in range(50):
        p, q_, r = (H.random_float_element(rng, 3) for _ in range(3))
        assert math.isclose(distance(KOR, r * p, r * q_), distance(KOR, p, q_), rel_tol=1e-10)
