import pickle

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from carnotlab.carnot_group import euclidean, heisenberg
from carnotlab.errors import DomainError, IncompatibleError, UnsupportedError
from carnotlab.lp_scalable import (
    LpSpace,
    box_map,
    check_box_map,
    filtration_subgroup,
    filtration_table,
    geodesic_partition_error,
    lp_dilate,
    lp_distance,
    lp_geodesic,
    lp_inverse,
    lp_metric_axioms,
    lp_multiply,
    one_parameter_curves,
)

H = heisenberg()
R1 = euclidean(1)
L1H = LpSpace.constant(H, 1, 6)
L2R = LpSpace.constant(R1, 2, 6)
L3R = LpSpace.constant(R1, 3, 6)

small = st.fractions(min_value=-4, max_value=4, max_denominator=5)


def lp_elements(space, dim):
    return st.dictionaries(st.integers(0, space.truncation - 1),
                           st.lists(small, min_size=dim, max_size=dim), max_size=4).map(space.element)


def test_distance_examples():
    e = L2R.identity()
    y = L2R.element({0: [3], 1: [4]})
    assert lp_distance(e, y) == 5.0
    assert lp_distance(y, y) == 0.0
    x = L1H.single(2, H.element((1, 0, 0)))
    assert lp_distance(L1H.identity(), x) == 1.0


def test_space_mismatch():
    with pytest.raises(IncompatibleError):
        lp_distance(L2R.identity(), L3R.identity())
    with pytest.raises(IncompatibleError):
        L2R.element({0: H.identity()})


def test_p_must_be_at_least_one():
    with pytest.raises(DomainError):
        LpSpace.constant(R1, 0.5, 3)


def test_operations():
    x = L1H.element({0: [1, 2, 3], 3: [0, 1, 0]})
    assert lp_multiply(x, lp_inverse(x)).is_identity()
    assert lp_dilate(0, x).is_identity()
    a = L1H.single(0, H.element((1, 0, 0)))
    b = L1H.single(1, H.element((0, 1, 0)))
    assert lp_multiply(a, b) == lp_multiply(b, a)
    assert x.support == (0, 3)


@given(lp_elements(L1H, 3), lp_elements(L1H, 3), st.sampled_from([-2.0, 0.5, 3.0]))
def test_dilation_scales_distance(x, y, t):
    assert lp_distance(lp_dilate(t, x), lp_dilate(t, y)) == pytest.approx(abs(t) * lp_distance(x, y), rel=1e-10)


@given(lp_elements(L1H, 3), lp_elements(L1H, 3), lp_elements(L1H, 3))
def test_left_invariance_and_symmetry(x, y, g):
    d = lp_distance(x, y)
    assert lp_distance(y, x) == d
    assert lp_distance(g * x, g * y) == pytest.approx(d, rel=1e-10, abs=1e-12)
    assert (d == 0) == (x == y)


@given(lp_elements(L2R, 1), lp_elements(L2R, 1), lp_elements(L2R, 1))
def test_triangle_true_metric(x, y, z):
    assert lp_distance(x, z) <= lp_distance(x, y) + lp_distance(y, z) + 1e-12


def test_c0_variant_uses_sup():
    c0 = LpSpace.constant(R1, 1, 4, kind="c0")
    assert lp_distance(c0.identity(), c0.element({0: [3], 1: [4]})) == 4.0


def test_filtration_examples():
    e = L1H.identity()
    m = 3
    sub = filtration_subgroup(L1H, m)
    assert sub.contains(e)
    x = L1H.element({i: [1, 0, 0] for i in range(m)})
    assert sub.contains(x)
    y = L1H.single(m, H.element((1, 0, 0)))
    assert not sub.contains(y)
    assert filtration_subgroup(L1H, m + 1).contains(y)
    with pytest.raises(DomainError):
        filtration_subgroup(L1H, 0)


def test_free_tower_filtration_factors():
    space = LpSpace.free_tower(2, 5)
    assert filtration_subgroup(space, 3).factors == ["free(2,1)", "free(2,2)", "free(2,3)"]
    rng = np.random.default_rng(1)
    elems = [space.random_element(rng) for _ in range(5)]
    rows = filtration_table(space, elems)
    assert all(r["member"] == r["expected"] for r in rows)


def test_filtration_density_monotone():
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = L1H.random_element(rng)
        ds = [filtration_subgroup(L1H, m).distance_from(x) for m in range(1, 8)]
        assert all(a >= b for a, b in zip(ds, ds[1:]))
        assert ds[-1] == 0.0


def test_geodesic_examples():
    L2R2 = LpSpace.constant(euclidean(2), 2, 4)
    x = L2R2.identity()
    y = L2R2.single(1, euclidean(2).element((2, 4)))
    assert lp_geodesic(x, y, 0) == x
    assert lp_geodesic(x, y, 1) == y
    assert lp_geodesic(x, y, 0.5) == L2R2.single(1, euclidean(2).element((1.0, 2.0)))


def test_geodesic_partition_telescopes():
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = L3R.random_element(rng, exact=False, scale=5)
        y = L3R.random_element(rng, exact=False, scale=5)
        cuts = [0.0, *np.sort(rng.uniform(0, 1, 6)), 1.0]
        assert geodesic_partition_error(x, y, cuts) < 1e-9


def test_geodesic_unsupported_component():
    x = L1H.single(2, H.element((1, 0, 0)))
    with pytest.raises(UnsupportedError, match="component 2"):
        lp_geodesic(L1H.identity(), x, 0.5)


def test_metric_axioms_report():
    rep = lp_metric_axioms(L1H, 300, seed=4)
    assert rep.ok and rep.triangle_checked
    rep = lp_metric_axioms(LpSpace.free_tower(2, 4), 100, seed=4)
    assert rep.ok and not rep.triangle_checked


def test_box_map_trivial_curves():
    curves = [lambda t: L1H.identity() for _ in range(4)]
    bm = box_map(L1H, curves, 2.0)
    assert bm.status == "certified-by-sampling"
    assert bm.alphas[0] == 1.0
    assert bm.evaluate([0.3] * 4).is_identity()


def test_box_map_single_curve():
    space = LpSpace.constant(R1, 1, 1)
    curves = one_parameter_curves(space, [R1.element((1,))])
    bm = box_map(space, curves, 2.0)
    assert bm.alphas == [1.0]
    for t in np.linspace(0, 1, 11):
        assert 0 <= float(bm.evaluate([t]).entry(0).coords[0]) <= 1


def test_box_map_heisenberg_tail_bounds():
    curves = one_parameter_curves(L1H, [H.element((1, 1, 0))] * 6)
    bm = box_map(L1H, curves, 3.0, seed=1)
    assert bm.status == "certified-by-sampling"
    check = check_box_map(bm, 200, seed=2)
    assert check.ok, check
    assert all(o < b for o, b in zip(bm.observed[1:], bm.bounds[1:]))


def test_box_map_shrinks_alpha1_for_large_first_curve():
    curves = one_parameter_curves(L1H, [H.element((10, 0, 0))])
    bm = box_map(L1H, curves, 2.0)
    assert bm.alphas[0] < 1.0
    assert check_box_map(bm, 100).ok


def test_space_pickles():
    space = pickle.loads(pickle.dumps(L1H))
    assert space.label == L1H.label and space.p == 1
    tower = pickle.loads(pickle.dumps(LpSpace.free_tower(2, 3)))
    assert tower.component(2).group.label == "free(2,3)"
    adhoc = LpSpace(lambda i: L1H.component(i), 1, 2)
    with pytest.raises(TypeError):
        pickle.dumps(adhoc)

