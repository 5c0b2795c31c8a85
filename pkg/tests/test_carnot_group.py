import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from carnotlab.carnot_group import (
    commutator,
    dilate,
    euclidean,
    free_carnot,
    heisenberg,
    in_first_layer,
    lcs_member,
    multiply,
    power,
    sigma,
    simple_commutator,
    verify_appendix_identities,
    verify_dilation_lemma,
    verify_group_axioms,
    verify_sigma_axioms,
)
from carnotlab.errors import BoundsError, DomainError, IncompatibleError

H = heisenberg()
F23 = free_carnot(2, 3)
half = Fraction(1, 2)

q = st.fractions(min_value=-6, max_value=6, max_denominator=7)
nonzero_q = q.filter(lambda v: v != 0)


def elements(group):
    return st.lists(q, min_size=group.dim, max_size=group.dim).map(group.element)


def last_layer(group):
    k = group.dim - len(group.basis.layer(group.step))
    return st.lists(q, min_size=group.dim - k, max_size=group.dim - k).map(lambda c: group.element([0] * k + c))


def test_heisenberg_examples():
    a, b = H.element((1, 0, 0)), H.element((0, 1, 0))
    assert multiply(a, b).coords == (1, 1, half)
    assert commutator(a, b).coords == (0, 0, 1)
    assert power(H.element((1, 1, 0)), 2).coords == (2, 2, 0)
    assert dilate(2, H.element((1, 1, 1))).coords == (2, 2, 4)
    assert sigma(Fraction(3, 2), H.element((0, 0, 1))).coords == (0, 0, Fraction(3, 2))


def test_trivial_cases():
    g = H.element((3, -1, Fraction(2, 5)))
    e = H.identity()
    assert g * e == g and g * g.inverse() == e
    assert dilate(1, g) == g and dilate(0, g) == e
    assert commutator(g, g) == e and commutator(g, e) == e
    assert power(g, 0) == e and power(g, 1) == g and power(g, -1) == g.inverse()
    z = H.element((0, 0, 7))
    assert sigma(1, z) == z and sigma(0, z) == e


def test_lcs_member():
    e = H.identity()
    assert all(lcs_member(e, k) for k in (1, 2, 3))
    assert lcs_member(H.element((0, 0, 1)), 2)
    assert not lcs_member(H.element((1, 0, 0)), 2)
    assert not lcs_member(H.element((0, 0, 1)), 3)
    with pytest.raises(BoundsError):
        lcs_member(e, 4)
    with pytest.raises(BoundsError):
        lcs_member(e, 0)


def test_first_layer_examples():
    assert in_first_layer(H.identity())
    assert in_first_layer(H.element((1, 2, 0)))
    g = H.element((1, 0, 3))
    assert not in_first_layer(g)
    # the one-parameter-subgroup law fails for it at t = u = 1
    assert dilate(1, g) * dilate(1, g) != dilate(2, g)


def test_sigma_domain():
    with pytest.raises(DomainError):
        sigma(2, H.element((1, 0, 0)))


def test_mismatched_groups():
    with pytest.raises(IncompatibleError):
        H.identity() * F23.identity()


def test_float_dilation_marks_inexact():
    g = dilate(0.3, H.element((1, 1, 1)))
    assert not g.exact
    assert dilate(Fraction(3, 10), H.element((1, 1, 1))).exact
    assert g.coords == pytest.approx((0.3, 0.3, 0.09))


@given(elements(F23), elements(F23), elements(F23))
def test_group_axioms(g, h, k):
    e = F23.identity()
    assert (g * h) * k == g * (h * k)
    assert g * e == g == e * g
    assert g * g.inverse() == e
    assert g.inverse().coords == tuple(-c for c in g.coords)


@given(elements(F23), elements(F23), nonzero_q, nonzero_q)
def test_dilations_are_automorphisms(g, h, lam, mu):
    assert dilate(lam, dilate(mu, g)) == dilate(lam * mu, g)
    assert dilate(lam, g * h) == dilate(lam, g) * dilate(lam, h)


@given(elements(F23), elements(F23))
def test_commutator_in_second_layer(g, h):
    assert lcs_member(commutator(g, h), 2)


@given(st.lists(q, min_size=2, max_size=2), q, q)
def test_first_layer_one_parameter(coeffs, t, u):
    v = F23.horizontal(coeffs)
    assert in_first_layer(v)
    assert dilate(t, v) * dilate(u, v) == dilate(t + u, v)


@given(elements(F23), st.integers(-4, 4), st.integers(-4, 4))
def test_power_additive(g, n, m):
    assert power(g, n) * power(g, m) == power(g, n + m)


@given(last_layer(F23), last_layer(F23), q, q)
def test_sigma_vector_space(z, w, a, b):
    assert sigma(a, sigma(b, z)) == sigma(a * b, z)
    assert sigma(a, z) * sigma(b, z) == sigma(a + b, z)
    assert sigma(a, z) * sigma(a, w) == sigma(a, z * w)
    assert sigma(1, z) == z


@given(last_layer(F23), st.integers(1, 6), st.integers(1, 6))
def test_sigma_definition(z, n, m):
    expected = dilate(Fraction(1, m), power(z, n * m ** (F23.step - 1)))
    assert sigma(Fraction(n, m), z) == expected


@given(st.lists(st.lists(q, min_size=2, max_size=2), min_size=2, max_size=3))
def test_simple_commutators_in_lcs(coeffs):
    xs = [F23.horizontal(c) for c in coeffs]
    assert lcs_member(simple_commutator(xs), len(xs))


def test_dilation_lemma_heisenberg_example():
    y = H.element((0, 0, 1))
    assert dilate(3, y).coords == (0, 0, 9)
    assert dilate(3, y) * power(y, 9).inverse() == H.identity()


def test_verification_reports():
    rep = verify_appendix_identities(F23, 100, seed=1)
    assert rep.ok
    assert [c.passed for c in rep.checks] == [100] * 4
    rep = verify_appendix_identities(free_carnot(3, 4), 100, seed=2)
    assert rep.ok
    rep = verify_dilation_lemma(F23, 2, 50, seed=3, weights=[2])
    assert rep.ok and rep.checks[0].passed == 50
    assert verify_group_axioms(euclidean(3), 20).ok
    assert verify_sigma_axioms(F23, 50).ok


def test_dilation_lemma_needs_step_two():
    with pytest.raises(BoundsError):
        verify_dilation_lemma(euclidean(2))


def test_identity_triple_first():
    rep = verify_appendix_identities(H, 1, seed=0)
    assert rep.ok and all(c.trials == 1 for c in rep.checks)


def test_report_json_deterministic():
    a = verify_appendix_identities(F23, 20, seed=5).to_json()
    b = verify_appendix_identities(F23, 20, seed=5).to_json()
    assert a == b
    assert json.loads(a)["suite"] == "appendix_identities"


def test_failure_is_reported_with_counterexample():
    rep = verify_group_axioms(H, 3, seed=0)
    c = rep.check("associativity")
    c.record(False, {"g": "x"})
    assert not rep.ok and rep.first_failure() == "associativity"
    assert c.counterexample == {"g": "x"}


def test_random_element_bounds():
    rng = np.random.default_rng(0)
    g = F23.random_element(rng, magnitude=3, min_weight=2)
    assert all(c == 0 for c in g.coords[:2])
    assert all(abs(c.numerator) <= 3 and 1 <= c.denominator <= 3 for c in g.coords)
