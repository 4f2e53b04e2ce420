import numpy as np
import pytest
from hypothesis import given, strategies as st

from consensus_sos.poly import (
    DimensionError,
    Polynomial,
    PolyVector,
    arith,
    count_monomials,
    evaluate,
    gradient,
    monomials_up_to,
    substitute_affine,
)

from conftest import poly


@st.composite
def polynomials(draw, nvars=None, max_degree=6, max_terms=6):
    n = nvars if nvars is not None else draw(st.integers(1, 6))
    k = draw(st.integers(0, max_terms))
    terms = {}
    for _ in range(k):
        exps = draw(st.lists(st.integers(0, max_degree), min_size=n, max_size=n))
        while sum(exps) > max_degree:
            i = int(np.argmax(exps))
            exps[i] -= 1
        terms[tuple(exps)] = draw(st.floats(-3, 3, allow_nan=False))
    return Polynomial(n, terms)


@st.composite
def poly_triples(draw):
    n = draw(st.integers(1, 6))
    return tuple(draw(polynomials(nvars=n, max_degree=2, max_terms=4)) for _ in range(3)), n


def x(i, n=2):
    return Polynomial.variable(n, i)


def test_additive_cancellation():
    assert (x(0) + 1) + (-1) == x(0)
    assert arith(x(0) + 1, Polynomial.constant(2, -1.0), "add") == x(0)


def test_difference_of_squares():
    assert (x(0) + x(1)) * (x(0) - x(1)) == x(0) ** 2 - x(1) ** 2


def test_scale_leading_term():
    p = arith(poly(2, {(4, 0): 1.2795}), 4, "scale")
    assert p.coefficient((4, 0)) == pytest.approx(5.118)


def test_canonical_form_drops_zeros():
    p = x(0) - x(0)
    assert p.is_zero() and len(p) == 0 and p.degree == -1


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        x(0, 2) + x(0, 3)
    with pytest.raises(DimensionError):
        evaluate(x(0), (1.0,))


def test_degree_rules():
    p, q = x(0) ** 2 + 1, x(1) ** 3 - x(0)
    assert (p * q).degree == 5
    assert (p + q).degree <= 3


def test_gradient_quadratic():
    g = gradient(x(0) ** 2 + x(1) ** 2)
    assert g.allclose(PolyVector([x(0).scale(2), x(1).scale(2)]))


def test_gradient_constant_is_zero():
    g = gradient(Polynomial.constant(3, 5.0))
    assert all(p.is_zero() for p in g)


def test_gradient_of_example_matches_printed_coupling(example):
    g = gradient(example.V)
    for gi, hi in zip(g, example.h1):
        monos = set(gi.support()) | set(hi.support())
        assert max(abs(gi.coefficient(m) - hi.coefficient(m)) for m in monos) <= 2e-4


def test_evaluate_examples(example):
    assert evaluate(x(0) ** 2 + x(1) ** 2, (0, 0)) == 0
    assert evaluate(example.V, (0, 0)) == pytest.approx(1.8135)
    assert evaluate(x(0) * x(1), (2, 3)) == 6


def test_substitute_binomial():
    # x -> a - c over (a, c)
    p = substitute_affine(Polynomial.variable(1, 0) ** 2, [[1.0, -1.0]])
    a, c = x(0), x(1)
    assert p == a * a - (a * c).scale(2) + c * c


def test_substitute_sign_flip_is_odd_check(example):
    flipped = example.h1.substitute(-np.eye(2))
    assert flipped.allclose(-example.h1, 0.0)


def test_substitute_preserves_constant(example):
    T = np.hstack([np.eye(2), -np.eye(2)])
    shifted = substitute_affine(example.V, T)
    assert shifted.coefficient((0, 0, 0, 0)) == pytest.approx(1.8135)
    # term-by-term expansion oracle
    pt = np.array([0.3, -0.7, 1.1, 0.4])
    assert shifted(pt) == pytest.approx(example.V(pt[:2] - pt[2:]), rel=1e-12)


def test_substitute_missing_entry():
    with pytest.raises(DimensionError):
        substitute_affine(x(0, 3), np.eye(2))


def test_monomial_counts():
    assert len(monomials_up_to(2, 2)) == 6
    assert len(monomials_up_to(6, 3)) == count_monomials(6, 3) == 84


def test_json_roundtrip(example):
    assert Polynomial.from_json(example.V.to_json()) == example.V
    assert PolyVector.from_json(example.h2.to_json()) == example.h2


@given(poly_triples())
def test_ring_laws(args):
    (p, q, r), _ = args
    assert ((p + q) + r).allclose(p + (q + r), 1e-12)
    assert ((p * q) * r).allclose(p * (q * r), 1e-12)
    assert (p * (q + r)).allclose(p * q + p * r, 1e-12)
    assert (p * q).allclose(q * p, 1e-12)


@given(poly_triples(), st.data())
def test_evaluation_is_homomorphism(args, data):
    (p, q, _), n = args
    pt = data.draw(st.lists(st.floats(-2, 2), min_size=n, max_size=n))
    lhs = (p * q)(pt)
    rhs = p(pt) * q(pt)
    assert abs(lhs - rhs) <= 1e-9 * (1 + abs(rhs))
    assert (p + q)(pt) == pytest.approx(p(pt) + q(pt), abs=1e-9)


@given(polynomials(nvars=2, max_degree=4), st.lists(st.floats(-2, 2), min_size=6, max_size=6))
def test_chain_rule_for_affine_maps(p, entries):
    A = np.array(entries).reshape(2, 3)
    lhs = gradient(substitute_affine(p, A))
    grad_at = gradient(p).substitute(A)
    for k in range(3):
        rhs = Polynomial.zero(3)
        for i in range(2):
            rhs = rhs + grad_at[i].scale(A[i, k])
        assert lhs[k].allclose(rhs, 1e-12 * (1 + rhs.max_abs_coef()))


def test_printed_coupling_is_odd(example):
    for p in example.h1:
        assert all(sum(m) % 2 == 1 for m in p.support())
