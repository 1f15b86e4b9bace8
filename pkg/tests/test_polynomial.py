from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmcgd.errors import ParameterError
from pmcgd.polynomial import ParameterSet, Polynomial, PolynomialVector, poly_add, poly_derivative, poly_eval, poly_mul
from pmcgd.textio import parse_polynomial

PQ = ParameterSet(["p", "q"])
p = Polynomial.variable(PQ, "p")
q = Polynomial.variable(PQ, "q")

coefficients = st.fractions(min_value=-5, max_value=5, max_denominator=6)
monomials = st.tuples(st.integers(0, 3), st.integers(0, 3))
polys = st.dictionaries(monomials, coefficients, max_size=5).map(lambda d: Polynomial(PQ, d))
points = st.tuples(st.fractions(-2, 2, max_denominator=8), st.fractions(-2, 2, max_denominator=8))


def test_parameter_set_rejects_duplicates_and_bad_names():
    with pytest.raises(ParameterError):
        ParameterSet(["p", "p"])
    with pytest.raises(ParameterError):
        ParameterSet(["1p"])
    with pytest.raises(ParameterError):
        PQ.index("r")


def test_point_from_mapping_checks_names():
    assert PQ.point({"p": 0.1, "q": 0.2}).tolist() == [0.1, 0.2]
    with pytest.raises(ParameterError):
        PQ.point({"p": 0.1})
    with pytest.raises(ParameterError):
        PQ.point({"p": 0.1, "q": 0.2, "r": 0.3})


def test_add_merges_like_terms():
    # p + (1 - p) = 1
    assert poly_add(p, 1 - p) == 1


def test_product_of_binomials():
    assert poly_mul(p + 1, p - 1) == p * p - 1
    assert str(p * (1 - q)) == "-p*q + p"


def test_derivative_examples():
    f = p * p * q + 3 * p
    assert poly_derivative(f, "p") == 2 * p * q + 3
    assert poly_derivative(f, "q") == p * p
    assert poly_derivative(Polynomial.constant(PQ, 7), "p").is_zero()


def test_evaluate_float_and_exact():
    f = -p * p + 2 * p + 2
    assert poly_eval(f, {"p": 0.5, "q": 0}) == pytest.approx(2.75)
    assert poly_eval(f, [Fraction(1, 2), 0], exact=True) == Fraction(11, 4)
    # Mappings need only the variables that occur.
    assert f.evaluate({"p": 0.1}) == pytest.approx(2.19)
    with pytest.raises(ParameterError):
        f.evaluate({"q": 0.1})


def test_degree_and_variables():
    assert (p * p * q).degree() == 3
    assert Polynomial(PQ).degree() == -1
    assert (p + 1).variables() == {"p"}
    assert (p + 1).depends_on("p") and not (p + 1).depends_on("q")


def test_mismatched_parameter_sets():
    other = Polynomial.variable(ParameterSet(["p"]), "p")
    with pytest.raises(ParameterError):
        p + other


def test_string_form():
    assert str(Polynomial(PQ)) == "0"
    assert str(1 - p) == "-p + 1"
    assert str(Fraction(1, 2) * p) == "1/2*p"


@given(polys, polys, polys)
def test_ring_laws(a, b, c):
    assert a + b == b + a
    assert a * b == b * a
    assert a * (b + c) == a * b + a * c
    assert (a + b) + c == a + (b + c)
    assert a - a == 0


@given(polys, polys)
def test_product_rule(a, b):
    for name in ("p", "q"):
        assert (a * b).derivative(name) == a.derivative(name) * b + a * b.derivative(name)


@given(polys, polys, points)
def test_evaluation_is_a_homomorphism(a, b, pt):
    assert (a * b).evaluate(pt, exact=True) == a.evaluate(pt, exact=True) * b.evaluate(pt, exact=True)
    assert (a + b).evaluate(pt, exact=True) == a.evaluate(pt, exact=True) + b.evaluate(pt, exact=True)


@given(polys)
def test_text_round_trip(a):
    assert parse_polynomial(str(a), PQ) == a


@settings(max_examples=50)
@given(st.lists(polys, min_size=1, max_size=6), points)
def test_vector_matches_scalar_evaluation(ps, pt):
    u = np.array([float(x) for x in pt])
    vec = PolynomialVector(PQ, ps)
    expected = [f.evaluate(u) for f in ps]
    assert np.allclose(vec.evaluate(u), expected, rtol=1e-12, atol=1e-12)
