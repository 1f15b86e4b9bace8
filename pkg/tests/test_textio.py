from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from pmcgd.errors import ParseError
from pmcgd.model import GeneratorSpec, derived_automaton, generate_raw, preprocess
from pmcgd.polynomial import ParameterSet
from pmcgd.textio import (export_dot, parse_model, parse_polynomial, parse_property, parse_rational, parse_region,
                          serialize_model, serialize_region)

from conftest import MODELS


def error_of(text):
    with pytest.raises(ParseError) as info:
        parse_model(text)
    return info.value


def test_rational_literals():
    assert parse_rational("0.5") == Fraction(1, 2)
    assert parse_rational("1/3") == Fraction(1, 3)
    assert parse_rational("2e-1") == Fraction(1, 5)


def test_polynomial_expression_grammar():
    P = ParameterSet(["p", "q"])
    assert str(parse_polynomial("(1 - p) * (1 - q)", P)) == "p*q - p - q + 1"
    assert parse_polynomial("0.25*p + 1/4*p", P) == parse_polynomial("1/2*p", P)
    with pytest.raises(ParseError):
        parse_polynomial("p / q", P)
    with pytest.raises(ParseError):
        parse_polynomial("r", P)


def test_division_is_rejected_with_location():
    err = error_of("params p;\nstate s init;\nstate t absorbing;\ntarget t;\ntransition s -> t : p/p;\n")
    assert err.line == 5


def test_row_sum_violation_names_the_state():
    err = error_of("params p;\nstate s init;\nstate t absorbing;\ntarget t;\ntransition s -> t : p;\n")
    assert "'s'" in str(err)


@pytest.mark.parametrize("text, fragment", [
    ("state s init; state s;", "duplicate state"),
    ("state s; state t absorbing; target t; transition s -> t : 1;", "init"),
    ("state s init; state t absorbing; target t; transition s -> u : 1;", "unknown state"),
    ("state s init; state t absorbing; target t; transition s -> t : 1; transition s -> t : 1;", "duplicate transition"),
    ("state s init absorbing; target s; transition s -> s : 1;", "absorbing"),
    ("state s init; state t absorbing; target t; transition s -> t : 0; transition s -> s : 1;", "zero"),
    ("frobnicate;", "unknown statement"),
])
def test_malformed_models(text, fragment):
    assert fragment in str(error_of(text))


def test_ladder_round_trip():
    text = (MODELS / "ladder.pmc").read_text()
    raw, targets = parse_model(text)
    out = serialize_model(raw)
    assert serialize_model(parse_model(out)[0]) == out
    assert "transition s0 -> s2 : -p + 1;" in out


def test_weighted_dialect_is_output_only():
    raw, targets = parse_model((MODELS / "ladder.pmc").read_text())
    text = serialize_model(derived_automaton(preprocess(raw, targets), "p"))
    assert text.startswith("dialect weighted;")
    with pytest.raises(ParseError, match="output-only"):
        parse_model(text)
    raw_w, _ = parse_model(text, allow_weighted=True)
    assert raw_w.weighted and len(raw_w.states) == 10
    assert serialize_model(raw_w) == text


def test_region_files():
    P = ParameterSet(["p", "q"])
    r = parse_region("p in [0.1, 0.9]  # comment\n", P)
    assert r.interval("p") == (0.1, 0.9)
    assert r.interval("q") == (1e-6, 1 - 1e-6)
    assert parse_region(serialize_region(r), P).to_dict() == r.to_dict()
    for bad in ("r in [0, 1]", "p in [0.5, 0.5]", "p in [0, 1]\np in [0, 1]", "p = 3"):
        with pytest.raises(ParseError):
            parse_region(bad, P)


def test_properties():
    q = parse_property("P >= 0.5")
    assert q.reachability and q.maximize and q.holds(0.5) and not q.holds(0.49)
    q = parse_property("ER < 3  # cheaper")
    assert not q.reachability and not q.maximize
    for bad in ("P >= 1.5", "Q > 1", "P =< 0.5"):
        with pytest.raises(ParseError):
            parse_property(bad)


def test_dot_marks_cross_edges():
    raw, targets = parse_model((MODELS / "ladder.pmc").read_text())
    dot = export_dot(derived_automaton(preprocess(raw, targets), "p"))
    assert dot.count("->") == 18
    assert dot.count("color=red") == 4
    assert "cluster_derived" in dot


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(4, 80), st.integers(0, 5), st.sampled_from([0.0, 0.1]))
def test_generated_round_trip(seed, n, k, traps):
    raw = generate_raw(GeneratorSpec(states=max(n, k + 3), params=k, trap_density=traps, branching=3), seed)
    text = serialize_model(raw)
    assert serialize_model(parse_model(text)[0]) == text
