from fractions import Fraction
from pathlib import Path

import pytest

from pmcgd.model import preprocess
from pmcgd.polynomial import ParameterSet, Polynomial
from pmcgd.textio import parse_model

MODELS = Path(__file__).resolve().parent.parent / "models"


def load(name: str, **kw):
    raw, targets = parse_model((MODELS / name).read_text())
    return preprocess(raw, targets, **kw)


@pytest.fixture
def ladder():
    return load("ladder.pmc")


@pytest.fixture
def coin():
    return load("coin.pmc", require_almost_sure=False)


def quartic():
    """f(p) = 0.5 p^4 - 4 p^3 + 9 p^2 - 4 p + 2."""
    params = ParameterSet(["p"])
    p = Polynomial.variable(params, "p")
    return Fraction(1, 2) * p * p * p * p - 4 * p * p * p + 9 * p * p - 4 * p + 2


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.VERDICTS):
        terminalreporter.write_line(mod.VERDICTS[n])
