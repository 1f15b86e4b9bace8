"""Exact multivariate polynomials over a fixed, ordered parameter set.

Coefficients are :class:`fractions.Fraction`; a polynomial is stored as a
canonical tuple of ``(exponents, coefficient)`` pairs in graded
lexicographic order (highest total degree first), so structural equality
is plain tuple equality.
"""

from __future__ import annotations

import numbers
import re
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Sequence, Union

import numpy as np
from scipy import sparse

from .errors import ParameterError

Exponents = tuple[int, ...]
Scalar = Union[int, Fraction]

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class ParameterSet:
    """Ordered, duplicate-free sequence of parameter names."""

    __slots__ = ("names", "_index")

    def __init__(self, names: Iterable[str] = ()):
        names = tuple(names)
        index: dict[str, int] = {}
        for i, name in enumerate(names):
            if not _IDENT.match(name):
                raise ParameterError(f"invalid parameter name {name!r}")
            if name in index:
                raise ParameterError(f"duplicate parameter {name!r}")
            index[name] = i
        self.names = names
        self._index = index

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ParameterError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: object) -> bool:
        return name in self._index

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ParameterSet) and self.names == other.names

    def __hash__(self) -> int:
        return hash(self.names)

    def __repr__(self) -> str:
        return f"ParameterSet({list(self.names)!r})"

    def point(self, values: Mapping[str, float] | Sequence[float] | np.ndarray) -> np.ndarray:
        """Turn a name->value mapping (or an aligned sequence) into a vector."""
        if isinstance(values, Mapping):
            for name in values:
                self.index(name)
            missing = [n for n in self.names if n not in values]
            if missing:
                raise ParameterError(f"no value for parameter(s) {', '.join(missing)}")
            return np.array([float(values[n]) for n in self.names], dtype=float)
        arr = np.asarray(values, dtype=float)
        if arr.shape != (len(self.names),):
            raise ParameterError(f"expected {len(self.names)} values, got shape {arr.shape}")
        return arr


def _as_fraction(c: object) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, numbers.Integral):
        return Fraction(int(c))
    if isinstance(c, float):
        return Fraction(c)
    raise TypeError(f"cannot use {type(c).__name__} as a polynomial coefficient")


def _order_key(exps: Exponents) -> tuple:
    return (-sum(exps), tuple(-e for e in exps))


class Polynomial:
    """Immutable polynomial with rational coefficients."""

    __slots__ = ("params", "_terms", "_hash")

    def __init__(self, params: ParameterSet, terms: Mapping[Exponents, Scalar] | Iterable[tuple[Exponents, Scalar]] = ()):
        n = len(params)
        acc: dict[Exponents, Fraction] = {}
        items = terms.items() if isinstance(terms, Mapping) else terms
        for exps, c in items:
            exps = tuple(int(e) for e in exps)
            if len(exps) != n or any(e < 0 for e in exps):
                raise ParameterError(f"bad exponent vector {exps} for {n} parameter(s)")
            acc[exps] = acc.get(exps, Fraction(0)) + _as_fraction(c)
        self.params = params
        self._terms = tuple(sorted(((e, c) for e, c in acc.items() if c != 0), key=lambda t: _order_key(t[0])))
        self._hash = None

    @classmethod
    def _raw(cls, params: ParameterSet, terms: dict[Exponents, Fraction]) -> "Polynomial":
        p = object.__new__(cls)
        p.params = params
        p._terms = tuple(sorted(((e, c) for e, c in terms.items() if c != 0), key=lambda t: _order_key(t[0])))
        p._hash = None
        return p

    @classmethod
    def constant(cls, params: ParameterSet, value: Scalar) -> "Polynomial":
        return cls._raw(params, {(0,) * len(params): _as_fraction(value)})

    @classmethod
    def variable(cls, params: ParameterSet, name: str) -> "Polynomial":
        exps = [0] * len(params)
        exps[params.index(name)] = 1
        return cls._raw(params, {tuple(exps): Fraction(1)})

    # -- inspection -----------------------------------------------------------------

    @property
    def terms(self) -> dict[Exponents, Fraction]:
        return dict(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return all(not any(e) for e, _ in self._terms)

    def constant_value(self) -> Fraction:
        """Value of a constant polynomial; raises if it is not constant."""
        if not self.is_constant():
            raise ValueError(f"{self} is not constant")
        return self._terms[0][1] if self._terms else Fraction(0)

    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(e) for e, _ in self._terms), default=-1)

    def variables(self) -> frozenset[str]:
        used = set()
        for exps, _ in self._terms:
            used.update(self.params.names[i] for i, e in enumerate(exps) if e)
        return frozenset(used)

    def depends_on(self, name: str) -> bool:
        i = self.params.index(name)
        return any(exps[i] for exps, _ in self._terms)

    # -- arithmetic -----------------------------------------------------------------

    def _coerce(self, other: object) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.params != self.params:
                raise ParameterError("polynomials are over different parameter sets")
            return other
        if isinstance(other, (numbers.Integral, Fraction, float)):
            return Polynomial.constant(self.params, _as_fraction(other))
        return NotImplemented

    def __add__(self, other: object) -> "Polynomial":
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        acc = dict(self._terms)
        for e, c in other._terms:
            acc[e] = acc.get(e, Fraction(0)) + c
        return Polynomial._raw(self.params, acc)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial._raw(self.params, {e: -c for e, c in self._terms})

    def __sub__(self, other: object) -> "Polynomial":
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other: object) -> "Polynomial":
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other - self

    def __mul__(self, other: object) -> "Polynomial":
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        acc: dict[Exponents, Fraction] = {}
        for ea, ca in self._terms:
            for eb, cb in other._terms:
                e = tuple(x + y for x, y in zip(ea, eb))
                acc[e] = acc.get(e, Fraction(0)) + ca * cb
        return Polynomial._raw(self.params, acc)

    __rmul__ = __mul__

    def derivative(self, name: str) -> "Polynomial":
        i = self.params.index(name)
        acc: dict[Exponents, Fraction] = {}
        for exps, c in self._terms:
            k = exps[i]
            if k:
                e = exps[:i] + (k - 1,) + exps[i + 1:]
                acc[e] = acc.get(e, Fraction(0)) + c * k
        return Polynomial._raw(self.params, acc)

    def evaluate(self, point: Mapping[str, float] | Sequence[float] | np.ndarray, exact: bool = False):
        """Substitute ``point`` for the parameters.

        With ``exact=True`` the point is converted to exact rationals and a
        :class:`Fraction` is returned; otherwise a float.
        """
        if isinstance(point, Mapping):
            used = self.variables()
            missing = [n for n in used if n not in point]
            if missing:
                raise ParameterError(f"no value for parameter(s) {', '.join(sorted(missing))}")
            vals = [point.get(n, 0) for n in self.params.names]
        else:
            vals = list(point)
            if len(vals) != len(self.params):
                raise ParameterError(f"expected {len(self.params)} values, got {len(vals)}")
        if exact:
            vals = [_as_fraction(v) for v in vals]
            total = Fraction(0)
            for exps, c in self._terms:
                term = c
                for v, e in zip(vals, exps):
                    if e:
                        term *= v ** e
                total += term
            return total
        vals = [float(v) for v in vals]
        total = 0.0
        for exps, c in self._terms:
            term = float(c)
            for v, e in zip(vals, exps):
                if e:
                    term *= v ** e
            total += term
        return total

    # -- comparison / display -------------------------------------------------------

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Polynomial):
            return self.params == other.params and self._terms == other._terms
        if isinstance(other, (numbers.Integral, Fraction)):
            return self.is_constant() and self.constant_value() == other
        return NotImplemented

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.params, self._terms))
        return self._hash

    def __repr__(self) -> str:
        return f"Polynomial({self})"

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        out = []
        for k, (exps, c) in enumerate(self._terms):
            factors = []
            for name, e in zip(self.params.names, exps):
                factors.extend([name] * e)
            mag = abs(c)
            if not factors:
                body = _fmt_rational(mag)
            elif mag == 1:
                body = "*".join(factors)
            else:
                body = "*".join([_fmt_rational(mag)] + factors)
            if k == 0:
                out.append(("-" if c < 0 else "") + body)
            else:
                out.append((" - " if c < 0 else " + ") + body)
        return "".join(out)


def _fmt_rational(c: Fraction) -> str:
    if c.denominator == 1:
        return str(c.numerator)
    return f"{c.numerator}/{c.denominator}"


def poly_add(a: Polynomial, b: Polynomial) -> Polynomial:
    return a + b


def poly_mul(a: Polynomial, b: Polynomial) -> Polynomial:
    return a * b


def poly_derivative(f: Polynomial, param: str) -> Polynomial:
    return f.derivative(param)


def poly_eval(f: Polynomial, point, exact: bool = False):
    return f.evaluate(point, exact=exact)


class PolynomialVector:
    """Vectorised floating-point evaluation of many polynomials at once.

    Distinct monomials are evaluated once; the polynomial values are a
    sparse coefficient matrix times the monomial vector.
    """

    def __init__(self, params: ParameterSet, polys: Sequence[Polynomial]):
        self.params = params
        mono_index: dict[Exponents, int] = {}
        rows, cols, data = [], [], []
        for r, poly in enumerate(polys):
            if poly.params != params:
                raise ParameterError("polynomials are over different parameter sets")
            for exps, c in poly._terms:
                j = mono_index.setdefault(exps, len(mono_index))
                rows.append(r)
                cols.append(j)
                data.append(float(c))
        m = len(mono_index)
        self.coefficients = sparse.csr_matrix((data, (rows, cols)), shape=(len(polys), m))
        f_mono, f_var, f_exp = [], [], []
        for exps, j in mono_index.items():
            for i, e in enumerate(exps):
                if e:
                    f_mono.append(j)
                    f_var.append(i)
                    f_exp.append(e)
        self._n_mono = m
        self._f_mono = np.array(f_mono, dtype=np.intp)
        self._f_var = np.array(f_var, dtype=np.intp)
        self._f_exp = np.array(f_exp, dtype=float)
        self._linear = bool(np.all(self._f_exp == 1))

    def __len__(self) -> int:
        return self.coefficients.shape[0]

    def evaluate(self, u: np.ndarray) -> np.ndarray:
        mono = np.ones(self._n_mono)
        if self._f_mono.size:
            vals = u[self._f_var] if self._linear else u[self._f_var] ** self._f_exp
            np.multiply.at(mono, self._f_mono, vals)
        return self.coefficients @ mono

