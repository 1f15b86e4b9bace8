"""Expected rewards and their exact parameter gradients.

The value equations ``(I - A) x = rew`` are solved once per instantiation;
each partial derivative then costs one more solve against the same matrix,
with right-hand side ``(dA/dp) x`` (constant rewards have no derivative).
"""

from __future__ import annotations

from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import ModelError, RegionError
from .linsolve import DEFAULT_TOL, SparseSystem, assemble, assemble_exact, choose_backend, solve, solve_exact, solve_multi
from .model import Pmc, Region, derived_automaton, reachability_to_reward
from .polynomial import ParameterSet, Polynomial
from .textio import PropertyQuery


class Objective:
    """A differentiable measure over the parameters, seen from the search engine.

    ``measure`` is the quantity the user asked about; ``value`` and
    ``gradient`` are engine-facing and negated for minimisation, so the
    engine always ascends.
    """

    params: ParameterSet
    maximize: bool = True
    region: Region | None = None

    def measure(self, u: np.ndarray) -> float:
        raise NotImplementedError

    def measure_gradient(self, u: np.ndarray, indices: Sequence[int]) -> np.ndarray:
        raise NotImplementedError

    @property
    def direction(self) -> str:
        return "maximize" if self.maximize else "minimize"

    @property
    def sign(self) -> float:
        return 1.0 if self.maximize else -1.0

    def value(self, u: np.ndarray) -> float:
        return self.sign * self.measure(u)

    def gradient(self, u: np.ndarray, indices: Sequence[int] | None = None) -> np.ndarray:
        if indices is None:
            indices = range(len(self.params))
        return self.sign * self.measure_gradient(u, list(indices))


class GradientWorkspace:
    """Per-model cache of the last value solve, keyed by the instantiation."""

    def __init__(self, model: Pmc, tol: float = DEFAULT_TOL, backend: str = "auto",
                 region: Region | None = None):
        self.model = model
        self.tol = tol
        self.backend = backend
        self.region = region
        self.value_solves = 0
        self.gradient_solves = 0
        self._key: bytes | None = None
        self._system: SparseSystem | None = None
        self._x_full: np.ndarray | None = None

    def prepare(self, u: np.ndarray, n_rhs: int = 1) -> tuple[SparseSystem, np.ndarray]:
        key = u.tobytes()
        if key != self._key:
            self._key = None
            system, b = assemble(self.model, u, self.region)
            backend = self.backend if self.backend != "auto" else choose_backend(system.n, n_rhs)
            x = solve(system, b, self.tol, backend)
            self.value_solves += 1
            x_full = np.zeros(self.model.n_states)
            x_full[system.transient] = x
            self._system, self._x_full, self._key = system, x_full, key
        return self._system, self._x_full

    def value(self, u: np.ndarray, n_rhs: int = 1) -> float:
        _, x_full = self.prepare(u, n_rhs)
        return float(x_full[self.model.initial])

    def gradient(self, u: np.ndarray, indices: Sequence[int]) -> np.ndarray:
        system, x_full = self.prepare(u, 1 + len(indices))
        tab = self.model.tables
        out = np.zeros(len(indices))
        rhs_list, slots = [], []
        for k, i in enumerate(indices):
            entry = tab.derivative(i)
            if entry is None:
                continue
            rows, cols, vec = entry
            rhs = np.bincount(rows, weights=vec.evaluate(u) * x_full[cols], minlength=tab.n)
            rhs_list.append(rhs)
            slots.append(k)
        if rhs_list:
            init = tab.pos[self.model.initial]
            sols = solve_multi(system, rhs_list, self.tol, self.backend)
            self.gradient_solves += len(sols)
            if init >= 0:
                for k, x in zip(slots, sols):
                    out[k] = x[init]
        return out


def _vector(model: Pmc, u) -> np.ndarray:
    if isinstance(u, np.ndarray):
        return np.asarray(u, dtype=float)
    return model.params.point(u)


def _indices(params: ParameterSet, subset) -> list[int]:
    if subset is None:
        return list(range(len(params)))
    return [params.index(p) if isinstance(p, str) else int(p) for p in subset]


def expected_reward(model: Pmc, u, *, region: Region | None = None, tol: float = DEFAULT_TOL,
                    backend: str = "krylov", exact: bool = False):
    """Expected reward accumulated from the initial state until the target."""
    if exact:
        m, b, transient = assemble_exact(model, u)
        if model.initial not in transient:
            return Fraction(0)
        x = solve_exact(m, b)
        return x[transient.index(model.initial)]
    ws = GradientWorkspace(model, tol, backend, region)
    return ws.value(_vector(model, u))


def gradient_eqsys(model: Pmc, u, params=None, *, region: Region | None = None, tol: float = DEFAULT_TOL,
                   backend: str = "auto", exact: bool = False) -> np.ndarray:
    """Partial derivatives of the expected reward for ``params`` (default: all).

    Costs one value solve plus one solve per parameter that occurs in the model.
    """
    idx = _indices(model.params, params)
    if exact:
        return _gradient_exact(model, u, idx)
    ws = GradientWorkspace(model, tol, backend, region)
    return ws.gradient(_vector(model, u), idx)


def _gradient_exact(model: Pmc, u, idx: list[int]) -> list[Fraction]:
    m, b, transient = assemble_exact(model, u)
    if model.initial not in transient:
        return [Fraction(0)] * len(idx)
    x = solve_exact(m, b) if transient else []
    x_full = {s: v for s, v in zip(transient, x)}
    out = []
    for i in idx:
        name = model.params.names[i]
        rhs = []
        for s in transient:
            acc = Fraction(0)
            for t, f in model.transitions[s].items():
                d = f.derivative(name)
                if not d.is_zero() and t in x_full:
                    acc += d.evaluate(u, exact=True) * x_full[t]
            rhs.append(acc)
        out.append(solve_exact(m, rhs)[transient.index(model.initial)])
    return out


def gradient_via_derived(model: Pmc, p: str, u, *, region: Region | None = None, tol: float = DEFAULT_TOL,
                         backend: str = "krylov") -> float:
    """The same partial derivative, as the expected reward of the derived automaton."""
    wfa = derived_automaton(model, p)
    point = _vector(model, u)
    if region is not None:
        region.check_point(point)
    # Graph preservation is a property of the source chain; check it there.
    from .model import instantiate
    instantiate(model, point, region)
    return expected_reward(wfa, point, tol=tol, backend=backend)


def finite_difference(obj: Objective | Callable[[np.ndarray], float], u, p: int | str, h: float = 1e-6,
                      region: Region | None = None) -> float:
    """Central difference of the engine-facing value along parameter ``p``."""
    value = obj.value if isinstance(obj, Objective) else obj
    if isinstance(obj, Objective):
        region = region if region is not None else obj.region
        i = obj.params.index(p) if isinstance(p, str) else int(p)
    else:
        i = int(p)
    u = np.array(u, dtype=float)
    up, down = u.copy(), u.copy()
    up[i] += h
    down[i] -= h
    if region is not None and not (region.contains(up) and region.contains(down)):
        raise RegionError(f"finite-difference step of {h} leaves the region at parameter index {i}")
    return (value(up) - value(down)) / (2.0 * h)


class PmcObjective(Objective):
    """Expected reward (or a reachability probability encoded as one) of a pMC."""

    def __init__(self, model: Pmc, maximize: bool = True, region: Region | None = None,
                 tol: float = DEFAULT_TOL, backend: str = "auto"):
        self.model = model
        self.params = model.params
        self.maximize = maximize
        self.region = region
        self.batch_hint = 0
        self.workspace = GradientWorkspace(model, tol, backend, region)

    def measure(self, u: np.ndarray) -> float:
        return self.workspace.value(np.asarray(u, dtype=float), 1 + self.batch_hint)

    def measure_gradient(self, u: np.ndarray, indices: Sequence[int]) -> np.ndarray:
        return self.workspace.gradient(np.asarray(u, dtype=float), indices)

    @property
    def value_solves(self) -> int:
        return self.workspace.value_solves

    @property
    def gradient_solves(self) -> int:
        return self.workspace.gradient_solves


class PolynomialObjective(Objective):
    """A closed-form polynomial objective; used for worked examples and tests."""

    def __init__(self, poly: Polynomial, maximize: bool = True, region: Region | None = None):
        self.poly = poly
        self.params = poly.params
        self.maximize = maximize
        self.region = region
        self._derivatives = [poly.derivative(n) for n in poly.params]
        self.value_solves = 0
        self.gradient_solves = 0

    def measure(self, u: np.ndarray) -> float:
        self.value_solves += 1
        return float(self.poly.evaluate(np.asarray(u, dtype=float)))

    def measure_gradient(self, u: np.ndarray, indices: Sequence[int]) -> np.ndarray:
        self.gradient_solves += len(indices)
        u = np.asarray(u, dtype=float)
        return np.array([self._derivatives[i].evaluate(u) for i in indices], dtype=float)


def make_pmc_objective(pmc: Pmc, query: PropertyQuery, region: Region | None = None,
                       tol: float = DEFAULT_TOL, backend: str = "auto") -> PmcObjective:
    """Objective for ``query``; reachability is first rewritten as an expected reward."""
    if query.reachability:
        model = reachability_to_reward(pmc)
    else:
        if pmc.bad is not None:
            raise ModelError("expected-reward query on a model with a reachable bad state")
        model = pmc
    return PmcObjective(model, maximize=query.maximize, region=region, tol=tol, backend=backend)
