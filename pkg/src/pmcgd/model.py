"""Parametric Markov chains, weighted automata and parameter regions."""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse

from .errors import GraphPreservationError, ModelError, RegionError
from .polynomial import ParameterSet, Polynomial, PolynomialVector

DEFAULT_MARGIN = 1e-6
ROW_SUM_TOL = 1e-9


# --------------------------------------------------------------------------------------
# Regions
# --------------------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Region:
    """Axis-aligned box: one closed interval ``[lower[i], upper[i]]`` per parameter."""

    params: ParameterSet
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float)
        upper = np.array(self.upper, dtype=float)
        n = len(self.params)
        if lower.shape != (n,) or upper.shape != (n,):
            raise RegionError(f"region needs exactly {n} interval(s)")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise RegionError("region bounds must be finite")
        bad = np.flatnonzero(lower >= upper)
        if bad.size:
            name = self.params.names[bad[0]]
            raise RegionError(f"empty interval for {name}: [{lower[bad[0]]}, {upper[bad[0]]}]")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def default(cls, params: ParameterSet, margin: float = DEFAULT_MARGIN) -> "Region":
        n = len(params)
        return cls(params, np.full(n, margin), np.full(n, 1.0 - margin))

    @classmethod
    def from_intervals(cls, params: ParameterSet, intervals: Mapping[str, tuple[float, float]],
                       margin: float = DEFAULT_MARGIN) -> "Region":
        """Build a region; parameters without an interval get ``[margin, 1 - margin]``."""
        lower = np.full(len(params), margin)
        upper = np.full(len(params), 1.0 - margin)
        for name, (lo, hi) in intervals.items():
            i = params.index(name)
            lower[i], upper[i] = lo, hi
        return cls(params, lower, upper)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def interval(self, name: str) -> tuple[float, float]:
        i = self.params.index(name)
        return float(self.lower[i]), float(self.upper[i])

    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, u: np.ndarray, open: bool = False) -> bool:
        u = np.asarray(u, dtype=float)
        if open:
            return bool(np.all(u > self.lower) and np.all(u < self.upper))
        return bool(np.all(u >= self.lower) and np.all(u <= self.upper))

    def clamp(self, u: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(u, self.lower), self.upper)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)

    def check_point(self, u: np.ndarray) -> None:
        u = np.asarray(u, dtype=float)
        if not np.all(np.isfinite(u)):
            raise RegionError("instantiation has non-finite entries")
        outside = np.flatnonzero((u < self.lower) | (u > self.upper))
        if outside.size:
            i = outside[0]
            raise RegionError(
                f"{self.params.names[i]}={float(u[i])!r} outside [{float(self.lower[i])!r}, {float(self.upper[i])!r}]")

    def to_dict(self) -> dict[str, list[float]]:
        return {n: [float(lo), float(hi)] for n, lo, hi in zip(self.params.names, self.lower, self.upper)}


# --------------------------------------------------------------------------------------
# Models
# --------------------------------------------------------------------------------------


def _check_rows(params: ParameterSet, states: Sequence[str], transitions, weighted: bool) -> None:
    one = Polynomial.constant(params, 1)
    for s, row in enumerate(transitions):
        total = Polynomial.constant(params, 0)
        for t, f in row.items():
            if not 0 <= t < len(states):
                raise ModelError(f"state {states[s]}: transition to unknown state index {t}")
            if f.params != params:
                raise ModelError(f"state {states[s]}: polynomial over a different parameter set")
            if f.is_zero():
                raise ModelError(f"state {states[s]}: explicit zero transition to {states[t]}")
            if not weighted and f.is_constant() and f.constant_value() < 0:
                raise ModelError(f"state {states[s]}: negative probability to {states[t]}")
            total = total + f
        if total != one:
            raise ModelError(f"state {states[s]}: outgoing transitions sum to {total}, not 1")


@dataclass(frozen=True, eq=False)
class RawModel:
    """A model as written in a file, before target merging."""

    params: ParameterSet
    states: tuple[str, ...]
    initial: int
    transitions: tuple[Mapping[int, Polynomial], ...]
    rewards: tuple[Fraction, ...]
    absorbing: frozenset[int] = frozenset()
    targets: frozenset[int] = frozenset()
    weighted: bool = False

    def __post_init__(self):
        if len(set(self.states)) != len(self.states):
            raise ModelError("duplicate state names")
        if not 0 <= self.initial < len(self.states):
            raise ModelError("initial state out of range")
        if len(self.transitions) != len(self.states) or len(self.rewards) != len(self.states):
            raise ModelError("transition/reward tables do not match the state count")
        _check_rows(self.params, self.states, self.transitions, weighted=self.weighted)

    def state_index(self, name: str) -> int:
        try:
            return self.states.index(name)
        except ValueError:
            raise ModelError(f"unknown state {name!r}") from None


@dataclass(frozen=True, eq=False)
class Pmc:
    """Preprocessed parametric Markov chain.

    All target states are merged into the absorbing ``good`` state (reward 0);
    states that cannot reach ``good`` are merged into the optional absorbing
    ``bad`` state. Rows are stored sparsely as ``{target index: Polynomial}``.
    """

    params: ParameterSet
    states: tuple[str, ...]
    initial: int
    good: int
    bad: int | None
    transitions: tuple[Mapping[int, Polynomial], ...]
    rewards: tuple[Fraction, ...]

    weighted = False

    def __post_init__(self):
        n = len(self.states)
        if len(set(self.states)) != n:
            raise ModelError("duplicate state names")
        if len(self.transitions) != n or len(self.rewards) != n:
            raise ModelError("transition/reward tables do not match the state count")
        _check_rows(self.params, self.states, self.transitions, weighted=self.weighted)
        for s in self.absorbing_states:
            row = self.transitions[s]
            if set(row) != {s}:
                raise ModelError(f"state {self.states[s]} must be absorbing")
        for s in self.target_states:
            if self.rewards[s] != 0:
                raise ModelError(f"target state {self.states[s]} must have reward 0")

    # Absorbing states with value 0 in the reward equations.
    @property
    def target_states(self) -> frozenset[int]:
        return frozenset({self.good})

    # Absorbing states from which the target is never reached.
    @property
    def trap_states(self) -> frozenset[int]:
        return frozenset() if self.bad is None else frozenset({self.bad})

    @property
    def absorbing_states(self) -> frozenset[int]:
        return self.target_states | self.trap_states

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_transitions(self) -> int:
        return sum(len(row) for row in self.transitions)

    def state_index(self, name: str) -> int:
        try:
            return self.states.index(name)
        except ValueError:
            raise ModelError(f"unknown state {name!r}") from None

    def used_parameters(self) -> frozenset[str]:
        used: set[str] = set()
        for row in self.transitions:
            for f in row.values():
                used |= f.variables()
        return frozenset(used)

    def structurally_equal(self, other: "Pmc") -> bool:
        return (type(self) is type(other) and self.params == other.params and self.states == other.states
                and self.initial == other.initial and self.good == other.good and self.bad == other.bad
                and self.rewards == other.rewards
                and all(dict(a) == dict(b) for a, b in zip(self.transitions, other.transitions)))

    @cached_property
    def tables(self) -> "_Tables":
        return _Tables(self)


@dataclass(frozen=True, eq=False)
class WeightedAutomaton(Pmc):
    """A Pmc-shaped structure whose rows are quasi-distributions.

    Produced by :func:`derived_automaton`: states ``0..base-1`` copy the source
    chain, states ``base..2*base-1`` are their derivative copies.
    """

    parameter: str = ""
    base: int = 0

    weighted = True

    @property
    def target_states(self) -> frozenset[int]:
        return frozenset({self.good, self.good + self.base})

    @property
    def trap_states(self) -> frozenset[int]:
        return frozenset() if self.bad is None else frozenset({self.bad, self.bad + self.base})

    def is_derivative_state(self, s: int) -> bool:
        return s >= self.base


class _Tables:
    """Numeric evaluation tables for one model, built once."""

    def __init__(self, model: Pmc):
        n = model.n_states
        skip = model.absorbing_states
        transient = np.array([s for s in range(n) if s not in skip], dtype=np.intp)
        pos = np.full(n, -1, dtype=np.intp)
        pos[transient] = np.arange(transient.size)
        rows, cols, polys = [], [], []
        for s in transient:
            for t, f in model.transitions[s].items():
                rows.append(s)
                cols.append(t)
                polys.append(f)
        self.model = model
        self.n = transient.size
        self.transient = transient
        self.pos = pos
        self.entry_state = np.array(rows, dtype=np.intp)
        self.entry_row = pos[self.entry_state] if rows else np.zeros(0, dtype=np.intp)
        self.entry_col_state = np.array(cols, dtype=np.intp)
        self.entry_col = pos[self.entry_col_state] if cols else np.zeros(0, dtype=np.intp)
        self.inner = self.entry_col >= 0
        self.vector = PolynomialVector(model.params, polys)
        self.rewards = np.array([float(model.rewards[s]) for s in transient], dtype=float)
        self._derivatives: dict[int, tuple | None] = {}

    def derivative(self, i: int):
        """Entries of the symbolic derivative w.r.t. parameter ``i`` on transient rows.

        Returns ``(row positions, column states, PolynomialVector)`` or ``None``
        when no transition depends on the parameter.
        """
        if i not in self._derivatives:
            name = self.model.params.names[i]
            rows, cols, polys = [], [], []
            for s in self.transient:
                for t, f in self.model.transitions[s].items():
                    d = f.derivative(name)
                    if not d.is_zero():
                        rows.append(self.pos[s])
                        cols.append(t)
                        polys.append(d)
            if polys:
                self._derivatives[i] = (np.array(rows, dtype=np.intp), np.array(cols, dtype=np.intp),
                                        PolynomialVector(self.model.params, polys))
            else:
                self._derivatives[i] = None
        return self._derivatives[i]


@dataclass(frozen=True, eq=False)
class ConcreteMatrixView:
    """Numeric transition matrix restricted to the transient states."""

    matrix: sparse.csr_matrix
    rewards: np.ndarray
    transient: np.ndarray
    entries: np.ndarray  # every transient-row entry value, in table order


def instantiate(model: Pmc, u, region: Region | None = None) -> ConcreteMatrixView:
    """Substitute ``u`` and verify the result is a well-formed (weighted) chain."""
    u = model.params.point(u) if not isinstance(u, np.ndarray) else u
    if region is not None:
        region.check_point(u)
    elif not np.all(np.isfinite(u)):
        raise RegionError("instantiation has non-finite entries")
    tab = model.tables
    vals = tab.vector.evaluate(u)
    if not model.weighted and vals.size:
        bad = np.flatnonzero(~((vals > 0.0) & (vals <= 1.0 + 1e-12)))
        if bad.size:
            k = bad[0]
            s, t = tab.entry_state[k], tab.entry_col_state[k]
            raise GraphPreservationError(
                f"transition {model.states[s]} -> {model.states[t]} evaluates to {float(vals[k])!r}; "
                "the instantiation is not graph-preserving")
    if tab.n:
        sums = np.bincount(tab.entry_row, weights=vals, minlength=tab.n)
        off = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if off.size:
            s = tab.transient[off[0]]
            raise GraphPreservationError(f"row {model.states[s]} sums to {float(sums[off[0]])!r}")
    inner = tab.inner
    a = sparse.csr_matrix((vals[inner], (tab.entry_row[inner], tab.entry_col[inner])), shape=(tab.n, tab.n))
    return ConcreteMatrixView(a, tab.rewards, tab.transient, vals)


def check_graph_preserving(model: Pmc, region: Region, n_corners: int = 64, seed: int = 0) -> None:
    """Sample-based region check: center, the all-lower and all-upper corners, random corners."""
    points = [region.center(), region.lower.copy(), region.upper.copy()]
    n = len(model.params)
    if n <= 6:
        for bits in itertools.product((0, 1), repeat=n):
            points.append(np.where(np.array(bits, dtype=bool), region.upper, region.lower))
    else:
        rng = np.random.default_rng(seed)
        for _ in range(n_corners):
            bits = rng.integers(0, 2, size=n).astype(bool)
            points.append(np.where(bits, region.upper, region.lower))
    for u in points:
        instantiate(model, u, region)


# --------------------------------------------------------------------------------------
# Preprocessing and transformations
# --------------------------------------------------------------------------------------


def _unique_name(base: str, taken: set[str]) -> str:
    name = base
    while name in taken:
        name += "_"
    return name


def preprocess(raw: RawModel, targets: Sequence[str] | frozenset[int] | None = None,
               require_almost_sure: bool = True) -> Pmc:
    """Merge targets into ``good``, prune unreachable states, merge dead states into ``bad``.

    With ``require_almost_sure`` (expected-reward queries) a reachable ``bad``
    state is an error, since the expected reward would be infinite.
    """
    if raw.weighted:
        raise ModelError("weighted automata cannot be preprocessed as a pMC")
    if targets is None:
        target_set = set(raw.targets)
    else:
        target_set = {raw.state_index(t) if isinstance(t, str) else int(t) for t in targets}
    if not target_set:
        raise ModelError("no target states")
    params = raw.params
    n = len(raw.states)
    succ = [[t for t in raw.transitions[s]] for s in range(n)]

    reach = {raw.initial}
    queue = deque([raw.initial])
    while queue:
        s = queue.popleft()
        if s in target_set:
            continue
        for t in succ[s]:
            if t not in reach:
                reach.add(t)
                queue.append(t)

    pred: dict[int, list[int]] = {s: [] for s in reach}
    for s in reach:
        if s in target_set:
            continue
        for t in succ[s]:
            pred[t].append(s)
    alive = {t for t in target_set if t in reach}
    queue = deque(alive)
    while queue:
        t = queue.popleft()
        for s in pred[t]:
            if s not in alive:
                alive.add(s)
                queue.append(s)
    dead = reach - alive

    if dead and require_almost_sure:
        raise ModelError(
            f"{len(dead)} reachable state(s) cannot reach the target (e.g. {raw.states[min(dead)]}); "
            "expected rewards would be infinite")

    reached_targets = sorted(t for t in target_set if t in reach)
    # Merged states take the position of their first member, so a model that
    # needs no merging keeps its state order.
    keep = sorted(s for s in reach if s not in target_set and s not in dead)
    slots: list[tuple[int, str]] = [(s, "keep") for s in keep]
    first_target = min(reached_targets) if reached_targets else n
    slots.append((first_target, "good"))
    if dead:
        slots.append((min(dead), "bad"))
    slots.sort(key=lambda x: (x[0], x[1] != "keep"))

    taken = {raw.states[s] for s in keep}
    good_name = raw.states[reached_targets[0]] if len(reached_targets) == 1 else _unique_name("good", taken)
    taken.add(good_name)
    bad_name = None
    if dead:
        bad_name = raw.states[min(dead)] if len(dead) == 1 else _unique_name("bad", taken)

    new_index: dict[int, int] = {}
    names: list[str] = []
    good = bad = None
    for k, (s, kind) in enumerate(slots):
        if kind == "keep":
            new_index[s] = k
            names.append(raw.states[s])
        elif kind == "good":
            good = k
            names.append(good_name)
        else:
            bad = k
            names.append(bad_name)
    for t in target_set:
        new_index[t] = good
    for s in dead:
        new_index[s] = bad

    one = Polynomial.constant(params, 1)
    transitions: list[dict[int, Polynomial]] = []
    rewards: list[Fraction] = []
    for k, (s, kind) in enumerate(slots):
        if kind == "keep":
            row: dict[int, Polynomial] = {}
            for t, f in raw.transitions[s].items():
                j = new_index[t]
                row[j] = row[j] + f if j in row else f
            transitions.append({j: f for j, f in row.items() if not f.is_zero()})
            rewards.append(Fraction(raw.rewards[s]))
        else:
            transitions.append({k: one})
            rewards.append(Fraction(0))
    initial = new_index[raw.initial]
    return Pmc(params, tuple(names), initial, good, bad, tuple(transitions), tuple(rewards))


def reachability_to_reward(pmc: Pmc) -> Pmc:
    """Encode P(reach good) as the expected reward to reach a fresh sink.

    ``good`` gets reward 1 and, like ``bad``, moves to the sink with
    probability 1; every other reward is 0.
    """
    params = pmc.params
    one = Polynomial.constant(params, 1)
    sink = pmc.n_states
    names = pmc.states + (_unique_name("sink", set(pmc.states)),)
    transitions = []
    for s, row in enumerate(pmc.transitions):
        if s == pmc.good or s == pmc.bad:
            transitions.append({sink: one})
        else:
            transitions.append(dict(row))
    transitions.append({sink: one})
    rewards = [Fraction(0)] * (pmc.n_states + 1)
    rewards[pmc.good] = Fraction(1)
    return Pmc(params, names, pmc.initial, sink, None, tuple(transitions), tuple(rewards))


def derived_automaton(pmc: Pmc, parameter: str) -> WeightedAutomaton:
    """Weighted automaton whose expected reward from the derived initial state
    is the partial derivative of the pMC's expected reward w.r.t. ``parameter``."""
    if isinstance(pmc, WeightedAutomaton):
        raise ModelError("derived automata can only be built from a pMC")
    pmc.params.index(parameter)
    n = pmc.n_states
    taken = set(pmc.states)
    dnames = []
    for s in pmc.states:
        name = _unique_name(f"d_{parameter}_{s}", taken)
        taken.add(name)
        dnames.append(name)
    transitions: list[dict[int, Polynomial]] = [dict(row) for row in pmc.transitions]
    for s, row in enumerate(pmc.transitions):
        drow = {t + n: f for t, f in row.items()}
        for t, f in row.items():
            d = f.derivative(parameter)
            if not d.is_zero():
                drow[t] = d
        transitions.append(drow)
    rewards = tuple(pmc.rewards) + (Fraction(0),) * n
    return WeightedAutomaton(pmc.params, pmc.states + tuple(dnames), pmc.initial + n, pmc.good, pmc.bad,
                             tuple(transitions), rewards, parameter=parameter, base=n)


# --------------------------------------------------------------------------------------
# Synthetic benchmark generator
# --------------------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorSpec:
    """Shape of a synthetic pMC.

    ``states`` counts raw states (targets and traps included) before merging.
    Parameters are shared between states the way observations tie a
    controller's choice probabilities together.
    """

    states: int
    params: int
    branching: int = 2
    target_density: float = 0.05
    trap_density: float = 0.0
    nested_probability: float = 0.2
    constant_probability: float = 0.1
    max_reward: int = 3


_SPLITS = (Fraction(1, 2), Fraction(1, 3), Fraction(2, 3), Fraction(1, 4), Fraction(3, 4))


def generate_raw(spec: GeneratorSpec, seed: int) -> RawModel:
    n = spec.states
    if n < 2 or spec.params < 0 or spec.branching < 1:
        raise ModelError(f"infeasible generator spec {spec}")
    n_targets = max(1, int(round(spec.target_density * n)))
    n_traps = int(round(spec.trap_density * n))
    if spec.trap_density > 0:
        n_traps = max(1, n_traps)
    m = n - n_targets - n_traps
    if m < 1 or m < spec.params:
        raise ModelError(f"infeasible generator spec {spec}: {m} transient state(s) for {spec.params} parameter(s)")
    rng = np.random.default_rng(seed)
    names = tuple([f"s{i}" for i in range(m)] + [f"t{i}" for i in range(n_targets)]
                  + [f"x{i}" for i in range(n_traps)])
    params = ParameterSet(f"p{i}" for i in range(spec.params))
    one = Polynomial.constant(params, 1)
    pvars = [Polynomial.variable(params, name) for name in params]

    # Every parameter drives at least one state; the rest pick one at random.
    owner = np.full(m, -1)
    if spec.params:
        first = rng.permutation(m)[:spec.params]
        owner[first] = np.arange(spec.params)
        unassigned = owner < 0
        owner[unassigned] = rng.integers(0, spec.params, size=int(unassigned.sum()))
        constant_rows = (rng.random(m) < spec.constant_probability) & ~np.isin(np.arange(m), first)
        owner[constant_rows] = -1

    transitions: list[dict[int, Polynomial]] = []
    for i in range(m):
        # A forward edge along the chain guarantees the target is reachable.
        forward = i + 1 if i + 1 < m else m + int(rng.integers(n_targets))
        dests = [forward]
        while len(dests) < min(spec.branching, n):
            d = int(rng.integers(n))
            if d not in dests:
                dests.append(d)
        rng.shuffle(dests)
        k = len(dests)
        row: dict[int, Polynomial] = {}
        if owner[i] < 0 or k == 1:
            weights = _constant_split(rng, k)
            for d, w in zip(dests, weights):
                row[d] = one * w
        else:
            p = pvars[owner[i]]
            rest = _constant_split(rng, k - 1)
            if k >= 3 and spec.params > 1 and rng.random() < spec.nested_probability:
                q = pvars[int(rng.integers(spec.params))]
                if q == p:
                    q = pvars[(owner[i] + 1) % spec.params]
                row[dests[0]] = p * q
                row[dests[1]] = p * (one - q)
                tail = _constant_split(rng, k - 2)
                for d, w in zip(dests[2:], tail):
                    row[d] = (one - p) * w
            else:
                row[dests[0]] = p
                for d, w in zip(dests[1:], rest):
                    row[d] = (one - p) * w
        transitions.append(row)
    for _ in range(n_targets + n_traps):
        transitions.append({})
    for s in range(m, n):
        transitions[s] = {s: one}
    rewards = tuple(Fraction(int(r)) for r in rng.integers(0, spec.max_reward + 1, size=m)) \
        + (Fraction(0),) * (n_targets + n_traps)
    return RawModel(params, names, 0, tuple(transitions), rewards,
                    absorbing=frozenset(range(m, n)), targets=frozenset(range(m, m + n_targets)))


def _constant_split(rng: np.random.Generator, k: int) -> list[Fraction]:
    if k == 1:
        return [Fraction(1)]
    if k == 2:
        w = _SPLITS[int(rng.integers(len(_SPLITS)))]
        return [w, 1 - w]
    raw = rng.integers(1, 5, size=k)
    total = int(raw.sum())
    return [Fraction(int(r), total) for r in raw]


def generate_synthetic(spec: GeneratorSpec, rng_seed: int) -> tuple[Pmc, Region]:
    """Random observation-tied pMC plus the default region ``[1e-6, 1-1e-6]^n``."""
    raw = generate_raw(spec, rng_seed)
    pmc = preprocess(raw, require_almost_sure=spec.trap_density == 0)
    return pmc, Region.default(pmc.params)


def easy_parameters(u: np.ndarray, region: Region, tol: float = 1e-6) -> int:
    """Number of parameters sitting within ``tol`` of one of their bounds."""
    u = np.asarray(u, dtype=float)
    return int(np.sum((u - region.lower <= tol) | (region.upper - u <= tol)))


__all__ = [
    "ConcreteMatrixView", "GeneratorSpec", "Pmc", "RawModel", "Region", "WeightedAutomaton",
    "check_graph_preserving", "derived_automaton", "easy_parameters", "generate_raw",
    "generate_synthetic", "instantiate", "preprocess", "reachability_to_reward",
]
