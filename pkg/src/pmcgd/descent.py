"""First-order feasibility search inside a parameter region.

The engine always ascends ``Objective.value`` (the measure, negated for
minimisation). Update rules work in place on an :class:`OptimizerState`;
:func:`feasibility_search` drives them with round-robin batches, a region
restriction, local-optimum detection and seeded random restarts.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, PmcError, RegionError
from .gradient import Objective
from .model import Region, easy_parameters
from .polynomial import ParameterSet

METHODS = ("plain", "momentum", "nag", "rmsprop", "adam", "radam")
SIGN_METHODS = ("plain", "momentum", "nag")
RESTRICTIONS = ("projection", "barrier", "logistic")
COMPARATORS = (">", ">=", "<", "<=")
START_OFFSET = 1e-6


@dataclass
class DescentConfig:
    method: str = "momentum"
    sign: bool = False
    restriction: str = "projection"
    lr: float = 0.1
    gamma: float = 0.9
    beta: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    delta_stop: float = 1e-6
    bound: float = 0.0
    comparator: str = ">="
    mu0: float = 0.1
    mu_factor: float = 0.1
    mu_floor: float = 1e-6
    seed: int = 0
    max_iterations: int = 10_000
    time_limit: float | None = None
    logistic_compat: bool = False
    start: Sequence[float] | None = None
    record_trajectory: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.sign and self.method not in SIGN_METHODS:
            raise ConfigError(f"sign variant is only defined for {', '.join(SIGN_METHODS)}")
        if self.restriction not in RESTRICTIONS:
            raise ConfigError(f"unknown restriction {self.restriction!r}")
        if self.comparator not in COMPARATORS:
            raise ConfigError(f"unknown comparator {self.comparator!r}")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma must lie in [0, 1)")
        if not 0 <= self.beta < 1:
            raise ConfigError("beta must lie in [0, 1)")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch size must be at least 1")
        if not self.delta_stop > 0:
            raise ConfigError("delta_stop must be positive")
        if not (0 < self.mu_floor <= self.mu0 and 0 < self.mu_factor < 1):
            raise ConfigError("barrier schedule needs 0 < mu_floor <= mu0 and 0 < mu_factor < 1")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be nonnegative")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ConfigError("time limit must be positive")
        if not math.isfinite(self.bound):
            raise ConfigError("bound must be finite")

    @property
    def maximize(self) -> bool:
        return self.comparator in (">", ">=")

    def holds(self, value: float) -> bool:
        c, b = self.comparator, self.bound
        if c == ">":
            return value > b
        if c == ">=":
            return value >= b
        if c == "<":
            return value < b
        return value <= b


@dataclass
class OptimizerState:
    """Search coordinates plus the per-parameter method memory."""

    u: np.ndarray
    v: np.ndarray
    sq: np.ndarray
    m: np.ndarray
    counts: np.ndarray
    last_step: np.ndarray
    t: int = 0
    restarts: int = 0

    @classmethod
    def fresh(cls, u) -> "OptimizerState":
        u = np.array(u, dtype=float)
        n = u.shape[0]
        return cls(u, np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n, dtype=np.int64), np.full(n, np.nan))

    def reset(self, u) -> None:
        """Forget the method memory (not ``t``) and move to ``u``."""
        self.u = np.array(u, dtype=float)
        self.v[:] = 0.0
        self.sq[:] = 0.0
        self.m[:] = 0.0
        self.counts[:] = 0
        self.last_step[:] = np.nan


@dataclass
class RunResult:
    status: str
    u_found: np.ndarray
    value: float
    iterations: int
    restarts: int
    gradient_solves: int
    value_solves: int
    wall_time: float
    params: ParameterSet
    final_mu: float | None = None
    easy_parameters: int = 0
    trajectory: list[tuple[np.ndarray, float]] | None = None

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "instantiation": {n: float(x) for n, x in zip(self.params.names, self.u_found)},
            "value": float(self.value),
            "iterations": self.iterations,
            "restarts": self.restarts,
            "gradient_solves": self.gradient_solves,
            "value_solves": self.value_solves,
            "wall_time": self.wall_time,
            "final_mu": self.final_mu,
            "easy_parameters": self.easy_parameters,
        }


# -- batching and update rules ------------------------------------------------------


def batch_indices(t: int, n_params: int, k: int) -> list[int]:
    """Round-robin block ``(t*k' + j) mod n`` for ``j < k'`` with ``k' = min(k, n)``."""
    if k < 1:
        raise ConfigError("batch size must be at least 1")
    if n_params == 0:
        return []
    k = min(k, n_params)
    return [(t * k + j) % n_params for j in range(k)]


def apply_sign(grads: np.ndarray) -> np.ndarray:
    return np.sign(grads)


def plain_update(state: OptimizerState, grads, idx, config: DescentConfig) -> OptimizerState:
    state.u[idx] += config.lr * np.asarray(grads)
    return state


def momentum_update(state: OptimizerState, grads, idx, config: DescentConfig) -> OptimizerState:
    state.v[idx] = config.gamma * state.v[idx] + config.lr * np.asarray(grads)
    state.u[idx] += state.v[idx]
    return state


def nag_update(state: OptimizerState, gradient: Callable[[np.ndarray, list[int]], np.ndarray], idx,
               config: DescentConfig, lookahead_clamp: Callable[[np.ndarray], np.ndarray] | None = None) -> OptimizerState:
    """Nesterov step: the gradient is taken at ``u + gamma*v`` on the batch."""
    ahead = state.u.copy()
    ahead[idx] += config.gamma * state.v[idx]
    if lookahead_clamp is not None:
        ahead = lookahead_clamp(ahead)
    g = np.asarray(gradient(ahead, list(idx)), dtype=float)
    if config.sign:
        g = apply_sign(g)
    return momentum_update(state, g, idx, config)


def rmsprop_update(state: OptimizerState, grads, idx, config: DescentConfig) -> OptimizerState:
    g = np.asarray(grads)
    state.sq[idx] = config.beta * state.sq[idx] + (1 - config.beta) * g * g
    state.u[idx] += config.lr / np.sqrt(state.sq[idx] + config.eps) * g
    return state


def _moments(state: OptimizerState, g: np.ndarray, idx, config: DescentConfig):
    state.counts[idx] += 1
    t = state.counts[idx]
    state.m[idx] = config.gamma * state.m[idx] + (1 - config.gamma) * g
    state.sq[idx] = config.beta * state.sq[idx] + (1 - config.beta) * g * g
    m_hat = state.m[idx] / (1 - config.gamma ** t)
    v_hat = state.sq[idx] / (1 - config.beta ** t)
    return t, m_hat, v_hat


def adam_update(state: OptimizerState, grads, idx, config: DescentConfig) -> OptimizerState:
    _, m_hat, v_hat = _moments(state, np.asarray(grads, dtype=float), idx, config)
    state.u[idx] += config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return state


def radam_rho(t, beta: float):
    """``(rho_t, rho_inf)`` of the rectified variant."""
    rho_inf = 2.0 / (1.0 - beta) - 1.0
    bt = np.power(beta, t)
    return rho_inf - 2.0 * t * bt / (1.0 - bt), rho_inf


def radam_update(state: OptimizerState, grads, idx, config: DescentConfig) -> OptimizerState:
    t, m_hat, v_hat = _moments(state, np.asarray(grads, dtype=float), idx, config)
    rho, rho_inf = radam_rho(t.astype(float), config.beta)
    rect = rho > 4
    step = config.lr * m_hat
    if np.any(rect):
        r = np.sqrt(((rho[rect] - 4) * (rho[rect] - 2) * rho_inf) / ((rho_inf - 4) * (rho_inf - 2) * rho[rect]))
        step[rect] = config.lr * r * m_hat[rect] / (np.sqrt(v_hat[rect]) + config.eps)
    state.u[idx] += step
    return state


_UPDATES = {
    "plain": plain_update,
    "momentum": momentum_update,
    "rmsprop": rmsprop_update,
    "adam": adam_update,
    "radam": radam_update,
}


# -- region restrictions ------------------------------------------------------------


def restrict_projection(state: OptimizerState, region: Region) -> np.ndarray:
    """Clamp ``state.u`` into the region; clamped coordinates lose their memory.

    Returns the mask of clamped coordinates.
    """
    clamped = (state.u < region.lower) | (state.u > region.upper)
    if np.any(clamped):
        state.u = region.clamp(state.u)
        state.v[clamped] = 0.0
        state.sq[clamped] = 0.0
        state.m[clamped] = 0.0
        state.counts[clamped] = 0
    return clamped


class BarrierObjective(Objective):
    """``value + mu * sum_i log(distance of u_i to its nearest wall)``."""

    def __init__(self, inner: Objective, region: Region, mu: float):
        if not mu > 0:
            raise ConfigError("barrier weight must be positive")
        self.inner = inner
        self.params = inner.params
        self.maximize = inner.maximize
        self.region = region
        self.mu = mu

    def _distances(self, u: np.ndarray):
        u = np.asarray(u, dtype=float)
        if not self.region.contains(u, open=True):
            raise RegionError("barrier evaluated outside the open region")
        return u - self.region.lower, self.region.upper - u

    def measure(self, u):
        return self.inner.measure(u)

    def measure_gradient(self, u, indices):
        return self.inner.measure_gradient(u, indices)

    def barrier(self, u) -> float:
        lo, hi = self._distances(u)
        return float(np.sum(np.log(np.minimum(lo, hi))))

    def barrier_gradient(self, u, indices) -> np.ndarray:
        lo, hi = self._distances(u)
        lo, hi = lo[indices], hi[indices]
        # Ties go to the upper wall.
        return np.where(lo < hi, 1.0 / lo, -1.0 / hi)

    def value(self, u):
        return self.inner.value(u) + self.mu * self.barrier(u)

    def gradient(self, u, indices=None):
        if indices is None:
            indices = range(len(self.params))
        indices = list(indices)
        return self.inner.gradient(u, indices) + self.mu * self.barrier_gradient(u, indices)


def restrict_barrier(obj: Objective, region: Region, mu: float) -> BarrierObjective:
    return BarrierObjective(obj, region, mu)


class LogisticObjective(Objective):
    """The objective seen through ``u = (ub-lb) / (1 + exp(-(q - q0))) + lb``."""

    def __init__(self, inner: Objective, region: Region, compat: bool = False):
        self.inner = inner
        self.params = inner.params
        self.maximize = inner.maximize
        self.region = None
        self.box = region
        self.compat = compat
        self.q0 = region.width / 2.0

    def to_u(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        z = np.clip(q - self.q0, -700.0, 700.0)
        return self.box.width / (1.0 + np.exp(-z)) + self.box.lower

    def to_q(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        w = self.box.width
        frac = np.clip((u - self.box.lower) / w, 1e-15, 1 - 1e-15)
        return self.q0 + np.log(frac / (1.0 - frac))

    def jacobian(self, q, indices) -> np.ndarray:
        q = np.asarray(q, dtype=float)[indices]
        if self.compat:
            e = np.exp(np.clip(q, -700.0, 700.0))
            return e / (1.0 + e) ** 2
        e = np.exp(-np.clip(q - self.q0[indices], -700.0, 700.0))
        return self.box.width[indices] * e / (1.0 + e) ** 2

    def measure(self, q):
        return self.inner.measure(self.to_u(q))

    def measure_gradient(self, q, indices):
        return self.inner.measure_gradient(self.to_u(q), indices) * self.jacobian(q, indices)


def restrict_logistic(obj: Objective, region: Region, compat: bool = False) -> LogisticObjective:
    return LogisticObjective(obj, region, compat)


# -- search loop --------------------------------------------------------------------


def local_optimum(state: OptimizerState, delta_stop: float) -> bool:
    steps = state.last_step
    if steps.size == 0 or np.any(np.isnan(steps)):
        return False
    return bool(np.all(steps < delta_stop))


def start_point(region: Region, start=None) -> np.ndarray:
    if start is not None:
        u = np.array(start, dtype=float)
        region.check_point(u)
        return u
    return region.clamp(region.center() + START_OFFSET)


def _counter(obj: Objective, name: str) -> int:
    return int(getattr(obj, name, 0))


def feasibility_search(obj: Objective, region: Region, config: DescentConfig) -> RunResult:
    """Search ``region`` for a point whose measure satisfies the configured bound."""
    if obj.maximize != config.maximize:
        raise ConfigError(f"objective direction {obj.direction} does not match comparator {config.comparator}")
    if obj.params != region.params:
        raise ConfigError("objective and region are over different parameter sets")
    clock = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    n = len(obj.params)
    k = min(config.batch_size, n) if n else 0
    if hasattr(obj, "batch_hint"):
        obj.batch_hint = k

    restriction = config.restriction
    mu = config.mu0 if restriction == "barrier" else None
    if restriction == "barrier":
        search = restrict_barrier(obj, region, mu)
    elif restriction == "logistic":
        search = restrict_logistic(obj, region, config.logistic_compat)
    else:
        search = obj
    if restriction == "logistic":
        to_u, to_x = search.to_u, search.to_q
    else:
        to_u = to_x = lambda x: np.array(x, dtype=float)

    u0 = start_point(region, config.start)
    if restriction == "barrier" and not region.contains(u0, open=True):
        raise RegionError("barrier search needs a start point inside the open region")
    state = OptimizerState.fresh(to_x(u0))

    if restriction == "projection":
        ahead_clamp = region.clamp
    elif restriction == "barrier":
        pad = 1e-9 * region.width
        ahead_clamp = lambda x: np.minimum(np.maximum(x, region.lower + pad), region.upper - pad)
    else:
        ahead_clamp = None
    update = _UPDATES.get(config.method)
    trajectory = [] if config.record_trajectory else None
    best_u, best_val = None, -math.inf
    status = "exhausted"

    def restart():
        state.reset(to_x(region.sample(rng)))
        state.restarts += 1

    def end_round():
        # Barrier: relax the weight and continue from here; at the floor, restart.
        nonlocal mu
        if restriction == "barrier" and mu > config.mu_floor * (1 + 1e-12):
            mu = max(mu * config.mu_factor, config.mu_floor)
            search.mu = mu
            state.reset(state.u)
        else:
            if restriction == "barrier":
                mu = config.mu0
                search.mu = mu
            restart()

    while True:
        u = to_u(state.u)
        measured = float(obj.measure(u))
        if trajectory is not None:
            trajectory.append((u.copy(), measured))
        engine = measured if config.maximize else -measured
        if engine > best_val or best_u is None:
            best_u, best_val = u.copy(), engine
        if config.holds(measured):
            status = "feasible"
            best_u, best_val = u.copy(), engine
            break
        if n == 0 or state.t >= config.max_iterations:
            break
        if config.time_limit is not None and time.perf_counter() - clock > config.time_limit:
            break
        if local_optimum(state, config.delta_stop):
            end_round()
            continue

        idx = batch_indices(state.t, n, k)
        before = state.u.copy()
        if config.method == "nag":
            nag_update(state, search.gradient, idx, config, ahead_clamp)
        else:
            g = np.asarray(search.gradient(state.u, idx), dtype=float)
            if config.sign:
                g = apply_sign(g)
            update(state, g, idx, config)
        state.t += 1
        if restriction == "projection":
            restrict_projection(state, region)
        elif restriction == "barrier" and not region.contains(state.u, open=True):
            # The step jumped over the soft wall; fall back to the last point inside.
            state.u = before
            end_round()
            continue
        state.last_step[idx] = np.abs(to_u(state.u)[idx] - u[idx])

    value = best_val if config.maximize else -best_val
    result = RunResult(
        status=status,
        u_found=best_u,
        value=value,
        iterations=state.t,
        restarts=state.restarts,
        gradient_solves=_counter(obj, "gradient_solves"),
        value_solves=_counter(obj, "value_solves"),
        wall_time=time.perf_counter() - clock,
        params=obj.params,
        final_mu=mu,
        easy_parameters=easy_parameters(best_u, region),
        trajectory=trajectory,
    )
    if result.feasible:
        _audit(obj, region, config, result)
    return result


def _audit(obj: Objective, region: Region, config: DescentConfig, result: RunResult) -> None:
    if not region.contains(result.u_found):
        raise PmcError(f"unsound result: {result.u_found} lies outside the region")
    if not config.holds(result.value):
        raise PmcError(f"unsound result: value {result.value} does not satisfy {config.comparator} {config.bound}")
