"""Sparse systems ``(I - A[u]) x = b`` over the transient states of a model."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .errors import ConvergenceError, ModelError, SolverError
from .model import Pmc, Region, instantiate

DEFAULT_TOL = 1e-9
RESTART = 50
DIRECT_MAX_N = 5000
DIRECT_MIN_RHS = 8
BACKENDS = ("auto", "krylov", "direct")


@dataclass(frozen=True, eq=False)
class SparseSystem:
    """The matrix ``I - A`` in CSR layout; rows are the model's transient states."""

    matrix: sparse.csr_matrix
    transient: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    @cached_property
    def factor(self):
        # Computed once, reused for every right-hand side.
        try:
            return spla.splu(self.matrix.tocsc(), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc

    def residual(self, x: np.ndarray, rhs: np.ndarray) -> float:
        if self.n == 0:
            return 0.0
        return float(np.max(np.abs(self.matrix @ x - rhs)))


def assemble(model: Pmc, u, region: Region | None = None) -> tuple[SparseSystem, np.ndarray]:
    """Instantiate ``model`` at ``u`` and build ``(I - A[u], rewards)``."""
    if model.trap_states:
        raise ModelError("model has a reachable bad state; expected rewards are infinite")
    view = instantiate(model, u, region)
    n = view.matrix.shape[0]
    m = (sparse.identity(n, format="csr") - view.matrix).tocsr()
    m.sum_duplicates()
    return SparseSystem(m, view.transient), view.rewards.copy()


def choose_backend(n: int, n_rhs: int) -> str:
    return "direct" if n <= DIRECT_MAX_N and n_rhs > DIRECT_MIN_RHS else "krylov"


def _krylov(system: SparseSystem, rhs: np.ndarray, tol: float, x0: np.ndarray | None = None) -> np.ndarray:
    n = system.n
    bound = tol * max(1.0, float(np.max(np.abs(rhs))))
    d = system.diagonal
    if np.any(d == 0):
        precond = None
    else:
        inv = 1.0 / d
        precond = spla.LinearOperator((n, n), matvec=lambda v: inv * v, dtype=float)
    restart = min(RESTART, n)
    cycles = max(1, math.ceil(10 * n / restart))
    x = x0
    target = 0.1 * bound
    for _ in range(4):
        x, info = spla.gmres(system.matrix, rhs, x0=x, rtol=0.0, atol=target, restart=restart,
                             maxiter=cycles, M=precond)
        if not np.all(np.isfinite(x)):
            break
        if system.residual(x, rhs) <= bound:
            return x
        if info > 0:
            break
        target *= 0.1
    raise ConvergenceError(
        f"GMRES did not reach residual {bound:.3g} on a {n}x{n} system "
        f"(last residual {system.residual(x, rhs) if x is not None else float('nan'):.3g}); "
        "try the direct backend")


def _direct(system: SparseSystem, rhs: np.ndarray, tol: float) -> np.ndarray:
    x = system.factor.solve(rhs)
    bound = tol * max(1.0, float(np.max(np.abs(rhs))))
    res = system.residual(x, rhs)
    if res > bound:
        # One step of iterative refinement against the same factorization.
        x = x + system.factor.solve(rhs - system.matrix @ x)
        res = system.residual(x, rhs)
        if res > bound:
            raise SolverError(f"direct solve residual {res:.3g} exceeds {bound:.3g}")
    return x


def solve(system: SparseSystem, rhs, tol: float = DEFAULT_TOL, backend: str = "krylov") -> np.ndarray:
    """Solve ``system.matrix @ x = rhs`` with ``|residual|_inf <= tol * max(1, |rhs|_inf)``."""
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (system.n,):
        raise ValueError(f"right-hand side has shape {rhs.shape}, expected ({system.n},)")
    if system.n == 0:
        return np.zeros(0)
    if not np.any(rhs):
        return np.zeros(system.n)
    if backend == "auto":
        backend = choose_backend(system.n, 1)
    if backend == "direct":
        return _direct(system, rhs, tol)
    return _krylov(system, rhs, tol)


def solve_multi(system: SparseSystem, rhs_list: Sequence, tol: float = DEFAULT_TOL,
                backend: str = "auto") -> list[np.ndarray]:
    """Solve several right-hand sides against one matrix."""
    if not len(rhs_list):
        return []
    if backend == "auto":
        backend = choose_backend(system.n, len(rhs_list))
    if backend == "direct" and system.n:
        b = np.column_stack([np.asarray(r, dtype=float) for r in rhs_list])
        x = system.factor.solve(b)
        out = []
        for j in range(b.shape[1]):
            xj, bj = x[:, j], b[:, j]
            if system.residual(xj, bj) > tol * max(1.0, float(np.max(np.abs(bj)))):
                xj = _direct(system, bj, tol)
            out.append(xj)
        return out
    return [solve(system, r, tol, backend) for r in rhs_list]


def solve_exact(matrix: Sequence[Sequence[Fraction]], rhs: Sequence[Fraction]) -> list[Fraction]:
    """Dense Gauss-Jordan elimination over the rationals (small systems only)."""
    n = len(rhs)
    a = [[Fraction(v) for v in row] + [Fraction(b)] for row, b in zip(matrix, rhs)]
    for col in range(n):
        piv = next((r for r in range(col, n) if a[r][col] != 0), None)
        if piv is None:
            raise SolverError("singular system")
        a[col], a[piv] = a[piv], a[col]
        p = a[col][col]
        a[col] = [v / p for v in a[col]]
        for r in range(n):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [v - f * w for v, w in zip(a[r], a[col])]
    return [a[r][n] for r in range(n)]


def assemble_exact(model: Pmc, point) -> tuple[list[list[Fraction]], list[Fraction], list[int]]:
    """Exact-rational ``(I - A[u], rewards, transient states)`` for small models."""
    if model.trap_states:
        raise ModelError("model has a reachable bad state; expected rewards are infinite")
    skip = model.absorbing_states
    transient = [s for s in range(model.n_states) if s not in skip]
    pos = {s: k for k, s in enumerate(transient)}
    n = len(transient)
    m = [[Fraction(int(r == c)) for c in range(n)] for r in range(n)]
    for s in transient:
        for t, f in model.transitions[s].items():
            if t in pos:
                m[pos[s]][pos[t]] -= f.evaluate(point, exact=True)
    return m, [Fraction(model.rewards[s]) for s in transient], transient
