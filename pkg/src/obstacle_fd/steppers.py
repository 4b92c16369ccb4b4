"""Implicit time steppers for the discrete obstacle problem.

Every step is reduced to ``min(B x - rhs, x - g) = 0`` and handed to the
semi-smooth Newton solver, warm-started from the previous time level.

=====  ==========================  ====================================  ==========================
name   B                           rhs                                   g
=====  ==========================  ====================================  ==========================
CN1    I + tau/2 A(t_{n+1})        (I - tau/2 A(t_n)) u^n - tau q + tau f  phi^{n+1} + f^{n+1}
CN2    as CN1                      as CN1                                u^n + tau f^{n+1/2}
BDF1   I + tau A                   u^n - tau q + tau f                   phi^{n+1} + f^{n+1}
BDF2   I + 2 tau/3 A               (4 u^n - u^{n-1})/3 - 2tau/3 (q - f)  phi^{n+1} + f^{n+1}
BDF3   11 I + 6 tau A              18u^n - 9u^{n-1} + 2u^{n-2} - 6tau(q-f)  phi^{n+1} + f^{n+1}
=====  ==========================  ====================================  ==========================

CN evaluates ``q`` and ``f`` at ``t_{n+1/2}``; the BDF schemes at ``t_{n+1}``.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import lcp
from .banded import matvec
from .discretization import AssembledOperator, SpatialGrid, TimeGrid
from .problems import ProblemSpec


class Scheme(str, enum.Enum):
    CN1 = "CN1"
    CN2 = "CN2"
    BDF1 = "BDF1"
    BDF2 = "BDF2"
    BDF3 = "BDF3"

    @classmethod
    def parse(cls, name) -> "Scheme":
        if isinstance(name, cls):
            return name
        key = str(name).upper().replace("-", "")
        aliases = {"CN": "CN1", "IE": "BDF1", "EULER": "BDF1"}
        return cls(aliases.get(key, key))


class MarchFailure(RuntimeError):
    def __init__(self, n: int, cause: Exception):
        super().__init__(f"time step {n} -> {n + 1} failed: {cause}")
        self.n = n
        self.cause = cause


@dataclass
class MarchState:
    """Time index, recent solution levels (newest first) and solver statistics."""

    n: int
    history: deque
    newton_iterations: list = field(default_factory=list)
    levels: list | None = None
    newton_tol: float | None = None
    last_report: lcp.NewtonReport | None = None

    @property
    def u(self) -> np.ndarray:
        return self.history[0]

    def push(self, u_new: np.ndarray, iterations: int):
        self.history.appendleft(u_new)
        self.n += 1
        self.newton_iterations.append(iterations)
        if self.levels is not None:
            self.levels.append(u_new)


def _nodes(op: AssembledOperator) -> np.ndarray:
    return op.grid.interior


def _solve(B, rhs, g, state: MarchState) -> np.ndarray:
    tol = None
    if state.newton_tol is not None:
        tol = state.newton_tol * (1.0 + float(np.max(np.abs(rhs))))
    x, state.last_report = lcp.solve(lcp.ObstacleLCP(B, rhs, g), x0=state.u, tol=tol)
    return x


def _cn_system(state, op, problem, tau):
    x = _nodes(op)
    t0 = state.n * tau
    t1 = t0 + tau
    th = t0 + 0.5 * tau
    u = state.u
    B = op.A_at(t1).shift_diagonal(1.0, 0.5 * tau)
    rhs = u - 0.5 * tau * matvec(op.A_at(t0), u) - tau * op.q_at(th) + tau * problem.source(th, x)
    return B, rhs


def step_cn1(state: MarchState, op: AssembledOperator, problem: ProblemSpec, tau: float):
    B, rhs = _cn_system(state, op, problem, tau)
    x = _nodes(op)
    t1 = (state.n + 1) * tau
    g = problem.obstacle(t1, x) + problem.source(t1, x)
    return _solve(B, rhs, g, state)


def step_cn2(state: MarchState, op: AssembledOperator, problem: ProblemSpec, tau: float):
    """Crank-Nicolson for the equivalent HJB form: the previous level is the obstacle."""
    B, rhs = _cn_system(state, op, problem, tau)
    th = (state.n + 0.5) * tau
    g = state.u + tau * problem.source(th, _nodes(op))
    return _solve(B, rhs, g, state)


def _bdf_obstacle(op, problem, t1):
    x = _nodes(op)
    f1 = problem.source(t1, x)
    return f1, problem.obstacle(t1, x) + f1


def step_bdf1(state: MarchState, op: AssembledOperator, problem: ProblemSpec, tau: float):
    t1 = (state.n + 1) * tau
    f1, g = _bdf_obstacle(op, problem, t1)
    B = op.A_at(t1).shift_diagonal(1.0, tau)
    rhs = state.u - tau * op.q_at(t1) + tau * f1
    return _solve(B, rhs, g, state)


def step_bdf2(state: MarchState, op: AssembledOperator, problem: ProblemSpec, tau: float):
    if len(state.history) < 2:
        raise ValueError("BDF2 needs two previous levels")
    t1 = (state.n + 1) * tau
    f1, g = _bdf_obstacle(op, problem, t1)
    c = 2.0 * tau / 3.0
    B = op.A_at(t1).shift_diagonal(1.0, c)
    rhs = (4.0 * state.history[0] - state.history[1]) / 3.0 - c * op.q_at(t1) + c * f1
    return _solve(B, rhs, g, state)


def step_bdf3(state: MarchState, op: AssembledOperator, problem: ProblemSpec, tau: float):
    """Three-step scheme, PDE branch scaled by ``6 tau`` while the obstacle branch is not."""
    if len(state.history) < 3:
        raise ValueError("BDF3 needs three previous levels")
    t1 = (state.n + 1) * tau
    f1, g = _bdf_obstacle(op, problem, t1)
    B = op.A_at(t1).shift_diagonal(11.0, 6.0 * tau)
    u0, u1, u2 = state.history[0], state.history[1], state.history[2]
    rhs = 18.0 * u0 - 9.0 * u1 + 2.0 * u2 - 6.0 * tau * op.q_at(t1) + 6.0 * tau * f1
    return _solve(B, rhs, g, state)


STEPPERS = {
    Scheme.CN1: step_cn1,
    Scheme.CN2: step_cn2,
    Scheme.BDF1: step_bdf1,
    Scheme.BDF2: step_bdf2,
    Scheme.BDF3: step_bdf3,
}


def startup_chain(scheme: Scheme, bdf2_init: Scheme = Scheme.CN1) -> list[Scheme]:
    """Schemes used for the first steps before ``scheme`` has enough history."""
    scheme = Scheme.parse(scheme)
    if scheme is Scheme.BDF2:
        return [Scheme.parse(bdf2_init)]
    if scheme is Scheme.BDF3:
        return [Scheme.CN1, Scheme.BDF2]
    return []


def initial_state(problem: ProblemSpec, grid: SpatialGrid, keep_levels: bool = False,
                  newton_tol: float | None = None, check: bool = True) -> MarchState:
    x = grid.interior
    u0 = np.asarray(problem.initial(x), dtype=float)
    if check:
        floor = problem.obstacle(0.0, x) + problem.source(0.0, x)
        if np.any(u0 < floor - 1e-12 * (1 + np.abs(floor))):
            raise ValueError("initial data lies below the obstacle")
    return MarchState(0, deque([u0], maxlen=3), [], [u0] if keep_levels else None, newton_tol)


def march(problem: ProblemSpec, grid: SpatialGrid, tgrid: TimeGrid, scheme="BDF2",
          space_order: int = 4, bdf2_init="CN1", newton_tol: float | None = None,
          keep_levels: bool = False, op: AssembledOperator | None = None):
    """Advance from ``u^0 = v_0`` to ``t_N = T``.

    Returns the interior values at ``t_N`` and the final :class:`MarchState`
    (with every level when ``keep_levels`` is set).

    ``newton_tol`` is relative: the solver stops once the residual is below
    ``newton_tol * (1 + |rhs|_inf)`` (default ``1e-10``).
    """
    scheme = Scheme.parse(scheme)
    if op is None:
        op = AssembledOperator(problem, grid, space_order)
    chain = startup_chain(scheme, Scheme.parse(bdf2_init))
    state = initial_state(problem, grid, keep_levels, newton_tol)
    tau = tgrid.tau
    for n in range(tgrid.N):
        kind = chain[n] if n < len(chain) else scheme
        try:
            u_new = STEPPERS[kind](state, op, problem, tau)
        except (lcp.NewtonConvergenceError, np.linalg.LinAlgError) as exc:
            raise MarchFailure(n, exc) from exc
        state.push(u_new, state.last_report.iterations)
    return state.u, state


def full_solution(problem: ProblemSpec, grid: SpatialGrid, u: np.ndarray, t: float) -> np.ndarray:
    """Interior values padded with the Dirichlet data at ``t``."""
    return np.concatenate(([problem.dirichlet_left(t)], u, [problem.dirichlet_right(t)]))


def monotone_check(levels, tol: float = 1e-12) -> bool:
    """True iff every recorded level dominates its predecessor componentwise."""
    levels = list(levels)
    if len(levels) < 2:
        raise ValueError("need at least two levels")
    return all(np.all(b >= a - tol) for a, b in zip(levels, levels[1:]))
