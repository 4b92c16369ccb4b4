"""Uniform grids and the banded finite-difference operator ``A u + q``.

Row ``i`` of the operator approximates ``(A v)(t, x_i)`` with either the
three-point (order 2) or five-point (order 4) centred stencils.  Neighbours
that fall on the Dirichlet nodes ``x_0``, ``x_{J+1}`` or on the ghost nodes
``x_{-1}``, ``x_{J+2}`` are moved into the boundary vector ``q``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .banded import BandedMatrix, matvec
from .problems import ProblemSpec

# weights from offset -w to +w
D2_ORDER2 = np.array([-1.0, 2.0, -1.0])                      # -u_xx * h^2
D1_ORDER2 = np.array([-1.0, 0.0, 1.0]) / 2.0                 # u_x * h
D2_ORDER4 = np.array([1.0, -16.0, 30.0, -16.0, 1.0]) / 12.0  # -u_xx * h^2
D1_ORDER4 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0     # u_x * h


def stencil_weights(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(minus_second_derivative, first_derivative)`` weights for unit spacing."""
    if order == 2:
        return D2_ORDER2, D1_ORDER2
    if order == 4:
        return D2_ORDER4, D1_ORDER4
    raise ValueError(f"space order must be 2 or 4, got {order}")


@dataclass(frozen=True)
class SpatialGrid:
    xmin: float
    xmax: float
    J: int

    def __post_init__(self):
        if not self.xmin < self.xmax:
            raise ValueError("need xmin < xmax")
        if self.J < 1:
            raise ValueError("need at least one interior node")

    @property
    def h(self) -> float:
        return (self.xmax - self.xmin) / (self.J + 1)

    @property
    def nodes(self) -> np.ndarray:
        """All ``J + 2`` nodes including the two boundary nodes."""
        return self.xmin + self.h * np.arange(self.J + 2)

    @property
    def interior(self) -> np.ndarray:
        return self.nodes[1:-1]

    @classmethod
    def for_problem(cls, problem: ProblemSpec, J: int) -> "SpatialGrid":
        return cls(problem.xmin, problem.xmax, J)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if self.T <= 0 or self.N < 1:
            raise ValueError("need T > 0 and N >= 1")

    @property
    def tau(self) -> float:
        return self.T / self.N

    def t(self, n: float) -> float:
        return n * self.tau


def _stencil_rows(problem: ProblemSpec, grid: SpatialGrid, t: float, order: int) -> np.ndarray:
    """Per-row weights, shape ``(2w + 1, J)``, for offsets ``-w..w``."""
    d2, d1 = stencil_weights(order)
    x = grid.interior
    h = grid.h
    a = problem.diffusion(t, x)
    b = problem.drift(t, x)
    rows = np.outer(d2, a / h**2) + np.outer(d1, b / h)
    rows[len(d2) // 2] += problem.rate(t, x)
    return rows


def _boundary_values(problem: ProblemSpec, grid: SpatialGrid, t: float) -> dict[int, float]:
    """Values at node indices ``-1, 0, J+1, J+2``."""
    h, J = grid.h, grid.J
    return {
        -1: float(np.asarray(problem.ghost_left(t, np.array([grid.xmin - h])))[0]),
        0: float(problem.dirichlet_left(t)),
        J + 1: float(problem.dirichlet_right(t)),
        J + 2: float(np.asarray(problem.ghost_right(t, np.array([grid.xmax + h])))[0]),
    }


def _split(rows: np.ndarray, J: int, boundary: dict[int, float]) -> tuple[BandedMatrix, np.ndarray]:
    w = rows.shape[0] // 2
    i = np.arange(1, J + 1)
    diagonals = {}
    q = np.zeros(J)
    for k in range(-w, w + 1):
        c = rows[k + w]
        m = i + k
        inside = (m >= 1) & (m <= J)
        diag = c[inside]
        if abs(k) < J or k == 0:
            diagonals[k] = diag
        for node, value in boundary.items():
            hit = m == node
            if np.any(hit):
                q[hit] += c[hit] * value
    return BandedMatrix.from_diagonals(diagonals, n=J), q


def check_advection_dominance(problem: ProblemSpec, grid: SpatialGrid, t: float = 0.0) -> bool:
    """True when ``sigma^2 / (2 h^2) >= |b| / (2 h)`` at every interior node."""
    x = grid.interior
    return bool(np.all(grid.h * np.abs(problem.drift(t, x)) <= problem.sigma(t, x) ** 2))


def _check_sigma(problem, grid, t):
    if np.any(problem.sigma(t, grid.interior) <= 0):
        raise ValueError("sigma must be positive on the grid")


def assemble_2nd(problem: ProblemSpec, grid: SpatialGrid, t: float) -> tuple[BandedMatrix, np.ndarray]:
    """Tridiagonal ``A`` and boundary vector ``q`` (three-point stencils)."""
    _check_sigma(problem, grid, t)
    rows = _stencil_rows(problem, grid, t, 2)
    return _split(rows, grid.J, _boundary_values(problem, grid, t))


def assemble_4th(problem: ProblemSpec, grid: SpatialGrid, t: float) -> tuple[BandedMatrix, np.ndarray]:
    """Pentadiagonal ``A`` and boundary vector ``q`` (five-point stencils with ghost nodes)."""
    _check_sigma(problem, grid, t)
    rows = _stencil_rows(problem, grid, t, 4)
    return _split(rows, grid.J, _boundary_values(problem, grid, t))


def assemble(problem, grid, t, order):
    if order == 2:
        return assemble_2nd(problem, grid, t)
    if order == 4:
        return assemble_4th(problem, grid, t)
    raise ValueError(f"space order must be 2 or 4, got {order}")


@dataclass
class AssembledOperator:
    """``A(t)`` and ``q(t)`` for one problem, grid and stencil order.

    For autonomous coefficients the matrix is assembled once; ``q`` is
    recomputed on demand since boundary and ghost data may move in time.
    """

    problem: ProblemSpec
    grid: SpatialGrid
    order: int = 4
    _rows: np.ndarray | None = field(default=None, init=False, repr=False)
    _A: BandedMatrix | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        stencil_weights(self.order)
        _check_sigma(self.problem, self.grid, 0.0)
        if not check_advection_dominance(self.problem, self.grid):
            warnings.warn(
                f"{self.problem.name}: drift dominates diffusion at h={self.grid.h:.4g}; "
                "centred differences may oscillate", RuntimeWarning, stacklevel=2)

    def _stencil(self, t):
        if not self.problem.autonomous:
            return _stencil_rows(self.problem, self.grid, t, self.order)
        if self._rows is None:
            self._rows = _stencil_rows(self.problem, self.grid, 0.0, self.order)
        return self._rows

    def A_at(self, t: float) -> BandedMatrix:
        if self.problem.autonomous and self._A is not None:
            return self._A
        A, _ = _split(self._stencil(t), self.grid.J, _boundary_values(self.problem, self.grid, t))
        if self.problem.autonomous:
            self._A = A
        return A

    def q_at(self, t: float) -> np.ndarray:
        _, q = _split(self._stencil(t), self.grid.J, _boundary_values(self.problem, self.grid, t))
        return q

    def apply(self, u: np.ndarray, t: float) -> np.ndarray:
        """``A(t) u + q(t)``."""
        return matvec(self.A_at(t), u) + self.q_at(t)


def n_seminorm(x, scale: float = 1.0) -> float:
    """Discrete H1 seminorm with zero boundary values, of ``x / scale``."""
    if scale == 0:
        raise ValueError("scale must be non-zero")
    padded = np.concatenate(([0.0], np.asarray(x, dtype=float), [0.0])) / scale
    return float(np.sqrt(np.sum(np.diff(padded) ** 2)))


@dataclass(frozen=True)
class CoercivityResult:
    eta: float
    gamma: float
    ok: bool
    worst_margin: float
    trials: int


def coercivity_constants(problem: ProblemSpec, grid: SpatialGrid, order: int = 2,
                         t: float = 0.0) -> tuple[float, float]:
    """Admissible ``(eta, gamma)`` with ``<e, A e> >= eta N(e/h)^2 - gamma |e|^2``.

    With ``a = sigma^2/2`` sampled at the interior nodes, ``eta0 = min a``,
    ``L = max |a_i - a_{i-1}| / h`` and ``r_- = max(0, -min r)``:

    * order 2: ``eta = eta0 / 2`` and ``gamma = L + r_- + C'^2 / (2 eta0)``
      with ``C' = L + max |b|``;
    * order 4: the five-point drift stencil is a combination of differences
      spanning at most four cells, which raises ``C'`` to
      ``L + (5/3) max |b|``; the fourth-difference correction of the
      diffusion satisfies ``<B e, e> >= -L^2 / (12 eta0) |e|^2`` and the
      looser ``L^2 / (2 eta0)`` is added to ``gamma``.

    The ``L`` term is pure slack (the boundary differences of ``a`` never
    enter once ``e_0 = e_{J+1} = 0``) and is kept to mirror the proof.
    """
    x = grid.interior
    h = grid.h
    a = problem.diffusion(t, x)
    b = np.abs(problem.drift(t, x))
    eta0 = float(np.min(a))
    if eta0 <= 0:
        raise ValueError("diffusion must be bounded below by a positive constant")
    L = float(np.max(np.abs(np.diff(a)))) / h if len(a) > 1 else 0.0
    r_minus = max(0.0, -float(np.min(problem.rate(t, x))))
    bmax = float(np.max(b))
    if order == 2:
        cprime = L + bmax
        gamma = L + r_minus + cprime**2 / (2 * eta0)
    elif order == 4:
        cprime = L + 5.0 / 3.0 * bmax
        gamma = L + r_minus + cprime**2 / (2 * eta0) + L**2 / (2 * eta0)
    else:
        raise ValueError(f"space order must be 2 or 4, got {order}")
    return eta0 / 2.0, gamma


def coercivity_check(problem: ProblemSpec, grid: SpatialGrid, order: int = 2, trials: int = 1000,
                     t: float = 0.0, rng: np.random.Generator | int | None = 0) -> CoercivityResult:
    """Test the coercivity bound of ``A(t)`` on ``trials`` random unit vectors."""
    eta, gamma = coercivity_constants(problem, grid, order, t)
    A, _ = assemble(problem, grid, t, order)
    rng = np.random.default_rng(rng)
    h = grid.h
    worst = np.inf
    for _ in range(trials):
        e = rng.standard_normal(grid.J)
        e /= np.linalg.norm(e)
        lhs = float(e @ matvec(A, e))
        rhs = eta * n_seminorm(e, h) ** 2 - gamma * float(e @ e)
        worst = min(worst, lhs - rhs)
    return CoercivityResult(eta, gamma, bool(worst >= 0.0), worst, trials)
