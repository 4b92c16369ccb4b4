"""Obstacle problems ``min(B x - rhs, x - g) = 0`` for one implicit step.

The solver is the semi-smooth Newton (active-set / policy) iteration: at
each iterate the component-wise minimum picks, row by row, either the
identity row ``x_i = g_i`` or the linear row ``(B x)_i = rhs_i``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .banded import BandedMatrix, banded_solve, matvec


@dataclass(frozen=True)
class ObstacleLCP:
    B: BandedMatrix
    rhs: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        n = self.B.n
        if np.shape(self.rhs) != (n,) or np.shape(self.g) != (n,):
            raise ValueError("rhs and obstacle must have the matrix dimension")


@dataclass
class NewtonReport:
    iterations: int
    residual_inf: float
    converged: bool
    active_set_final: np.ndarray = field(repr=False)


class NewtonConvergenceError(RuntimeError):
    def __init__(self, message: str, report: NewtonReport):
        super().__init__(message)
        self.report = report


class NoFeasibleActiveSet(RuntimeError):
    pass


def residual(lcp: ObstacleLCP, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.minimum(matvec(lcp.B, x) - lcp.rhs, x - lcp.g)


def active_set(lcp: ObstacleLCP, x) -> np.ndarray:
    """Rows where the obstacle branch is strictly smaller; ties go to the B row."""
    return (x - lcp.g) < (matvec(lcp.B, x) - lcp.rhs)


def solve_mixed(lcp: ObstacleLCP, active: np.ndarray) -> np.ndarray:
    """Solve the linear system with identity rows on ``active`` and B rows elsewhere."""
    B = lcp.B
    n, u = B.n, B.upper_bw
    ab = B.ab.copy()
    for k in range(1, u + 1):
        if k < n:
            ab[u - k, k:][active[: n - k]] = 0.0
    for k in range(1, B.lower_bw + 1):
        if k < n:
            ab[u + k, : n - k][active[k:]] = 0.0
    ab[u, active] = 1.0
    rhs = np.where(active, lcp.g, lcp.rhs)
    return banded_solve(BandedMatrix(n, B.lower_bw, u, ab), rhs)


def default_tolerance(lcp: ObstacleLCP) -> float:
    return 1e-10 * (1.0 + float(np.max(np.abs(lcp.rhs))))


def solve(lcp: ObstacleLCP, x0=None, tol: float | None = None,
          max_iter: int | None = None) -> tuple[np.ndarray, NewtonReport]:
    """Semi-smooth Newton iteration for ``min(B x - rhs, x - g) = 0``.

    Parameters
    ----------
    lcp : ObstacleLCP
    x0 : array, optional
        Starting iterate.  Defaults to ``max(g, B^{-1} rhs)``.
    tol : float, optional
        Sup-norm tolerance on the residual, default ``1e-10 (1 + |rhs|_inf)``.
    max_iter : int, optional
        Default ``n + 5``.

    Returns
    -------
    x, report

    Raises
    ------
    NewtonConvergenceError
        When ``max_iter`` is hit (or the active set freezes) with the
        residual still above ``tol``.
    """
    n = lcp.B.n
    if tol is None:
        tol = default_tolerance(lcp)
    if max_iter is None:
        max_iter = n + 5
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter >= 1")
    if x0 is None:
        x = np.maximum(lcp.g, banded_solve(lcp.B, lcp.rhs))
    else:
        x = np.array(x0, dtype=float)

    mask = active_set(lcp, x)
    res = np.inf
    for it in range(1, max_iter + 1):
        x = solve_mixed(lcp, mask)
        new_mask = active_set(lcp, x)
        res = float(np.max(np.abs(residual(lcp, x))))
        if res <= tol or np.array_equal(new_mask, mask):
            break
        mask = new_mask
    report = NewtonReport(it, res, res <= tol, new_mask)
    if not report.converged:
        raise NewtonConvergenceError(
            f"semi-smooth Newton stopped after {it} iterations with residual {res:.3e} > {tol:.3e}",
            report)
    return x, report


def brute_force(lcp: ObstacleLCP, tol: float = 1e-10) -> np.ndarray:
    """Enumerate all ``2^n`` active sets (``n <= 16``); verification oracle only."""
    n = lcp.B.n
    if n > 16:
        raise ValueError("brute force enumeration limited to n <= 16")
    dense = lcp.B.to_dense()
    for bits in itertools.product((False, True), repeat=n):
        active = np.array(bits)
        M = np.where(active[:, None], np.eye(n), dense)
        try:
            x = np.linalg.solve(M, np.where(active, lcp.g, lcp.rhs))
        except np.linalg.LinAlgError:
            continue
        slack = dense @ x - lcp.rhs
        if (np.all(x >= lcp.g - tol) and np.all(slack >= -tol)
                and np.max(np.abs(np.minimum(slack, x - lcp.g))) <= tol):
            return x
    raise NoFeasibleActiveSet("no active set yields a complementarity solution")
