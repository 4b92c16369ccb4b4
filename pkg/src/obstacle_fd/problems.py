"""Obstacle problems ``min(v_t + A v, v - phi) = f`` on an interval.

The operator is ``A v = -1/2 sigma^2 v_xx + drift v_x + rate v``.  All
callables take a scalar time and an array of abscissae and must be
vectorised in ``x``.

Two model problems have closed-form solutions mimicking the American put:
the free boundary is prescribed as ``x_s(t) = K (1 - c0 t^alpha)``, the
solution equals the payoff left of it and a smooth decreasing profile to
the right, and the source term is whatever makes that function solve the
obstacle equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

Field = Callable[[float, np.ndarray], np.ndarray]
Boundary = Callable[[float], float]

OBSTACLE_FLOOR = -1.0e6


def _const(c: float) -> Field:
    return lambda t, x: np.full(np.shape(x), float(c))


@dataclass(frozen=True)
class ProblemSpec:
    """Coefficients, data and (optionally) the exact solution of one problem.

    ``ghost_left``/``ghost_right`` give the values used for the fictitious
    nodes ``xmin - h`` and ``xmax + h`` of the wide stencil; they receive the
    ghost abscissa so they do not need to know the mesh.
    """

    name: str
    xmin: float
    xmax: float
    T: float
    sigma: Field
    drift: Field
    rate: Field
    source: Field
    obstacle: Field
    initial: Callable[[np.ndarray], np.ndarray]
    dirichlet_left: Boundary
    dirichlet_right: Boundary
    ghost_left: Field
    ghost_right: Field
    exact: Optional[Field] = None
    autonomous: bool = True
    params: dict = field(default_factory=dict, compare=False)

    def diffusion(self, t: float, x: np.ndarray) -> np.ndarray:
        """Half the squared volatility, ``a = sigma^2 / 2``."""
        return 0.5 * self.sigma(t, x) ** 2

    def apply_operator(self, t, x, v, v_x, v_xx):
        """Evaluate ``A v`` from pointwise derivative values."""
        return -self.diffusion(t, x) * v_xx + self.drift(t, x) * v_x + self.rate(t, x) * v


def payoff_put(K: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: np.maximum(K - np.asarray(x, dtype=float), 0.0)


def american_put(lam: float = 0.2, r: float = 0.1, K: float = 100.0, T: float = 1.0,
                 xmin: float = 75.0, xmax: float = 275.0) -> ProblemSpec:
    """American put in the asset variable with forward time (time to maturity)."""
    if min(lam, r, K, T) <= 0:
        raise ValueError("lambda, r, K and T must be positive")
    if not 0 < xmin < K < xmax:
        raise ValueError("need 0 < xmin < K < xmax")
    phi = payoff_put(K)
    return ProblemSpec(
        name="american_put", xmin=xmin, xmax=xmax, T=T,
        sigma=lambda t, x: lam * np.asarray(x, dtype=float),
        drift=lambda t, x: -r * np.asarray(x, dtype=float),
        rate=_const(r),
        source=_const(0.0),
        obstacle=lambda t, x: phi(x),
        initial=phi,
        dirichlet_left=lambda t: K - xmin,
        dirichlet_right=lambda t: 0.0,
        # payoff extension on the left, zero on the right
        ghost_left=lambda t, x: K - np.asarray(x, dtype=float),
        ghost_right=_const(0.0),
        params=dict(lam=lam, r=r, K=K, T=T, xmin=xmin, xmax=xmax),
    )


@dataclass(frozen=True)
class ModelParams:
    K: float = 100.0
    lam: float = 0.3
    r: float = 0.1
    c0: float = 0.2
    alpha: float = 0.5
    T: float = 1.0
    xmin: float = 75.0
    xmax: float = 275.0

    def __post_init__(self):
        if not 0 < self.K < self.xmax:
            raise ValueError("need 0 < K < xmax")
        if self.c0 <= 0 or self.T <= 0:
            raise ValueError("c0 and T must be positive")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.K - self.c0 * self.T ** self.alpha <= 0:
            raise ValueError("need K - c0 T^alpha > 0")
        if self.xmin >= self.free_boundary(self.T):
            raise ValueError("xmin must lie left of the free boundary on [0, T]")

    def free_boundary(self, t: float) -> float:
        return self.K * (1.0 - self.c0 * t ** self.alpha)

    def free_boundary_rate(self, t: float) -> float:
        return -self.K * self.c0 * self.alpha * t ** (self.alpha - 1.0)


MODEL1_DEFAULTS = ModelParams()
MODEL2_DEFAULTS = ModelParams(T=0.5, xmin=50.0, xmax=450.0)


def model2_theta(a: float, b: float) -> float:
    """Positive root of ``b theta = atan(a theta)`` for ``0 < b < a``.

    ``b theta - atan(a theta)`` is negative just right of 0 (slope ``b - a``)
    and positive at ``pi / (2 b)`` since ``atan < pi/2``, so Brent's method
    on that bracket converges to the unique positive root.
    """
    if not 0 < b < a:
        raise ValueError("need 0 < b < a")
    hi = math.pi / (2.0 * b)
    lo = 1e-8 * hi                           # the function is negative on (0, root)
    return brentq(lambda th: b * th - math.atan(a * th), lo, hi,
                  xtol=1e-15 * hi, rtol=4 * np.finfo(float).eps, maxiter=200)


class _FreeBoundaryModel:
    """Shared machinery of the two closed-form models.

    Subclasses provide ``C(t)`` with its time derivative, and the profile
    ``v = b - C P(y / C)`` right of the free boundary via ``_right``.
    """

    def __init__(self, params: ModelParams):
        self.p = params

    def ab(self, t):
        xs = self.p.free_boundary(t)
        return self.p.xmax - xs, self.p.K - xs

    def value(self, t, x):
        return self.evaluate(t, x)[0]

    def evaluate(self, t, x):
        """Return ``v, v_t, v_x, v_xx`` at time ``t``."""
        x = np.asarray(x, dtype=float)
        K = self.p.K
        v = np.maximum(K - x, 0.0)
        vt = np.zeros_like(x)
        vx = np.where(x < K, -1.0, 0.0)
        vxx = np.zeros_like(x)
        if t <= 0:
            return v, vt, vx, vxx
        xs = self.p.free_boundary(t)
        right = x >= xs
        if np.any(right):
            C, Cdot = self.C(t)
            xs_dot = self.p.free_boundary_rate(t)
            vr, vtr, vxr, vxxr = self._right(x[right] - xs, K - xs, C, Cdot, xs_dot)
            v[right], vt[right], vx[right], vxx[right] = vr, vtr, vxr, vxxr
        return v, vt, vx, vxx

    def source(self, problem: ProblemSpec, t, x):
        x = np.asarray(x, dtype=float)
        if t <= 0:
            return np.zeros_like(x)
        v, vt, vx, vxx = self.evaluate(t, x)
        pde = vt + problem.apply_operator(t, x, v, vx, vxx)
        return np.minimum(pde, v - np.maximum(self.p.K - x, 0.0))


class _Model1(_FreeBoundaryModel):
    def C(self, t):
        a, b = self.ab(t)
        C = a * b / (a - b)
        xs_dot = self.p.free_boundary_rate(t)
        # 1/C = 1/b - 1/a with a' = b' = -xs'
        Cdot = C * C * (-xs_dot) * (1.0 / b ** 2 - 1.0 / a ** 2)
        return C, Cdot

    @staticmethod
    def _right(y, b, C, Cdot, xs_dot):
        z = y / C
        w = 1.0 + z
        v = b - y / w
        vx = -1.0 / w ** 2
        vxx = 2.0 / (C * w ** 3)
        vt = -xs_dot + xs_dot / w ** 2 - z * z * Cdot / w ** 2
        return v, vt, vx, vxx


class _Model2(_FreeBoundaryModel):
    def C(self, t):
        a, b = self.ab(t)
        C = 1.0 / model2_theta(a, b)
        xs_dot = self.p.free_boundary_rate(t)
        q = 1.0 + (a / C) ** 2
        adot = bdot = -xs_dot
        Cdot = C * (q * bdot - adot) / (q * b - a)
        return C, Cdot

    @staticmethod
    def _right(y, b, C, Cdot, xs_dot):
        z = y / C
        s = 1.0 + z * z
        v = b - C * np.arctan(z)
        vx = -1.0 / s
        vxx = 2.0 * z / (C * s * s)
        vt = -xs_dot - Cdot * np.arctan(z) - (-xs_dot - z * Cdot) / s
        return v, vt, vx, vxx


def _model_problem(name: str, model: _FreeBoundaryModel, ghost: str) -> ProblemSpec:
    p = model.p
    phi = payoff_put(p.K)
    exact = model.value

    holder = {}

    def source(t, x):
        return model.source(holder["spec"], t, x)

    if ghost == "exact":
        ghost_left = exact
        ghost_right = exact
    elif ghost == "payoff":
        ghost_left = lambda t, x: p.K - np.asarray(x, dtype=float)
        ghost_right = _const(0.0)
    else:
        raise ValueError(f"unknown ghost policy {ghost!r}")

    spec = ProblemSpec(
        name=name, xmin=p.xmin, xmax=p.xmax, T=p.T,
        sigma=lambda t, x: p.lam * np.asarray(x, dtype=float),
        drift=lambda t, x: -p.r * np.asarray(x, dtype=float),
        rate=_const(p.r),
        source=source,
        obstacle=lambda t, x: phi(x),
        initial=phi,
        dirichlet_left=lambda t: float(exact(t, np.array([p.xmin]))[0]),
        dirichlet_right=lambda t: float(exact(t, np.array([p.xmax]))[0]),
        ghost_left=ghost_left,
        ghost_right=ghost_right,
        exact=exact,
        params=dict(vars(p), ghost=ghost, model=model),
    )
    holder["spec"] = spec
    return spec


def model1(params: ModelParams = MODEL1_DEFAULTS, ghost: str = "exact") -> ProblemSpec:
    """Model with ``v = b - y / (1 + y / C)`` right of the free boundary (``v_xx`` jumps)."""
    return _model_problem("model1", _Model1(params), ghost)


def model2(params: ModelParams = MODEL2_DEFAULTS, ghost: str = "exact") -> ProblemSpec:
    """Model with ``v = b - C atan(y / C)`` right of the free boundary (``v_xxx`` jumps)."""
    return _model_problem("model2", _Model2(params), ghost)


def model_derivatives(problem: ProblemSpec, t: float, x) -> tuple:
    """``(v, v_t, v_x, v_xx)`` for a model problem built by :func:`model1`/:func:`model2`."""
    return problem.params["model"].evaluate(t, x)


def manufactured_smooth(kind: str = "decay", periods: int = 1, T: float = 1.0) -> ProblemSpec:
    """Heat-equation eigenmode ``v = s e^{-t} sin x`` on ``(0, periods * pi)``.

    ``kind="decay"`` takes ``s = 1``; ``kind="rise"`` takes ``s = -1`` so that
    ``v`` is non-decreasing in time, which the scheme with the moving obstacle
    ``u^n`` requires.  Unit diffusion, no drift or reaction, zero source and
    an obstacle far below the solution.
    """
    sign = {"decay": 1.0, "rise": -1.0}[kind]

    def exact(t, x):
        return sign * math.exp(-t) * np.sin(np.asarray(x, dtype=float))

    return ProblemSpec(
        name=f"smooth_{kind}", xmin=0.0, xmax=periods * math.pi, T=T,
        sigma=_const(math.sqrt(2.0)),
        drift=_const(0.0),
        rate=_const(0.0),
        source=_const(0.0),
        obstacle=_const(OBSTACLE_FLOOR),
        initial=lambda x: exact(0.0, x),
        dirichlet_left=lambda t: 0.0,
        dirichlet_right=lambda t: 0.0,
        ghost_left=exact,
        ghost_right=exact,
        exact=exact,
        params=dict(kind=kind, periods=periods, T=T),
    )


PROBLEMS = {
    "american_put": american_put,
    "model1": model1,
    "model2": model2,
    "smooth": manufactured_smooth,
}
