"""Convergence studies: error norms, reference solutions and table emission.

Errors against a closed-form solution use grid norms over the interior
nodes at ``t = T``,

    e_Lp = (h sum_i |u_i - v_i|^p)^(1/p),    e_Linf = max_i |u_i - v_i|.

Without a closed form (the American put) the numerical solution is
compared with a fine-grid reference on equally spaced points of a window.
Both solutions are evaluated there by four-point Lagrange interpolation and
the window norms are averages over the M evaluation points:

    l1 = (1/M) sum |d|,  l2 = ((1/M) sum d^2)^(1/2),  linf = max |d|.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .discretization import AssembledOperator, SpatialGrid, TimeGrid
from .problems import PROBLEMS, ProblemSpec
from .steppers import MarchFailure, Scheme, march

CSV_HEADER = ["J", "N", "e_l1", "ord_l1", "e_l2", "ord_l2", "e_linf", "ord_linf", "time_s"]


# -- norms and orders ---------------------------------------------------------

def errors_exact(u, problem: ProblemSpec, grid: SpatialGrid, t: float) -> tuple[float, float, float]:
    """Grid ``L1``, ``L2`` and ``Linf`` errors of interior values ``u`` at time ``t``."""
    if problem.exact is None:
        raise ValueError(f"problem {problem.name!r} has no exact solution")
    d = np.abs(np.asarray(u, dtype=float) - problem.exact(t, grid.interior))
    h = grid.h
    return float(h * d.sum()), float(np.sqrt(h * np.sum(d * d))), float(d.max())


def lagrange_interpolate(grid: SpatialGrid, u, points) -> np.ndarray:
    """Four-point Lagrange interpolation of interior values ``u`` at ``points``.

    Stencils use interior nodes only and shift inwards near the ends, so
    every point must lie in ``[x_1, x_J]``.  Points that coincide with a node
    (to 1e-9 of a cell) return the node value exactly.
    """
    u = np.asarray(u, dtype=float)
    x = np.atleast_1d(np.asarray(points, dtype=float))
    J, h = grid.J, grid.h
    if J < 4:
        raise ValueError("cubic interpolation needs at least four interior nodes")
    s = (x - grid.xmin) / h - 1.0           # position in interior index units
    if np.any(s < -1e-9) or np.any(s > J - 1 + 1e-9):
        raise ValueError("evaluation points fall outside the grid's interior nodes")
    near = np.round(s)
    s = np.where(np.abs(s - near) < 1e-9, near, s)
    base = np.clip(np.floor(s).astype(int) - 1, 0, J - 4)
    r = s - base                             # local coordinate, nodes at 0, 1, 2, 3
    w = np.stack([
        -(r - 1) * (r - 2) * (r - 3) / 6.0,
        r * (r - 2) * (r - 3) / 2.0,
        -r * (r - 1) * (r - 3) / 2.0,
        r * (r - 1) * (r - 2) / 6.0,
    ])
    vals = np.stack([u[base + k] for k in range(4)])
    out = np.sum(w * vals, axis=0)
    exact_hit = (s == near)
    out[exact_hit] = u[near[exact_hit].astype(int)]
    return out


def window_points(window: tuple[float, float], spacing: float) -> np.ndarray:
    lo, hi = window
    if not hi > lo or spacing <= 0:
        raise ValueError("need window lo < hi and positive spacing")
    m = int(round((hi - lo) / spacing))
    if not math.isclose(lo + m * spacing, hi, rel_tol=0, abs_tol=1e-9 * max(1.0, abs(hi))):
        raise ValueError("window length must be a multiple of the spacing")
    return lo + spacing * np.arange(m + 1)


@dataclass(frozen=True)
class ReferenceSolution:
    """Fine-grid values on the evaluation points of a window, with provenance."""

    points: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    problem: str
    scheme: str
    space_order: int
    J: int
    N: int
    newton_tol: float | None
    window: tuple[float, float]
    spacing: float

    @property
    def M(self) -> int:
        return len(self.points)


def make_reference(problem: ProblemSpec, scheme="BDF2", space_order: int = 4, Jref: int = 5120,
                   Nref: int | None = None, window=(80.0, 120.0), spacing: float = 0.01,
                   newton_tol: float | None = None) -> ReferenceSolution:
    """March on a fine mesh and store its interpolant on the window points."""
    Nref = Jref if Nref is None else Nref
    window = (float(window[0]), float(window[1]))
    if not (problem.xmin < window[0] and window[1] < problem.xmax):
        raise ValueError("window must lie inside the domain")
    grid = SpatialGrid.for_problem(problem, Jref)
    u, _ = march(problem, grid, TimeGrid(problem.T, Nref), scheme, space_order, newton_tol=newton_tol)
    pts = window_points(window, spacing)
    return ReferenceSolution(pts, lagrange_interpolate(grid, u, pts), problem.name,
                             Scheme.parse(scheme).value, space_order, Jref, Nref, newton_tol,
                             window, spacing)


def errors_vs_reference(u, grid: SpatialGrid, ref: ReferenceSolution) -> tuple[float, float, float]:
    """Window-averaged ``l1``, ``l2`` and max errors against ``ref``."""
    d = np.abs(lagrange_interpolate(grid, u, ref.points) - ref.values)
    return float(d.mean()), float(np.sqrt(np.mean(d * d))), float(d.max())


def estimate_order(e_coarse: float, e_fine: float) -> float:
    """``log2(e_coarse / e_fine)``; ``nan`` when either error is not positive."""
    if not (e_coarse > 0 and e_fine > 0) or not (math.isfinite(e_coarse) and math.isfinite(e_fine)):
        return math.nan
    return math.log(e_coarse / e_fine) / math.log(2.0)


# -- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    problem: str = "model1"
    scheme: str = "BDF2"
    space_order: int = 4
    mesh: tuple[tuple[int, int], ...] | None = None
    base_J: int = 80
    base_N: int | None = None
    doublings: int = 4
    ref_mode: str = "exact"
    ref_J: int = 5120
    ref_N: int | None = None
    window: tuple[float, float] = (80.0, 120.0)
    spacing: float = 0.01
    newton_tol: float | None = None
    bdf2_init: str = "CN1"
    format: str = "markdown"
    out: str | None = None
    timings: bool = True

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}; choose from {sorted(PROBLEMS)}")
        Scheme.parse(self.scheme)
        Scheme.parse(self.bdf2_init)
        if self.space_order not in (2, 4):
            raise ValueError("space order must be 2 or 4")
        if self.ref_mode not in ("exact", "self"):
            raise ValueError("ref_mode must be 'exact' or 'self'")
        if self.format not in ("markdown", "csv"):
            raise ValueError("format must be 'markdown' or 'csv'")
        if any(J < 1 or N < 1 for J, N in self.meshes()):
            raise ValueError("mesh sizes must be positive")
        if self.ref_mode == "self":
            p = self.build_problem()
            if not (p.xmin < self.window[0] < self.window[1] < p.xmax):
                raise ValueError("evaluation window must lie inside the domain")

    def meshes(self) -> list[tuple[int, int]]:
        if self.mesh is not None:
            return [(int(J), int(N)) for J, N in self.mesh]
        if self.doublings < 0:
            raise ValueError("doublings must be non-negative")
        N0 = self.base_J if self.base_N is None else self.base_N
        return [(self.base_J * 2**k, N0 * 2**k) for k in range(self.doublings + 1)]

    def build_problem(self) -> ProblemSpec:
        return PROBLEMS[self.problem]()


def parse_mesh(text: str) -> tuple[tuple[int, int], ...]:
    """``"80:80,160:160"`` -> ``((80, 80), (160, 160))``."""
    pairs = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        J, sep, N = item.partition(":")
        if not sep:
            raise ValueError(f"mesh entry {item!r} is not of the form J:N")
        pairs.append((int(J), int(N)))
    if not pairs:
        raise ValueError("empty mesh list")
    return tuple(pairs)


def parse_window(text: str) -> tuple[float, float]:
    parts = text.replace(":", ",").split(",")
    if len(parts) != 2:
        raise ValueError(f"window {text!r} must be 'lo,hi'")
    return float(parts[0]), float(parts[1])


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(conv):
    def parse(text):
        return None if text.strip().lower() in ("", "none") else conv(text)
    return parse


_CONVERTERS = {
    "problem": str, "scheme": str, "space_order": int, "mesh": parse_mesh,
    "base_J": int, "base_N": _optional(int), "doublings": int, "ref_mode": str,
    "ref_J": int, "ref_N": _optional(int), "window": parse_window, "spacing": float,
    "newton_tol": _optional(float), "bdf2_init": str, "format": str, "out": _optional(str),
    "timings": _parse_bool,
}
_KEY_ALIASES = {k.lower(): k for k in _CONVERTERS}


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` text, one key per line, ``#`` starts a comment."""
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            entries[key.strip()] = value.strip()
    return entries


def config_from_mapping(values: dict) -> RunConfig:
    """Build a :class:`RunConfig` from string (or already typed) values."""
    kwargs = {}
    for key, value in values.items():
        name = _KEY_ALIASES.get(key.replace("-", "_").lower())
        if name is None:
            raise ValueError(f"unknown configuration key {key!r}")
        kwargs[name] = _CONVERTERS[name](value) if isinstance(value, str) else value
    return RunConfig(**kwargs)


# -- tables -------------------------------------------------------------------

@dataclass
class ConvergenceRow:
    J: int
    N: int
    e_l1: float = math.nan
    e_l2: float = math.nan
    e_linf: float = math.nan
    ord_l1: float = math.nan
    ord_l2: float = math.nan
    ord_linf: float = math.nan
    wall_seconds: float = math.nan
    failure: str | None = None

    @property
    def errors(self) -> tuple[float, float, float]:
        return self.e_l1, self.e_l2, self.e_linf

    @property
    def orders(self) -> tuple[float, float, float]:
        return self.ord_l1, self.ord_l2, self.ord_linf


@dataclass
class ConvergenceTable:
    config: RunConfig
    rows: list[ConvergenceRow]
    reference: ReferenceSolution | None = None

    @property
    def ok(self) -> bool:
        return all(row.failure is None for row in self.rows)

    def _cells(self, row: ConvergenceRow) -> list[str]:
        cells = [str(row.J), str(row.N)]
        for e, o in zip(row.errors, row.orders):
            cells += [_fmt_error(e), _fmt_order(o)]
        cells.append(_fmt_time(row.wall_seconds) if self.config.timings else "")
        return cells

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow(self._cells(row))
        return buf.getvalue()

    def to_markdown(self) -> str:
        c = self.config
        lines = [f"{c.problem}, {Scheme.parse(c.scheme).value}, space order {c.space_order}"
                 + (f", reference J=N={self.reference.J}" if self.reference is not None else ""), ""]
        lines.append("| J | N | L1 error | order | L2 error | order | Linf error | order | time (s) |")
        lines.append("|---:|---:|---:|---:|---:|---:|---:|---:|---:|")
        for row in self.rows:
            lines.append("| " + " | ".join(self._cells(row)) + " |")
        failed = [r for r in self.rows if r.failure is not None]
        if failed:
            lines.append("")
            lines += [f"- J={r.J} N={r.N} failed: {r.failure}" for r in failed]
        return "\n".join(lines) + "\n"

    def render(self) -> str:
        return self.to_csv() if self.config.format == "csv" else self.to_markdown()


def _fmt_error(e: float) -> str:
    return f"{e:.5E}" if math.isfinite(e) else "nan"


def _fmt_order(o: float) -> str:
    return f"{o:.2f}" if math.isfinite(o) else ""


def _fmt_time(t: float) -> str:
    return f"{t:.2f}" if math.isfinite(t) else ""


def _fill_orders(rows: list[ConvergenceRow]):
    # orders only between consecutive rows that double both J and N
    for prev, row in zip(rows, rows[1:]):
        if row.J == 2 * prev.J and row.N == 2 * prev.N:
            row.ord_l1, row.ord_l2, row.ord_linf = (
                estimate_order(a, b) for a, b in zip(prev.errors, row.errors))


def run_table(config: RunConfig, reference: ReferenceSolution | None = None) -> ConvergenceTable:
    """One march per mesh pair; failed marches are annotated and skipped."""
    problem = config.build_problem()
    if config.ref_mode == "self" and reference is None:
        reference = make_reference(problem, "BDF2", 4, config.ref_J, config.ref_N,
                                   config.window, config.spacing, config.newton_tol)
    rows = []
    for J, N in config.meshes():
        row = ConvergenceRow(J, N)
        grid = SpatialGrid.for_problem(problem, J)
        start = time.perf_counter()
        try:
            op = AssembledOperator(problem, grid, config.space_order)
            u, _ = march(problem, grid, TimeGrid(problem.T, N), config.scheme, config.space_order,
                         bdf2_init=config.bdf2_init, newton_tol=config.newton_tol, op=op)
            row.wall_seconds = time.perf_counter() - start
            if config.ref_mode == "exact":
                row.e_l1, row.e_l2, row.e_linf = errors_exact(u, problem, grid, problem.T)
            else:
                row.e_l1, row.e_l2, row.e_linf = errors_vs_reference(u, grid, reference)
        except (MarchFailure, ValueError) as exc:
            row.failure = str(exc)
        rows.append(row)
    _fill_orders(rows)
    return ConvergenceTable(config, rows, reference)


def parse_csv(text: str) -> list[dict[str, float | None]]:
    """Read back an emitted CSV table; blank cells become ``None``."""
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        out.append({k: (float(v) if v not in ("",) else None) for k, v in rec.items()})
    return out


def with_overrides(config: RunConfig, **changes) -> RunConfig:
    """Copy of ``config`` with the non-``None`` entries of ``changes`` applied."""
    known = {f.name for f in fields(RunConfig)}
    return replace(config, **{k: v for k, v in changes.items() if k in known and v is not None})
