"""Banded matrices with at most two sub- and super-diagonals.

Storage follows the LAPACK general-band layout: ``ab[upper + i - j, j]``
holds ``M[i, j]``.  Factorisation and solves go through LAPACK
``dgbtrf``/``dgbtrs`` (LU with partial pivoting confined to the band).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.linalg.lapack import dgbtrf, dgbtrs

MAX_BANDWIDTH = 2


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a pivot is zero to working precision."""


@dataclass(frozen=True)
class BandedMatrix:
    """Square matrix with ``lower_bw`` sub- and ``upper_bw`` super-diagonals."""

    n: int
    lower_bw: int
    upper_bw: int
    ab: np.ndarray

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("matrix dimension must be >= 1")
        for bw in (self.lower_bw, self.upper_bw):
            if not 0 <= bw <= MAX_BANDWIDTH:
                raise ValueError(f"bandwidth {bw} outside 0..{MAX_BANDWIDTH}")
        shape = (self.lower_bw + self.upper_bw + 1, self.n)
        if self.ab.shape != shape:
            raise ValueError(f"band storage has shape {self.ab.shape}, expected {shape}")

    @classmethod
    def from_diagonals(cls, diagonals: Mapping[int, np.ndarray], n: int | None = None) -> "BandedMatrix":
        """Build from ``{offset: values}``; offset ``k`` diagonal has ``n - |k|`` entries."""
        if n is None:
            n = len(diagonals[0]) if 0 in diagonals else max(len(v) + abs(k) for k, v in diagonals.items())
        lower = max([-k for k in diagonals if k < 0], default=0)
        upper = max([k for k in diagonals if k > 0], default=0)
        ab = np.zeros((lower + upper + 1, n))
        for k, values in diagonals.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (max(n - abs(k), 0),):
                raise ValueError(f"diagonal {k} must have {n - abs(k)} entries, got {values.shape}")
            ab[upper - k, _band_columns(n, k)] = values
        return cls(n, lower, upper, ab)

    @classmethod
    def identity(cls, n: int) -> "BandedMatrix":
        return cls(n, 0, 0, np.ones((1, n)))

    @classmethod
    def from_stencil(cls, weights, n: int) -> "BandedMatrix":
        """Constant-coefficient Toeplitz band, ``weights`` listed from offset ``-w`` to ``+w``."""
        w = (len(weights) - 1) // 2
        return cls.from_diagonals({k - w: np.full(n - abs(k - w), float(c)) for k, c in enumerate(weights)
                                   if abs(k - w) < n}, n=n)

    def diagonal(self, k: int = 0) -> np.ndarray:
        if k > self.upper_bw or -k > self.lower_bw:
            return np.zeros(max(self.n - abs(k), 0))
        return self.ab[self.upper_bw - k, _band_columns(self.n, k)].copy()

    @property
    def bands(self) -> dict[int, np.ndarray]:
        return {k: self.diagonal(k) for k in range(-self.lower_bw, self.upper_bw + 1)}

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        for k, values in self.bands.items():
            out += np.diag(values, k)
        return out

    def __matmul__(self, x):
        return matvec(self, x)

    def scaled_add(self, alpha: float, other: "BandedMatrix", beta: float = 1.0) -> "BandedMatrix":
        """Return ``beta * self + alpha * other``."""
        if other.n != self.n:
            raise ValueError("dimension mismatch")
        lower = max(self.lower_bw, other.lower_bw)
        upper = max(self.upper_bw, other.upper_bw)
        ab = np.zeros((lower + upper + 1, self.n))
        ab[upper - self.upper_bw: upper + self.lower_bw + 1] += beta * self.ab
        ab[upper - other.upper_bw: upper + other.lower_bw + 1] += alpha * other.ab
        return BandedMatrix(self.n, lower, upper, ab)

    def shift_diagonal(self, c: float, scale: float = 1.0) -> "BandedMatrix":
        """Return ``c * I + scale * self``."""
        ab = scale * self.ab
        ab[self.upper_bw] += c
        return BandedMatrix(self.n, self.lower_bw, self.upper_bw, ab)


def _band_columns(n: int, k: int) -> slice:
    # columns of band storage holding the offset-k diagonal
    if abs(k) >= n:
        return slice(0, 0)
    return slice(k, n) if k >= 0 else slice(0, n + k)


def matvec(M: BandedMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (M.n,):
        raise ValueError(f"vector of length {x.shape} does not match matrix dimension {M.n}")
    n, u = M.n, M.upper_bw
    y = M.ab[u] * x
    for k in range(1, u + 1):
        if k < n:
            y[: n - k] += M.ab[u - k, k:] * x[k:]
    for k in range(1, M.lower_bw + 1):
        if k < n:
            y[k:] += M.ab[u + k, : n - k] * x[: n - k]
    return y


def banded_solve(M: BandedMatrix, rhs) -> np.ndarray:
    """Solve ``M x = rhs`` by banded LU with partial pivoting.

    Raises
    ------
    SingularMatrixError
        If some pivot of ``U`` is zero relative to ``eps * n * ||M||_inf``.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (M.n,):
        raise ValueError(f"rhs of length {rhs.shape} does not match matrix dimension {M.n}")
    kl, ku = M.lower_bw, M.upper_bw
    # dgbtrf needs kl extra rows on top for the fill-in created by pivoting
    work = np.zeros((2 * kl + ku + 1, M.n), order="F")
    work[kl:] = M.ab
    lu, piv, info = dgbtrf(work, kl, ku, overwrite_ab=1)
    if info < 0:
        raise ValueError(f"dgbtrf: illegal argument {-info}")
    pivots = np.abs(lu[kl + ku])
    scale = np.abs(M.ab).sum(axis=0).max()
    if info > 0 or pivots.min() <= np.finfo(float).eps * M.n * scale:
        raise SingularMatrixError(f"matrix is singular to working precision (pivot {pivots.argmin()})")
    x, info = dgbtrs(lu, kl, ku, rhs, piv)
    if info != 0:
        raise ValueError(f"dgbtrs failed with info={info}")
    return x


def is_strictly_diag_dominant(M: BandedMatrix) -> bool:
    diag = np.abs(M.ab[M.upper_bw])
    off = _row_sums(M, np.abs, skip_main=True)
    return bool(np.all(diag > off))


def is_m_matrix(M: BandedMatrix) -> bool:
    """Strictly dominant, positive diagonal and non-positive off-diagonal entries."""
    off_ok = all(np.all(v <= 0.0) for k, v in M.bands.items() if k != 0)
    return bool(off_ok and np.all(M.diagonal(0) > 0.0) and is_strictly_diag_dominant(M))


def _row_sums(M: BandedMatrix, f=lambda a: a, skip_main: bool = False) -> np.ndarray:
    out = np.zeros(M.n)
    for k, values in M.bands.items():
        if skip_main and k == 0:
            continue
        if k >= 0:
            out[: M.n - k] += f(values)
        else:
            out[-k:] += f(values)
    return out
