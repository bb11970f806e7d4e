"""Shared types: sampled centerlines, actuation boxes, gain matrices, seeding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


def uniform_grid(n_s: int) -> np.ndarray:
    if n_s < 2:
        raise ValueError(f"need at least 2 grid points, got {n_s}")
    grid = np.linspace(0.0, 1.0, n_s)
    grid[-1] = 1.0
    return grid


@dataclass(frozen=True)
class Centerline:
    """A space curve r(s), s in [0, 1], sampled on a uniform grid.

    Parameters
    ----------
    values : array_like, shape (n_s, d)
        Positions at the grid nodes ``s_k = k / (n_s - 1)``.
    interp : {"cubic", "linear"}
        Interpolant between nodes. ``"cubic"`` is a natural cubic spline;
        ``"linear"`` exists for debugging.
    """

    values: np.ndarray
    interp: str = "cubic"
    _spline: CubicSpline | None = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 2:
            raise ValueError(f"values must have shape (n_s >= 2, d), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("centerline contains non-finite values")
        if self.interp not in ("cubic", "linear"):
            raise ValueError(f"unknown interpolation {self.interp!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        spline = None
        if self.interp == "cubic" and values.shape[0] > 2:
            spline = CubicSpline(self.grid, values, axis=0, bc_type="natural")
        object.__setattr__(self, "_spline", spline)

    @property
    def n_s(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def grid(self) -> np.ndarray:
        return uniform_grid(self.n_s)

    def __call__(self, s):
        return evaluate_centerline(self, s)


def evaluate_centerline(c: Centerline, s):
    """Interpolated position(s) of ``c`` at ``s`` (scalar or 1-D array).

    Grid nodes return the stored rows exactly.
    """
    s_arr = np.asarray(s, dtype=float)
    scalar = s_arr.ndim == 0
    s_arr = np.atleast_1d(s_arr)
    if np.any(~np.isfinite(s_arr)) or np.any(s_arr < 0.0) or np.any(s_arr > 1.0):
        raise DomainError("evaluation coordinate must lie in [0, 1]")

    n = c.n_s - 1
    if c._spline is not None:
        out = c._spline(s_arr)
    else:
        idx = np.minimum((s_arr * n).astype(int), n - 1)
        t = s_arr * n - idx
        out = (1.0 - t)[:, None] * c.values[idx] + t[:, None] * c.values[idx + 1]

    # exact node reproduction
    k = np.rint(s_arr * n).astype(int)
    on_node = c.grid[k] == s_arr
    out[on_node] = c.values[k[on_node]]
    return out[0] if scalar else out


def resample(c: Centerline, n_new: int) -> Centerline:
    """Re-sample ``c`` on a uniform grid with ``n_new`` nodes."""
    if n_new < 2:
        raise ValueError(f"n_new must be >= 2, got {n_new}")
    return Centerline(evaluate_centerline(c, uniform_grid(n_new)), interp=c.interp)


def arc_length(values: np.ndarray) -> float:
    """Polygonal length of a sampled curve."""
    return float(np.sum(np.linalg.norm(np.diff(values, axis=0), axis=1)))


@dataclass(frozen=True)
class Box:
    """Per-coordinate bounds ``lo <= q <= hi`` on the actuation vector."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lo and hi must be 1-D arrays of equal length")
        if np.any(lo > hi):
            raise ValueError("box bounds must satisfy lo <= hi")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def uniform(cls, lo: float, hi: float, m: int) -> "Box":
        return cls(np.full(m, lo), np.full(m, hi))

    @property
    def m(self) -> int:
        return self.lo.size

    def contains(self, q, atol: float = 0.0) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self.lo - atol) and np.all(q <= self.hi + atol))

    def clamp(self, q) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=float), self.lo, self.hi)


# Default activation box of the three-fiber arm.
FIBER_BOX = Box.uniform(-1.67, 0.0, 3)


class GainMatrix:
    """Symmetric positive definite feedback gain."""

    def __init__(self, K):
        K = np.atleast_2d(np.asarray(K, dtype=float))
        if K.shape[0] != K.shape[1]:
            raise ValueError(f"gain must be square, got shape {K.shape}")
        if not np.allclose(K, K.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(K).max())):
            raise ValueError("gain must be symmetric")
        if np.linalg.eigvalsh(K).min() <= 0.0:
            raise ValueError("gain must be positive definite")
        self.K = K
        self.K.setflags(write=False)

    @classmethod
    def scalar(cls, k: float, m: int = 1) -> "GainMatrix":
        return cls(k * np.eye(m))

    @property
    def m(self) -> int:
        return self.K.shape[0]

    def __matmul__(self, other):
        return self.K @ other

    def __repr__(self):
        return f"GainMatrix({self.K.tolist()})"


def sample_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based generator for sample ``index`` of a run seeded with ``seed``.

    The stream depends only on ``seed ^ index``, so samples can be produced in
    any order or on any worker and still come out identical.
    """
    key = (int(seed) ^ int(index)) & 0xFFFFFFFFFFFFFFFF
    return np.random.Generator(np.random.Philox(key=key))
