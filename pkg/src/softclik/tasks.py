"""Shape-to-task functionals and the composed actuation-to-task Jacobian.

A shape model is anything exposing ``m`` (number of actuators), ``d``
(ambient dimension) and two methods, both vectorized over ``s``:

    shape(q_a, s)     -> (d,) or (n, d)
    partials(q_a, s)  -> (d, m) or (n, d, m)

Every point-evaluation task has a Dirac L2 gradient, so the composed Jacobian
only needs the model partials at a single body coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

KINDS = ("pos_fixed", "pos_opt", "dist_fixed", "dist_opt")

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class ShapeModel(Protocol):
    m: int
    d: int

    def shape(self, q_a, s) -> np.ndarray: ...

    def partials(self, q_a, s) -> np.ndarray: ...


class TaskDimensionError(ValueError):
    """Task and model dimensions do not form a square inversion problem."""


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    x0: np.ndarray
    s_bar: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; expected one of {KINDS}")
        x0 = np.array(self.x0, dtype=float).ravel()
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        if self.fixed:
            if self.s_bar is None or not 0.0 <= self.s_bar <= 1.0:
                raise ValueError(f"{self.kind} needs s_bar in [0, 1], got {self.s_bar}")
            object.__setattr__(self, "s_bar", float(self.s_bar))

    @property
    def fixed(self) -> bool:
        return self.kind.endswith("_fixed")

    @property
    def p(self) -> int:
        return self.x0.size if self.kind.startswith("pos") else 1

    def check_model(self, model: ShapeModel, square: bool = True) -> None:
        if self.x0.size != model.d:
            raise TaskDimensionError(
                f"target has {self.x0.size} coordinates but the model lives in R^{model.d}"
            )
        if square and self.p != model.m:
            raise TaskDimensionError(
                f"{self.kind} has dimension {self.p} but the model has {model.m} actuator(s); "
                "the inverse needs a square Jacobian (task dimension == actuator count)"
            )


def golden_section(f, a: float, b: float, tol: float = 1e-8) -> float:
    """Minimize a unimodal ``f`` on ``[a, b]``; returns the midpoint of the final bracket."""
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def closest_point(model: ShapeModel, q_a, x0, n_coarse: int = 100, tol: float = 1e-8) -> float:
    """Body coordinate nearest to ``x0``: coarse scan, then golden-section refinement.

    Ties on the coarse grid go to the smaller ``s``; the endpoints are admissible.
    """
    x0 = np.asarray(x0, dtype=float)
    grid = np.linspace(0.0, 1.0, n_coarse + 1)
    diff = model.shape(q_a, grid) - x0
    dist = 0.5 * np.sum(diff * diff, axis=1)
    i = int(np.argmin(dist))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n_coarse)]

    def f(s):
        r = model.shape(q_a, s) - x0
        return 0.5 * float(r @ r)

    s_star = golden_section(f, lo, hi, tol)
    best = f(s_star)
    # golden section never samples the bracket ends exactly
    for s_end in (lo, hi):
        v = dist[i] if s_end == grid[i] else f(s_end)
        if v < best or (v == best and s_end < s_star):
            s_star, best = s_end, v
    return float(s_star)


def _coordinate(spec: TaskSpec, model, q_a, s_star):
    if spec.fixed:
        return spec.s_bar
    return closest_point(model, q_a, spec.x0) if s_star is None else s_star


def task_value(spec: TaskSpec, model: ShapeModel, q_a, s_star: float | None = None) -> np.ndarray:
    """Task vector, shape (p,). ``s_star`` may be passed to skip the closest-point search."""
    s = _coordinate(spec, model, q_a, s_star)
    e = model.shape(q_a, s) - spec.x0
    if spec.kind.startswith("pos"):
        return e
    return np.array([0.5 * float(e @ e)])


def composed_jacobian(spec: TaskSpec, model: ShapeModel, q_a, s_star: float | None = None) -> np.ndarray:
    """End-to-end Jacobian, shape (p, m).

    For the closest-point variants ``s_star`` is held fixed; the dependence of
    the minimizer on ``q_a`` drops out at a nondegenerate minimum.
    """
    s = _coordinate(spec, model, q_a, s_star)
    P = model.partials(q_a, s)
    if spec.kind.startswith("pos"):
        return P
    e = model.shape(q_a, s) - spec.x0
    return (e @ P)[None, :]


def evaluate(spec: TaskSpec, model: ShapeModel, q_a):
    """Task value, Jacobian and the body coordinate used, from a single search."""
    s = _coordinate(spec, model, q_a, None)
    return task_value(spec, model, q_a, s), composed_jacobian(spec, model, q_a, s), s


class LinearShapeModel:
    """Shape linear in the actuation, ``r(s) = A(s) q_a``, for testing controllers.

    ``A`` maps an array of ``s`` values to an array of shape (n, d, m).
    """

    def __init__(self, A, d: int, m: int):
        self._A = A
        self.d = d
        self.m = m

    def partials(self, q_a, s):
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        out = self._A(s_arr)
        return out[0] if np.ndim(s) == 0 else out

    def shape(self, q_a, s):
        return self.partials(q_a, s) @ np.asarray(q_a, dtype=float)
