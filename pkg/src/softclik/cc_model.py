"""Planar constant-curvature segment: closed-form shape and curvature Jacobian."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DomainError

# Below this |q| the closed forms lose digits to cancellation; use series instead.
SERIES_THRESHOLD = 1e-4


@dataclass(frozen=True)
class CcParams:
    L: float = 1.0
    q: float = 0.0

    def __post_init__(self):
        if not self.L > 0.0:
            raise ValueError(f"length must be positive, got {self.L}")
        if not np.isfinite(self.q):
            raise ValueError("curvature must be finite")


def _check_s(s):
    s = np.asarray(s, dtype=float)
    if np.any(~np.isfinite(s)) or np.any(s < 0.0) or np.any(s > 1.0):
        raise DomainError("s must lie in [0, 1]")
    return s


def cc_shape(p: CcParams, s):
    """Position ``(x, y)`` at normalized arc length ``s`` (scalar or array)."""
    s = _check_s(s)
    L, q = p.L, p.q
    if abs(q) < SERIES_THRESHOLD:
        x = L * (s - s**3 * q**2 / 6.0)
        y = L * (s**2 * q / 2.0 - s**4 * q**3 / 24.0)
    else:
        x = L * np.sin(s * q) / q
        y = L * 2.0 * np.sin(0.5 * s * q) ** 2 / q  # 1 - cos without cancellation
    return np.stack([x, y], axis=-1)


def cc_jacobian(p: CcParams, s):
    """Derivative of :func:`cc_shape` with respect to the curvature ``q``."""
    s = _check_s(s)
    L, q = p.L, p.q
    if abs(q) < SERIES_THRESHOLD:
        dx = L * (-(s**3) * q / 3.0 + s**5 * q**3 / 30.0)
        dy = L * (s**2 / 2.0 - s**4 * q**2 / 8.0)
    else:
        sq = s * q
        dx = L * (sq * np.cos(sq) - np.sin(sq)) / q**2
        dy = L * (sq * np.sin(sq) - 2.0 * np.sin(0.5 * sq) ** 2) / q**2
    return np.stack([dx, dy], axis=-1)


class CcModel:
    """Constant-curvature segment as a one-actuator shape model (``q_a = (q,)``)."""

    m = 1
    d = 2

    def __init__(self, L: float = 1.0):
        self.L = float(L)

    def shape(self, q_a, s):
        return cc_shape(CcParams(self.L, float(np.ravel(q_a)[0])), s)

    def partials(self, q_a, s):
        jac = cc_jacobian(CcParams(self.L, float(np.ravel(q_a)[0])), s)
        return jac[..., :, None]
