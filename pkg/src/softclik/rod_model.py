"""Quasi-static active filament with three embedded fibers, hanging under gravity.

The rod is clamped at ``s = 0`` and free at ``s = 1``. Fiber activations set
the intrinsic curvature ``uhat`` and extension ``zhat``; the equilibrium shape
solves the Kirchhoff balance laws

    r' = L zeta d3,            zeta = zhat + (n . d3) / EA
    d_i' = L zhat (u x d_i),   u = uhat + K^-1 R^T m
    n' = -L zhat f,            f = w * gravity
    m' = -r' x n

with primes taken with respect to normalized arc length. The boundary value
problem (``n(1) = m(1) = 0``) is solved by shooting on ``(n(0), m(0))``.

The integrator runs one sample at a time inside a compiled loop, so a sample's
result does not depend on which other samples share its batch.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .core import FIBER_BOX, Box, Centerline, uniform_grid

log = logging.getLogger(__name__)

SUBSTEPS = 4  # RK4 steps per grid interval


class NonphysicalActivation(ValueError):
    """Activation drives the intrinsic extension to zero or below."""


class SolverError(RuntimeError):
    def __init__(self, message, residual=np.nan):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class FiberMap:
    """Curvature and extension generated per unit activation of each fiber.

    Fiber 1 runs straight along the rod, offset along d1, and bends it about d2.
    Fibers 2 and 3 are a mirror-symmetric helical pair winding ``turns`` times;
    they bend the rod towards a direction that rotates along the body and
    twist it in opposite senses.
    """

    c_b: float = 2.0  # 1/m
    c_e: float = 0.1
    c_h: float = 1.2  # 1/m
    tau_c: float = 0.5
    c_e_helix: float = 0.05
    turns: float = 1.5

    m = 3

    def profiles(self, s):
        """Return ``b`` with shape (3, len(s), 3) and ``e`` with shape (3, len(s))."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        phi = 2.0 * np.pi * self.turns * s
        sin, cos = np.sin(phi), np.cos(phi)
        zero = np.zeros_like(s)
        b = np.empty((3, s.size, 3))
        b[0] = np.stack([zero, zero + self.c_b, zero], axis=-1)
        b[1] = self.c_h * np.stack([-sin, cos, zero - self.tau_c], axis=-1)
        b[2] = self.c_h * np.stack([sin, cos, zero + self.tau_c], axis=-1)
        e = np.empty((3, s.size))
        e[0] = self.c_e
        e[1] = self.c_e_helix
        e[2] = self.c_e_helix
        return b, e


@dataclass(frozen=True)
class RodParams:
    L: float = 0.18  # m
    EI1: float = 1e-3  # N m^2
    EI2: float = 1e-3
    GJ: float = 8e-4
    EA: float = 50.0  # N
    w: float = 0.25  # N/m
    gravity: tuple = (0.0, 0.0, -1.0)
    fibers: FiberMap = field(default_factory=FiberMap)

    def __post_init__(self):
        if min(self.L, self.EI1, self.EI2, self.GJ, self.EA) <= 0.0:
            raise ValueError("length and stiffnesses must be positive")
        if self.w < 0.0:
            raise ValueError("weight density must be non-negative")
        g = np.asarray(self.gravity, dtype=float)
        if g.shape != (3,) or abs(np.linalg.norm(g) - 1.0) > 1e-12:
            raise ValueError("gravity must be a unit 3-vector")
        object.__setattr__(self, "gravity", tuple(float(x) for x in g))

    @property
    def m(self) -> int:
        return self.fibers.m

    def digest(self) -> int:
        """Stable 64-bit hash of all parameters."""
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


@dataclass
class BvpSolution:
    centerline: Centerline
    frames: np.ndarray  # (n_s, 4) unit quaternions (w, x, y, z)
    forces: np.ndarray  # (n_s, 3)
    moments: np.ndarray  # (n_s, 3)
    xi: np.ndarray  # (6,) base force and moment
    residual: float
    iterations: int

    @property
    def tip(self):
        return self.centerline.values[-1]


def intrinsic_strains(p: RodParams, q_a, s):
    """Intrinsic curvature ``uhat`` (..., 3) and extension ``zhat`` (...) at ``s``."""
    q_a = np.asarray(q_a, dtype=float)
    b, e = p.fibers.profiles(s)
    uhat = sum(q_a[i] * b[i] for i in range(p.m))
    zhat = 1.0 + sum(q_a[i] * e[i] for i in range(p.m))
    if np.any(zhat <= 0.0):
        raise NonphysicalActivation(f"activation {q_a} gives non-positive extension")
    if np.ndim(s) == 0:
        return uhat[0], zhat[0]
    return uhat, zhat


# ---------------------------------------------------------------------------
# quaternion helpers; quaternions are stored component-first: q[0..3] = w, x, y, z


def base_quaternion(gravity) -> np.ndarray:
    """Rotation taking e3 onto the gravity direction (so the rest rod hangs)."""
    g = np.asarray(gravity, dtype=float)
    c = g[2]
    if c < -1.0 + 1e-12:
        return np.array([0.0, 1.0, 0.0, 0.0])
    q = np.array([1.0 + c, -g[1], g[0], 0.0])
    return q / np.linalg.norm(q)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rod_rhs(p: RodParams, q_a, s, r, R, n, m, gscale=1.0):
    """Derivatives ``(r', R', n', m')`` of the balance laws at a single point.

    ``R`` is a rotation matrix with columns d1, d2, d3; ``R'`` is returned in
    the same form. The shooting solver uses a compiled copy of these equations
    acting on a quaternion state.
    """
    uhat, zhat = intrinsic_strains(p, q_a, s)
    R = np.asarray(R, dtype=float)
    m_loc = R.T @ np.asarray(m, dtype=float)
    u = uhat + m_loc / np.array([p.EI1, p.EI2, p.GJ])
    d3 = R[:, 2]
    zeta = zhat + float(np.dot(n, d3)) / p.EA
    dr = p.L * zeta * d3
    u_world = R @ u
    dR = p.L * zhat * np.cross(u_world[None, :], R.T).T
    dn = -p.L * zhat * p.w * gscale * np.asarray(p.gravity)
    dm = -np.cross(dr, n)
    return dr, dR, dn, dm


# ---------------------------------------------------------------------------
# shooting


@njit(cache=True, error_model="numpy")
def _rhs_kernel(y, u0h, u1h, u2h, zh, prm, out):
    L, EI1, EI2, GJ, EA, wg, g0, g1, g2 = (
        prm[0], prm[1], prm[2], prm[3], prm[4], prm[5], prm[6], prm[7], prm[8]
    )
    qw, qx, qy, qz = y[3], y[4], y[5], y[6]
    n0, n1, n2 = y[7], y[8], y[9]
    m0, m1, m2 = y[10], y[11], y[12]

    xx, yy, zz = qx * qx, qy * qy, qz * qz
    xy, xz, yz = qx * qy, qx * qz, qy * qz
    wx, wy, wz = qw * qx, qw * qy, qw * qz
    R00, R01, R02 = 1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)
    R10, R11, R12 = 2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)
    R20, R21, R22 = 2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)

    # material-frame moment -> actual curvature
    u0 = u0h + (R00 * m0 + R10 * m1 + R20 * m2) / EI1
    u1 = u1h + (R01 * m0 + R11 * m1 + R21 * m2) / EI2
    u2 = u2h + (R02 * m0 + R12 * m1 + R22 * m2) / GJ

    lz = L * (zh + (n0 * R02 + n1 * R12 + n2 * R22) / EA)
    r0, r1, r2 = lz * R02, lz * R12, lz * R22

    # q' = 1/2 q * (0, L zhat u)
    h = 0.5 * L * zh
    o0, o1, o2 = h * u0, h * u1, h * u2

    gw = L * zh * wg
    out[0] = r0
    out[1] = r1
    out[2] = r2
    out[3] = -qx * o0 - qy * o1 - qz * o2
    out[4] = qw * o0 + qy * o2 - qz * o1
    out[5] = qw * o1 + qz * o0 - qx * o2
    out[6] = qw * o2 + qx * o1 - qy * o0
    out[7] = -gw * g0
    out[8] = -gw * g1
    out[9] = -gw * g2
    out[10] = -(r1 * n2 - r2 * n1)
    out[11] = -(r2 * n0 - r0 * n2)
    out[12] = -(r0 * n1 - r1 * n0)


@njit(cache=True, error_model="numpy")
def _integrate_kernel(y0, samp, uhat, zhat, prm, n_steps, h, substeps, nodes):
    rows = y0.shape[0]
    record = nodes.shape[0] > 0
    tips = np.empty((rows, 13))
    y = np.empty(13)
    t = np.empty(13)
    k1 = np.empty(13)
    k2 = np.empty(13)
    k3 = np.empty(13)
    k4 = np.empty(13)
    hh = 0.5 * h
    h6 = h / 6.0
    for r in range(rows):
        s = samp[r]
        for i in range(13):
            y[i] = y0[r, i]
        if record:
            for i in range(13):
                nodes[r, 0, i] = y[i]
        for k in range(n_steps):
            j = 2 * k
            _rhs_kernel(y, uhat[j, s, 0], uhat[j, s, 1], uhat[j, s, 2], zhat[j, s], prm, k1)
            for i in range(13):
                t[i] = y[i] + hh * k1[i]
            _rhs_kernel(t, uhat[j + 1, s, 0], uhat[j + 1, s, 1], uhat[j + 1, s, 2],
                        zhat[j + 1, s], prm, k2)
            for i in range(13):
                t[i] = y[i] + hh * k2[i]
            _rhs_kernel(t, uhat[j + 1, s, 0], uhat[j + 1, s, 1], uhat[j + 1, s, 2],
                        zhat[j + 1, s], prm, k3)
            for i in range(13):
                t[i] = y[i] + h * k3[i]
            _rhs_kernel(t, uhat[j + 2, s, 0], uhat[j + 2, s, 1], uhat[j + 2, s, 2],
                        zhat[j + 2, s], prm, k4)
            for i in range(13):
                y[i] = y[i] + h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            qn = np.sqrt(y[3] * y[3] + y[4] * y[4] + y[5] * y[5] + y[6] * y[6])
            for i in range(3, 7):
                y[i] = y[i] / qn
            if record and (k + 1) % substeps == 0:
                for i in range(13):
                    nodes[r, (k + 1) // substeps, i] = y[i]
        for i in range(13):
            tips[r, i] = y[i]
    return tips


class _Profiles:
    """Intrinsic strains of a batch of samples at every RK4 stage point."""

    def __init__(self, p: RodParams, Q: np.ndarray, n_s: int):
        self.n_s = n_s
        self.n_steps = SUBSTEPS * (n_s - 1)
        self.h = 1.0 / self.n_steps
        s_half = np.arange(2 * self.n_steps + 1) * (0.5 * self.h)
        b, e = p.fibers.profiles(s_half)
        # explicit sums over fibers keep every sample independent of its batch
        uhat = np.zeros((s_half.size, Q.shape[0], 3))
        zhat = np.ones((s_half.size, Q.shape[0]))
        for i in range(p.m):
            uhat += b[i][:, None, :] * Q[None, :, i, None]
            zhat += e[i][:, None] * Q[None, :, i]
        if np.any(zhat <= 0.0):
            bad = np.unique(np.nonzero(zhat <= 0.0)[1])
            raise NonphysicalActivation(f"non-positive extension for samples {bad.tolist()}")
        self.uhat = uhat
        self.zhat = zhat
        # reduce along contiguous rows: numpy sums strided axes in a different order
        self.mean_zhat = np.trapezoid(np.ascontiguousarray(zhat.T), s_half, axis=1)

    def take(self, idx):
        sub = object.__new__(_Profiles)
        sub.n_s, sub.n_steps, sub.h = self.n_s, self.n_steps, self.h
        sub.uhat = np.ascontiguousarray(self.uhat[:, idx])
        sub.zhat = np.ascontiguousarray(self.zhat[:, idx])
        sub.mean_zhat = self.mean_zhat[idx]
        return sub


def _kernel_params(p: RodParams, gscale: float) -> np.ndarray:
    return np.array([p.L, p.EI1, p.EI2, p.GJ, p.EA, p.w * gscale, *p.gravity])


def _integrate(p: RodParams, prof: _Profiles, xi, samp, gscale, record=False):
    """RK4 from the clamped base with base loads ``xi`` (rows, 6).

    ``samp[r]`` selects the sample whose strain profile row ``r`` uses.
    Returns tip states (rows, 13), plus node states (rows, n_s, 13) if ``record``.
    """
    rows = xi.shape[0]
    y0 = np.zeros((rows, 13))
    y0[:, 3:7] = base_quaternion(p.gravity)
    y0[:, 7:13] = xi
    nodes = np.empty((rows, prof.n_s, 13) if record else (0, 1, 13))
    tips = _integrate_kernel(y0, np.asarray(samp, dtype=np.int64), prof.uhat, prof.zhat,
                             _kernel_params(p, gscale), prof.n_steps, prof.h, SUBSTEPS, nodes)
    return (tips, nodes) if record else tips


def _initial_guess(p: RodParams, prof: _Profiles):
    """Base force from global force balance, base moment from the unloaded shape."""
    S = prof.zhat.shape[1]
    _, nodes = _integrate(p, prof, np.zeros((S, 6)), np.arange(S), 0.0, record=True)
    r = nodes[:, :, 0:3]  # (S, n_s, 3)
    s_nodes = uniform_grid(prof.n_s)
    load = (p.L * p.w) * prof.zhat[:: 2 * SUBSTEPS].T  # (S, n_s) weight per unit s
    g = np.asarray(p.gravity)
    xi = np.zeros((S, 6))
    xi[:, 0:3] = (p.L * p.w) * prof.mean_zhat[:, None] * g[None, :]
    # m(0) = integral of r x (load g)
    xi[:, 3:6] = np.trapezoid(np.cross(r, g) * load[:, :, None], s_nodes, axis=1)
    return xi


def _newton(p, prof, xi, gscale, tol, fd_step, max_iter):
    """Damped Newton on the free-end residual for every sample in ``prof``.

    Returns (xi, residual norms, iterations, converged mask).
    """
    S = xi.shape[0]
    xi = xi.copy()
    F = _integrate(p, prof, xi, np.arange(S), gscale)[:, 7:13]
    res = np.linalg.norm(F, axis=1)
    iters = np.zeros(S, dtype=int)
    stalled = np.zeros(S, dtype=bool)
    for _ in range(max_iter):
        act = np.nonzero((res > tol) & ~stalled)[0]
        if act.size == 0:
            break
        # forward-difference Jacobian, six shots per active sample
        shots = np.repeat(xi[act], 6, axis=0)
        shots[np.arange(shots.shape[0]), np.tile(np.arange(6), act.size)] += fd_step
        Fp = _integrate(p, prof, shots, np.repeat(act, 6), gscale)[:, 7:13]
        J = (Fp.reshape(act.size, 6, 6) - F[act, None, :]) / fd_step  # [a, column, row]
        J = np.transpose(J, (0, 2, 1))
        delta = np.empty((act.size, 6))
        for a in range(act.size):
            try:
                delta[a] = np.linalg.solve(J[a], -F[act[a]])
            except np.linalg.LinAlgError:
                delta[a] = np.linalg.lstsq(J[a], -F[act[a]], rcond=None)[0]

        # Armijo backtracking on 1/2 |F|^2, floor on the step length
        alpha = np.ones(act.size)
        pending = np.arange(act.size)
        while pending.size:
            idx = act[pending]
            trial = xi[idx] + alpha[pending, None] * delta[pending]
            Ft = _integrate(p, prof, trial, idx, gscale)[:, 7:13]
            ft = np.sum(Ft * Ft, axis=1)
            ok = np.isfinite(ft) & (ft <= (1.0 - 1e-4 * alpha[pending]) * res[idx] ** 2)
            acc = idx[ok]
            xi[acc], F[acc], res[acc] = trial[ok], Ft[ok], np.sqrt(ft[ok])
            iters[idx] += ok
            alpha[pending[~ok]] *= 0.5
            dead = pending[~ok][alpha[pending[~ok]] < 1e-4]
            stalled[act[dead]] = True
            iters[act[dead]] += 1
            pending = pending[~ok]
            pending = pending[alpha[pending] >= 1e-4]
    return xi, res, iters, res <= tol


def _solve_batch(p, Q, n_s, tol, fd_step=1e-7, max_iter=30, xi0=None):
    prof = _Profiles(p, Q, n_s)
    S = Q.shape[0]
    xi = _initial_guess(p, prof) if xi0 is None else np.array(xi0, dtype=float).reshape(S, 6)
    xi, res, iters, ok = _newton(p, prof, xi, 1.0, tol, fd_step, max_iter)

    bad = np.nonzero(~ok)[0]
    if bad.size:
        log.info("gravity continuation for %d sample(s)", bad.size)
        sub = prof.take(bad)
        xb = np.zeros((bad.size, 6))
        for lam in (0.0, 0.25, 0.5, 0.75, 1.0):
            xb, rb, ib, okb = _newton(p, sub, xb, lam, tol, fd_step, max_iter)
            iters[bad] += ib
        xi[bad], res[bad], ok[bad] = xb, rb, okb

    _, nodes = _integrate(p, prof, xi, np.arange(S), 1.0, record=True)
    return nodes, xi, res, iters, ok


def solve_bvp_batch(p: RodParams, Q, n_s: int = 100, tol: float = 1e-10):
    """Solve many activations at once.

    Returns ``(shapes, residuals, ok)`` with ``shapes`` of shape (S, n_s, 3).
    Failed samples are flagged in ``ok``, not raised.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if n_s < 2:
        raise ValueError("n_s must be >= 2")
    _, e = p.fibers.profiles(np.linspace(0.0, 1.0, 2 * SUBSTEPS * (n_s - 1) + 1))
    physical = np.all(1.0 + Q @ e > 0.0, axis=1)
    shapes = np.full((Q.shape[0], n_s, 3), np.nan)
    res = np.full(Q.shape[0], np.inf)
    ok = np.zeros(Q.shape[0], dtype=bool)
    idx = np.nonzero(physical)[0]
    if idx.size:
        nodes, _, res[idx], _, ok[idx] = _solve_batch(p, Q[idx], n_s, tol)
        shapes[idx] = nodes[:, :, 0:3]
    ok &= np.all(np.isfinite(shapes), axis=(1, 2))
    return shapes, res, ok


def solve_bvp(p: RodParams, q_a, n_s: int = 100, tol: float = 1e-10, xi0=None,
              box: Box | None = FIBER_BOX) -> BvpSolution:
    """Equilibrium of the hanging rod for activation ``q_a``.

    Raises
    ------
    SolverError
        If Newton fails, including after gravity continuation.
    """
    q_a = np.asarray(q_a, dtype=float).reshape(1, -1)
    if q_a.shape[1] != p.m:
        raise ValueError(f"expected {p.m} activations, got {q_a.shape[1]}")
    if box is not None and not box.contains(q_a[0], atol=1e-3):
        raise ValueError(f"activation {q_a[0]} outside {box}")
    if n_s < 2:
        raise ValueError("n_s must be >= 2")
    nodes, xi, res, iters, ok = _solve_batch(p, q_a, n_s, tol, xi0=xi0)
    if not ok[0]:
        last = float(res[0]) if np.isfinite(res[0]) else np.inf
        raise SolverError("shooting did not converge", last)
    y = nodes[0]
    return BvpSolution(
        centerline=Centerline(y[:, 0:3]),
        frames=y[:, 3:7].copy(),
        forces=y[:, 7:10].copy(),
        moments=y[:, 10:13].copy(),
        xi=xi[0].copy(),
        residual=float(res[0]),
        iterations=int(iters[0]),
    )


def shape_partials(p: RodParams, q_a, n_s: int = 100, tol: float = 1e-12, h: float = 1e-4,
                   base: BvpSolution | None = None) -> np.ndarray:
    """Central-difference sensitivities of the centerline, shape (m, n_s, 3)."""
    q_a = np.asarray(q_a, dtype=float)
    if base is None:
        base = solve_bvp(p, q_a, n_s, tol)
    cols = []
    for i in range(p.m):
        e = np.zeros(p.m)
        e[i] = h
        plus = solve_bvp(p, q_a + e, n_s, tol, xi0=base.xi, box=None)
        minus = solve_bvp(p, q_a - e, n_s, tol, xi0=base.xi, box=None)
        cols.append((plus.centerline.values - minus.centerline.values) / (2.0 * h))
    return np.stack(cols)
