"""Closed-loop inverse kinematics in actuation space.

    dq_a/dt = J(q_a)^-1 K (x_bar - x(q_a))

where ``x`` is a task evaluated on the shape produced by a shape model and ``J``
the composed task Jacobian. Integrated with explicit Euler.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import Box, GainMatrix
from .tasks import ShapeModel, TaskSpec, closest_point, evaluate

log = logging.getLogger(__name__)

S_JUMP = 0.1  # closest-point jumps larger than this are logged


class SingularityError(np.linalg.LinAlgError):
    pass


class NumericalError(FloatingPointError):
    pass


@dataclass
class ClikConfig:
    K: GainMatrix
    dt: float = 1e-3
    t_end: float = 1.0
    x_bar: np.ndarray | None = None  # defaults to zero: reaching the target
    lam_dls: float = 1e-6
    cond_warn: float = 1e8
    box: Box | None = None  # clamp actuation to this box when given
    snapshot_every: int = 10
    n_snapshot: int = 100  # shape samples per snapshot
    verify_closest: bool = False  # cross-check s_* against a dense scan every step

    def __post_init__(self):
        if not isinstance(self.K, GainMatrix):
            self.K = GainMatrix(self.K)
        if not self.dt > 0.0 or self.t_end < self.dt:
            raise ValueError("need dt > 0 and t_end >= dt")
        if self.lam_dls < 0.0:
            raise ValueError("damping must be non-negative")

    @property
    def n_steps(self) -> int:
        return int(np.floor(self.t_end / self.dt + 1e-9))


@dataclass
class StepInfo:
    x: np.ndarray
    J: np.ndarray
    s_star: float
    cond: float
    err_norm: float
    clamped: bool = False


@dataclass
class Trajectory:
    times: np.ndarray
    q: np.ndarray  # (n + 1, m)
    x: np.ndarray  # (n + 1, p)
    s_star: np.ndarray  # NaN for fixed-coordinate tasks
    cond: np.ndarray
    err: np.ndarray  # |x_bar - x|
    snapshots: list = field(default_factory=list)  # (t, (n_snapshot, d) array)
    clamp_events: int = 0
    s_jumps: list = field(default_factory=list)  # (step, old s_*, new s_*)

    def __len__(self):
        return self.times.size


def _x_bar(spec: TaskSpec, cfg: ClikConfig):
    return np.zeros(spec.p) if cfg.x_bar is None else np.asarray(cfg.x_bar, dtype=float).ravel()


def controller_velocity(J, K, err, lam: float = 0.0):
    """Actuation rate solving ``J v = K err``; damped least squares if ``lam > 0``."""
    rhs = K @ err
    if lam > 0.0:
        return np.linalg.solve(J.T @ J + lam * np.eye(J.shape[1]), J.T @ rhs)
    if not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1.0 / np.finfo(float).eps:
        raise SingularityError("task Jacobian is singular; set a positive damping")
    return np.linalg.solve(J, rhs)


def _info(spec, model, q, cfg):
    x, J, s = evaluate(spec, model, q)
    err = _x_bar(spec, cfg) - x
    with np.errstate(divide="ignore"):
        cond = float(np.linalg.cond(J)) if np.all(np.isfinite(J)) else np.inf
    return StepInfo(x, J, np.nan if spec.fixed else s, cond, float(np.linalg.norm(err))), err


def clik_step(spec: TaskSpec, model: ShapeModel, q_a, cfg: ClikConfig, step: int = 0):
    """One Euler step of the controller. Returns ``(q_next, StepInfo at q_a)``."""
    spec.check_model(model)
    q_a = np.asarray(q_a, dtype=float)
    info, err = _info(spec, model, q_a, cfg)
    return _advance(spec, model, q_a, cfg, info, err, step), info


def _advance(spec, model, q_a, cfg, info, err, step):
    if info.cond > cfg.cond_warn:
        log.warning("step %d: Jacobian condition number %.3e", step, info.cond)
    v = controller_velocity(info.J, cfg.K.K, err, cfg.lam_dls)
    q_next = q_a + cfg.dt * v
    if not np.all(np.isfinite(q_next)):
        raise NumericalError(f"non-finite actuation at step {step}")
    if cfg.box is not None:
        clamped = cfg.box.clamp(q_next)
        if np.any(clamped != q_next):
            info.clamped = True
            log.debug("step %d: actuation clamped to box", step)
        q_next = clamped
    return q_next


def run_clik(spec: TaskSpec, model: ShapeModel, q0, cfg: ClikConfig) -> Trajectory:
    """Integrate the controller over ``[0, t_end]``, recomputing s_* every step."""
    spec.check_model(model)
    if cfg.K.m != spec.p:
        raise ValueError(f"gain is {cfg.K.m}x{cfg.K.m} but the task has dimension {spec.p}")
    n = cfg.n_steps
    q = np.asarray(q0, dtype=float).ravel().copy()
    Q = np.empty((n + 1, model.m))
    X = np.empty((n + 1, spec.p))
    S = np.full(n + 1, np.nan)
    C = np.empty(n + 1)
    E = np.empty(n + 1)
    traj = Trajectory(np.arange(n + 1) * cfg.dt, Q, X, S, C, E)
    grid = np.linspace(0.0, 1.0, cfg.n_snapshot)
    for k in range(n + 1):
        info, err = _info(spec, model, q, cfg)
        if not np.all(np.isfinite(info.x)):
            raise NumericalError(f"non-finite task value at step {k}")
        Q[k], X[k], S[k], C[k], E[k] = q, info.x, info.s_star, info.cond, info.err_norm
        if not spec.fixed:
            if k and abs(S[k] - S[k - 1]) > S_JUMP:
                traj.s_jumps.append((k, S[k - 1], S[k]))
                log.info("step %d: closest point jumped from s=%.4f to s=%.4f", k, S[k - 1], S[k])
            if cfg.verify_closest:
                _verify_closest(model, q, spec.x0, S[k])
        if k % cfg.snapshot_every == 0 or k == n:
            traj.snapshots.append((k * cfg.dt, model.shape(q, grid)))
        if k == n:
            break
        q = _advance(spec, model, q, cfg, info, err, k)
        traj.clamp_events += info.clamped
    return traj


def _verify_closest(model, q, x0, s_star, n_dense=10_000):
    dense = np.linspace(0.0, 1.0, n_dense + 1)
    diff = model.shape(q, dense) - x0
    d2 = np.sum(diff * diff, axis=1)
    r = model.shape(q, s_star) - x0
    if float(r @ r) > d2.min() + 1e-9:
        raise AssertionError(f"s_*={s_star} is not the closest point (dense min at s={dense[d2.argmin()]})")


def error_decay_rate(traj: Trajectory, start: float = 0.0) -> float:
    """Least-squares slope of log |error| against time, from ``start`` on."""
    sel = (traj.times >= start) & (traj.err > 0.0)
    return float(np.polyfit(traj.times[sel], np.log(traj.err[sel]), 1)[0])


# ---------------------------------------------------------------------------
# export


def trajectory_header(m: int, p: int) -> list:
    return (["t"] + [f"q{i + 1}" for i in range(m)] + [f"x{i + 1}" for i in range(p)]
            + ["s_star", "cond"])


def export_trajectory(traj: Trajectory, path, fmt: str = "csv") -> None:
    """Write ``traj`` as CSV or as an SVG figure."""
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(trajectory_header(traj.q.shape[1], traj.x.shape[1]))
            for k in range(len(traj)):
                row = [traj.times[k], *traj.q[k], *traj.x[k], traj.s_star[k], traj.cond[k]]
                w.writerow([repr(float(v)) for v in row])
    elif fmt == "svg":
        _plot(traj, path)
    else:
        raise ValueError(f"unknown format {fmt!r}")


def _plot(traj: Trajectory, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "softclik"}):  # stable element ids
        _draw(plt, traj, path)


def _draw(plt, traj: Trajectory, path) -> None:
    fig, axes = plt.subplots(1, 3, figsize=(13, 4))
    ax = axes[0]
    if len(traj):
        pos = traj.err > 0
        ax.semilogy(traj.times[pos], traj.err[pos])
    ax.set_xlabel("t")
    ax.set_ylabel("task error norm")

    ax = axes[1]
    for i in range(traj.q.shape[1]):
        ax.plot(traj.times, traj.q[:, i], label=f"q{i + 1}")
    ax.set_xlabel("t")
    ax.set_ylabel("actuation")
    if traj.q.shape[1]:
        ax.legend()

    ax = axes[2]
    n = len(traj.snapshots)
    for i, (_, shape) in enumerate(traj.snapshots):
        c = plt.cm.viridis(i / max(n - 1, 1))
        if shape.shape[1] == 2:
            ax.plot(shape[:, 0], shape[:, 1], color=c, lw=0.8)
        else:  # side view
            ax.plot(shape[:, 0], shape[:, 2], color=c, lw=0.8)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x")
    ax.set_ylabel("y" if n and traj.snapshots[0][1].shape[1] == 2 else "z")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
