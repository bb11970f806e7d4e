"""Constant-curvature CLIK: a one-actuator segment reaching a point.

Runs the fixed-tip and the closest-point distance tasks from q = 0.1 with
K = 10 and plots the shape sequence and the error on a log axis. The straight
line on the log plot has slope -K: the feedback law turns the task error into
a first-order linear system.

    python demos/cc_clik.py [--out demos/out]
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from softclik import CcModel, ClikConfig, GainMatrix, TaskSpec, run_clik
from softclik.cc_model import CcParams, cc_shape
from softclik.clik import error_decay_rate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="demos/out")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    model = CcModel(1.0)
    cfg = ClikConfig(GainMatrix.scalar(10.0), dt=1e-3, t_end=1.0, lam_dls=0.0, snapshot_every=100)
    runs = {
        "dist_fixed": TaskSpec("dist_fixed", cc_shape(CcParams(1.0, 2.0), 1.0), 1.0),
        "dist_opt": TaskSpec("dist_opt", [0.3, 0.5]),
    }

    fig, axes = plt.subplots(2, 2, figsize=(9, 8))
    for row, (name, spec) in enumerate(runs.items()):
        traj = run_clik(spec, model, [0.1], cfg)
        print(f"{name:>10}: q {traj.q[0, 0]:.3f} -> {traj.q[-1, 0]:.6f}, "
              f"error ratio {traj.err[-1] / traj.err[0]:.2e} (e^-10 = {np.exp(-10):.2e}), "
              f"fitted rate {error_decay_rate(traj):.2f}")
        ax = axes[row, 0]
        for t, pts in traj.snapshots:
            ax.plot(pts[:, 0], pts[:, 1], color=plt.cm.viridis(t), lw=1)
        ax.plot(*spec.x0, "r*", ms=12)
        if not spec.fixed:
            s = traj.s_star[-1]
            ax.plot(*cc_shape(CcParams(1.0, traj.q[-1, 0]), s), "ko", mfc="none")
        ax.set_aspect("equal")
        ax.set_title(f"{name}: shapes every 0.1 s")
        ax = axes[row, 1]
        ax.semilogy(traj.times, traj.err, label="|error|")
        ax.semilogy(traj.times, traj.err[0] * np.exp(-10 * traj.times), "k--", lw=0.8, label="$e^{-Kt}$")
        ax.set_xlabel("t")
        ax.legend()
        if not spec.fixed:
            ax2 = ax.twinx()
            ax2.plot(traj.times, traj.s_star, color="tab:orange", lw=0.8)
            ax2.set_ylabel("$s_*$", color="tab:orange")
    fig.tight_layout()
    fig.savefig(out / "cc_clik.png", dpi=120)
    print(f"figure written to {out / 'cc_clik.png'}")


if __name__ == "__main__":
    main()
