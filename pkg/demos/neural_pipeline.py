"""Rod data -> operator network -> neural CLIK, end to end at a small scale.

1. Solve the three-fiber rod for N random activations in [-1.67, 0]^3.
2. Fit the branch/trunk network to the sampled centerlines.
3. Drive the learned model to a tip target and to a closest-point target with
   K = 8 I, clamping the activations to the training box.

The defaults finish in a few minutes on one core; ``--n 20000 --epochs 100``
is the desk-scale setting used by the acceptance tests.

    python demos/neural_pipeline.py [--n 2000] [--epochs 20] [--out demos/out]
"""

import argparse
import time
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from softclik import ClikConfig, GainMatrix, OperatorNet, RodParams, TaskSpec, run_clik
from softclik import dataset, trainer
from softclik.clik import error_decay_rate
from softclik.core import FIBER_BOX
from softclik.neuralop import operator_eval


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="demos/out")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    data = dataset.generate(RodParams(), FIBER_BOX, N=args.n, n_s=100, seed=args.seed)
    print(f"generated {data.N} centerlines in {time.perf_counter() - t0:.1f}s ({data.failed} redrawn)")

    train_set, val_set, test_set = dataset.split(data, seed=args.seed)
    t0 = time.perf_counter()
    net, hist = trainer.train(OperatorNet.create(seed=args.seed), train_set, val_set,
                              trainer.TrainConfig(epochs=args.epochs, seed=args.seed))
    m = trainer.evaluate(net, test_set)
    print(f"trained {args.epochs} epochs in {time.perf_counter() - t0:.1f}s, best epoch {hist.best_epoch}: "
          f"test L2 rel {m.l2_relative:.3e}, physical MSE {m.mse_physical:.3e}")
    trainer.save_checkpoint(net, out / "demo.ckpt")

    # targets the learned model can reach: its own prediction at an unseen activation
    q_goal = np.array([-1.2, -0.3, -0.9])
    tasks = {
        "pos_fixed": TaskSpec("pos_fixed", operator_eval(net, q_goal, 1.0), 1.0),
        "pos_opt": TaskSpec("pos_opt", operator_eval(net, q_goal, 1.0)),
    }
    cfg = ClikConfig(GainMatrix(8.0 * np.eye(3)), dt=1e-3, t_end=1.0, box=net.q_box, snapshot_every=100)
    fig = plt.figure(figsize=(10, 4.5))
    err_ax = fig.add_subplot(1, 3, 3)
    for k, (name, spec) in enumerate(tasks.items()):
        traj = run_clik(spec, net, np.zeros(3), cfg)
        print(f"{name:>9}: error {traj.err[0]:.4f} -> {traj.err[-1]:.2e} m, "
              f"late rate {error_decay_rate(traj, 0.5):.2f}, clamps {traj.clamp_events}, "
              f"q_final {np.round(traj.q[-1], 3)}")
        ax = fig.add_subplot(1, 3, k + 1, projection="3d")
        for t, pts in traj.snapshots:
            ax.plot(*pts.T, color=plt.cm.viridis(t), lw=1)
        ax.scatter(*spec.x0, color="r", marker="*", s=80)
        ax.set_title(name)
        err_ax.semilogy(traj.times, traj.err, label=name)
    err_ax.set_xlabel("t")
    err_ax.legend()
    fig.tight_layout()
    fig.savefig(out / "neural_clik.png", dpi=120)
    print(f"figure written to {out / 'neural_clik.png'}")


if __name__ == "__main__":
    main()
