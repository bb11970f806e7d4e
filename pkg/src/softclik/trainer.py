"""Adam training of the operator network, evaluation metrics and checkpoints.

Checkpoint layout (little endian)::

    8   magic b"SOFTCKPT"
    4   u32 version (1)
    4   u32 v, 4 u32 d, 4 u32 m
    4   u32 number of branch sizes nb, 4 u32 number of trunk sizes nt
    4*nb + 4*nt   u32 layer sizes
    f64 q_lo (m), q_hi (m), out_mean (d), out_std (d)
    f64 parameters: branch (W0, b0, W1, b1, ...) then trunk, row-major
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import Box
from .dataset import Dataset, FormatError
from .neuralop import MlpParams, OperatorNet, grid_backward, predict_grid

log = logging.getLogger(__name__)

MAGIC = b"SOFTCKPT"
VERSION = 1
_FIXED = struct.Struct("<8sIIIIII")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 32
    lr0: float = 1e-3
    lr_final: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 < self.lr_final <= self.lr0:
            raise ValueError("need 0 < lr_final <= lr0")

    def lr(self, epoch: float) -> float:
        """Geometric decay from ``lr0`` at epoch 0 to ``lr_final`` at ``epochs``."""
        return self.lr0 * (self.lr_final / self.lr0) ** (epoch / self.epochs)


@dataclass
class Metrics:
    mse: float  # normalized output space
    mse_physical: float
    l2_relative: float

    def lines(self) -> str:
        return (f"mse={self.mse!r}\nmse_physical={self.mse_physical!r}\n"
                f"l2_relative={self.l2_relative!r}\n")


@dataclass
class History:
    epoch: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    best_epoch: int = -1

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "lr", "train_mse", "val_mse"])
            for row in zip(self.epoch, self.lr, self.train_mse, self.val_mse):
                w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


class Adam:
    """Adam on a list of arrays, updated in place."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def fit_output_scaling(net: OperatorNet, ds: Dataset) -> None:
    """Standardize each output coordinate by its training-set mean and spread."""
    flat = ds.shapes.reshape(-1, ds.d)
    net.out_mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    net.out_std = np.where(std > 1e-12, std, 1.0)


def _normalized_targets(net, ds):
    return (ds.shapes - net.out_mean) / net.out_std


def _mse(net, ds, chunk=2048) -> float:
    total = 0.0
    grid = ds.grid
    for k in range(0, ds.N, chunk):
        err = predict_grid(net, ds.q[k:k + chunk], grid) - _normalized_targets(net, ds.subset(slice(k, k + chunk)))
        total += float(np.sum(err * err))
    return total / ds.shapes.size


def train(net: OperatorNet, train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig,
          fit_scaling: bool = True, progress=None):
    """Minibatch Adam with per-epoch learning rate decay.

    A batch holds ``batch_size`` centerlines; each contributes one training
    triple (q_a, s_k, r_k) per grid node. Returns the parameter snapshot with
    the lowest validation loss and the training history.
    """
    if train_ds.N == 0 or val_ds.N == 0:
        raise ValueError("training and validation sets must be non-empty")
    if train_ds.m != net.m or train_ds.d != net.d:
        raise ValueError(f"dataset (m={train_ds.m}, d={train_ds.d}) does not fit the network "
                         f"(m={net.m}, d={net.d})")
    net = net.copy()
    if fit_scaling:
        fit_output_scaling(net, train_ds)
    grid = train_ds.grid
    targets = _normalized_targets(net, train_ds)
    opt = Adam(net.parameters(), cfg.beta1, cfg.beta2, cfg.eps)
    hist = History()
    best, best_val = net.copy(), np.inf

    for epoch in range(cfg.epochs):
        lr = cfg.lr(epoch)
        perm = np.random.Generator(np.random.Philox(key=cfg.seed ^ (epoch + 1))).permutation(train_ds.N)
        running = 0.0
        n_batches = 0
        for b, start in enumerate(range(0, train_ds.N, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            loss, grads = grid_backward(net, train_ds.q[idx], grid, targets[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}, lr {lr:.3e}")
            opt.step(grads, lr)
            running += loss
            n_batches += 1
        val = _mse(net, val_ds)
        if not np.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}, lr {lr:.3e}")
        hist.epoch.append(epoch)
        hist.lr.append(lr)
        hist.train_mse.append(running / n_batches)
        hist.val_mse.append(val)
        if val < best_val:
            best, best_val = net.copy(), val
            hist.best_epoch = epoch
            if cfg.checkpoint_path:
                save_checkpoint(best, cfg.checkpoint_path)
        if progress:
            progress(epoch, lr, running / n_batches, val)
        log.debug("epoch %d lr %.3e train %.3e val %.3e", epoch, lr, running / n_batches, val)
    return best, hist


def evaluate(net: OperatorNet, ds: Dataset, chunk: int = 2048) -> Metrics:
    """MSE in normalized and physical units, and the mean relative L2 error per centerline."""
    if ds.N == 0:
        raise ValueError("empty dataset")
    grid = ds.grid
    sq_norm = sq_phys = rel = 0.0
    for k in range(0, ds.N, chunk):
        pred_n = predict_grid(net, ds.q[k:k + chunk], grid)
        true = ds.shapes[k:k + chunk]
        err_n = pred_n - (true - net.out_mean) / net.out_std
        err = net.denormalize_out(pred_n) - true
        sq_norm += float(np.sum(err_n * err_n))
        sq_phys += float(np.sum(err * err))
        num = np.sqrt(np.sum(err * err, axis=(1, 2)))
        den = np.sqrt(np.sum(true * true, axis=(1, 2)))
        rel += float(np.sum(num / den))
    return Metrics(sq_norm / ds.shapes.size, sq_phys / ds.shapes.size, rel / ds.N)


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_bytes(net: OperatorNet) -> bytes:
    bs, ts = net.branch.sizes, net.trunk.sizes
    head = _FIXED.pack(MAGIC, VERSION, net.v, net.d, net.m, len(bs), len(ts))
    head += struct.pack(f"<{len(bs) + len(ts)}I", *bs, *ts)
    floats = [net.q_box.lo, net.q_box.hi, net.out_mean, net.out_std]
    floats += [np.ravel(p) for p in net.parameters()]
    return head + np.concatenate(floats).astype("<f8").tobytes()


def save_checkpoint(net: OperatorNet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(net))


def checkpoint_from_bytes(blob: bytes) -> OperatorNet:
    if len(blob) < _FIXED.size:
        raise FormatError("truncated checkpoint header", len(blob))
    magic, version, v, d, m, nb, nt = _FIXED.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 8)
    if not (2 <= nb <= 64 and 2 <= nt <= 64):
        raise FormatError(f"implausible layer counts {nb}, {nt}", 24)
    off = _FIXED.size
    if len(blob) < off + 4 * (nb + nt):
        raise FormatError("truncated layer table", len(blob))
    sizes = struct.unpack_from(f"<{nb + nt}I", blob, off)
    off += 4 * (nb + nt)
    bs, ts = list(sizes[:nb]), list(sizes[nb:])
    if bs[0] != m or ts[0] != 1 or bs[-1] != v * d or ts[-1] != v * d or min(sizes) < 1:
        raise FormatError(f"layer sizes {bs} / {ts} inconsistent with v={v}, d={d}, m={m}", _FIXED.size)
    n_par = sum(i * o + o for i, o in zip(bs[:-1], bs[1:])) + sum(i * o + o for i, o in zip(ts[:-1], ts[1:]))
    n_float = 2 * m + 2 * d + n_par
    if len(blob) != off + 8 * n_float:
        raise FormatError(f"expected {off + 8 * n_float} bytes, found {len(blob)}", min(len(blob), off + 8 * n_float))
    flat = np.frombuffer(blob, dtype="<f8", offset=off).astype(float)
    pos = 0

    def take(n, shape=None):
        nonlocal pos
        out = flat[pos:pos + n]
        pos += n
        return out.reshape(shape) if shape else out.copy()

    lo, hi, mean, std = take(m), take(m), take(d), take(d)

    def mlp(sizes):
        W, b = [], []
        for i, o in zip(sizes[:-1], sizes[1:]):
            W.append(take(i * o, (o, i)).copy())
            b.append(take(o))
        return MlpParams(W, b)

    try:
        return OperatorNet(mlp(bs), mlp(ts), v, d, Box(lo, hi), mean, std)
    except ValueError as exc:
        raise FormatError(str(exc), off) from exc


def load_checkpoint(path) -> OperatorNet:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
