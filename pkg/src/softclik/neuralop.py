"""Branch/trunk operator network mapping actuation to a continuous centerline.

The branch net encodes the actuation ``q_a`` and the trunk net encodes the body
coordinate ``s``. Both emit ``v * d`` features, read as a (v, d) matrix in
latent-major order (flat index ``j * d + k``), and the prediction for
coordinate ``k`` is ``sum_j branch[j, k] * trunk[j, k]``.

Derivatives are hand-written reverse mode through tanh MLPs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import FIBER_BOX, Box


@dataclass
class MlpParams:
    """Dense tanh network; the output layer is affine."""

    weights: list  # (fan_out, fan_in) per layer
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {k}: weight {W.shape} and bias {b.shape} do not match")
            if k and W.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k} expects {W.shape[1]} inputs, previous layer gives "
                                 f"{self.weights[k - 1].shape[0]}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k} has non-finite parameters")

    @property
    def sizes(self) -> list:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @classmethod
    def init(cls, sizes, rng: np.random.Generator) -> "MlpParams":
        """Glorot-uniform weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, sizes) -> "MlpParams":
        return cls([np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(o) for o in sizes[1:]])

    def parameters(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])


def mlp_forward(p: MlpParams, x):
    """Forward pass on rows of ``x``; returns ``(output, tape)``.

    The tape holds the input of every layer (post-activation), which is all the
    reverse pass needs since ``tanh' = 1 - tanh^2``.
    """
    a = np.atleast_2d(np.asarray(x, dtype=float))
    if a.shape[-1] != p.weights[0].shape[1]:
        raise ValueError(f"input has {a.shape[-1]} features, network expects {p.weights[0].shape[1]}")
    tape = []
    last = len(p.weights) - 1
    for k, (W, b) in enumerate(zip(p.weights, p.biases)):
        tape.append(a)
        a = a @ W.T + b
        if k < last:
            a = np.tanh(a)
    return a, tape


def mlp_backward(p: MlpParams, tape, g_out, need_params: bool = True):
    """Pull ``g_out`` back through the network.

    ``g_out`` may carry extra leading axes that broadcast against the tape.
    Returns ``(g_in, grads)`` with ``grads`` ordered like :meth:`MlpParams.parameters`
    (``None`` when ``need_params`` is false).
    """
    g = g_out
    grads = [None] * (2 * len(p.weights)) if need_params else None
    for k in range(len(p.weights) - 1, -1, -1):
        a_in = tape[k]
        if need_params:
            grads[2 * k] = g.T @ a_in
            grads[2 * k + 1] = g.sum(axis=0)
        g = g @ p.weights[k]
        if k > 0:
            g = g * (1.0 - a_in * a_in)
    return g, grads


@dataclass
class OperatorNet:
    branch: MlpParams
    trunk: MlpParams
    v: int
    d: int
    q_box: Box = field(default_factory=lambda: FIBER_BOX)
    out_mean: np.ndarray = None
    out_std: np.ndarray = None

    def __post_init__(self):
        width = self.v * self.d
        if self.branch.sizes[-1] != width or self.trunk.sizes[-1] != width:
            raise ValueError(f"branch and trunk must both emit v*d = {width} features")
        if self.trunk.sizes[0] != 1:
            raise ValueError("trunk takes the scalar body coordinate")
        if self.branch.sizes[0] != self.q_box.m:
            raise ValueError("branch input size must match the actuation box")
        if np.any(self.q_box.hi <= self.q_box.lo):
            raise ValueError("normalization box must have positive width")
        self.out_mean = np.zeros(self.d) if self.out_mean is None else np.asarray(self.out_mean, float)
        self.out_std = np.ones(self.d) if self.out_std is None else np.asarray(self.out_std, float)
        if self.out_mean.shape != (self.d,) or self.out_std.shape != (self.d,):
            raise ValueError("output normalization must have one entry per coordinate")
        if np.any(self.out_std <= 0.0):
            raise ValueError("output scales must be positive")

    @classmethod
    def create(cls, branch_sizes=(3, 64, 64, 64, 192), trunk_sizes=(1, 64, 64, 64, 192),
               v: int = 64, d: int = 3, q_box: Box = FIBER_BOX, seed: int = 0) -> "OperatorNet":
        rng = np.random.Generator(np.random.Philox(key=seed))
        return cls(MlpParams.init(list(branch_sizes), rng), MlpParams.init(list(trunk_sizes), rng),
                   v, d, q_box)

    @property
    def m(self) -> int:
        return self.branch.sizes[0]

    def parameters(self) -> list:
        return self.branch.parameters() + self.trunk.parameters()

    def copy(self) -> "OperatorNet":
        return OperatorNet(self.branch.copy(), self.trunk.copy(), self.v, self.d, self.q_box,
                           self.out_mean.copy(), self.out_std.copy())

    # -- normalization ---------------------------------------------------
    @property
    def q_scale(self) -> np.ndarray:
        return 2.0 / (self.q_box.hi - self.q_box.lo)

    def normalize_q(self, q):
        return (np.asarray(q, dtype=float) - self.q_box.lo) * self.q_scale - 1.0

    def normalize_out(self, x):
        return (np.asarray(x, dtype=float) - self.out_mean) / self.out_std

    def denormalize_out(self, y):
        return self.out_mean + self.out_std * y

    # -- ShapeModel interface --------------------------------------------
    def shape(self, q_a, s):
        return operator_eval(self, q_a, s)

    def partials(self, q_a, s):
        return operator_grad_qa(self, q_a, s)


def _trunk_input(s):
    return (2.0 * np.asarray(s, dtype=float) - 1.0).reshape(-1, 1)


def _latent(a, net):
    return a.reshape(a.shape[:-1] + (net.v, net.d))


def _check_box(net, q):
    if not net.q_box.contains(q, atol=1e-9):
        warnings.warn("actuation lies outside the training box", RuntimeWarning, stacklevel=3)


def operator_eval(net: OperatorNet, q_a, s):
    """Position at ``s`` (scalar -> (d,), array -> (n, d)) for a single actuation."""
    q_a = np.asarray(q_a, dtype=float).ravel()
    _check_box(net, q_a)
    br, _ = mlp_forward(net.branch, net.normalize_q(q_a)[None, :])
    tr, _ = mlp_forward(net.trunk, _trunk_input(s))
    y = np.sum(_latent(br, net) * _latent(tr, net), axis=1)  # (n, d)
    out = net.denormalize_out(y)
    return out[0] if np.ndim(s) == 0 else out


def predict_grid(net: OperatorNet, Q, s) -> np.ndarray:
    """Normalized predictions for every actuation row of ``Q`` on grid ``s``: (B, n, d)."""
    br, _ = mlp_forward(net.branch, net.normalize_q(Q))
    tr, _ = mlp_forward(net.trunk, _trunk_input(s))
    return np.einsum("bjk,njk->bnk", _latent(br, net), _latent(tr, net))


def operator_grad_qa(net: OperatorNet, q_a, s):
    """Exact derivative of :func:`operator_eval` w.r.t. ``q_a``: (d, m) or (n, d, m)."""
    q_a = np.asarray(q_a, dtype=float).ravel()
    _check_box(net, q_a)
    br, tape = mlp_forward(net.branch, net.normalize_q(q_a)[None, :])
    tr, _ = mlp_forward(net.trunk, _trunk_input(s))
    n, v, d = tr.shape[0], net.v, net.d
    # one reverse sweep per (s, output coordinate): seed = trunk features of that coordinate
    seeds = np.zeros((d, n, v, d))
    T = _latent(tr, net)
    for k in range(d):
        seeds[k, :, :, k] = T[:, :, k]
    g_in, _ = mlp_backward(net.branch, tape, seeds.reshape(d, n, v * d), need_params=False)
    J = np.transpose(g_in, (1, 0, 2)) * net.q_scale * net.out_std[None, :, None]
    return J[0] if np.ndim(s) == 0 else J


def operator_grad_s(net: OperatorNet, q_a, s):
    """Derivative of :func:`operator_eval` w.r.t. the body coordinate: (d,) or (n, d)."""
    q_a = np.asarray(q_a, dtype=float).ravel()
    br, _ = mlp_forward(net.branch, net.normalize_q(q_a)[None, :])
    tr, tape = mlp_forward(net.trunk, _trunk_input(s))
    n, v, d = tr.shape[0], net.v, net.d
    B = _latent(br, net)[0]
    seeds = np.zeros((d, n, v, d))
    for k in range(d):
        seeds[k, :, :, k] = B[:, k]
    g_in, _ = mlp_backward(net.trunk, tape, seeds.reshape(d, n, v * d), need_params=False)
    out = (2.0 * g_in[:, :, 0].T) * net.out_std
    return out[0] if np.ndim(s) == 0 else out


def _readout_backward(net, br, tr, tape_b, tape_t, g_pred):
    """Parameter gradients given d(loss)/d(normalized prediction) on pairs."""
    Bl, Tl = _latent(br, net), _latent(tr, net)
    g_br = (g_pred[:, None, :] * Tl).reshape(br.shape)
    g_tr = (g_pred[:, None, :] * Bl).reshape(tr.shape)
    _, gb = mlp_backward(net.branch, tape_b, g_br)
    _, gt = mlp_backward(net.trunk, tape_t, g_tr)
    return gb + gt


def operator_backward(net: OperatorNet, q_a, s, target):
    """Mean squared normalized error on (q_a, s, target) triples and its parameter gradients.

    Shapes: ``q_a`` (B, m), ``s`` (B,), ``target`` (B, d) in physical units.
    """
    Q = np.atleast_2d(np.asarray(q_a, dtype=float))
    s = np.asarray(s, dtype=float).ravel()
    if Q.shape[0] == 0 or Q.shape[0] != s.size:
        raise ValueError("need a non-empty batch with one s per actuation row")
    br, tape_b = mlp_forward(net.branch, net.normalize_q(Q))
    tr, tape_t = mlp_forward(net.trunk, _trunk_input(s))
    pred = np.sum(_latent(br, net) * _latent(tr, net), axis=1)
    err = pred - net.normalize_out(target)
    loss = float(np.mean(err * err))
    g_pred = (2.0 / err.size) * err
    return loss, _readout_backward(net, br, tr, tape_b, tape_t, g_pred)


def grid_backward(net: OperatorNet, Q, s, targets):
    """Same loss as :func:`operator_backward` over every (row of Q) x (node of s) pair.

    ``targets`` has shape (B, n, d) and is already normalized. Evaluates each
    sub-network once per distinct input instead of once per pair.
    """
    br, tape_b = mlp_forward(net.branch, net.normalize_q(Q))
    tr, tape_t = mlp_forward(net.trunk, _trunk_input(s))
    Bl, Tl = _latent(br, net), _latent(tr, net)
    pred = np.einsum("bjk,njk->bnk", Bl, Tl)
    err = pred - targets
    loss = float(np.mean(err * err))
    g_pred = (2.0 / err.size) * err
    g_br = np.einsum("bnk,njk->bjk", g_pred, Tl).reshape(br.shape)
    g_tr = np.einsum("bnk,bjk->njk", g_pred, Bl).reshape(tr.shape)
    _, gb = mlp_backward(net.branch, tape_b, g_br)
    _, gt = mlp_backward(net.trunk, tape_t, g_tr)
    return loss, gb + gt
