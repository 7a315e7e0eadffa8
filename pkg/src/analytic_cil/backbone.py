"""Small fully connected feature extractor with explicit gradients.

The network is bias-free: each layer is a plain matrix product, ReLU on
hidden layers, identity on the output layer. Forward, backward and the
SGD step are separate pure functions so every gradient path can be checked
against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import numkit
from .errors import (
    DataError,
    FrozenModelError,
    ParameterError,
    ShapeError,
    TrainingError,
)


@dataclass(eq=False)
class MlpBackbone:
    """Stack of bias-free linear layers; weights[i] has shape (d_i, d_i+1)."""

    weights: list[np.ndarray]
    frozen: bool = False

    def __post_init__(self):
        if not self.weights:
            raise ShapeError("backbone needs at least one layer")
        for i in range(len(self.weights) - 1):
            a, b = self.weights[i], self.weights[i + 1]
            if a.shape[1] != b.shape[0]:
                raise ShapeError(
                    f"layer {i} output width {a.shape[1]} does not match "
                    f"layer {i + 1} input width {b.shape[0]}"
                )

    @property
    def widths(self) -> list[int]:
        return [w.shape[0] for w in self.weights] + [self.weights[-1].shape[1]]

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def d_out(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def create(cls, widths: list[int], seed: int) -> "MlpBackbone":
        """New network with N(0, 2/fan_in) entries, drawn sequentially from one stream."""
        if len(widths) < 2:
            raise ShapeError("widths must list at least input and output sizes")
        rng = numkit.rng_from_seed(seed)
        weights = [
            np.ascontiguousarray(rng.normal(0.0, np.sqrt(2.0 / widths[i]), size=(widths[i], widths[i + 1])))
            for i in range(len(widths) - 1)
        ]
        return cls(weights=weights)

    def copy_weights(self) -> list[np.ndarray]:
        return [w.copy() for w in self.weights]


@dataclass(eq=False)
class LinearHead:
    """Single linear classification layer on top of a backbone."""

    weight: np.ndarray

    @classmethod
    def create(cls, d_in: int, classes: int, seed: int) -> "LinearHead":
        return cls(weight=numkit.gaussian_matrix(d_in, classes, 1.0 / np.sqrt(d_in), seed))


@dataclass(frozen=True)
class TrainConfig:
    """SGD-with-momentum settings; decay is folded into the gradient."""

    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 10
    batch_size: int = 64
    lr_milestones: tuple[float, ...] = (0.5, 0.75)
    lr_divisor: float = 10.0
    seed: int = 0

    def __post_init__(self):
        # lr == 0 is allowed as the degenerate "no update" setting
        if self.lr < 0:
            raise ParameterError(f"lr must be >= 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_divisor <= 0:
            raise ParameterError(f"lr_divisor must be > 0, got {self.lr_divisor}")


def effective_lr(cfg: TrainConfig, epoch: int) -> float:
    """Step-decay schedule: divide lr at each milestone fraction of the run."""
    passed = sum(1 for m in cfg.lr_milestones if epoch >= m * cfg.epochs)
    return cfg.lr / (cfg.lr_divisor**passed)


def _check_input(net: MlpBackbone, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"input must be 2-D, got {x.ndim}-D")
    if x.shape[1] != net.d_in:
        raise ShapeError(f"input width {x.shape[1]} does not match network input {net.d_in}")
    return x


def forward(net: MlpBackbone, x: np.ndarray) -> np.ndarray:
    """Apply the network: ReLU after every layer except the last."""
    x = _check_input(net, x)
    h = x
    last = len(net.weights) - 1
    for i, w in enumerate(net.weights):
        h = h @ w
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def forward_trace(net: MlpBackbone, x: np.ndarray):
    """Forward pass keeping per-layer inputs and pre-activations for backward."""
    x = _check_input(net, x)
    inputs, preacts = [], []
    h = x
    last = len(net.weights) - 1
    for i, w in enumerate(net.weights):
        inputs.append(h)
        z = h @ w
        preacts.append(z)
        h = np.maximum(z, 0.0) if i < last else z
    return h, inputs, preacts


def backward_from_trace(net: MlpBackbone, inputs, preacts, upstream_grad: np.ndarray):
    """Exact gradients of the traced forward pass.

    Returns (per-layer weight gradients, gradient w.r.t. the network input).
    """
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != preacts[-1].shape:
        raise ShapeError(
            f"upstream gradient shape {g.shape} does not match output {preacts[-1].shape}"
        )
    grads: list[np.ndarray] = [np.empty(0)] * len(net.weights)
    last = len(net.weights) - 1
    for i in range(last, -1, -1):
        if i < last:
            g = g * (preacts[i] > 0.0)
        grads[i] = inputs[i].T @ g
        g = g @ net.weights[i].T
    return grads, g


def backward(net: MlpBackbone, x: np.ndarray, upstream_grad: np.ndarray) -> list[np.ndarray]:
    """Per-layer weight gradients for d(loss)/d(output) = upstream_grad."""
    if net.frozen:
        raise FrozenModelError("cannot compute training gradients on a frozen network")
    _, inputs, preacts = forward_trace(net, x)
    grads, _ = backward_from_trace(net, inputs, preacts, upstream_grad)
    return grads


def sgd_step(
    weights: list[np.ndarray],
    grads: list[np.ndarray],
    velocity: list[np.ndarray] | None,
    cfg: TrainConfig,
    lr: float | None = None,
):
    """One momentum step: v <- m*v + g + wd*w; w <- w - lr*v.

    Returns (new weights, new velocity); inputs are left untouched.
    """
    if len(weights) != len(grads):
        raise ShapeError(f"{len(weights)} weight tensors but {len(grads)} gradients")
    if velocity is None:
        velocity = [np.zeros_like(w) for w in weights]
    step = cfg.lr if lr is None else lr
    new_w, new_v = [], []
    for w, g, v in zip(weights, grads, velocity):
        if w.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match weight {w.shape}")
        v2 = cfg.momentum * v + g + cfg.weight_decay * w
        new_v.append(v2)
        new_w.append(w - step * v2)
    return new_w, new_v


def softmax_cross_entropy(logits: np.ndarray, labels_onehot: np.ndarray):
    """Mean cross-entropy of softmax(logits); returns (loss, d loss/d logits)."""
    if logits.shape != labels_onehot.shape:
        raise ShapeError(
            f"logits {logits.shape} and labels {labels_onehot.shape} differ"
        )
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logprobs = shifted - logsumexp
    loss = -float((labels_onehot * logprobs).sum()) / n
    dlogits = (np.exp(logprobs) - labels_onehot) / n
    return loss, dlogits


def validate_one_hot(labels: np.ndarray) -> np.ndarray:
    """Require every row to contain exactly one 1 and zeros elsewhere."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 2:
        raise ShapeError(f"labels must be 2-D, got {labels.ndim}-D")
    ones = (labels == 1.0).sum(axis=1)
    zeros = (labels == 0.0).sum(axis=1)
    bad = np.nonzero((ones != 1) | (zeros != labels.shape[1] - 1))[0]
    if bad.size:
        raise DataError(f"label row {bad[0]} is not one-hot", row=int(bad[0]))
    return labels


def train_supervised(net: MlpBackbone, head: LinearHead, data, labels, cfg: TrainConfig):
    """Supervised stream: softmax cross-entropy minimized by mini-batch SGD.

    Returns (trained net, trained head, per-epoch mean loss). Mini-batch
    order is a deterministic shuffle from cfg.seed, so a fixed seed fixes
    the whole trajectory.
    """
    if net.frozen:
        raise FrozenModelError("cannot train a frozen network")
    x = _check_input(net, np.asarray(data, dtype=np.float64))
    y = validate_one_hot(labels)
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"{x.shape[0]} data rows but {y.shape[0]} label rows")
    if y.shape[1] != head.weight.shape[1]:
        raise ShapeError(
            f"label width {y.shape[1]} does not match head width {head.weight.shape[1]}"
        )

    rng = numkit.rng_from_seed(cfg.seed)
    weights = net.copy_weights()
    head_w = head.weight.copy()
    vel = None
    head_vel = None
    losses = []
    n = x.shape[0]
    for epoch in range(cfg.epochs):
        lr = effective_lr(cfg, epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            live = MlpBackbone(weights=weights)
            emb, inputs, preacts = forward_trace(live, xb)
            logits = emb @ head_w
            loss, dlogits = softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"supervised training diverged at epoch {epoch}", epoch=epoch
                )
            total += loss * len(idx)
            head_grad = emb.T @ dlogits
            demb = dlogits @ head_w.T
            grads, _ = backward_from_trace(live, inputs, preacts, demb)
            weights, vel = sgd_step(weights, grads, vel, cfg, lr=lr)
            [head_w], head_vel = sgd_step([head_w], [head_grad], head_vel, cfg, lr=lr)
        losses.append(total / n)
    return MlpBackbone(weights=weights), LinearHead(weight=head_w), losses


def freeze(net: MlpBackbone) -> MlpBackbone:
    """Frozen copy: forward still works, training operations raise."""
    return replace(net, weights=net.copy_weights(), frozen=True)
