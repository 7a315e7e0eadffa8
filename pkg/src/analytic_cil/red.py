"""Representation-enhancing distillation.

A supervised teacher network transfers its embedding geometry to the
contrastively pretrained student through a mean cosine feature loss, while
a temporary linear head injects label knowledge through cross-entropy. The
two terms are blended by ``lam``; the teacher is read-only throughout and
the student backbone comes back frozen, ready for the analytic classifier.

Unlike the contrastive objective, the feature loss here is a MEAN over
rows, so its value lives in [-1, 1] regardless of batch size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numkit
from .backbone import (
    LinearHead,
    MlpBackbone,
    TrainConfig,
    backward_from_trace,
    effective_lr,
    forward,
    forward_trace,
    freeze,
    sgd_step,
    softmax_cross_entropy,
    validate_one_hot,
)
from .errors import (
    ContractViolationError,
    DegenerateRowError,
    FrozenModelError,
    ParameterError,
    ShapeError,
    TrainingError,
)

# Supp-style grid searched by the CLI when tuning the blend and epoch count.
LAMBDA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
EPOCH_GRID = (5, 10, 15, 20, 30, 40, 50)


@dataclass(frozen=True)
class RedConfig:
    """Distillation settings: blend weight, epoch count, optimizer."""

    lam: float = 0.4
    epochs: int = 20
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not 0 <= self.lam <= 1:
            raise ParameterError(f"lam must be in [0, 1], got {self.lam}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")


def extract_embeddings(net: MlpBackbone, x) -> np.ndarray:
    """Backbone output as a feature matrix (inputs are vectors, so flattening
    is the identity)."""
    return forward(net, np.asarray(x, dtype=np.float64))


def _mean_cosine_grad(student_emb: np.ndarray, teacher_emb: np.ndarray):
    """Mean negative cosine and its gradient w.r.t. the student embeddings.

    Teacher embeddings are constants: no gradient flows toward the teacher.
    """
    if student_emb.shape != teacher_emb.shape:
        raise ShapeError(
            f"embeddings differ in shape: {student_emb.shape} vs {teacher_emb.shape}"
        )
    n = student_emb.shape[0]
    sn = np.linalg.norm(student_emb, axis=1)
    tn = np.linalg.norm(teacher_emb, axis=1)
    for name, norms in (("student", sn), ("teacher", tn)):
        bad = np.nonzero(~(norms > 0.0))[0]
        if bad.size:
            raise DegenerateRowError(
                f"{name} embedding row {bad[0]} has zero norm", row=int(bad[0])
            )
    cos = (student_emb * teacher_emb).sum(axis=1) / (sn * tn)
    loss = -float(cos.mean())
    grad = -(teacher_emb / (sn * tn)[:, None] - (cos / sn**2)[:, None] * student_emb) / n
    return loss, grad


def feature_loss(student_emb: np.ndarray, teacher_emb: np.ndarray) -> float:
    """-(1/N) sum of row cosines between student and teacher embeddings."""
    loss, _ = _mean_cosine_grad(
        np.asarray(student_emb, dtype=np.float64),
        np.asarray(teacher_emb, dtype=np.float64),
    )
    return loss


def label_loss(net: MlpBackbone, head: LinearHead, x, labels_onehot) -> float:
    """Mean softmax cross-entropy of head(backbone(x)) against one-hot labels."""
    y = validate_one_hot(labels_onehot)
    emb = extract_embeddings(net, x)
    if y.shape[1] != head.weight.shape[1]:
        raise ShapeError(
            f"label width {y.shape[1]} does not match head width {head.weight.shape[1]}"
        )
    loss, _ = softmax_cross_entropy(emb @ head.weight, y)
    return loss


def red_loss(feature_term: float, label_term: float, lam: float) -> float:
    """Blend: lam * feature_term + (1 - lam) * label_term."""
    if not 0 <= lam <= 1:
        raise ParameterError(f"lam must be in [0, 1], got {lam}")
    return lam * feature_term + (1 - lam) * label_term


def red_gradients(
    student: MlpBackbone,
    head: LinearHead,
    x: np.ndarray,
    teacher_emb: np.ndarray,
    labels_onehot: np.ndarray,
    lam: float,
):
    """Blended loss with gradients for the student backbone and head.

    Returns (loss, feature_term, label_term, backbone grads, head grad).
    """
    emb, inputs, preacts = forward_trace(student, x)
    f_loss, demb_f = _mean_cosine_grad(emb, teacher_emb)
    logits = emb @ head.weight
    l_loss, dlogits = softmax_cross_entropy(logits, labels_onehot)
    loss = red_loss(f_loss, l_loss, lam)
    head_grad = (1 - lam) * (emb.T @ dlogits)
    demb = lam * demb_f + (1 - lam) * (dlogits @ head.weight.T)
    grads, _ = backward_from_trace(student, inputs, preacts, demb)
    return loss, f_loss, l_loss, grads, head_grad


@dataclass
class DistillHistory:
    """Per-epoch loss decomposition of a distillation run."""

    loss: list[float] = field(default_factory=list)
    feature_term: list[float] = field(default_factory=list)
    label_term: list[float] = field(default_factory=list)


def distill(
    student: MlpBackbone,
    teacher: MlpBackbone,
    head: LinearHead,
    data,
    labels_onehot,
    cfg: RedConfig,
):
    """Train the student under the blended objective, then freeze it.

    The head is trained jointly but discarded: the analytic classifier
    replaces it downstream. Teacher weights are snapshotted before training
    and verified bit-identical afterwards; any change is a contract
    violation. Returns (frozen student, history).
    """
    if student.frozen:
        raise FrozenModelError("student is already frozen")
    x = np.asarray(data, dtype=np.float64)
    y = validate_one_hot(labels_onehot)
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"{x.shape[0]} data rows but {y.shape[0]} label rows")
    if student.d_out != teacher.d_out:
        raise ShapeError(
            f"student embeds {student.d_out} dims but teacher embeds {teacher.d_out}"
        )

    teacher_before = teacher.copy_weights()
    teacher_emb_all = extract_embeddings(teacher, x)

    tcfg = TrainConfig(
        lr=cfg.train.lr,
        momentum=cfg.train.momentum,
        weight_decay=cfg.train.weight_decay,
        epochs=cfg.epochs,
        batch_size=cfg.train.batch_size,
        lr_milestones=cfg.train.lr_milestones,
        lr_divisor=cfg.train.lr_divisor,
        seed=cfg.train.seed,
    )
    rng = numkit.rng_from_seed(tcfg.seed)
    weights = student.copy_weights()
    head_w = head.weight.copy()
    vel = head_vel = None
    history = DistillHistory()
    n = x.shape[0]
    for epoch in range(tcfg.epochs):
        lr = effective_lr(tcfg, epoch)
        order = rng.permutation(n)
        totals = np.zeros(3)
        for start in range(0, n, tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            live = MlpBackbone(weights=weights)
            loss, f_term, l_term, grads, head_grad = red_gradients(
                live, LinearHead(weight=head_w), x[idx], teacher_emb_all[idx], y[idx], cfg.lam
            )
            if not np.isfinite(loss):
                raise TrainingError(
                    f"distillation diverged at epoch {epoch}", epoch=epoch
                )
            totals += np.array([loss, f_term, l_term]) * len(idx)
            weights, vel = sgd_step(weights, grads, vel, tcfg, lr=lr)
            [head_w], head_vel = sgd_step([head_w], [head_grad], head_vel, tcfg, lr=lr)
        history.loss.append(totals[0] / n)
        history.feature_term.append(totals[1] / n)
        history.label_term.append(totals[2] / n)

    for before, after in zip(teacher_before, teacher.weights):
        if not np.array_equal(before, after):
            raise ContractViolationError("teacher weights changed during distillation")
    return freeze(MlpBackbone(weights=weights)), history
