"""Self-supervised contrastive pretraining (SimSiam-style, two views).

Two stochastic views of each batch go through the shared backbone and a
2-layer projector; a 2-layer predictor maps each projection to a guess of
the other view's projection. The objective is the symmetric negative
cosine similarity with a stop-gradient on the projection used as target:
only the predictor branch backpropagates, which is the asymmetry that
keeps the representation from collapsing.

The exported ``negative_cosine`` is a SUM over rows; training loops divide
gradients by batch size for learning-rate stability, but the loss values
recorded and returned are the sum-form objective per sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numkit
from .backbone import (
    MlpBackbone,
    TrainConfig,
    backward_from_trace,
    forward,
    forward_trace,
    sgd_step,
    effective_lr,
)
from .errors import (
    DegenerateRowError,
    FrozenModelError,
    ParameterError,
    ShapeError,
    TrainingError,
)

# Projector: d_cnn -> d_proj -> d_proj. Predictor: d_proj -> hidden -> d_proj.
Projector = MlpBackbone
Predictor = MlpBackbone


def make_projector(d_cnn: int, d_proj: int, seed: int) -> Projector:
    return MlpBackbone.create([d_cnn, d_proj, d_proj], seed)


def make_predictor(d_proj: int, hidden: int, seed: int) -> Predictor:
    return MlpBackbone.create([d_proj, hidden, d_proj], seed)


@dataclass
class AugmentationPolicy:
    """Vector-space augmentations: Gaussian jitter and coordinate masking.

    At least one strength must be positive, otherwise the two views are
    identical and the contrastive objective degenerates. Draws are consumed
    from a single PCG64 stream seeded at construction, so a fresh policy
    with the same seed replays the same augmentation sequence.
    """

    jitter_std: float
    mask_prob: float
    seed: int
    _rng: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.jitter_std < 0:
            raise ParameterError(f"jitter_std must be >= 0, got {self.jitter_std}")
        if not 0 <= self.mask_prob < 1:
            raise ParameterError(f"mask_prob must be in [0, 1), got {self.mask_prob}")
        if self.jitter_std == 0 and self.mask_prob == 0:
            raise ParameterError(
                "at least one augmentation strength must be positive; "
                "identical views make the contrastive objective degenerate"
            )
        self._rng = numkit.rng_from_seed(self.seed)

    def _view(self, x: np.ndarray) -> np.ndarray:
        v = x.copy()
        if self.jitter_std > 0:
            v = v + self._rng.normal(0.0, self.jitter_std, size=x.shape)
        if self.mask_prob > 0:
            v = v * (self._rng.random(size=x.shape) >= self.mask_prob)
        return v


def augment_two_views(policy: AugmentationPolicy, x: np.ndarray):
    """Two independent stochastic views of x, same shape, stream-ordered."""
    x = np.asarray(x, dtype=np.float64)
    return policy._view(x), policy._view(x)


def _row_norms(z: np.ndarray, name: str) -> np.ndarray:
    norms = np.linalg.norm(z, axis=1)
    bad = np.nonzero(~(norms > 0.0))[0]
    if bad.size:
        raise DegenerateRowError(f"{name} row {bad[0]} has zero norm", row=int(bad[0]))
    return norms


def negative_cosine(z1: np.ndarray, z2: np.ndarray) -> float:
    """Negative cosine similarity summed over rows (not averaged)."""
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape:
        raise ShapeError(f"operands differ in shape: {z1.shape} vs {z2.shape}")
    n1 = _row_norms(z1, "first operand")
    n2 = _row_norms(z2, "second operand")
    return -float(((z1 * z2).sum(axis=1) / (n1 * n2)).sum())


def _negative_cosine_with_grad(target: np.ndarray, live: np.ndarray):
    """Sum-form negative cosine where only ``live`` carries gradient.

    Returns (loss, d loss / d live); the target rows are constants.
    """
    tn = _row_norms(target, "target")
    ln = _row_norms(live, "live operand")
    dots = (target * live).sum(axis=1)
    cos = dots / (tn * ln)
    loss = -float(cos.sum())
    grad = -(target / (tn * ln)[:, None] - (cos / ln**2)[:, None] * live)
    return loss, grad


@dataclass
class SsclGradients:
    """Gradient bundle of one two-view loss evaluation.

    ``target_proj1``/``target_proj2`` are the partials of the loss through
    the stop-gradient target path. They are identically zero by
    construction and are exposed so the contract is directly testable.
    """

    backbone: list[np.ndarray]
    projector: list[np.ndarray]
    predictor: list[np.ndarray]
    target_proj1: np.ndarray
    target_proj2: np.ndarray


def sscl_forward_loss(
    net: MlpBackbone,
    projector: Projector,
    predictor: Predictor,
    x_aug1: np.ndarray,
    x_aug2: np.ndarray,
):
    """Symmetric two-view loss and its stop-gradient weight gradients.

    loss = 0.5 * cos_loss(proj1, pred2) + 0.5 * cos_loss(proj2, pred1)
    where each proj term is treated as a constant target and gradients flow
    only through the predictor branches.
    """
    emb1, b_in1, b_pre1 = forward_trace(net, x_aug1)
    emb2, b_in2, b_pre2 = forward_trace(net, x_aug2)
    z1, j_in1, j_pre1 = forward_trace(projector, emb1)
    z2, j_in2, j_pre2 = forward_trace(projector, emb2)
    p1, d_in1, d_pre1 = forward_trace(predictor, z1)
    p2, d_in2, d_pre2 = forward_trace(predictor, z2)

    loss1, dp2 = _negative_cosine_with_grad(z1, p2)
    loss2, dp1 = _negative_cosine_with_grad(z2, p1)
    loss = 0.5 * loss1 + 0.5 * loss2

    def chain(dp, d_in, d_pre, j_in, j_pre, b_in, b_pre):
        pred_g, dz = backward_from_trace(predictor, d_in, d_pre, dp)
        proj_g, demb = backward_from_trace(projector, j_in, j_pre, dz)
        back_g, _ = backward_from_trace(net, b_in, b_pre, demb)
        return back_g, proj_g, pred_g

    bg2, jg2, dg2 = chain(0.5 * dp2, d_in2, d_pre2, j_in2, j_pre2, b_in2, b_pre2)
    bg1, jg1, dg1 = chain(0.5 * dp1, d_in1, d_pre1, j_in1, j_pre1, b_in1, b_pre1)

    bundle = SsclGradients(
        backbone=[a + b for a, b in zip(bg1, bg2)],
        projector=[a + b for a, b in zip(jg1, jg2)],
        predictor=[a + b for a, b in zip(dg1, dg2)],
        target_proj1=np.zeros_like(z1),
        target_proj2=np.zeros_like(z2),
    )
    return loss, bundle


@dataclass
class SsclHistory:
    """Per-epoch monitoring of a contrastive pretraining run."""

    mean_loss: list[float] = field(default_factory=list)
    embedding_std: list[float] = field(default_factory=list)


def _normalized_coordinate_std(emb: np.ndarray) -> float:
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return float((emb / norms).std(axis=0).mean())


def pretrain_sscl(
    net: MlpBackbone,
    projector: Projector,
    predictor: Predictor,
    data,
    policy: AugmentationPolicy,
    cfg: TrainConfig,
):
    """Minimize the two-view loss by mini-batch SGD; returns (backbone, history).

    The projector and predictor exist only to shape this objective and are
    discarded on return. The mean per-coordinate std of the normalized
    embeddings is recorded each epoch as a collapse monitor (reported, not
    asserted).
    """
    if net.frozen:
        raise FrozenModelError("cannot pretrain a frozen network")
    x = np.asarray(data, dtype=np.float64)
    n = x.shape[0]
    rng = numkit.rng_from_seed(cfg.seed)
    bw, jw, dw = net.copy_weights(), projector.copy_weights(), predictor.copy_weights()
    bv = jv = dv = None
    history = SsclHistory()
    for epoch in range(cfg.epochs):
        lr = effective_lr(cfg, epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            v1, v2 = augment_two_views(policy, x[idx])
            live_b = MlpBackbone(weights=bw)
            live_j = MlpBackbone(weights=jw)
            live_d = MlpBackbone(weights=dw)
            loss, g = sscl_forward_loss(live_b, live_j, live_d, v1, v2)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"contrastive training diverged at epoch {epoch}", epoch=epoch
                )
            if loss < -len(idx) - 1e-9:
                raise TrainingError(
                    f"loss {loss} below the -1 per-sample bound at epoch {epoch}",
                    epoch=epoch,
                )
            total += loss
            scale = 1.0 / len(idx)
            bw, bv = sgd_step(bw, [scale * t for t in g.backbone], bv, cfg, lr=lr)
            jw, jv = sgd_step(jw, [scale * t for t in g.projector], jv, cfg, lr=lr)
            dw, dv = sgd_step(dw, [scale * t for t in g.predictor], dv, cfg, lr=lr)
        history.mean_loss.append(total / n)
        history.embedding_std.append(
            _normalized_coordinate_std(forward(MlpBackbone(weights=bw), x))
        )
    return MlpBackbone(weights=bw), history
