"""Random buffer expansion and the recursive ridge classifier.

The classifier state is a ridge weight matrix plus the inverse of the
accumulated regularized Gram matrix (the memory matrix). The base phase is
a closed-form ridge solve; each later phase folds its rows in through a
Woodbury low-rank inverse update, so previously seen rows are never needed
again. The recursion reproduces the joint ridge solution over all rows
exactly (up to floating point), which is what makes the incremental
classifier equivalent to retraining from scratch.

``joint_fit`` is the independent oracle for that equivalence. It needs all
rows at once, which breaks the exemplar-free constraint, so the experiment
runner never calls it; tests do.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import numkit
from .backbone import validate_one_hot
from .errors import (
    EmptyTrainingSetError,
    ParameterError,
    ProtocolError,
    ShapeError,
)

DEFAULT_BLOCK_SIZE = 256


@dataclass(frozen=True, eq=False)
class BufferLayer:
    """Frozen random linear expansion applied to backbone embeddings.

    The default entry scale 1/sqrt(d_cnn) keeps projected magnitudes
    comparable to the embeddings so the ridge regularizer keeps its scale.
    ``activation`` is an optional elementwise hook; the standard layer is
    purely linear and the hook defaults to off.
    """

    weight: np.ndarray
    seed: int
    activation: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def d_cnn(self) -> int:
        return self.weight.shape[0]

    @property
    def d_b(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def create(
        cls,
        d_cnn: int,
        d_b: int,
        seed: int,
        scale: float | None = None,
        activation: Callable[[np.ndarray], np.ndarray] | None = None,
    ) -> "BufferLayer":
        if scale is None:
            scale = 1.0 / np.sqrt(d_cnn)
        weight = numkit.gaussian_matrix(d_cnn, d_b, scale, seed)
        return cls(weight=weight, seed=seed, activation=activation)


def buffer_project(layer: BufferLayer, embeddings: np.ndarray) -> np.ndarray:
    """Expand embeddings through the frozen random map."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[1] != layer.d_cnn:
        raise ShapeError(
            f"embeddings width {embeddings.shape[1] if embeddings.ndim == 2 else '?'} "
            f"does not match buffer input {layer.d_cnn}"
        )
    out = embeddings @ layer.weight
    if layer.activation is not None:
        out = layer.activation(out)
    return out


@dataclass(frozen=True, eq=False)
class AnalyticClassifier:
    """Ridge weights plus the inverse regularized Gram memory matrix.

    Immutable: every update returns a new instance, so predictions on an
    existing classifier are safe while a successor is being computed.
    """

    weight: np.ndarray  # (d_b, classes_seen)
    memory: np.ndarray  # (d_b, d_b), symmetric positive definite
    gamma: float
    classes_seen: int
    phase_index: int

    @property
    def d_b(self) -> int:
        return self.memory.shape[0]


def _ridge_solve(features: np.ndarray, labels: np.ndarray, gamma: float):
    gram = features.T @ features + gamma * np.eye(features.shape[1])
    memory = numkit.sym_inverse((gram + gram.T) / 2.0)
    weight = memory @ (features.T @ labels)
    return weight, memory


def _check_fit_inputs(features, labels, gamma: float):
    features = np.asarray(features, dtype=np.float64)
    labels = validate_one_hot(labels)
    if features.ndim != 2:
        raise ShapeError(f"features must be 2-D, got {features.ndim}-D")
    if features.shape[0] != labels.shape[0]:
        raise ShapeError(
            f"{features.shape[0]} feature rows but {labels.shape[0]} label rows"
        )
    if features.shape[0] == 0:
        raise EmptyTrainingSetError("cannot fit on an empty base set")
    if not gamma > 0:
        raise ParameterError(f"gamma must be > 0, got {gamma}")
    return features, labels


def ainit(features, labels_onehot, gamma: float) -> AnalyticClassifier:
    """Base-phase closed-form ridge solve; starts the incremental recursion."""
    features, labels = _check_fit_inputs(features, labels_onehot, gamma)
    weight, memory = _ridge_solve(features, labels, gamma)
    return AnalyticClassifier(
        weight=weight,
        memory=memory,
        gamma=gamma,
        classes_seen=labels.shape[1],
        phase_index=0,
    )


def joint_fit(features_all, labels_all, gamma: float) -> AnalyticClassifier:
    """Closed-form ridge solution over all rows at once.

    TEST ORACLE ONLY: this sees every row ever observed, which the
    incremental runtime path is forbidden to do.
    """
    return ainit(features_all, labels_all, gamma)


def expand_classes(clf: AnalyticClassifier, new_classes: int) -> AnalyticClassifier:
    """Append zero weight columns for classes about to arrive; memory unchanged."""
    if new_classes < 0:
        raise ParameterError(f"new_classes must be >= 0, got {new_classes}")
    if new_classes == 0:
        return replace(clf)
    padded = np.hstack([clf.weight, np.zeros((clf.weight.shape[0], new_classes))])
    return replace(clf, weight=padded, classes_seen=clf.classes_seen + new_classes)


def phase_update(
    clf: AnalyticClassifier,
    features,
    labels_onehot,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> AnalyticClassifier:
    """Fold one phase's rows into the classifier without revisiting old rows.

    memory' = M - M X^T (I + X M X^T)^-1 X M
    weight' = W + memory' X^T (Y - X W)

    The inner inverse is (rows x rows); phases larger than ``block_size``
    are processed in sequential row blocks, which leaves the result
    unchanged because the update composes over arbitrary row batches. Label
    rows are not required to be one-hot here: the algebra is valid for any
    targets, and class-disjointness is an experiment-protocol concern
    enforced by the runner, not by this operation.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels_onehot, dtype=np.float64)
    if features.ndim != 2 or labels.ndim != 2:
        raise ShapeError("features and labels must be 2-D")
    if features.shape[0] != labels.shape[0]:
        raise ShapeError(
            f"{features.shape[0]} feature rows but {labels.shape[0]} label rows"
        )
    if features.shape[0] and features.shape[1] != clf.d_b:
        raise ShapeError(
            f"feature width {features.shape[1]} does not match classifier {clf.d_b}"
        )
    if labels.shape[1] > clf.classes_seen:
        raise ProtocolError(
            f"labels cover {labels.shape[1]} classes but only {clf.classes_seen} "
            "are registered; call expand_classes first"
        )
    if labels.shape[1] < clf.classes_seen:
        raise ShapeError(
            f"label width {labels.shape[1]} does not match classes_seen "
            f"{clf.classes_seen}"
        )
    if block_size < 1:
        raise ParameterError(f"block_size must be >= 1, got {block_size}")

    memory = clf.memory
    weight = clf.weight
    for start in range(0, features.shape[0], block_size):
        x = features[start : start + block_size]
        y = labels[start : start + block_size]
        mxt = memory @ x.T
        inner = np.eye(x.shape[0]) + x @ mxt
        gain = numkit.sym_inverse((inner + inner.T) / 2.0)
        memory = memory - mxt @ gain @ mxt.T
        memory = (memory + memory.T) / 2.0
        weight = weight + memory @ (x.T @ (y - x @ weight))
    return replace(
        clf, weight=weight, memory=memory, phase_index=clf.phase_index + 1
    )


def predict(clf: AnalyticClassifier, features) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest class index."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != clf.d_b:
        raise ShapeError(
            f"feature width {features.shape[1] if features.ndim == 2 else '?'} "
            f"does not match classifier {clf.d_b}"
        )
    return np.argmax(features @ clf.weight, axis=1)
