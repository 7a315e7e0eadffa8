"""Synthetic Gaussian-blob classification suite.

Desk-scale stand-in for image benchmarks: each class is an isotropic unit
Gaussian around a centroid, centroids are drawn so that the minimum
pairwise distance meets a requested margin, and a nearest-centroid oracle
certifies separability before any accuracy assertion leans on it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit
from .errors import ParameterError


@dataclass(eq=False)
class BlobDataset:
    """Labeled train/test split. ``centroids`` are known for generated blobs
    (enabling the separability oracle) and None for data loaded from files."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int
    dim: int
    centroids: np.ndarray | None = None
    margin: float = 0.0
    seed: int = 0


def _draw_centroids(rng: np.random.Generator, num_classes: int, dim: int, margin: float):
    # rescale and redraw until the min pairwise distance clears the margin;
    # deterministic given the generator state
    spread = max(margin, 1.0)
    for _ in range(64):
        c = rng.normal(0.0, spread, size=(num_classes, dim))
        diff = c[:, None, :] - c[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        np.fill_diagonal(dist, np.inf)
        if dist.min() >= margin:
            return c
        spread *= 1.5
    raise ParameterError(
        f"could not place {num_classes} centroids at margin {margin} in {dim} dims"
    )


def make_blobs(
    num_classes: int,
    dim: int,
    train_per_class: int,
    test_per_class: int,
    margin: float = 1.5,
    seed: int = 0,
) -> BlobDataset:
    """Gaussian blobs with the requested centroid-separation to scatter ratio.

    Blobs are sampled with unit within-class variance and centroid
    distances >= margin, then everything is rescaled by 1/margin so the
    coordinates are O(1) no matter how separable the problem is. Difficulty
    is controlled by the ratio, which rescaling preserves. Train rows are
    shuffled; test rows stay grouped by class.
    """
    if num_classes < 2:
        raise ParameterError(f"need at least 2 classes, got {num_classes}")
    if dim < 1 or train_per_class < 1 or test_per_class < 1:
        raise ParameterError("dim and per-class counts must be >= 1")
    if margin <= 0:
        raise ParameterError(f"margin must be > 0, got {margin}")
    rng = numkit.rng_from_seed(seed)
    centroids = _draw_centroids(rng, num_classes, dim, margin)

    def sample(per_class):
        xs, ys = [], []
        for c in range(num_classes):
            xs.append(centroids[c] + rng.normal(size=(per_class, dim)))
            ys.append(np.full(per_class, c, dtype=np.int64))
        return np.vstack(xs), np.concatenate(ys)

    train_x, train_y = sample(train_per_class)
    test_x, test_y = sample(test_per_class)
    train_x /= margin
    test_x /= margin
    centroids = centroids / margin
    order = rng.permutation(train_x.shape[0])
    return BlobDataset(
        train_x=train_x[order],
        train_y=train_y[order],
        test_x=test_x,
        test_y=test_y,
        num_classes=num_classes,
        dim=dim,
        centroids=centroids,
        margin=margin,
        seed=seed,
    )


def nearest_centroid_predict(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Brute-force nearest-centroid labels; the separability oracle."""
    d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def nearest_centroid_accuracy(x: np.ndarray, y: np.ndarray, centroids: np.ndarray) -> float:
    return float((nearest_centroid_predict(x, centroids) == y).mean())
