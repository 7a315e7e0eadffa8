"""Dense linear algebra kernel.

Matrices are plain 2-D float64 numpy arrays in row-major (C) order. The
three operations every other module leans on live here: checked matrix
products, symmetric positive-definite inversion via Cholesky, and seeded
Gaussian matrix generation.

Randomness contract: all random matrices come from numpy's PCG64 generator
wrapped in ``numpy.random.Generator``, seeded with an explicit 64-bit
unsigned integer. Same seed and same draw sequence give bit-identical
values, which is what the persistence and determinism guarantees of the
rest of the package are built on.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack

from .errors import (
    DataError,
    ParameterError,
    ShapeError,
    SingularityError,
)

Matrix = np.ndarray

SYMMETRY_TOL = 1e-9

_U64_MAX = 2**64 - 1


def check_seed(seed: int) -> int:
    """Validate a 64-bit unsigned seed and return it."""
    if not isinstance(seed, (int, np.integer)):
        raise ParameterError(f"seed must be an integer, got {type(seed).__name__}")
    if not 0 <= seed <= _U64_MAX:
        raise ParameterError(f"seed must fit in 64 unsigned bits, got {seed}")
    return int(seed)


def rng_from_seed(seed: int) -> np.random.Generator:
    """PCG64 generator for ``seed``; the single RNG entry point of the package."""
    return np.random.Generator(np.random.PCG64(check_seed(seed)))


def as_matrix(x, name: str = "matrix") -> Matrix:
    """Coerce to a 2-D float64 array, rejecting non-finite entries."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got {m.ndim}-D")
    if not np.all(np.isfinite(m)):
        raise DataError(f"{name} contains non-finite entries")
    return np.ascontiguousarray(m)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with an explicit dimension check."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul operands must be 2-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: left operand is {a.shape[0]}x{a.shape[1]}, "
            f"right operand is {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def sym_inverse(a: Matrix) -> Matrix:
    """Invert a symmetric positive-definite matrix via Cholesky.

    The input must be square and symmetric to within ``SYMMETRY_TOL``.
    The result is explicitly symmetrized as (M + M^T)/2 so repeated use in
    recursions cannot drift off the symmetric cone. A failed factorization
    raises SingularityError carrying the 0-based failing pivot.
    """
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"sym_inverse needs a square matrix, got {a.shape}")
    if a.shape[0] == 0:
        return np.zeros((0, 0))
    asym = np.max(np.abs(a - a.T))
    if asym > SYMMETRY_TOL:
        raise DataError(
            f"sym_inverse input is not symmetric: max |A - A^T| = {asym:.3e}"
        )
    chol, info = lapack.dpotrf(a, lower=1)
    if info != 0:
        raise SingularityError(
            f"matrix is not positive definite (pivot {info - 1})", pivot=info - 1
        )
    inv, info = lapack.dpotri(chol, lower=1)
    if info != 0:  # pragma: no cover - potri cannot fail after a clean potrf
        raise SingularityError(f"inverse from factor failed (info={info})", pivot=info - 1)
    # dpotri fills one triangle; mirroring doubles as the symmetrization step
    inv = np.tril(inv) + np.tril(inv, -1).T
    return (inv + inv.T) / 2.0


def gaussian_matrix(rows: int, cols: int, scale: float, seed: int) -> Matrix:
    """Matrix of i.i.d. normal(0, scale^2) entries drawn from PCG64(seed)."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"gaussian_matrix dims must be >= 1, got {rows}x{cols}")
    if not scale > 0:
        raise ParameterError(f"gaussian_matrix scale must be > 0, got {scale}")
    out = rng_from_seed(seed).normal(0.0, scale, size=(rows, cols))
    return np.ascontiguousarray(out)


def one_hot(labels, num_classes: int) -> Matrix:
    """Row-wise one-hot encoding of integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ShapeError(f"labels must be 1-D, got {labels.ndim}-D")
    if num_classes < 1:
        raise ParameterError(f"num_classes must be >= 1, got {num_classes}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = int(np.argmax((labels < 0) | (labels >= num_classes)))
        raise DataError(
            f"label {labels[bad]} at row {bad} outside [0, {num_classes})", row=bad
        )
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out
