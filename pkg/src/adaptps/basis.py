"""B-spline bases, difference matrices and row-wise Kronecker products.

Coefficient vectors of tensor-product models are ordered with the first
covariate's index varying fastest, i.e. ``theta = vec(Theta)`` for a
``d1 x d2 (x d3)`` coefficient array flattened in Fortran order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np


@dataclass(frozen=True)
class BasisSpec:
    """Marginal B-spline configuration for one covariate.

    Parameters
    ----------
    x_min, x_max : float
        Domain bounds. Evaluation outside ``[x_min, x_max]`` is an error.
    d : int
        Number of basis functions.
    degree : int, default 3
        Polynomial degree of the B-splines.
    q : int, default 2
        Order of the coefficient differences penalised along this covariate.
    """

    x_min: float
    x_max: float
    d: int
    degree: int = 3
    q: int = 2

    def __post_init__(self):
        if not (np.isfinite(self.x_min) and np.isfinite(self.x_max)):
            raise ValueError("domain bounds must be finite")
        if not self.x_min < self.x_max:
            raise ValueError(f"x_min ({self.x_min}) must be smaller than x_max ({self.x_max})")
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        if self.d <= self.degree:
            raise ValueError(f"d ({self.d}) must exceed the degree ({self.degree})")
        if self.q < 1:
            raise ValueError("penalty order q must be positive")
        if self.d - self.q < 1:
            raise ValueError(f"d ({self.d}) must exceed the penalty order q ({self.q})")

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / (self.d - self.degree)


def make_knots(spec: BasisSpec) -> np.ndarray:
    """Equally spaced knots extended ``degree`` steps beyond each boundary.

    Returns ``d + degree + 1`` knots; the domain is covered by the
    ``d - degree`` inner intervals.
    """
    if spec.d <= spec.degree:
        raise ValueError("d must exceed the degree")
    h = spec.spacing
    steps = np.arange(spec.d + spec.degree + 1) - spec.degree
    knots = spec.x_min + h * steps
    # pin the boundary knots exactly
    knots[spec.degree] = spec.x_min
    knots[spec.d] = spec.x_max
    return knots


def eval_basis(x, spec: BasisSpec) -> np.ndarray:
    """Evaluate the B-spline design matrix at ``x``.

    Uses the Cox-de Boor triangular recurrence on the extended uniform
    knot sequence. Each row has at most ``degree + 1`` nonzeros and sums
    to one.

    Parameters
    ----------
    x : array_like
        Sample points, all inside ``[spec.x_min, spec.x_max]``.
    spec : BasisSpec

    Returns
    -------
    numpy.ndarray
        Array of shape ``(len(x), spec.d)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise ValueError("x must be one-dimensional")
    if not np.all(np.isfinite(x)):
        raise ValueError("x contains non-finite values")
    outside = (x < spec.x_min) | (x > spec.x_max)
    if np.any(outside):
        bad = np.flatnonzero(outside)
        raise ValueError(
            f"{bad.size} point(s) outside the domain [{spec.x_min}, {spec.x_max}], "
            f"first at index {bad[0]} (x={x[bad[0]]!r}); extrapolation is not supported"
        )

    knots = make_knots(spec)
    p = spec.degree
    n = x.size
    n_int = spec.d - p
    # inner interval index, right endpoint folded into the last interval
    k = np.floor((x - spec.x_min) / spec.spacing).astype(int)
    k = np.clip(k, 0, n_int - 1)
    # guard against round-off placing x just left of its knot
    k = np.where(x < knots[p + k], np.maximum(k - 1, 0), k)
    k = np.where((x >= knots[p + k + 1]) & (k < n_int - 1), k + 1, k)
    span = k + p

    values = np.zeros((n, p + 1))
    values[:, 0] = 1.0
    left = np.zeros((n, p + 1))
    right = np.zeros((n, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - knots[span + 1 - j]
        right[:, j] = knots[span + j] - x
        saved = np.zeros(n)
        for r in range(j):
            temp = values[:, r] / (right[:, r + 1] + left[:, j - r])
            values[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        values[:, j] = saved

    B = np.zeros((n, spec.d))
    cols = k[:, None] + np.arange(p + 1)[None, :]
    np.put_along_axis(B, cols, values, axis=1)
    return B


def diff_matrix(d: int, q: int) -> np.ndarray:
    """Matrix of order-``q`` forward differences, shape ``(d - q, d)``."""
    if q < 1:
        raise ValueError("difference order must be at least 1")
    if q >= d:
        raise ValueError(f"difference order q={q} must be smaller than d={d}")
    return np.diff(np.eye(d), n=q, axis=0)


def box_product(A, B) -> np.ndarray:
    """Row-wise Kronecker (face-splitting) product.

    Row ``i`` of the result is ``kron(A[i], B[i])``, so the column index
    of ``B`` varies fastest. ``box_product(B2, B1)`` is therefore the
    tensor-product design with the first covariate's index fastest.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or B.ndim != 2:
        raise ValueError("box_product expects two matrices")
    if A.shape[0] != B.shape[0]:
        raise ValueError(f"row counts differ: {A.shape[0]} vs {B.shape[0]}")
    n = A.shape[0]
    return (A[:, :, None] * B[:, None, :]).reshape(n, A.shape[1] * B.shape[1])


def kron(*mats) -> np.ndarray:
    """Kronecker product of one or more matrices, left to right."""
    if not mats:
        raise ValueError("kron needs at least one operand")
    return reduce(np.kron, (np.atleast_2d(np.asarray(m, dtype=float)) for m in mats))


def tensor_design(margins) -> np.ndarray:
    """Tensor-product design ``B_K [] ... [] B_1`` from marginal designs ``[B_1, ..., B_K]``."""
    margins = list(margins)
    return reduce(lambda acc, Bm: box_product(Bm, acc), margins[1:], np.asarray(margins[0], dtype=float))
