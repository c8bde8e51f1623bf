"""Array arithmetic for Kronecker-structured designs on grids.

A grid array is a plain ``numpy`` array with one axis per covariate; its
vectorisation is the Fortran-order ravel, so the first axis varies
fastest, matching the coefficient ordering of the tensor-product bases.
"""

from __future__ import annotations

import numpy as np


def to_vec(A) -> np.ndarray:
    return np.asarray(A).ravel(order="F")


def from_vec(v, shape) -> np.ndarray:
    return np.asarray(v).reshape(tuple(shape), order="F")


def rh_transform(M, A) -> np.ndarray:
    """Multiply along the first axis of ``A`` by ``M`` and rotate that axis to the end.

    Applying it once per axis computes ``(M_K (x) ... (x) M_1) vec(A)`` in
    array form.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        raise ValueError("grid array must have at least one axis")
    if M.shape[1] != A.shape[0]:
        raise ValueError(f"matrix has {M.shape[1]} columns but the first axis has extent {A.shape[0]}")
    return np.moveaxis(np.tensordot(M, A, axes=(1, 0)), 0, -1)


def kron_apply(mats, A) -> np.ndarray:
    """``(M_K (x) ... (x) M_1) vec(A)`` as an array, with ``mats = [M_1, ..., M_K]``."""
    mats = list(mats)
    A = np.asarray(A, dtype=float)
    if len(mats) != A.ndim:
        raise ValueError(f"{len(mats)} matrices for an array with {A.ndim} axes")
    for M in mats:
        A = rh_transform(M, A)
    return A


def glam_fitted(B_margins, theta) -> np.ndarray:
    """Linear predictor on the full grid, ``B vec(Theta)`` reshaped to the grid."""
    B_margins = [np.atleast_2d(np.asarray(B, dtype=float)) for B in B_margins]
    dims = tuple(B.shape[1] for B in B_margins)
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 1:
        if theta.size != int(np.prod(dims)):
            raise ValueError("coefficient vector does not match the marginal bases")
        theta = from_vec(theta, dims)
    if theta.shape != dims:
        raise ValueError(f"coefficient array has shape {theta.shape}, expected {dims}")
    return kron_apply(B_margins, theta)


def glam_transpose_apply(B_margins, Y) -> np.ndarray:
    """``B' vec(Y)`` as a coefficient array."""
    return kron_apply([np.asarray(B, dtype=float).T for B in B_margins], Y)


def glam_weighted_inner(B_margins, W, right_margins=None) -> np.ndarray:
    """``L' diag(vec W) R`` with ``L`` and ``R`` Kronecker products of marginals.

    With ``right_margins`` omitted this is the weighted Gram matrix
    ``B' W B`` of the tensor-product design on the grid. Only the
    row-wise products of the marginals are formed.
    """
    left = [np.atleast_2d(np.asarray(B, dtype=float)) for B in B_margins]
    right = left if right_margins is None else [np.atleast_2d(np.asarray(B, dtype=float))
                                                for B in right_margins]
    W = np.asarray(W, dtype=float)
    if len(left) != W.ndim or len(right) != W.ndim:
        raise ValueError("one marginal per grid axis required")
    for L, R, n in zip(left, right, W.shape):
        if L.shape[0] != n or R.shape[0] != n:
            raise ValueError("marginal row counts must equal the grid extents")
    A = W
    for L, R in zip(left, right):
        rows = (L[:, :, None] * R[:, None, :]).reshape(L.shape[0], -1)
        A = rh_transform(rows.T, A)
    K = W.ndim
    shape = []
    for L, R in zip(left, right):
        shape += [L.shape[1], R.shape[1]]
    A = A.reshape(shape)
    # axes are (l1, r1, l2, r2, ...); order as (lK..l1, rK..r1) for Fortran vec indices
    order = [2 * m for m in reversed(range(K))] + [2 * m + 1 for m in reversed(range(K))]
    A = A.transpose(order)
    n_left = int(np.prod([L.shape[1] for L in left]))
    return A.reshape(n_left, -1)
