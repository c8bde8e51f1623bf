import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptps.basis import BasisSpec, eval_basis, tensor_design
from adaptps.glam import (from_vec, glam_fitted, glam_transpose_apply, glam_weighted_inner,
                          kron_apply, rh_transform, to_vec)
from adaptps.sop import DenseDesign, GridDesign


def _grid_margins(shape, d, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for n, k in zip(shape, d):
        spec = BasisSpec(0.0, 1.0, k, degree=2, q=1)
        out.append(eval_basis(np.sort(rng.uniform(size=n)), spec))
    return out


def _full_design(margins):
    """Rows of the grid design in column-major cell order."""
    return tensor_design([np.asarray(B) for B in _expand(margins)])


def _expand(margins):
    shape = [B.shape[0] for B in margins]
    idx = np.indices(shape).reshape(len(shape), -1, order="F")
    return [B[i] for B, i in zip(margins, idx)]


def test_vec_round_trip():
    A = np.arange(24.0).reshape(2, 3, 4)
    assert np.array_equal(from_vec(to_vec(A), A.shape), A)
    assert to_vec(A)[1] == A[1, 0, 0]


def test_rh_transform_validates_shapes():
    with pytest.raises(ValueError):
        rh_transform(np.eye(3), np.zeros((2, 2)))


@pytest.mark.parametrize("shape,d", [((4, 3), (3, 3)), ((4, 3, 3), (3, 3, 4))])
def test_glam_matches_naive(shape, d):
    margins = _grid_margins(shape, d)
    B = _full_design(margins)
    rng = np.random.default_rng(1)
    theta = rng.normal(size=B.shape[1])
    Y = rng.normal(size=shape)
    W = rng.uniform(0.5, 2.0, size=shape)
    assert np.max(np.abs(to_vec(glam_fitted(margins, theta)) - B @ theta)) <= 1e-10
    assert np.max(np.abs(to_vec(glam_transpose_apply(margins, Y)) - B.T @ to_vec(Y))) <= 1e-10
    naive = B.T @ (to_vec(W)[:, None] * B)
    assert np.max(np.abs(glam_weighted_inner(margins, W) - naive)) <= 1e-10


def test_weighted_inner_with_distinct_right_margins():
    left = _grid_margins((4, 3), (3, 3), seed=2)
    right = _grid_margins((4, 3), (4, 5), seed=3)
    W = np.random.default_rng(4).uniform(size=(4, 3))
    L, R = _full_design(left), _full_design(right)
    assert np.allclose(glam_weighted_inner(left, W, right), L.T @ (to_vec(W)[:, None] * R))


def test_grid_design_matches_dense_design():
    margins = _grid_margins((5, 4, 3), (4, 3, 3))
    B = _full_design(margins)
    rng = np.random.default_rng(5)
    T, _ = np.linalg.qr(rng.normal(size=(B.shape[1],) * 2))
    f = 4
    grid = GridDesign(margins, T, f)
    dense = DenseDesign(B @ T[:, :f], B @ T[:, f:])
    w = rng.uniform(0.5, 2, size=B.shape[0])
    v = rng.normal(size=B.shape[0])
    b = rng.normal(size=B.shape[1])
    assert np.allclose(grid.cross(w), dense.cross(w), atol=1e-10)
    assert np.allclose(grid.tmul(v), dense.tmul(v), atol=1e-10)
    assert np.allclose(grid.mul(b), dense.mul(b), atol=1e-10)
    assert grid.n_obs == dense.n_obs and grid.n_fixed == dense.n_fixed == f


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 5), st.integers(1, 4)), min_size=1, max_size=3),
       st.integers(0, 10 ** 6))
def test_kron_apply_matches_explicit_kronecker(dims, seed):
    rng = np.random.default_rng(seed)
    mats = [rng.normal(size=(r, c)) for r, c in dims]
    A = rng.normal(size=tuple(c for _, c in dims))
    K = np.ones((1, 1))
    for M in mats:
        K = np.kron(M, K)
    assert np.allclose(to_vec(kron_apply(mats, A)), K @ to_vec(A))
