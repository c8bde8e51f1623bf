import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptps.basis import BasisSpec, eval_basis, tensor_design
from adaptps.mmtransform import (DenseComponents, IdentifiabilityError, block_patterns,
                                 build_G_components, build_parts, check_fixed_rank,
                                 difference_map, glam_G_components, marginal_evd)
from adaptps.penalty import AdaptivePenaltySpec, difference_operator, penalty_groups


def _parts(d, q, p=2, n=40, seed=0):
    rng = np.random.default_rng(seed)
    specs = tuple(BasisSpec(0.0, 1.0, k, q=qq) for k, qq in zip(d, q))
    x = rng.uniform(size=(n, len(d)))
    margins = [eval_basis(x[:, m], s) for m, s in enumerate(specs)]
    groups = penalty_groups(AdaptivePenaltySpec(specs, ("full",) * len(d), p))
    return specs, margins, groups, build_parts(specs, groups, margins)


@pytest.mark.parametrize("d", [6, 9, 12])
@pytest.mark.parametrize("q", [1, 2, 3])
def test_marginal_split(d, q):
    e = marginal_evd(BasisSpec(0, 1, d, q=q))
    U = np.hstack([e.U_zero, e.U_plus])
    assert e.q == q
    assert np.allclose(U.T @ U, np.eye(d), atol=1e-10)
    assert np.allclose(e.D.T @ e.D @ e.U_zero, 0.0, atol=1e-10)
    assert np.all(e.sigma_plus > 1e-10)
    # null space is spanned by polynomials of degree < q in the coefficient index
    j = np.arange(d, dtype=float)
    poly = np.column_stack([j ** k for k in range(q)])
    proj = e.U_zero @ (e.U_zero.T @ poly)
    assert np.allclose(proj, poly, atol=1e-8)


def test_block_layouts():
    assert block_patterns(2) == [(True, False), (False, True), (True, True)]
    assert len(block_patterns(3)) == 7
    assert block_patterns(3)[:3] == [(True, False, False), (False, True, False), (False, False, True)]


@pytest.mark.parametrize("d,q", [((5, 4), (2, 1)), ((5, 4, 4), (2, 1, 2))])
def test_mixed_model_exactness(d, q):
    specs, margins, groups, parts = _parts(d, q)
    T = parts.T
    assert np.allclose(T.T @ T, np.eye(T.shape[0]), atol=1e-10)
    rng = np.random.default_rng(5)
    theta = rng.normal(size=T.shape[0])
    beta, alpha = np.split(T.T @ theta, [parts.n_fixed])
    B = tensor_design(margins)
    assert np.max(np.abs(B @ theta - (parts.X @ beta + parts.Z @ alpha))) <= 1e-10
    for g in groups:
        for c in g.components():
            P = c.matrix
            assert np.max(np.abs(parts.T_zero.T @ P @ parts.T_zero)) <= 1e-10
            assert np.max(np.abs(parts.T_zero.T @ P @ parts.T_plus)) <= 1e-10
    assert parts.n_fixed == np.prod(q)


def test_difference_maps_match_operators():
    specs, _, groups, parts = _parts((5, 4, 4), (2, 1, 2))
    for m in range(3):
        A = difference_operator(specs, m)
        assert np.allclose(difference_map(parts.evds, m), A @ parts.T_plus, atol=1e-12)


@pytest.mark.parametrize("d,q", [((5, 4), (2, 1)), ((5, 4, 4), (2, 1, 2))])
def test_precision_component_constructions_agree(d, q):
    specs, _, groups, parts = _parts(d, q)
    comps = [c for g in groups for c in g.components()]
    naive = build_G_components(parts.T_plus, comps)
    grouped = parts.components.dense()
    arrays = [G for g in groups for G in glam_G_components(parts.evds, g)]
    for a, b, c in zip(naive, grouped, arrays):
        assert np.max(np.abs(a - b)) <= 1e-10
        assert np.max(np.abs(a - c)) <= 1e-10


def test_roots_reproduce_components():
    _, _, _, parts = _parts((6, 5), (2, 2), p=2)
    R, Psi = parts.components.roots()
    for l, G in enumerate(parts.components.dense()):
        assert np.allclose(R.T @ (Psi[:, l, None] * R), G, atol=1e-12)
    dense = DenseComponents(parts.components.dense())
    R2, Psi2 = dense.roots()
    for l, G in enumerate(dense.mats):
        assert np.allclose(R2.T @ (Psi2[:, l, None] * R2), G, atol=1e-10)


def test_grouped_helpers_match_dense():
    _, _, _, parts = _parts((6, 5), (2, 2), p=2)
    comps = parts.components
    dense = DenseComponents(comps.dense())
    rng = np.random.default_rng(0)
    prec = rng.uniform(0.5, 2, size=len(comps))
    a = rng.normal(size=comps.n_random)
    S = rng.normal(size=(comps.n_random,) * 2)
    assert np.allclose(comps.precision(prec), dense.precision(prec))
    assert np.allclose(comps.quad(a), dense.quad(a))
    assert np.allclose(comps.traces(S), dense.traces(S))


def test_dense_components_validation():
    with pytest.raises(ValueError):
        DenseComponents([])
    with pytest.raises(np.linalg.LinAlgError):
        DenseComponents([np.zeros((2, 2))]).roots()
    with pytest.raises(np.linalg.LinAlgError):
        DenseComponents([np.diag([1.0, -1.0])]).roots()


def test_unidentifiable_fixed_part():
    spec = BasisSpec(0, 1, 8, q=2)
    B = eval_basis(np.full(10, 0.3), spec)
    with pytest.raises(IdentifiabilityError):
        check_fixed_rank([B], [marginal_evd(spec)])
    # the error is both a linear-algebra failure and an input error
    assert issubclass(IdentifiabilityError, ValueError)


@settings(max_examples=20, deadline=None)
@given(st.integers(4, 8), st.integers(4, 7), st.integers(1, 2), st.integers(1, 2),
       st.integers(0, 10 ** 6))
def test_transform_orthonormal_and_penalty_free_fixed_part(d1, d2, q1, q2, seed):
    specs = (BasisSpec(0, 1, d1, q=q1), BasisSpec(0, 1, d2, q=q2))
    groups = penalty_groups(AdaptivePenaltySpec(specs, ("none", "none"), 1))
    parts = build_parts(specs, groups)
    T = parts.T
    assert np.allclose(T.T @ T, np.eye(d1 * d2), atol=1e-10)
    P = sum(g.matrix([1.0]) for g in groups)
    assert np.allclose(P @ parts.T_zero, 0.0, atol=1e-9)
    rng = np.random.default_rng(seed)
    prec = rng.uniform(0.1, 10, size=2)
    G_inv = parts.components.precision(prec)
    P_w = sum(w * g.matrix([1.0]) for w, g in zip(prec, groups))
    assert np.allclose(G_inv, parts.T_plus.T @ P_w @ parts.T_plus, atol=1e-8)
