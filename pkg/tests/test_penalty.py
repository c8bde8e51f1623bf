import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from adaptps.basis import BasisSpec
from adaptps.penalty import (AdaptivePenaltySpec, AdaptivityMode, adaptive_components,
                             adaptive_components_1d, adaptive_penalty_direct, combine,
                             penalty_groups, psi_matrix, standard_penalty, standard_spec)


def brute_difference_rows(dims, m):
    """Rows of the order-q differences along covariate m, built index by index."""
    d = [s.d for s in dims]
    q = dims[m].q
    shape = [n - q if w == m else n for w, n in enumerate(d)]
    rows = []
    # Fortran order over the difference grid: first index fastest
    for idx in itertools.product(*[range(n) for n in reversed(shape)]):
        idx = idx[::-1]
        r = np.zeros(int(np.prod(d)))
        for k in range(q + 1):
            pos = list(idx)
            pos[m] += k
            flat = np.ravel_multi_index(pos, d, order="F")
            r[flat] += (-1) ** (q - k) * comb(q, k)
        rows.append(r)
    return np.array(rows)


def brute_direct(dims, lambda_vecs):
    P = 0.0
    for m, lam in enumerate(lambda_vecs):
        A = brute_difference_rows(dims, m)
        P = P + A.T @ (np.asarray(lam)[:, None] * A)
    return P


def kron_f(factors):
    out = np.ones((1, 1))
    for F in factors:
        out = np.kron(F, out)
    return out


def test_psi_matrix_shapes_and_partition():
    P = psi_matrix(10, 5)
    assert P.shape == (10, 5)
    assert np.allclose(P.sum(axis=1), 1.0)
    assert np.array_equal(psi_matrix(7, 1), np.ones((7, 1)))
    # degree lowered so that p=2 is a linear interpolation basis
    assert np.allclose(psi_matrix(5, 2)[:, 1], np.linspace(0, 1, 5))
    with pytest.raises(ValueError):
        psi_matrix(3, 4)
    with pytest.raises(ValueError):
        psi_matrix(3, 0)


def test_difference_operator_matches_brute_rows():
    dims = (BasisSpec(0, 1, 5, q=2), BasisSpec(0, 1, 4, q=1), BasisSpec(0, 1, 4, q=2))
    for g in penalty_groups(AdaptivePenaltySpec(dims, ("none",) * 3, 1)):
        assert np.array_equal(g.diff_op, brute_difference_rows(dims, g.dimension))


def _random_instance(rng, dims, p):
    spec = AdaptivePenaltySpec(dims, ("full",) * len(dims), p)
    comps = adaptive_components(spec)
    xi = rng.exponential(size=len(comps)) * (rng.uniform(size=len(comps)) > 0.2)
    lam = []
    k = 0
    for m in range(len(dims)):
        factors = [psi_matrix(r, pw) for r, pw in zip(spec.psi_rows(m), spec.effective_p(m))]
        n = spec.n_components(m)
        lam.append(kron_f(factors) @ xi[k:k + n])
        k += n
    return comps, xi, lam


def test_reduced_sum_equals_direct_penalty_2d():
    rng = np.random.default_rng(2)
    dims = (BasisSpec(0, 1, 5, q=2), BasisSpec(0, 1, 4, q=1))
    for _ in range(20):
        comps, xi, lam = _random_instance(rng, dims, 2)
        assert np.max(np.abs(combine(comps, xi) - brute_direct(dims, lam))) <= 1e-10


def test_reduced_sum_equals_direct_penalty_3d():
    rng = np.random.default_rng(3)
    dims = (BasisSpec(0, 1, 5, q=2), BasisSpec(0, 1, 4, q=1), BasisSpec(0, 1, 4, q=1))
    for _ in range(5):
        comps, xi, lam = _random_instance(rng, dims, 2)
        assert np.max(np.abs(combine(comps, xi) - brute_direct(dims, lam))) <= 1e-10


def test_direct_penalty_builder_matches_brute_force():
    rng = np.random.default_rng(4)
    dims = (BasisSpec(0, 1, 5, q=2), BasisSpec(0, 1, 4, q=1))
    lam = [rng.uniform(size=12), rng.uniform(size=15)]
    assert np.allclose(adaptive_penalty_direct(lam, dims), brute_direct(dims, lam), atol=1e-13)


@pytest.mark.parametrize("d", [(5, 4), (5, 4, 4)])
def test_all_none_collapses_to_standard_penalty(d):
    dims = tuple(BasisSpec(0, 1, k, q=2) for k in d)
    lams = np.arange(1.0, len(d) + 1)
    spec = AdaptivePenaltySpec(dims, ("none",) * len(d), 5)
    comps = adaptive_components(spec)
    assert len(comps) == len(d)
    P = combine(comps, lams)
    assert np.array_equal(P, standard_penalty(lams, dims))
    oracle = 0.0
    for m, s in enumerate(dims):
        D = np.diff(np.eye(s.d), n=s.q, axis=0)
        factors = [D.T @ D if w == m else np.eye(t.d) for w, t in enumerate(dims)]
        oracle = oracle + lams[m] * kron_f(factors)
    assert np.allclose(P, oracle, atol=1e-12)
    assert standard_spec(dims).n_components() == len(d)


def test_component_counts():
    d12 = (BasisSpec(0, 1, 12), BasisSpec(0, 1, 12))
    assert AdaptivePenaltySpec(d12, ("full", "full"), 5).n_components() == 50
    d11 = (BasisSpec(0, 1, 11),) * 3
    assert AdaptivePenaltySpec(d11, ("full",) * 3, 6).n_components() == 648
    spec = AdaptivePenaltySpec(d12, ("vary_with_others", "vary_along_self"), ((3, 4), (5, 6)))
    assert spec.effective_p(0) == (1, 4)
    assert spec.effective_p(1) == (1, 6)
    assert spec.n_components() == 10


def test_mode_parsing():
    assert AdaptivityMode.parse("FULL") is AdaptivityMode.FULL
    assert AdaptivityMode.parse("standard") is AdaptivityMode.NONE
    with pytest.raises(ValueError):
        AdaptivityMode.parse("sometimes")


def test_too_many_parameters_rejected():
    dims = (BasisSpec(0, 1, 6, q=2),)
    with pytest.raises(ValueError):
        AdaptivePenaltySpec(dims, ("full",), 5)


def test_one_dimensional_components():
    spec = BasisSpec(0, 1, 10, q=2)
    comps = adaptive_components_1d(spec, 4)
    assert len(comps) == 4
    D = np.diff(np.eye(10), n=2, axis=0)
    assert np.allclose(combine(comps, np.ones(4)), D.T @ D)


@settings(max_examples=25, deadline=None)
@given(st.integers(5, 8), st.integers(4, 7), st.integers(1, 3), st.integers(1, 2),
       st.sampled_from(list(AdaptivityMode)), st.sampled_from(list(AdaptivityMode)))
def test_components_are_psd_and_sum_to_unweighted_penalty(d1, d2, p, q, mode1, mode2):
    dims = (BasisSpec(0, 1, d1, q=q), BasisSpec(0, 1, d2, q=q))
    try:
        spec = AdaptivePenaltySpec(dims, (mode1, mode2), p)
    except ValueError:
        assume(False)
    comps = adaptive_components(spec)
    for c in comps:
        assert np.linalg.eigvalsh(c.matrix).min() > -1e-10
    # the smoothing bases partition unity, so unit weights give the plain penalty
    assert np.allclose(combine(comps, np.ones(len(comps))), standard_penalty([1.0, 1.0], dims))
