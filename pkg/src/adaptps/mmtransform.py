"""Mixed-model reparameterisation of penalised tensor-product splines.

With ``D_m'D_m = U_m diag(s_m) U_m'`` split into null-space eigenvectors
``U_m0`` and penalised ones ``U_m+``, the coefficients are rotated by

    T = [T_0 | T_+],  T_0 = U_K0 (x) ... (x) U_10,

where ``T_+`` collects every other Kronecker combination. Blocks are
ordered by the number of penalised factors, then lexicographically by
covariate, which gives ``[U20 (x) U1+ | U2+ (x) U10 | U2+ (x) U1+]`` in two
dimensions and the seven-block layout in three. Then ``B theta = X beta +
Z alpha`` with ``X = B T_0`` unpenalised and ``Z = B T_+`` penalised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import linalg

from .basis import BasisSpec, diff_matrix, kron, tensor_design
from .glam import glam_weighted_inner
from .penalty import PenaltyGroup

ZERO_EIG_TOL = 1e-10


class IdentifiabilityError(np.linalg.LinAlgError, ValueError):
    """The data cannot identify the unpenalised part of the model."""


@dataclass(frozen=True)
class MarginalEVD:
    U_zero: np.ndarray
    U_plus: np.ndarray
    sigma_plus: np.ndarray
    D: np.ndarray = field(repr=False)

    @property
    def q(self) -> int:
        return self.U_zero.shape[1]

    def factor(self, penalised: bool) -> np.ndarray:
        return self.U_plus if penalised else self.U_zero


def _pin_signs(U: np.ndarray) -> np.ndarray:
    U = U.copy()
    for j in range(U.shape[1]):
        col = U[:, j]
        big = np.flatnonzero(np.abs(col) > 1e-8 * np.abs(col).max())
        if col[big[0]] < 0:
            U[:, j] = -col
    return U


def marginal_evd(spec: BasisSpec) -> MarginalEVD:
    """Eigen-split of ``D'D`` into its null space and penalised part.

    Eigenvalues below ``1e-10`` times the largest count as zero; the
    null space must have dimension exactly ``q``.
    """
    D = diff_matrix(spec.d, spec.q)
    evals, evecs = linalg.eigh(D.T @ D)
    null = evals < ZERO_EIG_TOL * evals.max()
    if null.sum() != spec.q:
        raise np.linalg.LinAlgError(
            f"penalty null space has dimension {null.sum()}, expected q={spec.q}"
        )
    evecs = _pin_signs(evecs)
    return MarginalEVD(evecs[:, null], evecs[:, ~null], evals[~null], D)


def block_patterns(K: int) -> list:
    """Penalised-factor patterns of the ``T_+`` blocks, one tuple of bools per block."""
    patterns = []
    for size in range(1, K + 1):
        for subset in combinations(range(K), size):
            patterns.append(tuple(m in subset for m in range(K)))
    return patterns


def build_transforms(evds) -> tuple:
    """Return ``(T_zero, T_plus)`` for the given marginal decompositions."""
    evds = list(evds)
    T_zero = kron(*[e.U_zero for e in evds[::-1]])
    blocks = [kron(*[e.factor(pat[m]) for m, e in reversed(list(enumerate(evds)))])
              for pat in block_patterns(len(evds))]
    return T_zero, np.hstack(blocks)


def build_design(B_margins, evds) -> tuple:
    """Fixed and random design matrices ``X = B T_0`` and ``Z = B T_+``.

    Built blockwise from the transformed marginals ``B_m U_m0`` and
    ``B_m U_m+`` without forming the full tensor-product design.
    """
    B_margins = [np.asarray(B, dtype=float) for B in B_margins]
    evds = list(evds)
    if len(B_margins) != len(evds):
        raise ValueError("one marginal design per decomposition required")
    n = B_margins[0].shape[0]
    for B, e in zip(B_margins, evds):
        if B.shape[0] != n:
            raise ValueError("marginal designs must share their row count")
        if B.shape[1] != e.U_zero.shape[0]:
            raise ValueError("marginal design does not conform to its decomposition")
    zero = [B @ e.U_zero for B, e in zip(B_margins, evds)]
    plus = [B @ e.U_plus for B, e in zip(B_margins, evds)]
    X = tensor_design(zero)
    Z = np.hstack([tensor_design([plus[m] if pat[m] else zero[m] for m in range(len(evds))])
                   for pat in block_patterns(len(evds))])
    return X, Z


def build_G_components(T_plus, components) -> list:
    """Dense precision components ``T_+' P_l T_+``."""
    T_plus = np.asarray(T_plus, dtype=float)
    out = []
    for comp in components:
        P = comp.matrix if hasattr(comp, "matrix") else np.asarray(comp, dtype=float)
        out.append(T_plus.T @ P @ T_plus)
    return out


def difference_map(evds, m: int) -> np.ndarray:
    """``A_m @ T_+`` assembled from Kronecker blocks of the marginal factors."""
    evds = list(evds)
    blocks = []
    for pat in block_patterns(len(evds)):
        factors = []
        for w, e in enumerate(evds):
            F = e.factor(pat[w])
            factors.append(e.D @ F if w == m else F)
        blk = kron(*factors[::-1])
        if not pat[m]:
            # D_m U_m0 vanishes analytically
            blk = np.zeros_like(blk)
        blocks.append(blk)
    return np.hstack(blocks)


def glam_G_components(evds, group: PenaltyGroup) -> list:
    """Dense ``G_l`` of one covariate via array inner products.

    Each column of ``Psi_m`` is separable over the difference grid and
    each ``T_+`` block is a Kronecker product, so every block of ``G_l`` is
    an array-weighted inner product of marginal factors.
    """
    evds = list(evds)
    m = group.dimension
    pats = block_patterns(len(evds))
    margins = []
    for pat in pats:
        margins.append([e.D @ e.factor(pat[w]) if w == m else e.factor(pat[w])
                        for w, e in enumerate(evds)])
    widths = [int(np.prod([F.shape[1] for F in mg])) for mg in margins]
    offsets = np.concatenate([[0], np.cumsum(widths)])
    shape = tuple(F.shape[0] for F in group.factors)
    out = []
    for u in range(group.n_components):
        W = group.psi[:, u].reshape(shape, order="F")
        G = np.zeros((offsets[-1], offsets[-1]))
        for i in range(len(pats)):
            for j in range(i, len(pats)):
                blk = glam_weighted_inner(margins[i], W, margins[j])
                G[offsets[i]:offsets[i + 1], offsets[j]:offsets[j + 1]] = blk
                if j != i:
                    G[offsets[j]:offsets[j + 1], offsets[i]:offsets[i + 1]] = blk.T
        out.append(G)
    return out


class GroupedComponents:
    """Precision components ``G_l = M_m' diag(psi_l) M_m`` stored per covariate.

    Only the difference maps ``M_m = A_m T_+`` and the bases ``Psi_m`` are
    kept, which makes assembling ``G^-1``, the quadratic forms and the
    traces needed by the variance update cheap even for hundreds of
    components.
    """

    def __init__(self, maps, psis, dims_tag=None):
        self.maps = [np.asarray(M, dtype=float) for M in maps]
        self.psis = [np.asarray(P, dtype=float) for P in psis]
        sizes = [P.shape[1] for P in self.psis]
        self.slices = []
        start = 0
        for k in sizes:
            self.slices.append(slice(start, start + k))
            start += k
        self.n_components = start
        self.n_random = self.maps[0].shape[1]
        self.tags = dims_tag if dims_tag is not None else [
            (m, u) for m, k in enumerate(sizes) for u in range(k)]

    def __len__(self):
        return self.n_components

    def precision(self, prec) -> np.ndarray:
        prec = np.asarray(prec, dtype=float)
        out = np.zeros((self.n_random, self.n_random))
        for M, P, sl in zip(self.maps, self.psis, self.slices):
            lam = P @ prec[sl]
            out += M.T @ (lam[:, None] * M)
        return out

    def quad(self, alpha) -> np.ndarray:
        out = np.empty(self.n_components)
        for M, P, sl in zip(self.maps, self.psis, self.slices):
            out[sl] = P.T @ (M @ alpha) ** 2
        return out

    def traces(self, S) -> np.ndarray:
        out = np.empty(self.n_components)
        for M, P, sl in zip(self.maps, self.psis, self.slices):
            out[sl] = P.T @ np.einsum("ij,ij->i", M @ S, M)
        return out

    def roots(self) -> tuple:
        """``(R, Psi)`` with ``G_l = R' diag(Psi[:, l]) R``; rows of ``R`` are coefficient differences."""
        return np.vstack(self.maps), linalg.block_diag(*self.psis)

    def dense(self) -> list:
        mats = []
        for M, P in zip(self.maps, self.psis):
            for u in range(P.shape[1]):
                mats.append(M.T @ (P[:, u, None] * M))
        return mats


class DenseComponents:
    """Precision components given as explicit symmetric matrices."""

    def __init__(self, mats):
        self.mats = [np.asarray(G, dtype=float) for G in mats]
        if not self.mats:
            raise ValueError("at least one precision component is required")
        self.n_random = self.mats[0].shape[0]
        for G in self.mats:
            if G.shape != (self.n_random, self.n_random):
                raise ValueError("precision components must be square and of equal size")
        self.n_components = len(self.mats)
        self.tags = [(0, u) for u in range(self.n_components)]

    def __len__(self):
        return self.n_components

    def precision(self, prec) -> np.ndarray:
        return sum(p * G for p, G in zip(prec, self.mats))

    def quad(self, alpha) -> np.ndarray:
        return np.array([alpha @ G @ alpha for G in self.mats])

    def traces(self, S) -> np.ndarray:
        return np.array([np.einsum("ij,ji->", G, S) for G in self.mats])

    def roots(self) -> tuple:
        """``(R, Psi)`` with ``G_l = R' diag(Psi[:, l]) R``, from eigen-square-roots."""
        rows, owner = [], []
        for l, G in enumerate(self.mats):
            s, V = linalg.eigh(0.5 * (G + G.T))
            keep = s > ZERO_EIG_TOL * max(s.max(), 0.0)
            if not keep.any():
                raise np.linalg.LinAlgError(f"precision component {l + 1} is zero")
            if s.min() < -1e-8 * s.max():
                raise np.linalg.LinAlgError(f"precision component {l + 1} is not positive semidefinite")
            rows.append(np.sqrt(s[keep])[:, None] * V[:, keep].T)
            owner += [l] * int(keep.sum())
        Psi = np.zeros((len(owner), self.n_components))
        Psi[np.arange(len(owner)), owner] = 1.0
        return np.vstack(rows), Psi

    def dense(self) -> list:
        return list(self.mats)


def as_component_set(components):
    if isinstance(components, (GroupedComponents, DenseComponents)):
        return components
    return DenseComponents(components)


@dataclass
class MixedModelParts:
    """Everything needed to fit one penalised tensor-product model."""

    specs: tuple
    evds: tuple
    T_zero: np.ndarray = field(repr=False)
    T_plus: np.ndarray = field(repr=False)
    groups: list = field(repr=False)
    components: GroupedComponents = field(repr=False)
    X: np.ndarray | None = field(default=None, repr=False)
    Z: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_fixed(self) -> int:
        return self.T_zero.shape[1]

    @property
    def n_random(self) -> int:
        return self.T_plus.shape[1]

    @property
    def T(self) -> np.ndarray:
        return np.hstack([self.T_zero, self.T_plus])

    def G_components(self) -> list:
        return self.components.dense()


def build_parts(specs, groups, B_margins=None) -> MixedModelParts:
    """Reparameterise the model given marginal specs and penalty groups.

    When ``B_margins`` (scattered data, one row per observation) is given,
    ``X`` and ``Z`` are built as well.
    """
    specs = tuple(specs)
    evds = tuple(marginal_evd(s) for s in specs)
    T_zero, T_plus = build_transforms(evds)
    maps = [difference_map(evds, g.dimension) for g in groups]
    tags = [(g.dimension, u) for g in groups for u in range(g.n_components)]
    comps = GroupedComponents(maps, [g.psi for g in groups], tags)
    X = Z = None
    if B_margins is not None:
        check_fixed_rank(B_margins, evds)
        X, Z = build_design(B_margins, evds)
    return MixedModelParts(specs, evds, T_zero, T_plus, list(groups), comps, X, Z)


def check_fixed_rank(B_margins, evds):
    """Raise if the unpenalised part is not identifiable along some covariate."""
    for m, (B, e) in enumerate(zip(B_margins, evds)):
        F = B @ e.U_zero
        sv = np.linalg.svd(F, compute_uv=False)
        if sv.size == 0 or sv[-1] <= 1e-9 * max(sv[0], 1.0):
            raise IdentifiabilityError(
                f"covariate {m + 1}: too few distinct values to identify its "
                f"unpenalised polynomial of order q={e.q}"
            )
