"""Anisotropic and locally adaptive difference penalties in 1, 2 and 3 dimensions.

An adaptive penalty along covariate ``m`` weights every order-``q_m``
coefficient difference by its own smoothing parameter. The vector of
those parameters is itself smoothed as ``lambda_m = Psi_m @ xi_m`` with
``Psi_m = Psi_mK (x) ... (x) Psi_m1`` a tensor product of small B-spline
bases over the index grid of the differences. Each column of ``Psi_m``
then yields one penalty component

    A_m.T @ diag(psi) @ A_m,   A_m = I_dK (x) ... (x) D_qm (x) ... (x) I_d1,

and the full penalty is the ``xi``-weighted sum of all components.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec, diff_matrix, eval_basis, kron


class AdaptivityMode(enum.Enum):
    """How the smoothing along one covariate may vary.

    ``VARY_WITH_OTHERS`` keeps one smoothing parameter along the covariate
    but lets it change with the remaining covariates; ``VARY_ALONG_SELF``
    lets it change along the covariate only.
    """

    NONE = "none"
    FULL = "full"
    VARY_WITH_OTHERS = "vary_with_others"
    VARY_ALONG_SELF = "vary_along_self"

    @classmethod
    def parse(cls, value) -> "AdaptivityMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"s2": "vary_with_others", "sii": "vary_with_others",
                   "s3": "vary_along_self", "siii": "vary_along_self",
                   "standard": "none"}
        key = aliases.get(key, key)
        for mode in cls:
            if mode.value == key or mode.name.lower() == key:
                return mode
        raise ValueError(f"unknown adaptivity mode {value!r}")


def psi_matrix(n_rows: int, p: int, psi_degree: int = 3) -> np.ndarray:
    """B-spline basis of dimension ``p`` over the index grid ``1..n_rows``.

    ``p == 1`` gives a column of ones. For ``1 < p <= psi_degree`` the
    degree is lowered to ``p - 1`` so that the basis exists.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    if p > n_rows:
        raise ValueError(f"p={p} exceeds the number of smoothing parameters it smooths ({n_rows})")
    if p == 1:
        return np.ones((n_rows, 1))
    degree = min(psi_degree, p - 1)
    spec = BasisSpec(1.0, float(n_rows), p, degree=degree, q=1)
    return eval_basis(np.arange(1, n_rows + 1, dtype=float), spec)


@dataclass(frozen=True)
class AdaptivePenaltySpec:
    """Adaptive penalty configuration for a 1-3 dimensional tensor-product model.

    ``p[m][w]`` is the dimension of the B-spline basis that smooths the
    parameters of covariate ``m`` along covariate ``w``.
    """

    dims: tuple
    modes: tuple
    p: tuple
    psi_degree: int = 3

    def __post_init__(self):
        dims = tuple(self.dims)
        K = len(dims)
        if not 1 <= K <= 3:
            raise ValueError("between one and three covariates are supported")
        modes = tuple(AdaptivityMode.parse(m) for m in self.modes)
        if len(modes) != K:
            raise ValueError(f"expected {K} adaptivity modes, got {len(modes)}")
        p = np.asarray(self.p, dtype=int)
        if p.ndim == 0:
            p = np.full((K, K), int(p))
        elif p.ndim == 1:
            if p.size != K:
                raise ValueError("p must have one entry per covariate")
            p = np.tile(p[:, None], (1, K))
        if p.shape != (K, K):
            raise ValueError(f"p must be {K}x{K}")
        if np.any(p < 1):
            raise ValueError("every p must be at least 1")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "p", tuple(tuple(int(v) for v in row) for row in p))
        for m in range(K):
            n_comp = int(np.prod(self.effective_p(m)))
            n_diff = self.n_differences(m)
            if n_comp > 1 and n_comp >= n_diff:
                raise ValueError(
                    f"covariate {m + 1}: {n_comp} smoothing parameters do not reduce "
                    f"the {n_diff} coefficient differences"
                )
            for w, (rows, pw) in enumerate(zip(self.psi_rows(m), self.effective_p(m))):
                if pw > rows:
                    raise ValueError(
                        f"p[{m + 1}][{w + 1}]={pw} exceeds the {rows} smoothing parameters along covariate {w + 1}"
                    )

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def n_coef(self) -> int:
        return int(np.prod([s.d for s in self.dims]))

    def n_differences(self, m: int) -> int:
        return int(np.prod(self.psi_rows(m)))

    def psi_rows(self, m: int) -> tuple:
        return tuple(s.d - s.q if w == m else s.d for w, s in enumerate(self.dims))

    def effective_p(self, m: int) -> tuple:
        mode = self.modes[m]
        out = []
        for w in range(self.ndim):
            own = w == m
            keep = (mode is AdaptivityMode.FULL
                    or (mode is AdaptivityMode.VARY_WITH_OTHERS and not own)
                    or (mode is AdaptivityMode.VARY_ALONG_SELF and own))
            out.append(self.p[m][w] if keep else 1)
        return tuple(out)

    def n_components(self, m: int | None = None) -> int:
        if m is None:
            return sum(self.n_components(j) for j in range(self.ndim))
        return int(np.prod(self.effective_p(m)))


def standard_spec(dims) -> AdaptivePenaltySpec:
    """Non-adaptive (anisotropic) penalty spec: one parameter per covariate."""
    K = len(dims)
    return AdaptivePenaltySpec(tuple(dims), (AdaptivityMode.NONE,) * K, 1)


def difference_operator(dims, m: int) -> np.ndarray:
    """``I (x) .. (x) D_qm (x) .. (x) I`` acting on the full coefficient vector."""
    factors = [diff_matrix(s.d, s.q) if w == m else np.eye(s.d) for w, s in enumerate(dims)]
    return kron(*factors[::-1])


@dataclass(frozen=True, eq=False)
class PenaltyComponent:
    """One summand ``A.T @ diag(psi) @ A`` of an adaptive penalty.

    The dense matrix is built on access; components of one covariate
    share their difference operator.
    """

    diff_op: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)
    dimension: int
    index: int

    @property
    def matrix(self) -> np.ndarray:
        A = self.diff_op
        return A.T @ (self.psi[:, None] * A)

    @property
    def size(self) -> int:
        return self.diff_op.shape[1]


@dataclass(frozen=True, eq=False)
class PenaltyGroup:
    """All components acting on the differences along one covariate."""

    dimension: int
    diff_op: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)
    factors: tuple = field(repr=False, default=())

    @property
    def n_components(self) -> int:
        return self.psi.shape[1]

    def components(self) -> list:
        return [PenaltyComponent(self.diff_op, self.psi[:, u], self.dimension, u)
                for u in range(self.n_components)]

    def lambdas(self, xi) -> np.ndarray:
        return self.psi @ np.asarray(xi, dtype=float)

    def matrix(self, xi) -> np.ndarray:
        lam = self.lambdas(xi)
        return self.diff_op.T @ (lam[:, None] * self.diff_op)


def penalty_groups(spec: AdaptivePenaltySpec) -> list:
    """One :class:`PenaltyGroup` per covariate, in covariate order."""
    groups = []
    for m in range(spec.ndim):
        factors = tuple(psi_matrix(rows, pw, spec.psi_degree)
                        for rows, pw in zip(spec.psi_rows(m), spec.effective_p(m)))
        psi = kron(*factors[::-1])
        groups.append(PenaltyGroup(m, difference_operator(spec.dims, m), psi, factors))
    return groups


def adaptive_components(spec: AdaptivePenaltySpec) -> list:
    """Flat list of penalty components, covariate by covariate."""
    return [c for g in penalty_groups(spec) for c in g.components()]


def _check_ndim(spec: AdaptivePenaltySpec, K: int):
    if spec.ndim != K:
        raise ValueError(f"expected a {K}-dimensional spec, got {spec.ndim} dimensions")


def adaptive_components_1d(spec: BasisSpec, p: int, psi_degree: int = 3) -> list:
    """Components ``D.T diag(psi_l) D``, one per column of the ``(d-q) x p`` basis."""
    if not 1 <= p <= spec.d - spec.q:
        raise ValueError(f"p must lie in [1, {spec.d - spec.q}]")
    D = diff_matrix(spec.d, spec.q)
    psi = psi_matrix(spec.d - spec.q, p, psi_degree)
    return PenaltyGroup(0, D, psi, (psi,)).components()


def adaptive_components_2d(spec: AdaptivePenaltySpec) -> list:
    _check_ndim(spec, 2)
    return adaptive_components(spec)


def adaptive_components_3d(spec: AdaptivePenaltySpec) -> list:
    _check_ndim(spec, 3)
    return adaptive_components(spec)


def standard_penalty(lambdas, dims) -> np.ndarray:
    """Anisotropic penalty ``sum_m lambda_m I (x) .. (x) D_m'D_m (x) .. (x) I``."""
    dims = list(dims)
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=float))
    if lambdas.size != len(dims):
        raise ValueError("need one smoothing parameter per covariate")
    if np.any(~(lambdas > 0)):
        raise ValueError("smoothing parameters must be positive")
    c = int(np.prod([s.d for s in dims]))
    P = np.zeros((c, c))
    for m, lam in enumerate(lambdas):
        factors = []
        for w, s in enumerate(dims):
            if w == m:
                D = diff_matrix(s.d, s.q)
                factors.append(D.T @ D)
            else:
                factors.append(np.eye(s.d))
        P += lam * kron(*factors[::-1])
    return P


def standard_penalty_1d(lam: float, spec: BasisSpec) -> np.ndarray:
    return standard_penalty([lam], [spec])


def standard_penalty_2d(lam: float, lam_tilde: float, specs) -> np.ndarray:
    specs = list(specs)
    if len(specs) != 2:
        raise ValueError("two marginal specs required")
    return standard_penalty([lam, lam_tilde], specs)


def standard_penalty_3d(lambdas, specs) -> np.ndarray:
    specs = list(specs)
    if len(specs) != 3:
        raise ValueError("three marginal specs required")
    return standard_penalty(lambdas, specs)


def adaptive_penalty_direct(lambda_vecs, dims) -> np.ndarray:
    """Unreduced adaptive penalty with one weight per coefficient difference.

    ``lambda_vecs[m]`` holds the weights of the differences along
    covariate ``m`` in the Fortran-order layout of the difference grid.
    """
    dims = list(dims)
    if len(lambda_vecs) != len(dims):
        raise ValueError("need one weight vector per covariate")
    c = int(np.prod([s.d for s in dims]))
    P = np.zeros((c, c))
    for m, lam in enumerate(lambda_vecs):
        lam = np.asarray(lam, dtype=float).ravel()
        A = difference_operator(dims, m)
        if lam.size != A.shape[0]:
            raise ValueError(f"covariate {m + 1}: expected {A.shape[0]} weights, got {lam.size}")
        if np.any(~(lam >= 0)):
            raise ValueError("difference weights must be non-negative")
        P += A.T @ (lam[:, None] * A)
    return P


def adaptive_penalty_direct_2d(lambda_vec, lambda_tilde_vec, specs) -> np.ndarray:
    specs = list(specs)
    if len(specs) != 2:
        raise ValueError("two marginal specs required")
    return adaptive_penalty_direct([lambda_vec, lambda_tilde_vec], specs)


def combine(components, weights) -> np.ndarray:
    """Weighted sum of component matrices."""
    components = list(components)
    weights = np.asarray(weights, dtype=float)
    if weights.size != len(components):
        raise ValueError("one weight per component required")
    out = np.zeros((components[0].size, components[0].size))
    for comp, w in zip(components, weights):
        out += w * comp.matrix
    return out
