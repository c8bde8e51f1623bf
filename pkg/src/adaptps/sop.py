"""Variance-component estimation for mixed models with overlapping precisions.

The random effects have precision ``G^-1 = sum_l G_l / sigma2_l``. Given
the variances, (penalised) iteratively reweighted least squares solves

    [X'WX       X'WZ         ] [beta ]   [X'W z]
    [Z'WX   Z'WZ + phi G^-1  ] [alpha] = [Z'W z]

and the variances are then refreshed by the fixed-point update

    ED_l     = trace(G_l (G - phi C^aa)) / sigma2_l
    sigma2_l = alpha' G_l alpha / ED_l
    phi      = |y - mu|_W^2 / (n - n_fixed - sum_l ED_l)      (Gaussian)

where ``C^aa`` is the random-effects block of the inverse coefficient
matrix. Its fixed point is a stationary point of the restricted
likelihood.

Smoothing parameters routinely spread over many orders of magnitude, so
neither ``G`` nor ``C`` is ever inverted. Writing ``G^-1 = R' diag(lam) R``
(rows of ``R`` are coefficient differences), the coefficients come from a
Householder QR of the augmented matrix ``[data root; sqrt(phi lam) R]``
and ``ED_l`` is a ``psi``-weighted sum of ``h_i - g_i``, where ``h_i`` and
``g_i`` are the leverages of difference ``i`` under the prior alone and
under the posterior. Leverages lie in ``[0, 1]`` and are accurate to
rounding level however ill-conditioned the precision is.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .families import Family, Gaussian, get_family
from .glam import from_vec, glam_fitted, glam_transpose_apply, glam_weighted_inner, to_vec
from .mmtransform import IdentifiabilityError, as_component_set

log = logging.getLogger(__name__)


@dataclass
class FitControl:
    """Iteration limits and tolerances.

    ``variance_floor`` is relative: a variance never drops below
    ``variance_floor * phi`` nor exceeds ``phi / variance_floor``, i.e.
    smoothing parameters stay within ``[variance_floor, 1 / variance_floor]``.
    A component whose effective dimension is below
    ``ed_tol`` no longer affects the fit and is not required to settle its
    relative variance change; such variances drift geometrically towards
    the floor and would otherwise dominate the iteration count.
    """

    max_outer_iter: int = 200
    max_pirls_iter: int = 100
    rel_tol: float = 1e-6
    pirls_tol: float = 1e-10
    variance_floor: float = 1e-10
    initial_variance: float = 1.0
    max_halvings: int = 30
    ed_tol: float = 1e-4

    def __post_init__(self):
        if self.rel_tol <= 0 or self.pirls_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.variance_floor < self.initial_variance:
            raise ValueError("variance_floor must be positive and below initial_variance")
        if self.ed_tol < 0:
            raise ValueError("ed_tol must be non-negative")
        if self.max_outer_iter < 1 or self.max_pirls_iter < 1:
            raise ValueError("iteration caps must be positive")


@dataclass
class FitResult:
    beta: np.ndarray
    alpha: np.ndarray
    sigma2: np.ndarray
    phi: float
    ed: np.ndarray
    ed_total: float
    deviance: float
    caic: float
    converged: bool
    n_iter: int
    n_pirls: int
    eta: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    cov: np.ndarray = field(repr=False)
    family: Family = field(repr=False, default_factory=Gaussian)
    theta: np.ndarray | None = field(default=None, repr=False)
    trace: list = field(default_factory=list, repr=False)
    tags: list = field(default_factory=list, repr=False)
    seconds: float = 0.0

    @property
    def n_fixed(self) -> int:
        return self.beta.size

    @property
    def coef(self) -> np.ndarray:
        return np.concatenate([self.beta, self.alpha])


class DenseDesign:
    """Explicit ``[X | Z]`` design."""

    def __init__(self, X, Z):
        X = np.asarray(X, dtype=float)
        Z = np.asarray(Z, dtype=float)
        if X.ndim != 2 or Z.ndim != 2 or X.shape[0] != Z.shape[0]:
            raise ValueError("X and Z must be matrices with equal row counts")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Z))):
            raise ValueError("design contains non-finite values")
        self.XZ = np.hstack([X, Z])
        self.n_fixed = X.shape[1]
        self.n_obs = X.shape[0]

    @property
    def n_coef(self) -> int:
        return self.XZ.shape[1]

    def cross(self, w) -> np.ndarray:
        return self.XZ.T @ (w[:, None] * self.XZ)

    def tmul(self, v) -> np.ndarray:
        return self.XZ.T @ v

    def mul(self, b) -> np.ndarray:
        return self.XZ @ b


class GridDesign:
    """``[X | Z] = B T`` for data on a full grid, evaluated with array methods.

    Observations are ordered like the Fortran-order ravel of the grid.
    """

    def __init__(self, B_margins, T, n_fixed):
        self.margins = [np.asarray(B, dtype=float) for B in B_margins]
        self.T = np.asarray(T, dtype=float)
        self.n_fixed = int(n_fixed)
        self.shape = tuple(B.shape[0] for B in self.margins)
        self.n_obs = int(np.prod(self.shape))

    @property
    def n_coef(self) -> int:
        return self.T.shape[1]

    def cross(self, w) -> np.ndarray:
        K = glam_weighted_inner(self.margins, from_vec(w, self.shape))
        return self.T.T @ K @ self.T

    def tmul(self, v) -> np.ndarray:
        return self.T.T @ to_vec(glam_transpose_apply(self.margins, from_vec(v, self.shape)))

    def mul(self, b) -> np.ndarray:
        return to_vec(glam_fitted(self.margins, self.T @ b))


def _data_root(K) -> np.ndarray:
    """A matrix ``D`` with ``D'D = K`` for a positive semidefinite ``K``."""
    try:
        return linalg.cholesky(K, lower=False, check_finite=False)
    except np.linalg.LinAlgError:
        s, V = linalg.eigh(0.5 * (K + K.T))
        keep = s > 0
        return np.sqrt(s[keep])[:, None] * V[:, keep].T


def _row_qr(A, lev_from=None):
    """Triangular factor of ``A`` (rows sorted by decreasing norm).

    With ``lev_from`` set, also returns the leverages of rows
    ``A[lev_from:]``, i.e. squared row norms of ``A R^-1``.
    """
    norms = np.einsum("ij,ij->i", A, A)
    order = np.argsort(-norms, kind="stable")
    Ra = np.linalg.qr(A[order], mode="r")
    if lev_from is None:
        return Ra, None
    S = linalg.solve_triangular(Ra, A[lev_from:].T, trans="T", check_finite=False)
    return Ra, np.einsum("ij,ij->j", S, S)


@dataclass
class _Factor:
    Ra: np.ndarray
    g: np.ndarray | None

    def solve(self, t) -> np.ndarray:
        u = linalg.solve_triangular(self.Ra, t, trans="T", check_finite=False)
        return linalg.solve_triangular(self.Ra, u, check_finite=False)

    def inverse(self) -> np.ndarray:
        Ri = linalg.solve_triangular(self.Ra, np.eye(self.Ra.shape[0]), check_finite=False)
        return Ri @ Ri.T


def _factor(D, R, lam, phi, f, leverage=False) -> _Factor:
    """Factor ``C = D'D + phi [0 0; 0 R' diag(lam) R]``; ``g`` are penalty-row leverages."""
    c = D.shape[1]
    P = np.zeros((R.shape[0], c))
    P[:, f:] = np.sqrt(phi * lam)[:, None] * R
    Ra, g = _row_qr(np.vstack([D, P]), D.shape[0] if leverage else None)
    if np.any(np.abs(np.diag(Ra)) <= 1e-14 * np.abs(Ra).max()):
        raise np.linalg.LinAlgError("penalised coefficient matrix is singular")
    return _Factor(Ra, g)


@dataclass
class _System:
    b: np.ndarray
    eta: np.ndarray
    cross: np.ndarray
    n_iter: int


def _penalised_deviance(fam, y, eta, w, b, R, lam, phi, f):
    return fam.deviance(y, fam.linkinv(eta), w) / phi + lam @ (R @ b[f:]) ** 2


def _pirls(design, fam, y, offset, w, phi, R, lam, eta, b_prev, control):
    f = design.n_fixed
    pd_old = np.inf if b_prev is None else _penalised_deviance(fam, y, eta, w, b_prev, R, lam, phi, f)
    b = b_prev
    cross = None
    n_iter = 0
    for n_iter in range(1, control.max_pirls_iter + 1):
        mu = fam.linkinv(eta)
        dmu = fam.mu_eta(eta)
        W = w * dmu ** 2 / fam.variance(mu)
        z = (eta - offset) + (y - mu) / dmu
        cross = design.cross(W)
        b_new = _factor(_data_root(cross), R, lam, phi, f).solve(design.tmul(W * z))
        eta_new = offset + design.mul(b_new)
        pd_new = _penalised_deviance(fam, y, eta_new, w, b_new, R, lam, phi, f)
        halvings = 0
        while b is not None and not pd_new <= pd_old + 1e-12 * abs(pd_old):
            halvings += 1
            if halvings > control.max_halvings:
                log.warning("PIRLS step-halving failed to reduce the penalised deviance; "
                            "keeping the previous iterate")
                return _System(b, eta, cross, n_iter)
            b_new = 0.5 * (b_new + b)
            eta_new = offset + design.mul(b_new)
            pd_new = _penalised_deviance(fam, y, eta_new, w, b_new, R, lam, phi, f)
        done = abs(pd_new - pd_old) / (abs(pd_new) + 0.1) < control.pirls_tol
        b, eta, pd_old = b_new, eta_new, pd_new
        if done:
            break
    # weights at the solution, so the factor below describes the final fit
    mu = fam.linkinv(eta)
    cross = design.cross(w * fam.mu_eta(eta) ** 2 / fam.variance(mu))
    return _System(b, eta, cross, n_iter)


def _inverse_pd(A):
    c = linalg.cho_factor(A, lower=True, check_finite=False)
    return linalg.cho_solve(c, np.eye(A.shape[0]), check_finite=False)


def fit_design(design, components, y, family="gaussian", offset=None, weights=None,
               control=None, transforms=None) -> FitResult:
    """Fit a mixed model given a design object exposing ``cross``, ``tmul`` and ``mul``."""
    t0 = time.perf_counter()
    control = control or FitControl()
    fam = get_family(family)
    comps = as_component_set(components)
    y = fam.validate(y)
    n = y.size
    if design.n_obs != n:
        raise ValueError(f"design has {design.n_obs} rows but there are {n} responses")
    f = design.n_fixed
    if comps.n_random != design.n_coef - f:
        raise ValueError("precision components do not match the random-effects dimension")
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float).ravel()
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).ravel()
    if offset.size != n or w.size != n:
        raise ValueError("offset and weights must have one entry per observation")
    if not (np.all(np.isfinite(offset)) and np.all(np.isfinite(w))):
        raise ValueError("offset or weights contain non-finite values")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")

    gaussian = isinstance(fam, Gaussian)
    gaussian_cross = design.cross(w) if gaussian else None
    cross0 = gaussian_cross if gaussian else design.cross(w)
    s = np.linalg.svd(cross0[:f, :f], compute_uv=False)
    if s.size == 0 or not s[-1] > 1e-10 * s[0]:
        raise IdentifiabilityError("the fixed-effects design X is rank deficient")

    nc = comps.n_components
    R, Psi = comps.roots()
    if gaussian:
        ybar = np.average(y, weights=w)
        phi0 = float(np.average((y - ybar) ** 2, weights=w))
        phi0 = phi0 if phi0 > 0 else 1.0
        D_gauss = _data_root(gaussian_cross)
        t_gauss = design.tmul(w * (y - offset))
    else:
        phi0 = 1.0
    phi_floor = control.variance_floor * phi0
    vf = control.variance_floor
    n_pirls = 0

    def evaluate(sigma2, phi, eta, b):
        nonlocal n_pirls
        lam = Psi @ (1.0 / sigma2)
        if gaussian:
            fac = _factor(D_gauss, R, lam, phi, f, leverage=True)
            b = fac.solve(t_gauss)
            eta = offset + design.mul(b)
            n_pirls += 1
        else:
            sysm = _pirls(design, fam, y, offset, w, phi, R, lam, eta, b, control)
            n_pirls += sysm.n_iter
            b, eta = sysm.b, sysm.eta
            fac = _factor(_data_root(sysm.cross), R, lam, phi, f, leverage=True)
        mu = fam.linkinv(eta)
        Ra_h, h = _row_qr(np.sqrt(lam)[:, None] * R, 0)
        share = np.maximum(h - fac.g, 0.0) / lam
        ed = (Psi.T @ share) / sigma2
        d_alpha = (R @ b[f:]) ** 2
        quad = Psi.T @ d_alpha
        dev = fam.deviance(y, mu, w)
        # restricted (Laplace for non-Gaussian) log-likelihood up to a constant
        logdet_Ginv = 2.0 * np.sum(np.log(np.abs(np.diag(Ra_h))))
        logdet_C = 2.0 * np.sum(np.log(np.abs(np.diag(fac.Ra))))
        reml = -0.5 * ((n - b.size) * np.log(phi) - logdet_Ginv + logdet_C
                       + dev / phi + lam @ d_alpha)
        with np.errstate(divide="ignore", invalid="ignore"):
            new_sigma2 = np.where(ed > 0, quad / ed, 0.0)
        new_phi = phi
        if gaussian:
            resid_df = n - f - ed.sum()
            new_phi = max(dev / resid_df, phi_floor) if resid_df > 0 else phi_floor
        new_sigma2 = np.clip(new_sigma2, vf * new_phi, new_phi / vf)
        return {"sigma2": sigma2, "phi": phi, "b": b, "eta": eta, "mu": mu, "fac": fac,
                "ed": ed, "dev": dev, "reml": float(reml), "new_sigma2": new_sigma2,
                "new_phi": new_phi}

    cur = evaluate(np.full(nc, float(control.initial_variance)), phi0, fam.initial_eta(y), None)
    trace = []
    dev_old = None
    converged = False
    it = 1
    while True:
        ed = cur["ed"]
        trace.append({"iteration": it, "deviance": cur["dev"], "phi": cur["phi"],
                      "sigma2": cur["sigma2"].copy(), "ed": ed.copy(),
                      "ed_total": f + float(ed.sum()), "reml": cur["reml"]})
        dev = cur["dev"]
        dev_change = np.inf if dev_old is None else abs(dev - dev_old) / (abs(dev) + 0.1)
        active = ed >= control.ed_tol
        rel = np.abs(cur["new_sigma2"] - cur["sigma2"]) / cur["sigma2"]
        var_change = float(np.max(rel[active])) if active.any() else 0.0
        if gaussian:
            var_change = max(var_change, abs(cur["new_phi"] - cur["phi"]) / cur["phi"])
        dev_old = dev
        log.debug("iteration %d: deviance %.8g, max relative variance change %.3g",
                  it, dev, var_change)
        converged = dev_change < control.rel_tol and var_change < control.rel_tol
        if converged or it >= control.max_outer_iter:
            break

        cur = evaluate(cur["new_sigma2"], cur["new_phi"], cur["eta"], cur["b"])
        it += 1

    fac, b = cur["fac"], cur["b"]
    sigma2, phi, ed, dev = cur["sigma2"], cur["phi"], cur["ed"], cur["dev"]
    alpha = b[f:]
    ed_total = f + float(ed.sum())
    cov = phi * fac.inverse()
    theta = None
    if transforms is not None:
        T0, Tp = transforms
        theta = T0 @ b[:f] + Tp @ alpha
    if not converged:
        log.warning("variance estimation did not converge in %d iterations", control.max_outer_iter)
    return FitResult(
        beta=b[:f].copy(), alpha=alpha.copy(), sigma2=sigma2, phi=float(phi), ed=ed,
        ed_total=ed_total, deviance=dev, caic=dev + 2.0 * ed_total, converged=converged,
        n_iter=it, n_pirls=n_pirls, eta=cur["eta"], mu=cur["mu"], cov=cov, family=fam,
        theta=theta, trace=trace, tags=list(getattr(comps, "tags", [])),
        seconds=time.perf_counter() - t0,
    )


def fit(X, Z, G_components, y, family="gaussian", offset=None, weights=None,
        control=None, transforms=None) -> FitResult:
    """Fit ``g(mu) = offset + X beta + Z alpha`` with ``alpha ~ N(0, G)``.

    Parameters
    ----------
    X, Z : numpy.ndarray
        Fixed and random-effects designs.
    G_components : list of numpy.ndarray or component set
        Precision components; ``G^-1 = sum_l G_l / sigma2_l``.
    y : array_like
        Responses.
    family : str or Family
        ``"gaussian"``, ``"poisson"`` or ``"bernoulli"``.
    offset, weights : array_like, optional
        Linear-predictor offset and prior weights.
    control : FitControl, optional
    transforms : tuple of numpy.ndarray, optional
        ``(T_zero, T_plus)``; when given, ``theta`` is filled in.

    Returns
    -------
    FitResult
        Non-convergence is reported through ``converged``, not raised.
    """
    return fit_design(DenseDesign(X, Z), G_components, y, family, offset, weights,
                      control, transforms)


def update_variances(alpha_hat, G_components, sigma2, C_alpha_block, phi=1.0, floor=0.0):
    """One fixed-point update of the variance parameters.

    ``C_alpha_block`` is the posterior covariance of the random effects,
    i.e. ``phi`` times the random-effects block of the inverse coefficient
    matrix. Returns ``(sigma2_new, ed)``.
    """
    comps = as_component_set(G_components)
    sigma2 = np.asarray(sigma2, dtype=float)
    C = np.asarray(C_alpha_block, dtype=float)
    evals = np.linalg.eigvalsh(0.5 * (C + C.T))
    if evals.min() < -1e-8 * max(abs(evals).max(), 1.0):
        raise np.linalg.LinAlgError("random-effects covariance block is not positive semidefinite")
    G = _inverse_pd(comps.precision(1.0 / sigma2))
    ed = np.maximum(comps.traces(G - C) / sigma2, 0.0)
    quad = comps.quad(np.asarray(alpha_hat, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        new = np.where(ed > 0, quad / ed, 0.0)
    return np.maximum(new, floor), ed


def reml_loglik(y, X, Z, G_components, sigma2, phi, weights=None) -> float:
    """Gaussian restricted log-likelihood with ``V = phi W^-1 + Z G Z'``."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    n = y.size
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    comps = as_component_set(G_components)
    G = _inverse_pd(comps.precision(1.0 / np.asarray(sigma2, dtype=float)))
    V = np.diag(phi / w) + Z @ G @ Z.T
    try:
        cV = linalg.cho_factor(V, lower=True)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("marginal covariance V is not positive definite") from None
    logdetV = 2.0 * np.sum(np.log(np.diag(cV[0])))
    ViX = linalg.cho_solve(cV, X)
    Viy = linalg.cho_solve(cV, y)
    XViX = X.T @ ViX
    cX = linalg.cho_factor(XViX, lower=True)
    logdetX = 2.0 * np.sum(np.log(np.diag(cX[0])))
    beta = linalg.cho_solve(cX, X.T @ Viy)
    r = y - X @ beta
    quad = r @ linalg.cho_solve(cV, r)
    p = X.shape[1]
    return float(-0.5 * (logdetV + logdetX + quad + (n - p) * np.log(2 * np.pi)))


def linear_predict(result: FitResult, XZ_new, offset=None, level=0.95):
    """Pointwise predictions and intervals for rows of the rotated design.

    Returns a dict of arrays ``eta``, ``mu``, ``se_eta``, ``lower``, ``upper``.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    XZ_new = np.atleast_2d(np.asarray(XZ_new, dtype=float))
    off = 0.0 if offset is None else np.asarray(offset, dtype=float)
    eta = XZ_new @ result.coef + off
    var = np.einsum("ij,jk,ik->i", XZ_new, result.cov, XZ_new)
    se = np.sqrt(np.maximum(var, 0.0))
    zq = stats.norm.ppf(0.5 + level / 2.0)
    fam = result.family
    return {"eta": eta, "mu": fam.linkinv(eta), "se_eta": se,
            "lower": fam.linkinv(eta - zq * se), "upper": fam.linkinv(eta + zq * se)}


def caic(result: FitResult) -> float:
    """Conditional AIC in its simplest form, ``deviance + 2 * ed_total``.

    The deviance is not scaled by ``phi``, so values are comparable only
    between fits to the same response with known dispersion (Poisson,
    Bernoulli) or a common ``phi``.
    """
    return result.caic
