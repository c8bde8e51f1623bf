"""High-level fitting of adaptive P-spline surfaces to scattered or grid data."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .basis import BasisSpec, eval_basis, tensor_design
from .glam import to_vec
from .mmtransform import build_parts, check_fixed_rank
from .penalty import AdaptivePenaltySpec, AdaptivityMode, penalty_groups
from .sop import FitControl, FitResult, GridDesign, fit, fit_design


@dataclass(frozen=True)
class ModelSpec:
    """Marginal bases and penalty structure of one model.

    Scalars broadcast over covariates; ``p`` may also be a ``K x K`` nested
    sequence (row ``m`` smooths the parameters of covariate ``m``).
    """

    ndim: int
    d: tuple = 12
    degree: tuple = 3
    q: tuple = 2
    modes: tuple = AdaptivityMode.FULL
    p: object = 5
    psi_degree: int = 3

    def __post_init__(self):
        if not 1 <= self.ndim <= 3:
            raise ValueError("between one and three covariates are supported")
        for name in ("d", "degree", "q", "modes"):
            val = getattr(self, name)
            if isinstance(val, (str, int, AdaptivityMode, np.integer)):
                val = (val,) * self.ndim
            val = tuple(val)
            if len(val) != self.ndim:
                raise ValueError(f"{name} needs {self.ndim} entries, got {len(val)}")
            if name == "modes":
                val = tuple(AdaptivityMode.parse(v) for v in val)
            else:
                val = tuple(int(v) for v in val)
            object.__setattr__(self, name, val)
        p = self.p
        if not isinstance(p, (int, np.integer)):
            p = tuple(tuple(r) if np.ndim(r) else int(r) for r in p)
        object.__setattr__(self, "p", p)

    def basis_specs(self, box) -> tuple:
        return tuple(BasisSpec(float(lo), float(hi), d, deg, q)
                     for (lo, hi), d, deg, q in zip(box, self.d, self.degree, self.q))

    def penalty_spec(self, specs) -> AdaptivePenaltySpec:
        return AdaptivePenaltySpec(tuple(specs), self.modes, self.p, self.psi_degree)


def _box_from(x, box):
    if box is None:
        lo, hi = x.min(axis=0), x.max(axis=0)
        box = tuple(zip(lo.tolist(), hi.tolist()))
    box = tuple((float(a), float(b)) for a, b in box)
    if len(box) != x.shape[1]:
        raise ValueError("domain box needs one interval per covariate")
    for m, (a, b) in enumerate(box):
        if not a < b:
            raise ValueError(f"covariate {m + 1} has an empty range [{a}, {b}]")
    return box


def _as_points(x, ndim=None):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("covariates must be a vector or an n x K matrix")
    if ndim is not None and x.shape[1] != ndim:
        raise ValueError(f"expected {ndim} covariate columns, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("covariates contain non-finite values")
    return x


def out_of_domain(x, box) -> np.ndarray:
    """Row indices of points outside the box."""
    lo = np.array([a for a, _ in box])
    hi = np.array([b for _, b in box])
    return np.flatnonzero(np.any((x < lo) | (x > hi), axis=1))


@dataclass
class SmoothFit:
    """A fitted surface in the original B-spline coefficients.

    Only ``theta`` and its posterior covariance are needed for prediction.
    """

    model: ModelSpec
    box: tuple
    family: object
    theta: np.ndarray = field(repr=False)
    cov_theta: np.ndarray = field(repr=False)
    result: FitResult | None = field(default=None, repr=False)

    @property
    def specs(self) -> tuple:
        return self.model.basis_specs(self.box)

    def design(self, x) -> np.ndarray:
        x = _as_points(x, self.model.ndim)
        bad = out_of_domain(x, self.box)
        if bad.size:
            rows = ", ".join(str(i + 1) for i in bad[:10])
            more = "" if bad.size <= 10 else f" and {bad.size - 10} more"
            raise ValueError(f"points outside the fitted domain at rows {rows}{more}")
        return tensor_design([eval_basis(x[:, m], s) for m, s in enumerate(self.specs)])

    def predict(self, x, level=0.95, offset=None) -> dict:
        """Linear predictor, mean and pointwise intervals at new points.

        Returns a dict of arrays ``eta``, ``mu``, ``se_eta``, ``lower`` and
        ``upper``; the interval is built on the linear-predictor scale and
        mapped through the inverse link.
        """
        if not 0 < level < 1:
            raise ValueError("level must lie in (0, 1)")
        B = self.design(x)
        eta = B @ self.theta
        if offset is not None:
            eta = eta + np.asarray(offset, dtype=float)
        var = np.einsum("ij,ij->i", B @ self.cov_theta, B)
        se = np.sqrt(np.maximum(var, 0.0))
        z = stats.norm.ppf(0.5 + level / 2.0)
        inv = self.family.linkinv
        return {"eta": eta, "mu": inv(eta), "se_eta": se,
                "lower": inv(eta - z * se), "upper": inv(eta + z * se)}


def _finish(model, box, parts, res):
    T = parts.T
    theta = T @ res.coef
    cov_theta = T @ res.cov @ T.T
    res.theta = theta
    return SmoothFit(model, box, res.family, theta, 0.5 * (cov_theta + cov_theta.T), res)


def fit_points(x, y, model: ModelSpec | None = None, family="gaussian", offset=None,
               weights=None, control: FitControl | None = None, box=None) -> SmoothFit:
    """Fit a smooth surface to scattered observations.

    Parameters
    ----------
    x : array_like, shape (n,) or (n, K)
        Covariates.
    y : array_like
        Responses.
    model : ModelSpec, optional
        Defaults to cubic bases with 12 coefficients, second-order penalties
        and fully adaptive smoothing with ``p = 5``.
    box : sequence of (low, high), optional
        Domain of the bases; defaults to the covariate ranges.
    """
    x = _as_points(x)
    model = model or ModelSpec(x.shape[1])
    if model.ndim != x.shape[1]:
        raise ValueError(f"model has {model.ndim} covariates, data have {x.shape[1]}")
    if np.asarray(y).size != x.shape[0]:
        raise ValueError("x and y have different numbers of observations")
    box = _box_from(x, box)
    specs = model.basis_specs(box)
    if out_of_domain(x, box).size:
        raise ValueError("observations fall outside the domain box")
    margins = [eval_basis(x[:, m], s) for m, s in enumerate(specs)]
    pspec = model.penalty_spec(specs)
    parts = build_parts(specs, penalty_groups(pspec), margins)
    res = fit(parts.X, parts.Z, parts.components, y, family, offset, weights, control)
    return _finish(model, box, parts, res)


def fit_grid(axes, Y, model: ModelSpec | None = None, family="gaussian", offset=None,
             weights=None, control: FitControl | None = None, box=None) -> SmoothFit:
    """Fit a smooth surface to data on a complete grid using array arithmetic.

    ``axes[m]`` holds the coordinates along axis ``m`` of ``Y``; ``offset``
    and ``weights``, if given, are arrays shaped like ``Y``.
    """
    axes = [np.asarray(a, dtype=float).ravel() for a in axes]
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != len(axes) or Y.shape != tuple(a.size for a in axes):
        raise ValueError("grid response shape does not match the axis coordinates")
    model = model or ModelSpec(len(axes))
    if model.ndim != len(axes):
        raise ValueError(f"model has {model.ndim} covariates, grid has {len(axes)} axes")
    for a in axes:
        if not np.all(np.isfinite(a)):
            raise ValueError("grid coordinates contain non-finite values")
    if box is None:
        box = tuple((float(a.min()), float(a.max())) for a in axes)
    box = _box_from(np.zeros((1, len(axes))), box)
    specs = model.basis_specs(box)
    margins = [eval_basis(a, s) for a, s in zip(axes, specs)]
    pspec = model.penalty_spec(specs)
    parts = build_parts(specs, penalty_groups(pspec))
    check_fixed_rank(margins, parts.evds)
    design = GridDesign(margins, parts.T, parts.n_fixed)
    vec = lambda A: None if A is None else to_vec(np.broadcast_to(np.asarray(A, dtype=float), Y.shape))
    res = fit_design(design, parts.components, to_vec(Y), family, vec(offset), vec(weights), control)
    return _finish(model, box, parts, res)
