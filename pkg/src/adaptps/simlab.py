"""Simulation scenarios and replicate studies comparing standard and adaptive fits."""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .model import ModelSpec, fit_points
from .penalty import AdaptivityMode
from .sop import FitControl

log = logging.getLogger(__name__)

SCENARIOS = ("I", "II", "III")
METHODS = ("standard", "adaptive-full")

# covariate ranges per scenario
RANGES = {
    "I": ((0.0, 1.0), (0.0, 1.0)),
    "II": ((-5.0, 1.5), (-50.0, 150.0)),
    "III": ((0.0, 1.0), (0.0, 1.0)),
}

# one RNG stream per scenario so equal seeds do not share draws
_STREAMS = {"I": 1, "II": 2, "III": 3}


def _parse_id(value) -> str:
    key = str(value).strip().upper()
    aliases = {"1": "I", "2": "II", "3": "III"}
    key = aliases.get(key, key)
    if key not in SCENARIOS:
        raise ValueError(f"unknown scenario {value!r}; choose I, II or III")
    return key


@dataclass(frozen=True)
class Scenario:
    """One simulation setting.

    ``s`` is the Gaussian noise standard deviation; it is ignored for
    Scenario I, whose noise level is a quarter of the realised range of
    the surface, and for Bernoulli responses.
    """

    id: str
    n: int = 300
    family: str = "gaussian"
    s: float | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "id", _parse_id(self.id))
        fam = str(self.family).strip().lower()
        if fam == "binomial":
            fam = "bernoulli"
        if fam not in ("gaussian", "bernoulli"):
            raise ValueError("scenarios support gaussian or bernoulli responses")
        if self.id == "I" and fam != "gaussian":
            raise ValueError("Scenario I is Gaussian only")
        if fam == "gaussian" and self.id != "I":
            if self.s is None or not self.s > 0:
                raise ValueError(f"Scenario {self.id} needs a positive noise level s")
        if int(self.n) < 1:
            raise ValueError("n must be positive")
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "seed", int(self.seed))


def true_surface(id, x1, x2):
    """Linear predictor of a scenario at the given covariates."""
    key = _parse_id(id)
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if key in ("I", "II"):
        return np.exp(-15.0 * ((x1 / 2.2 - 0.2) ** 2 + (x2 / 50.0) ** 2))
    return (1.9 * (1.45 + np.exp(x1) * np.sin(13.0 * (x1 - 0.6) ** 2))
            * np.exp(-x2) * np.sin(7.0 * x2))


def true_probability(id, eta):
    """Success probability of the Bernoulli variant of a scenario."""
    key = _parse_id(id)
    eta = np.asarray(eta, dtype=float)
    return expit(6.0 * eta - 3.0) if key == "II" else expit(eta)


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    eta: np.ndarray
    truth: np.ndarray
    s: float | None
    scenario: Scenario

    @property
    def n(self) -> int:
        return self.y.size


def rng_for(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, stream)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def gen_dataset(sc: Scenario) -> Dataset:
    """Draw covariates and responses for one replicate.

    ``truth`` is the estimation target: the linear predictor for Gaussian
    data and the success probability for Bernoulli data.
    """
    rng = rng_for(sc.seed, _STREAMS[sc.id])
    (a1, b1), (a2, b2) = RANGES[sc.id]
    x = np.column_stack([rng.uniform(a1, b1, sc.n), rng.uniform(a2, b2, sc.n)])
    eta = true_surface(sc.id, x[:, 0], x[:, 1])
    if sc.family == "gaussian":
        s = abs(eta.max() - eta.min()) / 4.0 if sc.id == "I" else float(sc.s)
        y = eta + rng.normal(0.0, s, sc.n)
        return Dataset(x, y, eta, eta, s, sc)
    p = true_probability(sc.id, eta)
    y = (rng.uniform(size=sc.n) < p).astype(float)
    return Dataset(x, y, eta, p, None, sc)


def mse(fitted, truth) -> float:
    """Mean squared error of fitted values against the target."""
    fitted = np.asarray(fitted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if fitted.shape != truth.shape:
        raise ValueError("fitted values and truth differ in shape")
    return float(np.mean((fitted - truth) ** 2))


def fit_mse(fit, data: Dataset) -> float:
    """MSE of a fitted model on its own covariates, on the target's scale."""
    res = fit.result
    est = res.eta if data.scenario.family == "gaussian" else res.mu
    return mse(est, data.truth)


def method_model(method: str, d=12, degree=3, q=2, p=5) -> ModelSpec:
    if method == "standard":
        return ModelSpec(2, d, degree, q, AdaptivityMode.NONE, 1)
    if method == "adaptive-full":
        return ModelSpec(2, d, degree, q, AdaptivityMode.FULL, p)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


@dataclass
class ReplicateReport:
    rows: list = field(default_factory=list)

    COLUMNS = ("replicate", "seed", "method", "mse", "log_mse", "fit_seconds",
               "converged", "iterations", "ed_total")

    def values(self, method, key="mse") -> np.ndarray:
        return np.array([r[key] for r in self.rows if r["method"] == method], dtype=float)

    def summary(self) -> dict:
        """Median and quartiles of MSE, log-MSE and fit time per method."""
        out = {}
        for method in dict.fromkeys(r["method"] for r in self.rows):
            stats = {}
            for key in ("mse", "log_mse", "fit_seconds"):
                v = self.values(method, key)
                q1, med, q3 = np.percentile(v, [25, 50, 75])
                stats[key] = {"q1": float(q1), "median": float(med), "q3": float(q3)}
            stats["converged"] = int(sum(bool(r["converged"]) for r in self.rows
                                         if r["method"] == method))
            out[method] = stats
        return out

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=self.COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _one_replicate(args):
    sc, r, seed, methods, settings, control = args
    data = gen_dataset(replace(sc, seed=seed))
    rows = []
    for method in methods:
        model = method_model(method, **settings)
        t0 = time.perf_counter()
        try:
            fit = fit_points(data.x, data.y, model, sc.family, control=control,
                             box=RANGES[sc.id])
            secs = time.perf_counter() - t0
            err = fit_mse(fit, data)
            conv, iters, ed = fit.result.converged, fit.result.n_iter, fit.result.ed_total
        except (np.linalg.LinAlgError, ValueError) as exc:
            log.warning("replicate %d, %s: fit failed (%s)", r, method, exc)
            secs, err, conv, iters, ed = time.perf_counter() - t0, float("nan"), False, 0, float("nan")
        rows.append({"replicate": r, "seed": seed, "method": method, "mse": err,
                     "log_mse": float(np.log(err)) if err > 0 else float("nan"),
                     "fit_seconds": secs, "converged": bool(conv), "iterations": int(iters),
                     "ed_total": float(ed)})
    return rows


def run_replicates(sc: Scenario, R: int, methods=METHODS, base_seed: int = 0,
                   settings: dict | None = None, control: FitControl | None = None,
                   n_jobs: int = 1) -> ReplicateReport:
    """Simulate ``R`` datasets and fit each requested method to every one.

    Replicate ``r`` uses seed ``base_seed + r``. Failed or non-converged
    fits are recorded in their row and never stop the study.
    """
    if R < 1:
        raise ValueError("R must be at least 1")
    methods = tuple(methods)
    for m in methods:
        method_model(m)
    settings = dict(settings or {})
    jobs = [(sc, r, base_seed + r, methods, settings, control) for r in range(R)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_one_replicate, jobs))
    else:
        results = [_one_replicate(j) for j in jobs]
    return ReplicateReport([row for rows in results for row in rows])
