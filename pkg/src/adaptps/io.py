"""Configuration files, tabular data, fit artifacts and matrix dumps."""

from __future__ import annotations

import csv
import json
from dataclasses import fields
from pathlib import Path

import numpy as np
from scipy import io as spio
from scipy import sparse

from .families import get_family
from .model import ModelSpec, SmoothFit
from .penalty import AdaptivityMode
from .sop import FitControl

FORMAT_VERSION = 1


class InputError(ValueError):
    """Malformed or inconsistent user input."""


def _ints(text):
    return tuple(int(v) for v in str(text).replace(",", " ").split())


def _floats(text):
    return tuple(float(v) for v in str(text).replace(",", " ").split())


def _names(text):
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _p_value(text):
    """``5``, ``5,6`` (one per covariate) or ``5 5; 6 6`` (full matrix)."""
    text = str(text).strip()
    if ";" in text:
        return tuple(_ints(row) for row in text.split(";") if row.strip())
    vals = _ints(text)
    return vals[0] if len(vals) == 1 else vals


def _modes(text):
    return tuple(AdaptivityMode.parse(v).value for v in _names(text))


def _bool(text):
    key = str(text).strip().lower()
    if key in ("1", "true", "yes", "on"):
        return True
    if key in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_CONTROL_TYPES = {f.name: (int if f.type in ("int", int) else float) for f in fields(FitControl)}

CONFIG_KEYS = {
    "family": str,
    "response": str,
    "covariates": _names,
    "layout": str,
    "offset": str,
    "trials": str,
    "weights": str,
    "d": _ints,
    "degree": _ints,
    "q": _ints,
    "mode": _modes,
    "p": _p_value,
    "psi_degree": int,
    "x_min": _floats,
    "x_max": _floats,
    "level": float,
    **_CONTROL_TYPES,
}

DEFAULTS = {"family": "gaussian", "layout": "points", "d": (12,), "degree": (3,), "q": (2,),
            "mode": ("full",), "p": 5, "psi_degree": 3, "level": 0.95}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_").lower()
        if key not in CONFIG_KEYS:
            raise InputError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise InputError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def read_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_config_text(text, str(path))


def resolve_config(raw: dict) -> dict:
    """Apply defaults and convert every value to its typed form."""
    cfg = {}
    for key, value in raw.items():
        if value is None:
            continue
        conv = CONFIG_KEYS[key]
        try:
            cfg[key] = conv(value) if isinstance(value, str) else value
        except (TypeError, ValueError) as exc:
            raise InputError(f"bad value for {key!r}: {value!r} ({exc})") from None
    for key, value in DEFAULTS.items():
        cfg.setdefault(key, value)
    cfg["family"] = get_family(cfg["family"]).name
    if cfg["layout"] not in ("points", "grid"):
        raise InputError("layout must be 'points' or 'grid'")
    if "covariates" in cfg and not 1 <= len(cfg["covariates"]) <= 3:
        raise InputError("between one and three covariates are supported")
    if "offset" in cfg and "trials" in cfg:
        raise InputError("give either an offset column or a trials column, not both")
    return cfg


def _broadcast(value, K, name):
    value = tuple(value) if isinstance(value, (tuple, list)) else (value,)
    if len(value) == 1:
        return value * K
    if len(value) != K:
        raise InputError(f"{name} needs 1 or {K} entries, got {len(value)}")
    return value


def model_from_config(cfg: dict, ndim: int | None = None) -> ModelSpec:
    K = ndim if ndim is not None else len(cfg.get("covariates", ()))
    if K < 1:
        raise InputError("config names no covariates")
    p = cfg["p"]
    if isinstance(p, tuple) and p and isinstance(p[0], tuple):
        if len(p) != K or any(len(row) != K for row in p):
            raise InputError(f"p matrix must be {K}x{K}")
    elif isinstance(p, tuple):
        p = _broadcast(p, K, "p")
    try:
        return ModelSpec(K, _broadcast(cfg["d"], K, "d"), _broadcast(cfg["degree"], K, "degree"),
                         _broadcast(cfg["q"], K, "q"), _broadcast(cfg["mode"], K, "mode"),
                         p, cfg["psi_degree"])
    except ValueError as exc:
        raise InputError(str(exc)) from None


def control_from_config(cfg: dict) -> FitControl:
    kw = {k: cfg[k] for k in _CONTROL_TYPES if k in cfg}
    try:
        return FitControl(**kw)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def box_from_config(cfg: dict, K: int):
    if "x_min" not in cfg and "x_max" not in cfg:
        return None
    if "x_min" not in cfg or "x_max" not in cfg:
        raise InputError("x_min and x_max must be given together")
    lo = _broadcast(cfg["x_min"], K, "x_min")
    hi = _broadcast(cfg["x_max"], K, "x_max")
    return tuple(zip(lo, hi))


def read_table(path) -> dict:
    """Read a comma-separated file with a header row into float columns.

    Empty cells and non-numeric entries are errors naming the line.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if len(set(header)) != len(header) or any(not h for h in header):
            raise InputError(f"{path}: header has blank or duplicate column names")
        cols = [[] for _ in header]
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for j, cell in enumerate(row):
                cell = cell.strip()
                if not cell:
                    raise InputError(f"{path}:{lineno}: missing value in column {header[j]!r}")
                try:
                    v = float(cell)
                except ValueError:
                    raise InputError(f"{path}:{lineno}: malformed number {cell!r} "
                                     f"in column {header[j]!r}") from None
                if not np.isfinite(v):
                    raise InputError(f"{path}:{lineno}: non-finite value in column {header[j]!r}")
                cols[j].append(v)
    if not cols[0]:
        raise InputError(f"{path}: no data rows")
    return {h: np.array(c) for h, c in zip(header, cols)}


def require_columns(table: dict, names, path="input"):
    missing = [c for c in names if c not in table]
    if missing:
        raise InputError(f"{path}: missing column(s) {', '.join(missing)}")


def write_table(path, columns: dict):
    names = list(columns)
    n = len(next(iter(columns.values()))) if columns else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for i in range(n):
            w.writerow([repr(float(columns[k][i])) for k in names])


def to_grid(table: dict, covariates, fields_):
    """Arrange complete-grid rows into arrays with one axis per covariate.

    Returns ``(axes, arrays, cells)``: ``arrays[name]`` has one axis per
    covariate and ``cells[i]`` is the column-major cell index of input row
    ``i``.
    """
    axes, index = [], []
    for c in covariates:
        vals, inv = np.unique(table[c], return_inverse=True)
        axes.append(vals)
        index.append(inv)
    shape = tuple(a.size for a in axes)
    n = table[covariates[0]].size
    if n != int(np.prod(shape)):
        raise InputError(f"grid layout needs every cell exactly once: {n} rows for a "
                         f"{'x'.join(map(str, shape))} grid")
    flat = np.ravel_multi_index(tuple(index), shape, order="F")
    if np.unique(flat).size != n:
        raise InputError("grid layout has duplicate cells")
    arrays = {}
    for name in fields_:
        A = np.empty(n)
        A[flat] = table[name]
        arrays[name] = A.reshape(shape, order="F")
    return axes, arrays, flat


def _pack_upper(M):
    return M[np.triu_indices(M.shape[0])]


def _unpack_upper(v, c):
    M = np.zeros((c, c))
    iu = np.triu_indices(c)
    M[iu] = v
    M.T[iu] = v
    return M


def fit_to_artifact(fit: SmoothFit, config: dict) -> dict:
    """JSON-ready description of a fit.

    Floats are written with Python's shortest round-trip representation,
    so re-reading reproduces every value exactly.
    """
    res = fit.result
    tags = res.tags or [(0, u) for u in range(res.sigma2.size)]
    variances = [{"covariate": int(m) + 1, "component": int(u) + 1, "sigma2": float(s2),
                  "lambda": float(res.phi / s2), "ed": float(e)}
                 for (m, u), s2, e in zip(tags, res.sigma2, res.ed)]
    cfg = {k: (list(v) if isinstance(v, tuple) else v) for k, v in config.items()}
    if isinstance(config.get("p"), tuple):
        cfg["p"] = [list(r) if isinstance(r, tuple) else r for r in config["p"]]
    return {
        "format_version": FORMAT_VERSION,
        "config": cfg,
        "model": {"d": list(fit.model.d), "degree": list(fit.model.degree), "q": list(fit.model.q),
                  "modes": [m.value for m in fit.model.modes],
                  "p": fit.model.p if isinstance(fit.model.p, int)
                  else [list(r) if isinstance(r, tuple) else r for r in fit.model.p],
                  "psi_degree": fit.model.psi_degree},
        "family": res.family.name,
        "domain": {"x_min": [a for a, _ in fit.box], "x_max": [b for _, b in fit.box]},
        "coefficients": {"theta": fit.theta.tolist(), "beta": res.beta.tolist(),
                         "alpha": res.alpha.tolist()},
        "covariance_theta_upper": _pack_upper(fit.cov_theta).tolist(),
        "variances": variances,
        "phi": float(res.phi),
        "eds": {"components": res.ed.tolist(), "fixed": int(res.n_fixed),
                "total": float(res.ed_total)},
        "deviance": float(res.deviance),
        "caic": float(res.caic),
        "convergence": {"iterations": int(res.n_iter), "pirls_iterations": int(res.n_pirls),
                        "converged": bool(res.converged), "seconds": float(res.seconds)},
        "fitted": {"eta": res.eta.tolist(), "mu": res.mu.tolist()},
    }


def write_artifact(path, artifact: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(artifact, fh, allow_nan=False)
        fh.write("\n")


def read_artifact(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            art = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read artifact {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(art, dict) or art.get("format_version") != FORMAT_VERSION:
        raise InputError(f"{path}: unsupported or missing format_version")
    for key in ("model", "family", "domain", "coefficients", "covariance_theta_upper"):
        if key not in art:
            raise InputError(f"{path}: artifact lacks {key!r}")
    return art


def fit_from_artifact(art: dict) -> SmoothFit:
    m = art["model"]
    p = m["p"] if isinstance(m["p"], int) else tuple(tuple(r) if isinstance(r, list) else r
                                                     for r in m["p"])
    model = ModelSpec(len(m["d"]), tuple(m["d"]), tuple(m["degree"]), tuple(m["q"]),
                      tuple(m["modes"]), p, m["psi_degree"])
    box = tuple(zip(art["domain"]["x_min"], art["domain"]["x_max"]))
    theta = np.array(art["coefficients"]["theta"], dtype=float)
    cov = _unpack_upper(np.array(art["covariance_theta_upper"], dtype=float), theta.size)
    return SmoothFit(model, box, get_family(art["family"]), theta, cov)


def dump_components(groups, out_dir) -> list:
    """Write each penalty component as a Matrix Market coordinate file.

    Returns the manifest rows; the manifest itself is written as
    ``manifest.csv`` next to the matrices.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise InputError(f"cannot write to {out}: {exc.strerror or exc}") from None
    rows = []
    k = 0
    for g in groups:
        for comp in g.components():
            k += 1
            name = f"component_{k:04d}_cov{g.dimension + 1}_{comp.index + 1:03d}.mtx"
            M = sparse.coo_matrix(comp.matrix)
            spio.mmwrite(str(out / name), M, field="real", precision=17, symmetry="general")
            rows.append({"index": k, "file": name, "covariate": g.dimension + 1,
                         "component": comp.index + 1, "size": comp.size, "nnz": int(M.nnz)})
    with open(out / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["index", "file", "covariate", "component", "size", "nnz"])
        w.writeheader()
        w.writerows(rows)
    return rows


def read_matrix(path) -> np.ndarray:
    M = spio.mmread(str(path))
    return M.toarray() if sparse.issparse(M) else np.asarray(M)
