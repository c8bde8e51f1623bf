"""Command-line interface: ``adaptps fit | predict | simulate | dump-penalty``.

Exit codes: 0 success, 1 input error, 2 internal error, 3 fit did not
converge (the artifact is still written).
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import io
from .families import get_family
from .model import fit_grid, fit_points
from .penalty import penalty_groups
from .simlab import METHODS, Scenario, run_replicates
from .sop import FitControl

log = logging.getLogger("adaptps")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL, EXIT_NOT_CONVERGED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """Argument errors are input errors: print usage and exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _config_flags(parser):
    grp = parser.add_argument_group("configuration overrides (same names as config keys)")
    for key in io.CONFIG_KEYS:
        grp.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", metavar="VALUE")


def _resolved(args) -> dict:
    raw = io.read_config(args.config) if getattr(args, "config", None) else {}
    for key in io.CONFIG_KEYS:
        val = getattr(args, f"cfg_{key}", None)
        if val is not None:
            raw[key] = val
    return io.resolve_config(raw)


def _offset_column(cfg, table):
    if "trials" in cfg:
        t = table[cfg["trials"]]
        if np.any(t <= 0):
            raise io.InputError(f"column {cfg['trials']!r} must be positive")
        return np.log(t)
    if "offset" in cfg:
        return table[cfg["offset"]]
    return None


def cmd_fit(args) -> int:
    cfg = _resolved(args)
    for key in ("response", "covariates"):
        if key not in cfg:
            raise io.InputError(f"config must set {key!r}")
    table = io.read_table(args.data)
    cov = list(cfg["covariates"])
    extra = [cfg[k] for k in ("offset", "trials", "weights") if k in cfg]
    io.require_columns(table, cov + [cfg["response"]] + extra, args.data)
    family = get_family(cfg["family"])
    try:
        family.validate(table[cfg["response"]])
    except ValueError as exc:
        raise io.InputError(f"response column {cfg['response']!r} does not suit the "
                            f"{family.name} family: {exc}") from None
    model = io.model_from_config(cfg)
    control = io.control_from_config(cfg)
    box = io.box_from_config(cfg, len(cov))
    offset = _offset_column(cfg, table)
    weights = table[cfg["weights"]] if "weights" in cfg else None

    if cfg["layout"] == "grid":
        fields = {"y": cfg["response"]}
        table = dict(table)
        if offset is not None:
            table["__offset"] = offset
            fields["o"] = "__offset"
        if weights is not None:
            fields["w"] = cfg["weights"]
        axes, arr, cells = io.to_grid(table, cov, list(fields.values()))
        get = lambda k: arr[fields[k]] if k in fields else None
        fit = fit_grid(axes, get("y"), model, family, get("o"), get("w"), control, box)
        # report fitted values in input row order
        fit.result.eta = fit.result.eta[cells]
        fit.result.mu = fit.result.mu[cells]
    else:
        x = np.column_stack([table[c] for c in cov])
        fit = fit_points(x, table[cfg["response"]], model, family, offset, weights, control, box)

    io.write_artifact(args.out, io.fit_to_artifact(fit, cfg))
    res = fit.result
    print(f"{len(res.sigma2)} variance components, ED {res.ed_total:.3f}, "
          f"deviance {res.deviance:.6g}, cAIC {res.caic:.6g}, "
          f"{res.n_iter} iterations, converged={res.converged}")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def _parse_grid(spec: str, K: int):
    try:
        sizes = [int(v) for v in spec.lower().split("x")]
    except ValueError:
        raise io.InputError(f"grid must look like 50x50, got {spec!r}") from None
    if len(sizes) != K or any(s < 1 for s in sizes):
        raise io.InputError(f"grid needs {K} positive sizes, got {spec!r}")
    return sizes


def cmd_predict(args) -> int:
    art = io.read_artifact(args.artifact)
    fit = io.fit_from_artifact(art)
    cfg = art.get("config", {})
    K = fit.model.ndim
    names = list(cfg.get("covariates") or [f"x{m + 1}" for m in range(K)])
    level = args.level if args.level is not None else cfg.get("level", 0.95)
    offset = None
    if (args.points is None) == (args.grid is None):
        raise io.InputError("give exactly one of --points or --grid")
    if args.points is not None:
        table = io.read_table(args.points)
        io.require_columns(table, names, args.points)
        x = np.column_stack([table[c] for c in names])
        cfg_r = {k: cfg[k] for k in ("offset", "trials") if k in cfg}
        if cfg_r and all(v in table for v in cfg_r.values()):
            offset = _offset_column(cfg_r, table)
    else:
        sizes = _parse_grid(args.grid, K)
        axes = [np.linspace(lo, hi, s) for (lo, hi), s in zip(fit.box, sizes)]
        mesh = np.meshgrid(*axes, indexing="ij")
        x = np.column_stack([g.ravel(order="F") for g in mesh])
    try:
        pred = fit.predict(x, level=level, offset=offset)
    except ValueError as exc:
        raise io.InputError(str(exc)) from None
    cols = {n: x[:, m] for m, n in enumerate(names)}
    cols.update({"eta_hat": pred["eta"], "mu_hat": pred["mu"], "se_eta": pred["se_eta"],
                 "lower": pred["lower"], "upper": pred["upper"]})
    io.write_table(args.out, cols)
    return EXIT_OK


def cmd_simulate(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise io.InputError(f"unknown method(s) {', '.join(unknown)}; choose from {', '.join(METHODS)}")
    if args.R < 1:
        raise io.InputError("--R must be at least 1")
    sc = Scenario(args.scenario, args.n, args.family, args.s, args.seed)
    settings = {"d": args.d, "p": args.p}
    control = FitControl(max_outer_iter=args.max_outer_iter) if args.max_outer_iter else None
    rep = run_replicates(sc, args.R, methods, args.seed, settings, control, args.jobs)
    rep.to_csv(args.out)
    for method, st in rep.summary().items():
        lm = st["log_mse"]
        print(f"{method}: median log-MSE {lm['median']:.4f} "
              f"[{lm['q1']:.4f}, {lm['q3']:.4f}], converged {st['converged']}/{args.R}")
    return EXIT_OK


def cmd_dump_penalty(args) -> int:
    cfg = _resolved(args)
    K = len(cfg["covariates"]) if "covariates" in cfg else len(cfg["d"])
    model = io.model_from_config(cfg, K)
    box = io.box_from_config(cfg, K) or ((0.0, 1.0),) * K
    groups = penalty_groups(model.penalty_spec(model.basis_specs(box)))
    rows = io.dump_components(groups, args.out_dir)
    print(f"wrote {len(rows)} penalty components to {args.out_dir}")
    return EXIT_OK


def _scenario_id(value):
    try:
        return Scenario(value, s=1.0).id
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="adaptps", description="Adaptive P-spline smoothing in one to three dimensions.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a model to CSV data and write a JSON artifact")
    p.add_argument("data", help="input CSV")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out", required=True, help="output JSON artifact")
    _config_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="evaluate a fitted artifact at new points")
    p.add_argument("artifact", help="JSON artifact written by 'fit'")
    p.add_argument("--points", help="CSV with the covariate columns")
    p.add_argument("--grid", help="regular grid over the domain, e.g. 50x50")
    p.add_argument("--level", type=float, help="interval level (default from the artifact, else 0.95)")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="run a replicate study on a simulation scenario")
    p.add_argument("--scenario", required=True, type=_scenario_id, help="I, II or III")
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--s", type=float, default=None, help="noise standard deviation (II, III)")
    p.add_argument("--family", default="gaussian", choices=("gaussian", "bernoulli"))
    p.add_argument("--R", type=int, default=250, help="number of replicates")
    p.add_argument("--seed", type=int, default=0, help="seed of the first replicate")
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--d", type=int, default=12)
    p.add_argument("--p", type=int, default=5)
    p.add_argument("--max-outer-iter", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output CSV report")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dump-penalty", help="write penalty components in Matrix Market format")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out-dir", required=True)
    _config_flags(p)
    p.set_defaults(func=cmd_dump_penalty)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"adaptps: error: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - reported, not swallowed silently
        log.debug("internal error", exc_info=True)
        print(f"adaptps: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
