"""Command line entry point ``fvol``.

Every flag can also be given in an INI file passed with ``--config``: the
``[fvol]`` section holds the global flags and one section per subcommand
holds that subcommand's flags, spelled as on the command line without the
leading dashes (``cv-grid-size = 10``). Command-line values win.

The sections ``[regression]``, ``[variance]``, ``[omega]`` and ``[pi]``
configure the four smoothers separately for ``estimate`` and ``report``
(overriding the shared ``kernel`` and ``semimetric``; bandwidth flags given
on the command line still win), with keys ``bandwidth`` (``auto`` or a value), ``kernel``, ``semimetric``
and, for the first two, ``pilot-bandwidth`` (the imputation pilot)::

    [variance]
    bandwidth = 0.8
    semimetric = deriv_l2:2
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys

import numpy as np

from fvol import io as fio
from fvol.errors import FvolError

log = logging.getLogger("fvol")

MODES = ("complete", "simplified", "imputed")


def bandwidth_arg(text: str):
    if text.strip().lower() == "auto":
        return None
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"bandwidth must be positive or 'auto', got {text}")
    return value


def quantile_range(text: str):
    lo, _, hi = text.partition(",")
    try:
        out = (float(lo), float(hi))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'low,high', got {text!r}") from None
    if not 0 < out[0] < out[1] <= 1:
        raise argparse.ArgumentTypeError("need 0 < low < high <= 1")
    return out


def optional_int(text: str):
    return None if text.strip().lower() in ("", "none", "off") else int(text)


def _add_smoothing(p, default_semimetric: str, default_knn):
    p.add_argument("--level", type=float, default=0.05, help="CI level nu (two-sided, 1-nu coverage)")
    for name in ("h1", "h2", "h3", "h4"):
        p.add_argument(f"--{name}", type=bandwidth_arg, default=None, metavar="auto|H")
    p.add_argument("--h1-init", type=bandwidth_arg, default=None, metavar="auto|H")
    p.add_argument("--h2-init", type=bandwidth_arg, default=None, metavar="auto|H")
    p.add_argument("--kernel", default="quadratic", choices=("quadratic", "triangular", "uniform"))
    p.add_argument("--semimetric", default=default_semimetric, help="l2 | deriv_l2:ORDER | pca:K")
    p.add_argument("--knn", type=optional_int, default=default_knn, help="nearest-neighbour bandwidth floor ('none' to disable)")
    p.add_argument("--cv-grid-size", type=int, default=15)
    p.add_argument("--cv-quantile-range", type=quantile_range, default=(0.05, 0.5), metavar="LOW,HIGH")
    p.add_argument("--tau-strict", action="store_true", help="use the literal small-ball ratio F(uh)/F(u)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fvol", description="Conditional volatility with a functional covariate and MAR responses.")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--config", default=None, help="INI file mirroring the flags")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Monte-Carlo study on simulated curves")
    p.add_argument("--model", type=int, choices=(1, 2, 3, 4), default=1)
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--eta", type=float, default=0.2)
    p.add_argument("--B", type=int, default=500)
    p.add_argument("--J", type=int, default=100)
    p.add_argument("--grid-size", type=int, default=100)
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--estimators", default=",".join(MODES))
    p.add_argument("--knn", type=optional_int, default=5)
    p.add_argument("--cv-grid-size", type=int, default=15)
    p.add_argument("--cv-quantile-range", type=quantile_range, default=(0.05, 0.5), metavar="LOW,HIGH")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ingest", help="align intraday and daily price files into curve/response CSVs")
    _add_market_inputs(p)
    p.add_argument("--out-curves", required=True)
    p.add_argument("--out-responses", required=True)
    p.add_argument("--out-rv", default=None)

    p = sub.add_parser("rv", help="daily realized variance from an hourly price file")
    p.add_argument("--hourly", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("estimate", help="volatility estimates and CIs from curve/response CSVs")
    p.add_argument("--curves", required=True)
    p.add_argument("--responses", required=True)
    p.add_argument("--eval-curves", default=None, help="defaults to the training curves")
    p.add_argument("--mode", choices=MODES, default="simplified")
    _add_smoothing(p, "deriv_l2:1", None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="end-to-end pipeline on price files with MAR injection")
    _add_market_inputs(p)
    _add_smoothing(p, "pca:4", 5)
    p.add_argument("--modes", default=",".join(MODES))
    p.add_argument("--out", required=True)
    p.add_argument("--summary", default=None, help="optional CSV of per-mode aggregates")
    return parser


def _add_market_inputs(p):
    p.add_argument("--hourly", required=True, help="intraday covariate prices: timestamp,price")
    p.add_argument("--daily", required=True, help="daily response closes: date,close")
    p.add_argument("--rv-hourly", default=None, help="intraday response prices for realized variance")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--zeta", type=float, default=None, help="MAR strength")
    g.add_argument("--mar-rate", type=float, default=None, help="target expected missing rate")


def apply_config(parser: argparse.ArgumentParser, path: str) -> None:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FvolError(f"cannot read config file {path}")
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices
    targets = {"fvol": parser, **subparsers}
    smoothers = _smoother_sections(cp, path)
    if smoothers:
        for name in ("estimate", "report"):
            subparsers[name].set_defaults(smoothers=smoothers)
    for section in cp.sections():
        if section in SMOOTHERS:
            continue
        if section not in targets:
            raise FvolError(f"{path}: unknown section [{section}]")
        target = targets[section]
        actions = {a.dest.lower(): a for a in target._actions}
        defaults = {}
        for key, raw in cp.items(section):
            dest = key.replace("-", "_").lower()
            if dest not in actions or dest in ("help", "config"):
                raise FvolError(f"{path}: unknown key '{key}' in [{section}]")
            action = actions[dest]
            if isinstance(action, argparse._StoreTrueAction):
                value = cp.getboolean(section, key)
            elif action.type is not None:
                value = action.type(raw)
            else:
                value = raw
            if action.choices is not None and value not in action.choices:
                raise FvolError(f"{path}: {key}={raw} is not one of {list(action.choices)}")
            defaults[action.dest] = value
        target.set_defaults(**defaults)
        for action in target._actions:
            if action.dest in defaults:
                action.required = False


SMOOTHERS = {
    "regression": ("kernel_K", "sm1", "h1", "h1_init"),
    "variance": ("kernel_W", "sm2", "h2", "h2_init"),
    "omega": ("kernel_H", "sm3", "h3", None),
    "pi": ("kernel_Htilde", "sm4", "h4", None),
}


def _smoother_sections(cp: configparser.ConfigParser, path) -> dict:
    """EstimatorConfig field overrides from the per-smoother sections."""
    from fvol.kernels import get_kernel
    from fvol.semimetrics import SemiMetricSpec

    out = {}
    for section, (kernel, sm, h, pilot) in SMOOTHERS.items():
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            key = key.replace("_", "-")
            try:
                if key == "kernel":
                    out[kernel] = get_kernel(raw)
                elif key == "semimetric":
                    out[sm] = SemiMetricSpec.parse(raw)
                elif key == "bandwidth":
                    out[h] = bandwidth_arg(raw)
                elif key == "pilot-bandwidth" and pilot:
                    out[pilot] = bandwidth_arg(raw)
                else:
                    raise FvolError(f"{path}: unknown key '{key}' in [{section}]")
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise FvolError(f"{path}: [{section}] {key}: {exc}") from None
    return out


def parse_args(argv=None) -> argparse.Namespace:
    argv = sys.argv[1:] if argv is None else list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        apply_config(parser, known.config)
    return parser.parse_args(argv)


def estimator_config(args):
    from fvol.estimators import EstimatorConfig
    from fvol.kernels import get_kernel
    from fvol.semimetrics import SemiMetricSpec

    cfg = EstimatorConfig.shared(
        get_kernel(args.kernel),
        SemiMetricSpec.parse(args.semimetric),
        h1=args.h1,
        h2=args.h2,
        h3=args.h3,
        h4=args.h4,
        h1_init=args.h1_init,
        h2_init=args.h2_init,
        knn=args.knn,
    )
    section = getattr(args, "smoothers", None) or {}
    # bandwidths given as flags win over the per-smoother sections
    keep = {k: v for k, v in section.items() if not (k.startswith("h") and getattr(cfg, k) is not None)}
    return cfg.with_bandwidths(**keep)


def _meta(args, **extra) -> dict:
    meta = {k: v for k, v in vars(args).items() if k != "smoothers"}
    for k, v in (getattr(args, "smoothers", None) or {}).items():
        meta[f"section_{k}"] = getattr(v, "family", v)
    meta.update(extra)
    return meta


def cmd_simulate(args) -> int:
    from fvol.simulation import SimConfig, run_study, write_report_csv

    cfg = SimConfig(
        n=args.n,
        grid_size=args.grid_size,
        error_model=args.model,
        eta=args.eta,
        B=args.B,
        J=args.J,
        seed=args.seed,
        nu=args.level,
        estimators=tuple(e.strip() for e in args.estimators.split(",") if e.strip()),
        n_candidates=args.cv_grid_size,
        quantiles=args.cv_quantile_range,
        knn=args.knn,
    )
    report = run_study(cfg, threads=args.threads)
    write_report_csv(args.out, report, {"command": "simulate"})
    for mode, s in report.mise.items():
        print(f"{mode:>10}: MISE {s.mise:.4f}  (Q1 {s.q1:.4f}, median {s.median:.4f}, Q3 {s.q3:.4f})")
    if report.efficiency is not None:
        print(f"efficiency of the imputed estimator: {report.efficiency:.2f}%")
    return 0


def _market(args):
    from fvol.finance import ingest_intraday, inject_mar_finance, zeta_for_rate

    data = ingest_intraday(args.hourly, args.daily, args.rv_hourly)
    zeta = args.zeta
    if args.mar_rate is not None:
        zeta = zeta_for_rate(data, args.mar_rate)
    delta = None
    if zeta is not None:
        delta = inject_mar_finance(data, zeta, np.random.default_rng(args.seed))
    return data, delta, zeta


def cmd_ingest(args) -> int:
    from fvol.finance import realized_vol

    data, delta, zeta = _market(args)
    delta = np.ones(len(data), dtype=np.int8) if delta is None else delta
    fio.write_curves(args.out_curves, data.grid, data.intraday_curves, data.dates)
    fio.write_responses(args.out_responses, data.dates, data.daily_returns, delta)
    if args.out_rv:
        rows = [(d, realized_vol(r), r.size) for d, r in zip(data.dates, data.intraday_raw)]
        fio.write_table(args.out_rv, ("date", "rv", "n_returns"), rows, _meta(args, zeta=zeta))
    print(f"kept {len(data)} days, dropped {data.n_dropped} {data.dropped}; missing responses: {int(np.sum(delta == 0))}")
    return 0


def cmd_rv(args) -> int:
    from fvol.finance import day_returns, read_hourly, realized_vol

    returns = day_returns(read_hourly(args.hourly))
    rows = [(d, realized_vol(r), r.size) for d, r in sorted(returns.items())]
    fio.write_table(args.out, ("date", "rv", "n_returns"), rows, _meta(args))
    return 0


CI_COLUMNS = ("x_id", "u_hat", "ci_low", "ci_high", "omega_hat", "pi_hat", "m1_hat", "m2_hat", "f_hat")


def cmd_estimate(args) -> int:
    from fvol.bandwidth import select_bandwidths
    from fvol.estimators import fit_volatility
    from fvol.semimetrics import DistanceCache

    data = fio.load_dataset(args.curves, args.responses)
    if args.eval_curves:
        grid, eval_values, eval_ids = fio.read_curves(args.eval_curves)
        if grid != data.grid:
            raise FvolError("evaluation curves are not on the training grid")
    else:
        eval_values, eval_ids = data.curves, list(data.ids)
    cache = DistanceCache(data, eval_values)
    cfg = select_bandwidths(data, estimator_config(args), args.mode, cache, args.cv_grid_size, args.cv_quantile_range)
    res = fit_volatility(data, cfg, args.mode, cache, level=args.level, tau_strict=args.tau_strict)
    rows = [
        (i, e.u_hat, e.ci_low, e.ci_high, e.omega_hat, e.pi_hat, e.m1_hat, e.m2_hat, e.f_hat)
        for i, e in zip(eval_ids, res.estimates())
    ]
    meta = _meta(args, **{f"bandwidth_{k}": v for k, v in cfg.bandwidths().items()}, knn_overrides=res.knn_overrides)
    fio.write_table(args.out, CI_COLUMNS, rows, meta)
    return 0


def cmd_report(args) -> int:
    from fvol.finance import REPORT_COLUMNS, run_pipeline

    data, delta, zeta = _market(args)
    cfg = estimator_config(args)
    meta = _meta(args, zeta=zeta, days=len(data), dropped_days=data.n_dropped)
    rows, summary = [], []
    for mode in (m.strip() for m in args.modes.split(",") if m.strip()):
        if mode not in MODES:
            raise FvolError(f"unknown mode {mode!r}")
        rep = run_pipeline(data, None if mode == "complete" else delta, mode, cfg, args.level, n_candidates=args.cv_grid_size, quantiles=args.cv_quantile_range)
        rows += [(mode, *r) for r in rep.rows()]
        q25, q50, q75, mse = rep.quartiles
        summary.append((mode, rep.missing_rate, q25, q50, q75, mse, rep.coverage, rep.mean_ci_length))
        meta.update({f"bandwidth_{mode}_{k}": v for k, v in rep.cfg.bandwidths().items() if v is not None})
        print(f"{mode:>10}: SE Q25 {q25:.4f}  Q50 {q50:.4f}  Q75 {q75:.4f}  MSE {mse:.4f}  coverage {rep.coverage:.3f}  CI length {rep.mean_ci_length:.4f}")
    fio.write_table(args.out, ("mode",) + REPORT_COLUMNS, rows, meta)
    if args.summary:
        cols = ("mode", "missing_rate", "se_q25", "se_q50", "se_q75", "mse", "coverage", "mean_ci_length")
        fio.write_table(args.summary, cols, summary, meta)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "rv": cmd_rv,
    "estimate": cmd_estimate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except FvolError as exc:
        print(f"fvol: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FvolError as exc:
        print(f"fvol: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
