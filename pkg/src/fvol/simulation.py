"""Monte-Carlo study of the variance estimators on simulated functional data.

Covariates are random cosine curves on [-1, 1],

    X(l) = A (2 - cos(pi l w)) + (1 - A) cos(pi l w),   w ~ N(0, 1), A ~ Bernoulli(1/2),

responses follow ``Y = m(X) + sqrt(U(X)) eps`` with

    m(x) = int l x(l) dl,      U(x) = int |l| x(l)^2 dl,

and responses go missing with probability ``1 - expit(2 eta int x^2)``.
Each replication draws a fresh sample, selects bandwidths by cross-validation
and scores the complete, simplified and imputed estimators on a fixed set of
evaluation curves.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from fvol.bandwidth import DEFAULT_N_CANDIDATES, DEFAULT_QUANTILES, select_bandwidths
from fvol.errors import EmptyRecords, FvolError, NoNeighbors, ZeroDenominator
from fvol.estimators import MODES, EstimatorConfig, fit_volatility
from fvol.fda import Curve, FdaDataset, Grid, trapezoid_integrate
from fvol.semimetrics import DistanceCache

log = logging.getLogger(__name__)

AR_COEFFICIENTS = {2: 0.5, 3: -0.25, 4: 0.5}
MODEL4_BURN_IN = 50


@dataclass(frozen=True)
class SimConfig:
    n: int = 300
    grid_size: int = 100
    error_model: int = 1
    eta: float = 0.2
    B: int = 500
    J: int = 100
    seed: int = 0
    nu: float = 0.05
    estimators: tuple = MODES
    n_candidates: int = DEFAULT_N_CANDIDATES
    quantiles: tuple = DEFAULT_QUANTILES
    knn: Optional[int] = 5

    def __post_init__(self):
        if self.n < 10:
            raise ValueError("n must be at least 10")
        if self.B < 1 or self.J < 1:
            raise ValueError("B and J must be positive")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.error_model not in (1, 2, 3, 4):
            raise ValueError("error_model must be 1, 2, 3 or 4")
        unknown = set(self.estimators) - set(MODES)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}")


# --------------------------------------------------------------------------
# data generating process


@dataclass(frozen=True, eq=False)
class SimCurves:
    grid: Grid
    values: NDArray[np.float64]
    a: NDArray[np.int8]
    omega: NDArray[np.float64]

    def __len__(self):
        return self.values.shape[0]


def dgp_curve_values(points, a, omega):
    """``a (2 - cos(pi l w)) + (1 - a) cos(pi l w)``; broadcasts over curves."""
    a = np.asarray(a, dtype=float)[..., None]
    c = np.cos(np.pi * np.asarray(points)[None, :] * np.asarray(omega, dtype=float)[..., None])
    return a * (2.0 - c) + (1.0 - a) * c


def gen_curves(count: int, grid_size: int = 100, rng=None) -> SimCurves:
    rng = np.random.default_rng(rng)
    grid = Grid.uniform(-1.0, 1.0, grid_size)
    omega = rng.standard_normal(count)
    a = rng.integers(0, 2, count).astype(np.int8)
    return SimCurves(grid, dgp_curve_values(grid.points, a, omega), a, omega)


def true_m_values(values, grid: Grid):
    return trapezoid_integrate(np.asarray(values) * grid.points, grid)


def true_U_values(values, grid: Grid):
    return trapezoid_integrate(np.asarray(values) ** 2 * np.abs(grid.points), grid)


def true_m(x: Curve) -> float:
    return float(true_m_values(x.values, x.grid))


def true_U(x: Curve) -> float:
    return float(true_U_values(x.values, x.grid))


def gen_errors(n: int, model: int, rng=None) -> NDArray[np.float64]:
    """Error sequences: iid N(0,1) (model 1), Gaussian AR(1) with coefficient
    0.5 or -0.25 started from its stationary law (models 2, 3), and an AR(1)
    with coefficient 0.5 driven by +-1 coin flips after a burn-in (model 4)."""
    rng = np.random.default_rng(rng)
    if n < 1:
        raise ValueError("n must be positive")
    if model == 1:
        return rng.standard_normal(n)
    if model not in AR_COEFFICIENTS:
        raise ValueError(f"unknown error model {model}")
    phi = AR_COEFFICIENTS[model]
    if model == 4:
        xi = rng.choice(np.array([-1.0, 1.0]), size=n + MODEL4_BURN_IN)
        prev = 0.0
    else:
        xi = rng.standard_normal(n)
        prev = rng.standard_normal() / np.sqrt(1.0 - phi * phi)
    out = np.empty(xi.size)
    for t, shock in enumerate(xi):
        prev = phi * prev + shock
        out[t] = prev
    return out[-n:]


def mar_probability(values, grid: Grid, strength: float):
    """``expit(2 * strength * int x^2)`` over the curve's own grid."""
    return expit(2.0 * strength * trapezoid_integrate(np.asarray(values) ** 2, grid))


def apply_mar(values, grid: Grid, eta: float, rng=None):
    """Bernoulli observation flags with the true probabilities ``pi(X_t)``."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    rng = np.random.default_rng(rng)
    pi = np.atleast_1d(mar_probability(values, grid, eta))
    delta = (rng.random(pi.size) < pi).astype(np.int8)
    return delta, pi


# --------------------------------------------------------------------------
# replications


@dataclass(frozen=True, eq=False)
class EvalSet:
    curves: SimCurves
    true_u: NDArray[np.float64]


def make_eval_set(cfg: SimConfig) -> EvalSet:
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0,)))
    curves = gen_curves(cfg.J, cfg.grid_size, rng)
    return EvalSet(curves, true_U_values(curves.values, curves.grid))


def replication_rng(cfg: SimConfig, b: int):
    return np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1, b)))


def simulate_sample(cfg: SimConfig, rng) -> tuple[FdaDataset, FdaDataset, NDArray]:
    """One draw: the complete dataset, its MAR version and the true pi values."""
    curves = gen_curves(cfg.n, cfg.grid_size, rng)
    eps = gen_errors(cfg.n, cfg.error_model, rng)
    delta, pi = apply_mar(curves.values, curves.grid, cfg.eta, rng)
    m = true_m_values(curves.values, curves.grid)
    u = true_U_values(curves.values, curves.grid)
    y = m + np.sqrt(u) * eps
    complete = FdaDataset.complete(curves.grid, curves.values, y)
    return complete, complete.with_delta(delta, y), pi


@dataclass(frozen=True, eq=False)
class EstimatorRecord:
    mse: float
    u_hat: NDArray
    covered: Optional[NDArray] = None
    length: Optional[NDArray] = None
    bandwidths: dict = field(default_factory=dict)
    knn_overrides: int = 0


@dataclass(frozen=True, eq=False)
class ReplicationRecord:
    b: int
    missing_rate: float
    estimators: dict


def mse(estimates, truth) -> float:
    diff = np.asarray(estimates, float) - np.asarray(truth, float)
    return float(np.mean(diff * diff))


def run_replication(
    cfg: SimConfig,
    eval_set: EvalSet,
    b: int,
    template: Optional[EstimatorConfig] = None,
    u_override: Optional[Callable] = None,
) -> ReplicationRecord:
    """One Monte-Carlo replication; the sample is seeded from ``(cfg.seed, b)``.

    ``u_override`` (test hook) maps evaluation-curve values to variance
    estimates and replaces every estimator; no interval records are produced.
    """
    template = EstimatorConfig(knn=cfg.knn) if template is None else template
    complete, mar, _ = simulate_sample(cfg, replication_rng(cfg, b))
    truth = eval_set.true_u
    out = {}
    if u_override is not None:
        est = np.asarray(u_override(eval_set.curves.values), dtype=float)
        for mode in cfg.estimators:
            out[mode] = EstimatorRecord(mse(est, truth), est)
        return ReplicationRecord(b, 1.0 - mar.n_obs / len(mar), out)

    cache = DistanceCache(complete, eval_set.curves.values)
    for mode in cfg.estimators:
        data = complete if mode == "complete" else mar
        try:
            est_cfg = select_bandwidths(data, template, mode, cache, cfg.n_candidates, cfg.quantiles)
            res = fit_volatility(data, est_cfg, mode, cache, level=cfg.nu)
        except NoNeighbors as exc:
            raise NoNeighbors(
                f"replication {b}, {mode} estimator: {exc}",
                index=exc.index,
                context={"replication": b, "estimator": mode},
            ) from exc
        except FvolError as exc:
            raise type(exc)(f"replication {b}, {mode} estimator: {exc}") from exc
        covered = (res.ci_low <= truth) & (truth <= res.ci_high)
        out[mode] = EstimatorRecord(
            mse(res.u_hat, truth),
            res.u_hat,
            covered,
            res.ci_length,
            est_cfg.bandwidths(),
            res.knn_overrides,
        )
    return ReplicationRecord(b, 1.0 - mar.n_obs / len(mar), out)


# --------------------------------------------------------------------------
# summaries


@dataclass(frozen=True)
class MiseSummary:
    mise: float
    q1: float
    median: float
    q3: float


@dataclass(frozen=True)
class CoverageSummary:
    coverage: float
    mean_length: float
    efficiency: float


def mise_report(mse_records) -> MiseSummary:
    """MISE (mean of the per-replication MSEs) and their quartiles."""
    arr = np.asarray(list(mse_records), dtype=float)
    if arr.size == 0:
        raise EmptyRecords("no MSE records")
    q1, med, q3 = np.quantile(arr, [0.25, 0.5, 0.75])
    return MiseSummary(float(arr.mean()), float(q1), float(med), float(q3))


def efficiency(mise_simp: float, mise_npi: float) -> float:
    """Relative MISE improvement of the imputed over the simplified estimator, in percent."""
    if mise_simp == 0:
        raise ZeroDenominator("simplified MISE is zero")
    return (mise_simp - mise_npi) / mise_simp * 100.0


def coverage_report(covered, lengths) -> CoverageSummary:
    """Coverage rate, mean interval length and ``coverage / mean length * 100``."""
    hits = np.asarray(covered, dtype=float).ravel()
    lens = np.asarray(lengths, dtype=float).ravel()
    if hits.size == 0:
        raise EmptyRecords("no interval records")
    if lens.size != hits.size:
        raise ValueError("coverage and length records differ in size")
    cov = float(hits.mean())
    mean_len = float(lens.mean())
    eff = cov / mean_len * 100.0 if mean_len > 0 else float("inf")
    return CoverageSummary(cov, mean_len, eff)


CI_NAMES = {"complete": "complete", "simplified": "S", "imputed": "NPI"}


@dataclass(frozen=True, eq=False)
class SimReport:
    config: SimConfig
    mise: dict
    coverage: dict
    efficiency: Optional[float]
    missing_rate: float
    mean_bandwidths: dict
    knn_overrides: dict
    records: list = field(repr=False, default_factory=list)

    def rows(self):
        """Tidy rows ``(model, mar, n, estimator, metric, value)``."""
        c = self.config
        key = (c.error_model, f"eta={c.eta:g}", c.n)
        out = [(*key, "all", "missing_rate", self.missing_rate)]
        for mode, s in self.mise.items():
            for metric, value in asdict(s).items():
                out.append((*key, mode, metric, value))
        if self.efficiency is not None:
            out.append((*key, "imputed", "efficiency_pct", self.efficiency))
        for mode, s in self.coverage.items():
            out.append((*key, mode, "coverage", s.coverage))
            out.append((*key, mode, "ci_length", s.mean_length))
            out.append((*key, mode, "coverage_efficiency", s.efficiency))
        for mode, bw in self.mean_bandwidths.items():
            for name, value in bw.items():
                out.append((*key, mode, f"mean_{name}", value))
        for mode, count in self.knn_overrides.items():
            out.append((*key, mode, "knn_overrides", count))
        return out


def summarize(cfg: SimConfig, records: list) -> SimReport:
    records = sorted(records, key=lambda r: r.b)
    modes = list(records[0].estimators)
    mise = {m: mise_report(r.estimators[m].mse for r in records) for m in modes}
    coverage = {}
    bandwidths = {}
    overrides = {}
    for m in modes:
        recs = [r.estimators[m] for r in records]
        if recs[0].covered is not None:
            coverage[m] = coverage_report(
                np.concatenate([e.covered for e in recs]), np.concatenate([e.length for e in recs])
            )
        names = [k for k, v in recs[0].bandwidths.items() if v is not None]
        if names:
            bandwidths[m] = {k: float(np.mean([e.bandwidths[k] for e in recs])) for k in names}
        overrides[m] = int(sum(e.knn_overrides for e in recs))
    eff = None
    if "simplified" in mise and "imputed" in mise and mise["simplified"].mise > 0:
        eff = efficiency(mise["simplified"].mise, mise["imputed"].mise)
    missing = float(np.mean([r.missing_rate for r in records]))
    return SimReport(cfg, mise, coverage, eff, missing, bandwidths, overrides, records)


def run_study(
    cfg: SimConfig,
    threads: int = 1,
    template: Optional[EstimatorConfig] = None,
    progress: Optional[Callable[[int], None]] = None,
) -> SimReport:
    """All ``cfg.B`` replications on one evaluation set, reduced to a :class:`SimReport`.

    Replications are seeded independently, so the report does not depend on
    ``threads``.
    """
    eval_set = make_eval_set(cfg)

    def one(b):
        rec = run_replication(cfg, eval_set, b, template)
        if progress is not None:
            progress(b)
        return rec

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            records = list(pool.map(one, range(cfg.B)))
    else:
        records = [one(b) for b in range(cfg.B)]
    return summarize(cfg, records)


REPORT_COLUMNS = ("model", "mar", "n", "estimator", "metric", "value")


def write_report_csv(path, report: SimReport, header: Optional[dict] = None):
    from fvol.io import write_header

    with open(path, "w", newline="") as fh:
        meta = {"report": "simulation", **asdict(report.config)}
        meta.update(header or {})
        write_header(fh, meta)
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for row in report.rows():
            writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])
