"""Intraday-curve volatility pipeline on price files.

Each trading day contributes one covariate curve, the 23 hourly log returns
(percent) of the intraday series on the grid 1..23, and one response, the
daily log return (percent) of the commodity close. The estimated conditional
variance is compared with the day's realized variance.
"""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from fvol.bandwidth import select_bandwidths
from fvol.errors import EmptySeries, NoOverlappingDates, NonPositivePrice, SchemaError
from fvol.estimators import EstimatorConfig, fit_volatility
from fvol.fda import FdaDataset, Grid, log_returns, trapezoid_integrate
from fvol.semimetrics import DistanceCache, SemiMetricSpec

log = logging.getLogger(__name__)

HOURS_PER_DAY = 24
INTRADAY_GRID = Grid(np.arange(1.0, HOURS_PER_DAY))


@dataclass(frozen=True, eq=False)
class AlignedFinanceData:
    dates: tuple
    daily_returns: NDArray[np.float64]
    intraday_curves: NDArray[np.float64]
    intraday_raw: tuple
    grid: Grid = INTRADAY_GRID
    dropped: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.dates)

    def dataset(self, delta=None) -> FdaDataset:
        data = FdaDataset.complete(self.grid, self.intraday_curves, self.daily_returns, self.dates)
        return data if delta is None else data.with_delta(delta, self.daily_returns)

    @property
    def n_dropped(self) -> int:
        return sum(self.dropped.values())


def _read_rows(path, columns):
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if line.strip() and not line.startswith("#"))
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != list(columns):
            raise SchemaError(f"{path}: expected header {','.join(columns)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(columns):
                raise SchemaError(f"{path}: row {lineno} has {len(row)} columns, expected {len(columns)}")
            yield lineno, [c.strip() for c in row]


def _price(text, path, lineno):
    try:
        value = float(text)
    except ValueError:
        raise SchemaError(f"{path}: row {lineno}: price {text!r} is not a number") from None
    if not np.isfinite(value) or value <= 0:
        raise NonPositivePrice(f"{path}: row {lineno}: price {value} must be positive")
    return value


def read_hourly(path) -> dict:
    """``{date: {hour: price}}`` from a ``timestamp,price`` file."""
    days: dict = defaultdict(dict)
    for lineno, (stamp, price) in _read_rows(path, ("timestamp", "price")):
        try:
            ts = datetime.fromisoformat(stamp)
        except ValueError:
            raise SchemaError(f"{path}: row {lineno}: bad timestamp {stamp!r}") from None
        if ts.minute or ts.second:
            raise SchemaError(f"{path}: row {lineno}: timestamp {stamp!r} is not on the hour")
        day = ts.date().isoformat()
        if ts.hour in days[day]:
            raise SchemaError(f"{path}: row {lineno}: duplicate timestamp {stamp!r}")
        days[day][ts.hour] = _price(price, path, lineno)
    return dict(days)


def read_daily(path) -> list:
    """``[(date, close)]`` in file order from a ``date,close`` file."""
    rows = []
    for lineno, (day, close) in _read_rows(path, ("date", "close")):
        try:
            day = date.fromisoformat(day).isoformat()
        except ValueError:
            raise SchemaError(f"{path}: row {lineno}: bad date {day!r}") from None
        rows.append((day, _price(close, path, lineno)))
    dates = [d for d, _ in rows]
    if any(b <= a for a, b in zip(dates, dates[1:])):
        raise SchemaError(f"{path}: dates must be strictly increasing")
    return rows


def _complete_days(hourly: dict) -> dict:
    return {d: np.array([h[k] for k in range(HOURS_PER_DAY)]) for d, h in hourly.items() if len(h) == HOURS_PER_DAY}


def day_returns(hourly: dict) -> dict:
    """Per complete day: the 23 within-day returns, preceded by the overnight
    return when the previous date in the file is complete too."""
    full = _complete_days(hourly)
    ordered = sorted(hourly)
    out = {}
    for prev, d in zip([None] + ordered[:-1], ordered):
        if d not in full:
            continue
        prices = full[d]
        if prev in full:
            prices = np.concatenate([[full[prev][-1]], prices])
        out[d] = log_returns(prices)
    return out


def ingest_intraday(hourly_csv, daily_csv, rv_hourly_csv=None) -> AlignedFinanceData:
    """Align intraday curves with daily returns by calendar date.

    A date is kept when the intraday file has all 24 hourly prices and the
    daily file has both that date and a previous row. The realized-variance
    returns come from ``rv_hourly_csv`` when given (the response's own
    intraday prices), otherwise from the covariate's intraday prices; a date
    missing from that file is dropped as well.
    """
    hourly = read_hourly(hourly_csv)
    daily = read_daily(daily_csv)
    full = _complete_days(hourly)
    dropped = {"incomplete_intraday": len(hourly) - len(full)}
    daily_ret = {}
    for (_, prev), (d, close) in zip(daily, daily[1:]):
        daily_ret[d] = float(log_returns(np.array([prev, close]))[0])
    rv_source = day_returns(read_hourly(rv_hourly_csv) if rv_hourly_csv else hourly)
    dates, ys, curves, raw = [], [], [], []
    dropped["no_daily_return"] = 0
    dropped["no_rv_returns"] = 0
    for d in sorted(full):
        if d not in daily_ret:
            dropped["no_daily_return"] += 1
            continue
        if d not in rv_source:
            dropped["no_rv_returns"] += 1
            continue
        dates.append(d)
        ys.append(daily_ret[d])
        curves.append(log_returns(full[d]))
        raw.append(rv_source[d])
    if not dates:
        raise NoOverlappingDates("no date is complete in both the intraday and the daily file")
    log.info("ingested %d days; dropped %s", len(dates), dropped)
    counts = sorted({r.size for r in raw})
    log.info("curve points per day: %d; realized-variance returns per day: %s", len(INTRADAY_GRID), counts)
    return AlignedFinanceData(tuple(dates), np.array(ys), np.array(curves), tuple(raw), INTRADAY_GRID, dropped)


def realized_vol(returns) -> float:
    """Realized variance: sum of squared intraday returns."""
    r = np.asarray(returns, dtype=float).ravel()
    if r.size == 0:
        raise EmptySeries("no returns for this day")
    return float(r @ r)


def mar_probabilities(data: AlignedFinanceData, zeta: float) -> NDArray:
    if not zeta > 0:
        raise ValueError("zeta must be positive")
    return np.atleast_1d(expit(2.0 * zeta * trapezoid_integrate(data.intraday_curves ** 2, data.grid)))


def zeta_for_rate(data: AlignedFinanceData, missing_rate: float, lo: float = 1e-6, hi: float = 1e3) -> float:
    """``zeta`` whose expected missing rate ``mean(1 - pi(X_t))`` equals ``missing_rate``."""
    if not 0.0 < missing_rate < 0.5:
        raise ValueError("attainable missing rates lie in (0, 0.5)")
    from scipy.optimize import brentq

    return float(brentq(lambda z: 1.0 - mar_probabilities(data, z).mean() - missing_rate, lo, hi, xtol=1e-10))


def inject_mar_finance(data: AlignedFinanceData, zeta: float, rng=None) -> NDArray[np.int8]:
    """Observation flags ``u_t < pi(X_t)``.

    One uniform is drawn per day, so two calls with equally seeded generators
    and different ``zeta`` are coupled: the larger ``zeta`` observes a
    superset of the days.
    """
    rng = np.random.default_rng(rng)
    pi = mar_probabilities(data, zeta)
    return (rng.random(pi.size) < pi).astype(np.int8)


def se_quartiles(se) -> tuple:
    """``(Q25, Q50, Q75, mean)`` with linear-interpolation quantiles."""
    arr = np.asarray(se, dtype=float).ravel()
    if arr.size == 0:
        raise EmptySeries("no squared errors")
    q = np.quantile(arr, [0.25, 0.5, 0.75])
    return float(q[0]), float(q[1]), float(q[2]), float(arr.mean())


@dataclass(frozen=True, eq=False)
class PipelineReport:
    mode: str
    dates: tuple
    sqrt_u: NDArray
    sqrt_rv: NDArray
    se: NDArray
    ci_low: NDArray
    ci_high: NDArray
    covered: NDArray
    quartiles: tuple
    coverage: float
    mean_ci_length: float
    missing_rate: float
    cfg: Optional[EstimatorConfig] = None

    @property
    def mse(self) -> float:
        return self.quartiles[3]

    def rows(self):
        for i, d in enumerate(self.dates):
            yield (d, self.sqrt_u[i], self.sqrt_rv[i], self.se[i], self.ci_low[i], self.ci_high[i], int(self.covered[i]))


REPORT_COLUMNS = ("date", "sqrt_u_hat", "sqrt_rv", "se", "ci_low", "ci_high", "covered")


def pipeline_config(pca_k: int = 4, knn: Optional[int] = 5) -> EstimatorConfig:
    return EstimatorConfig.shared(semimetric=SemiMetricSpec.pca(pca_k), knn=knn)


def run_pipeline(
    data: AlignedFinanceData,
    delta=None,
    mode: str = "simplified",
    cfg: Optional[EstimatorConfig] = None,
    level: float = 0.05,
    u_override: Optional[Callable[[AlignedFinanceData], NDArray]] = None,
    n_candidates: int = 15,
    quantiles: tuple = (0.05, 0.5),
) -> PipelineReport:
    """In-sample conditional-volatility estimates at every day's curve.

    Unset bandwidths in ``cfg`` are chosen by cross-validation; ``cfg=None``
    uses the PCA semi-metric with four components for every smoother.
    ``u_override`` (test hook) supplies the variance estimates directly.
    """
    dataset = data.dataset(delta)
    delta = dataset.delta
    rv = np.array([realized_vol(r) for r in data.intraday_raw])
    if u_override is not None:
        u = np.asarray(u_override(data), dtype=float)
        low = high = u
        fitted_cfg = cfg
    else:
        cfg = pipeline_config() if cfg is None else cfg
        cache = DistanceCache(dataset, dataset.curves)
        fitted_cfg = select_bandwidths(dataset, cfg, mode, cache, n_candidates, quantiles)
        res = fit_volatility(dataset, fitted_cfg, mode, cache, level=level)
        u, low, high = res.u_hat, res.ci_low, res.ci_high
    sqrt_u = np.sqrt(np.maximum(u, 0.0))
    sqrt_rv = np.sqrt(rv)
    se = (sqrt_u - sqrt_rv) ** 2
    covered = (low <= rv) & (rv <= high)
    return PipelineReport(
        mode,
        data.dates,
        sqrt_u,
        sqrt_rv,
        se,
        np.asarray(low, float),
        np.asarray(high, float),
        covered,
        se_quartiles(se),
        float(covered.mean()),
        float(np.mean(np.asarray(high) - np.asarray(low))),
        float(1.0 - delta.mean()),
        fitted_cfg,
    )


# --------------------------------------------------------------------------
# synthetic market data


def synthetic_market(
    n_days: int,
    rng=None,
    fx_hourly_vol: float = 0.13,
    commodity_daily_vol: float = 2.0,
    start: str = "2020-01-01",
    weekends: bool = True,
):
    """Hourly covariate prices, hourly commodity prices and daily commodity
    closes with a constant daily volatility (percent).

    The commodity's daily close is its last hourly price, so the daily return
    is the sum of the 24 hourly returns since the previous close. Weekend
    days are absent from every file when ``weekends`` is True.
    """
    rng = np.random.default_rng(rng)
    day0 = date.fromisoformat(start)
    days = []
    d = day0
    while len(days) < n_days:
        if not (weekends and d.weekday() >= 5):
            days.append(d)
        d += timedelta(days=1)
    n_hours = len(days) * HOURS_PER_DAY
    fx = 1.1 * np.exp(np.cumsum(rng.normal(0.0, fx_hourly_vol / 100.0, n_hours)))
    sigma_h = commodity_daily_vol / np.sqrt(HOURS_PER_DAY) / 100.0
    gas = 20.0 * np.exp(np.cumsum(rng.normal(0.0, sigma_h, n_hours)))
    stamps = [
        datetime(dd.year, dd.month, dd.day, h).isoformat() for dd in days for h in range(HOURS_PER_DAY)
    ]
    closes = gas[HOURS_PER_DAY - 1 :: HOURS_PER_DAY]
    return {
        "fx_hourly": list(zip(stamps, fx)),
        "commodity_hourly": list(zip(stamps, gas)),
        "commodity_daily": [(dd.isoformat(), c) for dd, c in zip(days, closes)],
    }


def write_synthetic_market(directory, n_days: int, rng=None, **kw) -> dict:
    """Write the three CSV files of :func:`synthetic_market`; returns their paths."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    market = synthetic_market(n_days, rng, **kw)
    paths = {}
    for name, rows in market.items():
        path = directory / f"{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "close"] if name.endswith("daily") else ["timestamp", "price"])
            w.writerows((a, repr(float(b))) for a, b in rows)
        paths[name] = path
    return paths
