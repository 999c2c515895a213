"""Kernel estimators of the regression operator, conditional variance,
observation probability and fourth-moment operator under MAR responses.

Three flavours are supported:

* ``complete``   -- every response observed; plain Nadaraya-Watson averages.
* ``simplified`` -- only observed pairs enter numerator and denominator.
* ``imputed``    -- missing responses (and squared residuals) are first filled
  with simplified-estimator predictions, then every pair is used.

The heavy lifting happens in :func:`smooth`, which averages values with kernel
weights taken from a precomputed distance matrix. The pointwise functions
(``estimate_m`` and friends) are thin wrappers for a single evaluation curve;
:func:`fit_volatility` runs the full pipeline at many curves at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from fvol.errors import (
    CompleteModeOnIncompleteData,
    DegenerateVarianceAtObservation,
    MissingFittedValue,
    NoNeighbors,
)
from fvol.fda import Curve, FdaDataset
from fvol.kernels import QUADRATIC, Kernel
from fvol.semimetrics import DEFAULT_SEMIMETRIC, DistanceCache, SemiMetricSpec

MODES = ("complete", "simplified", "imputed")
U_FLOOR = 1e-12


@dataclass(frozen=True)
class EstimatorConfig:
    """Kernels, semi-metrics and bandwidths for the four smoothers.

    ``h1``..``h4`` drive m, U, omega and pi respectively; ``None`` means "not
    chosen yet" (see :func:`fvol.bandwidth.select_bandwidths`). The imputed
    flavour also needs the bandwidths of the simplified pilot fit that fills in
    missing values: ``h1_init`` and ``h2_init``, defaulting to ``h1``/``h2``.
    ``knn`` enables the per-point nearest-neighbour bandwidth floor: a curve
    with fewer than ``knn`` neighbours inside the ball gets a wider, local
    bandwidth. Cross-validation never uses it.
    """

    kernel_K: Kernel = QUADRATIC
    kernel_W: Kernel = QUADRATIC
    kernel_H: Kernel = QUADRATIC
    kernel_Htilde: Kernel = QUADRATIC
    sm1: SemiMetricSpec = DEFAULT_SEMIMETRIC
    sm2: SemiMetricSpec = DEFAULT_SEMIMETRIC
    sm3: SemiMetricSpec = DEFAULT_SEMIMETRIC
    sm4: SemiMetricSpec = DEFAULT_SEMIMETRIC
    h1: Optional[float] = None
    h2: Optional[float] = None
    h3: Optional[float] = None
    h4: Optional[float] = None
    h1_init: Optional[float] = None
    h2_init: Optional[float] = None
    knn: Optional[int] = None

    def __post_init__(self):
        for name in ("h1", "h2", "h3", "h4", "h1_init", "h2_init"):
            h = getattr(self, name)
            if h is not None and not (h > 0 and math.isfinite(h)):
                raise ValueError(f"bandwidth {name} must be positive, got {h!r}")
        if self.knn is not None and self.knn < 1:
            raise ValueError("knn must be a positive integer")

    @classmethod
    def shared(cls, kernel: Kernel = QUADRATIC, semimetric: SemiMetricSpec = DEFAULT_SEMIMETRIC, **kw):
        """One kernel and one semi-metric for all four smoothers."""
        return cls(kernel, kernel, kernel, kernel, semimetric, semimetric, semimetric, semimetric, **kw)

    def with_bandwidths(self, **kw) -> "EstimatorConfig":
        return replace(self, **kw)

    def bandwidth(self, name: str) -> float:
        h = getattr(self, name)
        if h is None:
            if name == "h1_init":
                return self.bandwidth("h1")
            if name == "h2_init":
                return self.bandwidth("h2")
            raise ValueError(f"bandwidth {name} has not been set")
        return h

    def bandwidths(self) -> dict:
        names = ("h1", "h2", "h3", "h4", "h1_init", "h2_init")
        return {k: getattr(self, k) for k in names}


@dataclass(frozen=True, eq=False)
class RegressionFit:
    """Fitted regression values at the training curves.

    ``imputed`` holds ``Y_hat_t`` for the imputed flavour (observed responses
    where ``delta_t = 1``, pilot predictions elsewhere).
    """

    mode: str
    fitted: NDArray[np.float64]
    imputed: Optional[NDArray[np.float64]] = None


@dataclass(frozen=True, eq=False)
class VarianceFit:
    mode: str
    fitted: NDArray[np.float64]


@dataclass(frozen=True)
class VolEstimate:
    u_hat: float
    ci_low: float
    ci_high: float
    omega_hat: float
    pi_hat: float
    m1_hat: float
    m2_hat: float
    f_hat: float
    level: float

    @property
    def negative_lower_bound(self) -> bool:
        return self.ci_low < 0


# --------------------------------------------------------------------------
# array-level machinery


def row_bandwidths(dist, h, include=None, knn=None, kernel: Kernel = QUADRATIC):
    """Per-row bandwidths after the optional nearest-neighbour override.

    A row whose neighbourhood holds fewer than ``knn`` included points with a
    positive kernel weight gets the distance to its ``(knn+1)``-th nearest
    included point instead, so that ``knn`` points fall strictly inside.
    """
    dist = np.atleast_2d(dist)
    hs = np.full(dist.shape[0], float(h))
    if knn is None:
        return hs
    inc = np.ones(dist.shape[1], bool) if include is None else np.asarray(include, bool)
    active = (kernel(dist / h) > 0) & inc[None, :]
    short = np.flatnonzero(active.sum(axis=1) < knn)
    if short.size == 0:
        return hs
    cand = np.sort(dist[np.ix_(short, np.flatnonzero(inc))], axis=1)
    for row, d in zip(short, cand):
        if d.size > knn:
            hs[row] = max(d[knn], h)
        elif d.size:
            hs[row] = max(2.0 * d[-1], h)
        if hs[row] <= 0 or not np.isfinite(hs[row]):
            hs[row] = h
    return hs


def _without_self(dist):
    out = np.array(dist, dtype=float)
    np.fill_diagonal(out, np.inf)
    return out


def smooth(
    dist,
    h,
    kernel: Kernel,
    values,
    include=None,
    loo: bool = False,
    knn: Optional[int] = None,
    stats: Optional[dict] = None,
):
    """Kernel-weighted averages ``sum_t w_t v_t / sum_t w_t`` for every row of ``dist``.

    Parameters
    ----------
    dist : array (n_eval, n)
        Semi-metric distances from each evaluation curve to the sample curves.
    h : float
        Bandwidth.
    values : array (n,)
        Values to average. Entries outside ``include`` are never read.
    include : bool/0-1 array (n,), optional
        Which sample points enter both sums (the ``delta`` weights).
    loo : bool
        Leave-one-out: drop the diagonal (requires ``dist`` square, eval == sample).
    knn : int, optional
        Nearest-neighbour bandwidth override, see :func:`row_bandwidths`.
    stats : dict, optional
        Receives the number of rows whose bandwidth was overridden.
    """
    dist = np.atleast_2d(np.asarray(dist, dtype=float))
    vals = np.asarray(values, dtype=float)
    if include is None:
        inc = np.ones(dist.shape[1])
    else:
        inc = np.asarray(include, dtype=float)
    vals = np.where(inc > 0, vals, 0.0)
    if knn is not None:
        hs = row_bandwidths(_without_self(dist) if loo else dist, h, inc > 0, knn, kernel)
        if stats is not None:
            stats["knn_overrides"] = stats.get("knn_overrides", 0) + int(np.sum(hs != h))
        w = kernel(dist / hs[:, None])
    else:
        w = kernel(dist / h)
    if loo:
        w = w.copy()
        np.fill_diagonal(w, 0.0)
    den = w @ inc
    num = w @ (inc * vals)
    empty = np.flatnonzero(den <= 0)
    if empty.size:
        raise NoNeighbors(
            f"no sample curve within bandwidth {h:g} of evaluation point {empty[0]} "
            f"({empty.size} such point(s))",
            index=int(empty[0]),
        )
    return num / den


def small_ball_fraction(dist, hs):
    """Empirical small-ball probability ``n^-1 #{t : d(x, X_t) <= h}`` per row."""
    dist = np.atleast_2d(dist)
    hs = np.broadcast_to(np.asarray(hs, dtype=float), (dist.shape[0],))
    return np.mean(dist <= hs[:, None], axis=1)


def _obs_mask(data: FdaDataset, mode: str) -> NDArray:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    if mode == "complete" and not data.is_complete:
        raise CompleteModeOnIncompleteData(
            f"complete mode needs every response observed; {len(data) - data.n_obs} missing"
        )
    return data.delta.astype(float)


def standardized_fourth_moment_targets(y, m_fitted, u_fitted, include):
    """``(eps_t^2 - 1)^2`` with ``eps_t = (y_t - m_t) / sqrt(u_t)`` at included t."""
    inc = np.asarray(include, dtype=float) > 0
    u = np.asarray(u_fitted, dtype=float)
    low = np.flatnonzero(inc & ~(u > U_FLOOR))
    if low.size:
        raise DegenerateVarianceAtObservation(
            f"fitted variance {u[low[0]]:.3g} below floor {U_FLOOR:g} at observation {low[0]}",
            index=int(low[0]),
        )
    out = np.full(u.shape, np.nan)
    eps2 = (np.asarray(y, float)[inc] - np.asarray(m_fitted, float)[inc]) ** 2 / u[inc]
    out[inc] = (eps2 - 1.0) ** 2
    return out


# --------------------------------------------------------------------------
# pointwise API


def _cache(data: FdaDataset, cache: Optional[DistanceCache]) -> DistanceCache:
    return DistanceCache(data) if cache is None else cache


def _to_point(x: Curve, data, cache, spec):
    return _cache(data, cache).to_point(x, spec)[None, :]


def estimate_m(x: Curve, data: FdaDataset, cfg: EstimatorConfig, mode: str = "simplified", cache=None) -> float:
    """Regression estimate at ``x``: complete or simplified (delta-weighted)."""
    if mode == "imputed":
        return estimate_m_imputed(x, data, cfg, cache=cache)
    obs = _obs_mask(data, mode)
    d = _to_point(x, data, cache, cfg.sm1)
    return float(smooth(d, cfg.bandwidth("h1"), cfg.kernel_K, data.responses_filled(), obs, knn=cfg.knn)[0])


def fit_regression_train(data: FdaDataset, cfg: EstimatorConfig, mode: str, cache=None, h=None) -> RegressionFit:
    """Complete/simplified regression fitted at every training curve (own weight included)."""
    obs = _obs_mask(data, mode)
    dist = _cache(data, cache).train(cfg.sm1)
    h = cfg.bandwidth("h1") if h is None else h
    fitted = smooth(dist, h, cfg.kernel_K, data.responses_filled(), obs, knn=cfg.knn)
    return RegressionFit(mode, fitted)


def impute_responses(data: FdaDataset, cfg: EstimatorConfig, cache=None) -> RegressionFit:
    """``Y_hat_t = delta_t Y_t + (1 - delta_t) m_n0(X_t)`` using the pilot bandwidth ``h1_init``.

    The returned fit carries the pilot values ``m_n0(X_t)`` in ``fitted``.
    """
    obs = data.delta.astype(float)
    dist = _cache(data, cache).train(cfg.sm1)
    y0 = data.responses_filled()
    try:
        pilot = smooth(dist, cfg.bandwidth("h1_init"), cfg.kernel_K, y0, obs, knn=cfg.knn)
    except NoNeighbors as exc:
        raise NoNeighbors(
            f"cannot impute response {exc.index}: no observed neighbour", index=exc.index
        ) from exc
    return RegressionFit("imputed", pilot, np.where(obs > 0, y0, pilot))


def estimate_m_imputed(x: Curve, data: FdaDataset, cfg: EstimatorConfig, fit: Optional[RegressionFit] = None, cache=None) -> float:
    cache = _cache(data, cache)
    fit = impute_responses(data, cfg, cache) if fit is None else fit
    d = _to_point(x, data, cache, cfg.sm1)
    return float(smooth(d, cfg.bandwidth("h1"), cfg.kernel_K, fit.imputed, knn=cfg.knn)[0])


def residuals_squared(data: FdaDataset, fit: RegressionFit) -> NDArray[np.float64]:
    """``r_t = (Y_t - m_hat(X_t))^2`` where ``delta_t = 1``; nan elsewhere."""
    fitted = np.asarray(fit.fitted, dtype=float)
    if fitted.shape != (len(data),):
        raise MissingFittedValue(f"fit covers {fitted.size} of {len(data)} observations")
    obs = data.delta == 1
    if not np.all(np.isfinite(fitted[obs])):
        raise MissingFittedValue(
            f"no fitted value at observation {int(np.flatnonzero(obs & ~np.isfinite(fitted))[0])}"
        )
    r = np.full(len(data), np.nan)
    r[obs] = (data.y[obs] - fitted[obs]) ** 2
    return r


def impute_residuals(data: FdaDataset, r, cfg: EstimatorConfig, cache=None) -> NDArray[np.float64]:
    """``r_hat_t = delta_t r_t + (1 - delta_t) U_n0(X_t)`` with the pilot bandwidth ``h2_init``."""
    obs = data.delta.astype(float)
    dist = _cache(data, cache).train(cfg.sm2)
    pilot = smooth(dist, cfg.bandwidth("h2_init"), cfg.kernel_W, r, obs, knn=cfg.knn)
    return np.where(obs > 0, r, pilot)


def estimate_U(x: Curve, data: FdaDataset, cfg: EstimatorConfig, mode: str = "simplified", cache=None) -> float:
    """Conditional variance at ``x``.

    Complete and simplified flavours average squared residuals of the matching
    regression fit; the imputed flavour averages imputed residuals over all t.
    Residuals for the imputed flavour come from the simplified pilot fit.
    """
    cache = _cache(data, cache)
    d = _to_point(x, data, cache, cfg.sm2)
    if mode == "imputed":
        pilot = impute_responses(data, cfg, cache)
        r_hat = impute_residuals(data, residuals_squared(data, pilot), cfg, cache)
        return float(smooth(d, cfg.bandwidth("h2"), cfg.kernel_W, r_hat, knn=cfg.knn)[0])
    obs = _obs_mask(data, mode)
    r = residuals_squared(data, fit_regression_train(data, cfg, mode, cache))
    return float(smooth(d, cfg.bandwidth("h2"), cfg.kernel_W, r, obs, knn=cfg.knn)[0])


def estimate_pi(x: Curve, data: FdaDataset, cfg: EstimatorConfig, cache=None) -> float:
    d = _to_point(x, data, cache, cfg.sm4)
    return float(smooth(d, cfg.bandwidth("h4"), cfg.kernel_Htilde, data.delta.astype(float), knn=cfg.knn)[0])


def estimate_omega(
    x: Curve,
    data: FdaDataset,
    cfg: EstimatorConfig,
    mode: str,
    m_fit: RegressionFit,
    u_fit: VarianceFit,
    cache=None,
) -> float:
    """Kernel average of ``(eps_t^2 - 1)^2`` around ``x``.

    ``m_fit``/``u_fit`` hold the regression and variance fits at the training
    curves. The simplified (and complete) flavour standardises observed
    responses and uses delta-weighted sums; the imputed flavour standardises
    ``Y_hat_t`` (from ``m_fit.imputed``) over every t.
    """
    d = _to_point(x, data, cache, cfg.sm3)
    if mode == "imputed":
        if m_fit.imputed is None:
            raise MissingFittedValue("imputed omega needs the imputed responses")
        inc = np.ones(len(data))
        targets = standardized_fourth_moment_targets(m_fit.imputed, m_fit.fitted, u_fit.fitted, inc)
    else:
        inc = _obs_mask(data, mode)
        targets = standardized_fourth_moment_targets(data.responses_filled(), m_fit.fitted, u_fit.fitted, inc)
    return float(smooth(d, cfg.bandwidth("h3"), cfg.kernel_H, targets, inc, knn=cfg.knn)[0])


# --------------------------------------------------------------------------
# full pipeline at many evaluation curves


@dataclass(frozen=True, eq=False)
class TrainingFits:
    """Every intermediate quantity fitted at the training curves."""

    mode: str
    include: NDArray  # which t enter the U / omega sums
    m: RegressionFit
    residuals: NDArray  # r_t (nan where missing)
    targets_u: NDArray  # what the variance smoother averages (r_t or r_hat_t)
    u: VarianceFit
    targets_omega: NDArray


def fit_training(data: FdaDataset, cfg: EstimatorConfig, mode: str, cache: Optional[DistanceCache] = None) -> TrainingFits:
    cache = _cache(data, cache)
    if mode == "imputed":
        pilot = impute_responses(data, cfg, cache)
        r = residuals_squared(data, pilot)
        r_hat = impute_residuals(data, r, cfg, cache)
        inc = np.ones(len(data))
        m1 = smooth(cache.train(cfg.sm1), cfg.bandwidth("h1"), cfg.kernel_K, pilot.imputed, knn=cfg.knn)
        m_fit = RegressionFit("imputed", m1, pilot.imputed)
        u1 = smooth(cache.train(cfg.sm2), cfg.bandwidth("h2"), cfg.kernel_W, r_hat, knn=cfg.knn)
        targets = standardized_fourth_moment_targets(pilot.imputed, m1, u1, inc)
        return TrainingFits(mode, inc, m_fit, r, r_hat, VarianceFit(mode, u1), targets)
    inc = _obs_mask(data, mode)
    m_fit = fit_regression_train(data, cfg, mode, cache)
    r = residuals_squared(data, m_fit)
    u = smooth(cache.train(cfg.sm2), cfg.bandwidth("h2"), cfg.kernel_W, r, inc, knn=cfg.knn)
    targets = standardized_fourth_moment_targets(data.responses_filled(), m_fit.fitted, u, inc)
    return TrainingFits(mode, inc, m_fit, r, r, VarianceFit(mode, u), targets)


@dataclass(frozen=True, eq=False)
class VolatilityResult:
    """Point and interval estimates of U at a batch of evaluation curves."""

    mode: str
    level: float
    cfg: EstimatorConfig
    m_hat: NDArray
    u_hat: NDArray
    ci_low: NDArray
    ci_high: NDArray
    omega_hat: NDArray
    pi_hat: NDArray
    m1_hat: NDArray
    m2_hat: NDArray
    f_hat: NDArray
    n: int
    knn_overrides: int = 0
    training: Optional[TrainingFits] = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.u_hat.size

    @property
    def ci_length(self) -> NDArray:
        return self.ci_high - self.ci_low

    def estimate(self, j: int) -> VolEstimate:
        return VolEstimate(
            float(self.u_hat[j]),
            float(self.ci_low[j]),
            float(self.ci_high[j]),
            float(self.omega_hat[j]),
            float(self.pi_hat[j]),
            float(self.m1_hat[j]),
            float(self.m2_hat[j]),
            float(self.f_hat[j]),
            self.level,
        )

    def estimates(self) -> list[VolEstimate]:
        return [self.estimate(j) for j in range(len(self))]


def fit_volatility(
    data: FdaDataset,
    cfg: EstimatorConfig,
    mode: str,
    cache: Optional[DistanceCache] = None,
    eval_curves=None,
    level: float = 0.05,
    tau_strict: bool = False,
) -> VolatilityResult:
    """Estimate U with its asymptotic confidence interval at many curves.

    Evaluation curves come from ``cache.eval_curves`` (or ``eval_curves``,
    which builds a fresh cache). The simplified flavour gets the interval
    ``U (1 -/+ q s)`` with ``s = sqrt(M2)/M1 sqrt(omega / (n F pi))``; the
    imputed flavour multiplies by ``pi`` instead of dividing; the complete
    flavour uses the simplified form with ``pi = 1``.
    """
    from fvol.inference import ci_half_width, moment_plugins

    if cache is None or eval_curves is not None:
        cache = DistanceCache(data, data.curves if eval_curves is None else eval_curves)
    stats: dict = {}
    fits = fit_training(data, cfg, mode, cache)
    inc = fits.include
    d1, d2, d3 = (cache.evaluation(s) for s in (cfg.sm1, cfg.sm2, cfg.sm3))
    if mode == "imputed":
        m_eval = smooth(d1, cfg.bandwidth("h1"), cfg.kernel_K, fits.m.imputed, knn=cfg.knn, stats=stats)
    else:
        m_eval = smooth(d1, cfg.bandwidth("h1"), cfg.kernel_K, data.responses_filled(), inc, knn=cfg.knn, stats=stats)
    h2 = cfg.bandwidth("h2")
    u_eval = smooth(d2, h2, cfg.kernel_W, fits.targets_u, inc, knn=cfg.knn, stats=stats)
    omega = smooth(d3, cfg.bandwidth("h3"), cfg.kernel_H, fits.targets_omega, inc, knn=cfg.knn, stats=stats)
    if mode == "complete":
        pi = np.ones_like(u_eval)
    else:
        d4 = cache.evaluation(cfg.sm4)
        pi = smooth(d4, cfg.bandwidth("h4"), cfg.kernel_Htilde, data.delta.astype(float), knn=cfg.knn, stats=stats)
    hs = row_bandwidths(d2, h2, inc > 0, cfg.knn, cfg.kernel_W)
    f_hat = small_ball_fraction(d2, hs)
    m1, m2 = moment_plugins(d2, hs, cfg.kernel_W, strict=tau_strict)
    n = len(data)
    half = ci_half_width(omega, pi, m1, m2, f_hat, n, level, imputed=(mode == "imputed"))
    return VolatilityResult(
        mode=mode,
        level=level,
        cfg=cfg,
        m_hat=m_eval,
        u_hat=u_eval,
        ci_low=u_eval * (1.0 - half),
        ci_high=u_eval * (1.0 + half),
        omega_hat=omega,
        pi_hat=pi,
        m1_hat=m1,
        m2_hat=m2,
        f_hat=f_hat,
        n=n,
        knn_overrides=stats.get("knn_overrides", 0),
        training=fits,
    )


def estimate_volatility(
    x: Curve, data: FdaDataset, cfg: EstimatorConfig, mode: str = "simplified", level: float = 0.05
) -> VolEstimate:
    """Point estimate and confidence interval of U at a single curve."""
    return fit_volatility(data, cfg, mode, eval_curves=x.values[None, :], level=level).estimate(0)
