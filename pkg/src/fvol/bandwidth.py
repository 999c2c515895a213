"""Leave-one-out cross-validation of the four bandwidths.

Every criterion has the same shape,

    CV(h) = sum_{t scored} (v_t - A^{(-t)}(X_t; h))^2,

where ``A^{(-t)}`` is the kernel average of the targets ``v_s`` over the
included points ``s != t``. Only the targets and the two masks change between
the regression, variance, fourth-moment and probability criteria, and between
the simplified (delta-weighted, observed points scored) and imputed (every
point included and scored) flavours.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from fvol.errors import AllDistancesZero, NoFeasibleCandidate
from fvol.estimators import (
    EstimatorConfig,
    _obs_mask,
    fit_regression_train,
    fit_training,
    impute_residuals,
    impute_responses,
    residuals_squared,
)
from fvol.fda import FdaDataset
from fvol.kernels import Kernel
from fvol.semimetrics import DistanceCache

log = logging.getLogger(__name__)

DEFAULT_N_CANDIDATES = 15
DEFAULT_QUANTILES = (0.05, 0.5)


@dataclass(frozen=True, eq=False)
class BandwidthGrid:
    candidates: NDArray[np.float64]

    def __post_init__(self):
        c = np.asarray(self.candidates, dtype=float).ravel()
        if c.size == 0:
            raise ValueError("bandwidth grid is empty")
        if np.any(c <= 0) or not np.all(np.isfinite(c)):
            raise ValueError("bandwidth candidates must be positive and finite")
        if np.any(np.diff(c) <= 0):
            raise ValueError("bandwidth candidates must be strictly increasing")
        c.setflags(write=False)
        object.__setattr__(self, "candidates", c)

    def __len__(self):
        return self.candidates.size

    def __iter__(self):
        return iter(self.candidates.tolist())


def candidate_grid(
    dist,
    n_candidates: int = DEFAULT_N_CANDIDATES,
    q_min: float = DEFAULT_QUANTILES[0],
    q_max: float = DEFAULT_QUANTILES[1],
) -> BandwidthGrid:
    """Bandwidths at evenly spaced quantiles of the positive off-diagonal distances."""
    dist = np.atleast_2d(np.asarray(dist, dtype=float))
    if dist.size == 0:
        raise ValueError("empty distance matrix")
    if not 0.0 < q_min < q_max <= 1.0:
        raise ValueError(f"need 0 < q_min < q_max <= 1, got ({q_min}, {q_max})")
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    off = ~np.eye(*dist.shape, dtype=bool) if dist.shape[0] == dist.shape[1] else np.ones(dist.shape, bool)
    pos = dist[off & (dist > 0)]
    if pos.size == 0:
        raise AllDistancesZero("every pairwise distance is zero")
    levels = np.linspace(q_min, q_max, n_candidates) if n_candidates > 1 else np.array([q_min])
    return BandwidthGrid(np.unique(np.quantile(pos, levels)))


def loo_criterion(dist, h: float, kernel: Kernel, targets, include, scored) -> float:
    """Leave-one-out squared-error criterion; ``nan`` when some scored point
    has no included neighbour once it is left out."""
    targets = np.asarray(targets, dtype=float)
    scored = np.asarray(scored, dtype=bool)
    w = kernel(np.asarray(dist)[scored] / h)
    idx = np.flatnonzero(scored)
    w[np.arange(idx.size), idx] = 0.0
    inc = np.asarray(include, dtype=float)
    vals = np.where(inc > 0, targets, 0.0)
    den = w @ inc
    if np.any(den <= 0):
        return float("nan")
    fit = (w @ (inc * vals)) / den
    resid = targets[scored] - fit
    return float(resid @ resid)


def cv_scores(dist, grid: BandwidthGrid, kernel: Kernel, targets, include, scored) -> NDArray:
    return np.array([loo_criterion(dist, h, kernel, targets, include, scored) for h in grid])


def select_from_scores(grid: BandwidthGrid, scores, scale: float = 1.0, label: str = "h") -> float:
    """Minimiser of the criterion, ties (to rounding) broken toward the smallest bandwidth."""
    scores = np.asarray(scores, dtype=float)
    feasible = np.isfinite(scores)
    for h in grid.candidates[~feasible]:
        log.debug("%s candidate %.6g skipped: a scored point has no neighbour", label, h)
    if not feasible.any():
        raise NoFeasibleCandidate(f"every {label} candidate leaves some point without neighbours")
    best = np.nanmin(scores)
    tol = 1e-10 * abs(best) + 1e-12 * scale
    return float(grid.candidates[np.flatnonzero(feasible & (scores <= best + tol))[0]])


def resolvable(dist, h: float, kernel: Kernel, include, scored) -> NDArray[np.bool_]:
    """Scored points that keep an included neighbour at bandwidth ``h`` once left out."""
    scored = np.asarray(scored, dtype=bool)
    inc = np.asarray(include, dtype=float) > 0
    w = kernel(np.asarray(dist, dtype=float) / h) > 0
    np.fill_diagonal(w, False)
    return scored & (w[:, inc].sum(axis=1) > 0)


def _select(dist, grid, kernel, targets, include, scored, label):
    targets = np.asarray(targets, dtype=float)
    scored = np.asarray(scored, dtype=bool)
    kept = resolvable(dist, grid.candidates[-1], kernel, include, scored)
    if not kept.any():
        raise NoFeasibleCandidate(f"no scored point has a neighbour at the largest {label} candidate")
    if kept.sum() < scored.sum():
        log.info("%s: %d isolated point(s) left out of the criterion", label, int(scored.sum() - kept.sum()))
    scored = kept
    scores = cv_scores(dist, grid, kernel, targets, include, scored)
    scale = float(np.sum(targets[scored] ** 2)) + 1e-300
    return select_from_scores(grid, scores, scale, label)


def _masks(data: FdaDataset, mode: str):
    if mode == "imputed":
        ones = np.ones(len(data))
        return ones, ones.astype(bool)
    obs = _obs_mask(data, mode)
    return obs, obs > 0


def _cache(data, cache):
    return DistanceCache(data) if cache is None else cache


def _grid_for(cache, spec, grid):
    return candidate_grid(cache.train(spec)) if grid is None else grid


def cv_select_h1(data: FdaDataset, cfg: EstimatorConfig, grid: Optional[BandwidthGrid] = None, mode: str = "simplified", cache=None) -> float:
    """Regression bandwidth. The imputed flavour scores the imputed responses,
    which requires the pilot bandwidth ``cfg.h1_init`` (or ``cfg.h1``)."""
    cache = _cache(data, cache)
    grid = _grid_for(cache, cfg.sm1, grid)
    include, scored = _masks(data, mode)
    if mode == "imputed":
        targets = impute_responses(data, cfg, cache).imputed
    else:
        targets = data.responses_filled()
    return _select(cache.train(cfg.sm1), grid, cfg.kernel_K, targets, include, scored, "h1")


def cv_select_h2(data: FdaDataset, cfg: EstimatorConfig, grid: Optional[BandwidthGrid] = None, mode: str = "simplified", cache=None) -> float:
    """Variance bandwidth, with residuals frozen at the already chosen ``h1``
    (full-sample fit, not leave-one-out)."""
    cache = _cache(data, cache)
    grid = _grid_for(cache, cfg.sm2, grid)
    include, scored = _masks(data, mode)
    if mode == "imputed":
        pilot = impute_responses(data, cfg, cache)
        targets = impute_residuals(data, residuals_squared(data, pilot), cfg, cache)
    else:
        targets = residuals_squared(data, fit_regression_train(data, cfg, mode, cache))
    return _select(cache.train(cfg.sm2), grid, cfg.kernel_W, targets, include, scored, "h2")


def omega_targets(data: FdaDataset, cfg: EstimatorConfig, mode: str, cache=None) -> NDArray:
    """``(eps_t^2 - 1)^2`` at the training curves under the chosen h1, h2."""
    return fit_training(data, cfg, mode, _cache(data, cache)).targets_omega


def cv_select_h3(data: FdaDataset, cfg: EstimatorConfig, grid: Optional[BandwidthGrid] = None, mode: str = "simplified", cache=None) -> float:
    cache = _cache(data, cache)
    grid = _grid_for(cache, cfg.sm3, grid)
    include, scored = _masks(data, mode)
    targets = omega_targets(data, cfg, mode, cache)
    return _select(cache.train(cfg.sm3), grid, cfg.kernel_H, targets, include, scored, "h3")


def cv_select_h4(data: FdaDataset, cfg: EstimatorConfig, grid: Optional[BandwidthGrid] = None, cache=None) -> float:
    """Brier-type criterion ``sum_t (delta_t - pi^{(-t)}(X_t))^2`` over every t."""
    cache = _cache(data, cache)
    grid = _grid_for(cache, cfg.sm4, grid)
    ones = np.ones(len(data))
    return _select(cache.train(cfg.sm4), grid, cfg.kernel_Htilde, data.delta.astype(float), ones, ones.astype(bool), "h4")


def select_bandwidths(
    data: FdaDataset,
    cfg: EstimatorConfig,
    mode: str,
    cache: Optional[DistanceCache] = None,
    n_candidates: int = DEFAULT_N_CANDIDATES,
    quantiles: tuple = DEFAULT_QUANTILES,
) -> EstimatorConfig:
    """Fill every unset bandwidth of ``cfg`` by cross-validation.

    Bandwidths already set are kept. For the imputed flavour the simplified
    ``h1``/``h2`` are selected first and stored as the pilot bandwidths
    ``h1_init``/``h2_init``; the imputed ``h1``..``h3`` are then selected on
    the imputed sample.
    """
    cache = _cache(data, cache)
    grids: dict = {}

    def grid(spec):
        if spec not in grids:
            grids[spec] = candidate_grid(cache.train(spec), n_candidates, *quantiles)
        return grids[spec]

    if mode == "imputed":
        pilot = cfg.with_bandwidths(
            h1=cfg.h1_init, h2=cfg.h2_init, h3=None, h4=cfg.h4, h1_init=None, h2_init=None
        )
        pilot = _cascade(data, pilot, "simplified", cache, grid, with_omega=False)
        cfg = cfg.with_bandwidths(h1_init=pilot.h1, h2_init=pilot.h2, h4=pilot.h4)
        return _cascade(data, cfg, "imputed", cache, grid, with_omega=True)
    return _cascade(data, cfg, mode, cache, grid, with_omega=True)


def _cascade(data, cfg, mode, cache, grid, with_omega):
    if cfg.h1 is None:
        cfg = cfg.with_bandwidths(h1=cv_select_h1(data, cfg, grid(cfg.sm1), mode, cache))
    if cfg.h2 is None:
        cfg = cfg.with_bandwidths(h2=cv_select_h2(data, cfg, grid(cfg.sm2), mode, cache))
    if with_omega and cfg.h3 is None:
        cfg = cfg.with_bandwidths(h3=cv_select_h3(data, cfg, grid(cfg.sm3), mode, cache))
    if cfg.h4 is None:
        cfg = cfg.with_bandwidths(h4=cv_select_h4(data, cfg, grid(cfg.sm4), cache))
    return cfg
