import math

import numpy as np
import pytest

import oracles
from conftest import generous_bandwidths, random_dataset
from fvol.bandwidth import (
    BandwidthGrid,
    candidate_grid,
    cv_scores,
    cv_select_h1,
    cv_select_h2,
    cv_select_h3,
    cv_select_h4,
    loo_criterion,
    omega_targets,
    resolvable,
    select_bandwidths,
    select_from_scores,
)
from fvol.errors import AllDistancesZero, NoFeasibleCandidate
from fvol.estimators import EstimatorConfig, fit_regression_train, impute_residuals, impute_responses, residuals_squared
from fvol.kernels import QUADRATIC
from fvol.semimetrics import SemiMetricSpec, distance_matrix

SPEC = SemiMetricSpec.deriv(1)


class TestGrid:
    def test_validation(self):
        for bad in ([], [0.0, 1.0], [1.0, 1.0], [2.0, 1.0], [1.0, np.inf]):
            with pytest.raises(ValueError):
                BandwidthGrid(bad)

    def test_singleton(self, rng):
        d = rng.uniform(0.1, 1, (6, 6))
        d = (d + d.T) / 2
        np.fill_diagonal(d, 0)
        g = candidate_grid(d, 1, 0.2, 0.5)
        off = d[~np.eye(6, dtype=bool)]
        assert g.candidates.tolist() == [pytest.approx(np.quantile(off, 0.2))]

    def test_equal_distances(self):
        d = np.full((4, 4), 0.7)
        np.fill_diagonal(d, 0)
        assert set(candidate_grid(d, 5).candidates.tolist()) == {0.7}

    def test_sorted_within_range(self, rng):
        d = rng.exponential(size=(20, 20))
        d = (d + d.T) / 2
        np.fill_diagonal(d, 0)
        c = candidate_grid(d, 15, 0.05, 0.95).candidates
        pos = d[~np.eye(20, dtype=bool)]
        assert np.all(np.diff(c) > 0) and c[0] >= pos.min() and c[-1] <= pos.max()

    def test_order_statistics(self, rng):
        d = rng.exponential(size=(10, 10))
        np.fill_diagonal(d, 0)
        pos = np.sort(d[~np.eye(10, dtype=bool)])
        c = candidate_grid(d, 3, 0.1, 0.5).candidates
        for q, v in zip((0.1, 0.3, 0.5), c):
            pos_idx = q * (pos.size - 1)
            lo = pos[math.floor(pos_idx)]
            hi = pos[math.ceil(pos_idx)]
            assert v == pytest.approx(lo + (pos_idx - math.floor(pos_idx)) * (hi - lo))

    def test_errors(self):
        with pytest.raises(AllDistancesZero):
            candidate_grid(np.zeros((3, 3)))
        for q in ((0.5, 0.5), (0.0, 0.5), (0.2, 1.1)):
            with pytest.raises(ValueError):
                candidate_grid(np.ones((3, 3)), 5, *q)


class TestCriterion:
    def test_matches_loop_oracle(self, rng):
        d = rng.uniform(0, 1, (15, 15))
        d = (d + d.T) / 2
        np.fill_diagonal(d, 0)
        v = rng.normal(size=15)
        inc = rng.random(15) > 0.3
        scored = inc.copy()
        for h in (0.4, 0.7, 1.0):
            got = loo_criterion(d, h, QUADRATIC, np.where(inc, v, np.nan), inc, scored)
            ref = oracles.loo_cv(d.tolist(), h, np.where(inc, v, 0.0).tolist(), inc.tolist(), scored.tolist())
            if math.isnan(ref):
                assert math.isnan(got)
            else:
                assert got == pytest.approx(ref, rel=1e-12)

    def test_infeasible_is_nan(self):
        d = np.array([[0.0, 5.0], [5.0, 0.0]])
        assert math.isnan(loo_criterion(d, 1.0, QUADRATIC, [1.0, 2.0], [1, 1], [True, True]))

    def test_tie_goes_to_smallest(self):
        g = BandwidthGrid([0.1, 0.2, 0.3])
        assert select_from_scores(g, [2.0, 1.0, 1.0]) == 0.2
        assert select_from_scores(g, [np.nan, 5.0, 5.0]) == 0.2
        with pytest.raises(NoFeasibleCandidate):
            select_from_scores(g, [np.nan] * 3)

    def test_resolvable(self):
        d = np.array([[0, 0.5, 3], [0.5, 0, 3], [3, 3, 0.0]])
        got = resolvable(d, 1.0, QUADRATIC, [1, 1, 1], [True, True, True])
        assert got.tolist() == [True, True, False]
        got = resolvable(d, 1.0, QUADRATIC, [1, 0, 1], [True, True, True])
        assert got.tolist() == [False, True, False]


def naive_select(dist, cands, targets, include, scored):
    """Exhaustive evaluation after dropping points isolated at the largest candidate."""
    n = len(targets)
    kept = []
    for t in range(n):
        ok = scored[t] and any(include[s] and s != t and dist[t][s] < cands[-1] for s in range(n))
        kept.append(ok)
    vals = [oracles.loo_cv(dist, h, targets, include, kept) for h in cands]
    best = min(v for v in vals if not math.isnan(v))
    tol = 1e-10 * abs(best) + 1e-12 * (sum(t * t for t, k in zip(targets, kept) if k) + 1e-300)
    return next(h for h, v in zip(cands, vals) if not math.isnan(v) and v <= best + tol)


def fixture(seed, n=30):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, n=n, p=12, missing=0.25)
    dist = distance_matrix(ds, SPEC)
    grid = candidate_grid(dist, 5, 0.1, 0.6)
    return ds, dist, grid


@pytest.mark.parametrize("seed", range(3))
class TestAgainstExhaustiveSearch:
    def test_h1(self, seed):
        ds, dist, grid = fixture(seed)
        obs = (ds.delta == 1).tolist()
        ref = naive_select(dist.tolist(), list(grid), ds.responses_filled().tolist(), obs, obs)
        assert cv_select_h1(ds, EstimatorConfig(), grid) == ref

    def test_h1_imputed(self, seed):
        ds, dist, grid = fixture(seed)
        cfg = EstimatorConfig(h1_init=generous_bandwidths(ds)["h1"])
        y_hat = impute_responses(ds, cfg).imputed.tolist()
        ones = [True] * len(ds)
        assert cv_select_h1(ds, cfg, grid, "imputed") == naive_select(dist.tolist(), list(grid), y_hat, ones, ones)

    def test_h2(self, seed):
        ds, dist, grid = fixture(seed)
        cfg = EstimatorConfig(h1=generous_bandwidths(ds)["h1"])
        r = residuals_squared(ds, fit_regression_train(ds, cfg, "simplified"))
        obs = (ds.delta == 1).tolist()
        ref = naive_select(dist.tolist(), list(grid), np.nan_to_num(r).tolist(), obs, obs)
        assert cv_select_h2(ds, cfg, grid) == ref

    def test_h2_imputed(self, seed):
        ds, dist, grid = fixture(seed)
        h = generous_bandwidths(ds)
        cfg = EstimatorConfig(h1_init=h["h1"], h2_init=h["h2"])
        r_hat = impute_residuals(ds, residuals_squared(ds, impute_responses(ds, cfg)), cfg).tolist()
        ones = [True] * len(ds)
        assert cv_select_h2(ds, cfg, grid, "imputed") == naive_select(dist.tolist(), list(grid), r_hat, ones, ones)

    def test_h3(self, seed):
        ds, dist, grid = fixture(seed)
        h = generous_bandwidths(ds)
        cfg = EstimatorConfig(h1=h["h1"], h2=h["h2"])
        targets = np.nan_to_num(omega_targets(ds, cfg, "simplified")).tolist()
        obs = (ds.delta == 1).tolist()
        assert cv_select_h3(ds, cfg, grid) == naive_select(dist.tolist(), list(grid), targets, obs, obs)

    def test_h4(self, seed):
        ds, dist, grid = fixture(seed)
        ones = [True] * len(ds)
        ref = naive_select(dist.tolist(), list(grid), ds.delta.astype(float).tolist(), ones, ones)
        assert cv_select_h4(ds, EstimatorConfig(), grid) == ref


class TestTrivialCases:
    def test_singleton_grids(self, rng):
        ds = random_dataset(rng, n=30, p=12)
        dist = distance_matrix(ds, SPEC)
        g = BandwidthGrid([float(np.quantile(dist, 0.8))])
        cfg = EstimatorConfig(h1=g.candidates[0], h2=g.candidates[0])
        assert cv_select_h1(ds, cfg, g) == g.candidates[0]
        assert cv_select_h2(ds, cfg, g) == g.candidates[0]
        assert cv_select_h3(ds, cfg, g) == g.candidates[0]
        assert cv_select_h4(ds, cfg, g) == g.candidates[0]

    @staticmethod
    def smallest_feasible(ds, grid):
        dist = distance_matrix(ds, SPEC)
        ones = np.ones(len(ds))
        kept = resolvable(dist, grid.candidates[-1], QUADRATIC, ones, ones > 0)
        scores = cv_scores(dist, grid, QUADRATIC, np.zeros(len(ds)), ones, kept)
        return grid.candidates[np.isfinite(scores)][0]

    def test_fully_observed_h4_picks_smallest_feasible(self, rng):
        ds = random_dataset(rng, n=30, p=12, complete=True)
        grid = candidate_grid(distance_matrix(ds, SPEC), 6)
        assert cv_select_h4(ds, EstimatorConfig(), grid) == self.smallest_feasible(ds, grid)

    def test_constant_targets_pick_smallest_feasible(self, rng):
        const = random_dataset(rng, n=30, p=12, complete=True).with_responses(np.full(30, 2.0))
        grid = candidate_grid(distance_matrix(const, SPEC), 6)
        best = self.smallest_feasible(const, grid)
        assert cv_select_h1(const, EstimatorConfig(), grid) == best
        # constant responses leave zero residuals at every bandwidth
        assert cv_select_h2(const, EstimatorConfig(h1=grid.candidates[-1]), grid) == best

    def test_no_feasible_candidate(self):
        from fvol.fda import FdaDataset, Grid

        g = Grid.uniform(0, 1, 5)
        curves = np.array([np.arange(5) * s for s in (0.0, 10.0, 20.0)])
        ds = FdaDataset.complete(g, curves, [1.0, 2.0, 3.0])
        with pytest.raises(NoFeasibleCandidate):
            cv_select_h1(ds, EstimatorConfig(), BandwidthGrid([0.1, 0.2]))


@pytest.mark.parametrize("mode", ["complete", "simplified", "imputed"])
def test_select_bandwidths_fills_everything(mode):
    rng = np.random.default_rng(7)
    ds = random_dataset(rng, n=40, p=12, complete=(mode == "complete"))
    cfg = select_bandwidths(ds, EstimatorConfig(), mode, n_candidates=6)
    grid = candidate_grid(distance_matrix(ds, SPEC), 6)
    names = ["h1", "h2", "h3", "h4"] + (["h1_init", "h2_init"] if mode == "imputed" else [])
    for name in names:
        assert getattr(cfg, name) in grid.candidates.tolist()
    assert select_bandwidths(ds, EstimatorConfig(), mode, n_candidates=6) == cfg


def test_select_bandwidths_keeps_fixed_values(rng):
    ds = random_dataset(rng, n=40, p=12)
    cfg = select_bandwidths(ds, EstimatorConfig(h2=123.0, h4=7.0), "simplified", n_candidates=4)
    assert cfg.h2 == 123.0 and cfg.h4 == 7.0 and cfg.h1 is not None and cfg.h3 is not None


def test_imputed_pilot_is_the_simplified_choice(rng):
    ds = random_dataset(rng, n=40, p=12)
    simp = select_bandwidths(ds, EstimatorConfig(knn=3), "simplified", n_candidates=6)
    imp = select_bandwidths(ds, EstimatorConfig(knn=3), "imputed", n_candidates=6)
    assert imp.h1_init == simp.h1 and imp.h2_init == simp.h2 and imp.h4 == simp.h4


def test_cv_scores_finite_and_nonnegative(rng):
    ds = random_dataset(rng, n=30, p=12, complete=True)
    dist = distance_matrix(ds, SPEC)
    grid = candidate_grid(dist, 8)
    s = cv_scores(dist, grid, QUADRATIC, ds.y, np.ones(30), np.ones(30, bool))
    assert np.all(s[np.isfinite(s)] >= 0)
