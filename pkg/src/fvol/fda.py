"""Grids, curves and functional datasets, plus the numerical substrate
(quadrature, finite-difference derivatives, log returns) everything else uses.

Curves in a dataset share one grid and are stored row-wise in a 2-D array;
responses are kept in a float array whose entries at unobserved positions are
never read (they are ``nan``), the ``delta`` flags being the source of truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from fvol.errors import (
    EmptyDataset,
    GridTooShort,
    MismatchedGrid,
    MismatchedLength,
    NonPositivePrice,
    NonUniformGrid,
    TooShort,
)

UNIFORM_RTOL = 1e-9


class Grid:
    """Strictly increasing abscissae shared by a family of curves."""

    def __init__(self, points: ArrayLike):
        pts = np.array(points, dtype=float).ravel()
        if pts.size < 2:
            raise GridTooShort(f"a grid needs at least 2 points, got {pts.size}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        pts.setflags(write=False)
        self.points = pts

    @classmethod
    def uniform(cls, start: float, stop: float, size: int) -> "Grid":
        return cls(np.linspace(start, stop, size))

    def __len__(self) -> int:
        return self.points.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Grid):
            return NotImplemented
        return self is other or np.array_equal(self.points, other.points)

    def __hash__(self) -> int:
        return hash(self.points.tobytes())

    def __repr__(self) -> str:
        return f"Grid([{self.points[0]:g} .. {self.points[-1]:g}], size={len(self)})"

    @property
    def span(self) -> tuple[float, float]:
        return float(self.points[0]), float(self.points[-1])

    @cached_property
    def spacing(self) -> float:
        """Mean spacing; the step for uniform grids."""
        return float((self.points[-1] - self.points[0]) / (len(self) - 1))

    @cached_property
    def is_uniform(self) -> bool:
        steps = np.diff(self.points)
        return bool(np.max(np.abs(steps - self.spacing)) <= UNIFORM_RTOL * self.spacing)

    @cached_property
    def weights(self) -> NDArray[np.float64]:
        """Composite-trapezoid quadrature weights, so that ``w @ f`` integrates ``f``."""
        steps = np.diff(self.points)
        w = np.zeros(len(self))
        w[:-1] += steps / 2
        w[1:] += steps / 2
        w.setflags(write=False)
        return w


@dataclass(frozen=True, eq=False)
class Curve:
    grid: Grid
    values: NDArray[np.float64]

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).ravel()
        if vals.size != len(self.grid):
            raise MismatchedLength(
                f"curve has {vals.size} values but grid has {len(self.grid)} points"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("curve values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Curve":
        return cls(grid, fn(grid.points))


@dataclass(frozen=True)
class FdaObservation:
    x: Curve
    y: Optional[float]
    delta: int

    def __post_init__(self):
        if self.delta not in (0, 1):
            raise ValueError(f"delta must be 0 or 1, got {self.delta!r}")
        if self.delta == 1 and (self.y is None or not np.isfinite(self.y)):
            raise ValueError("an observed response (delta=1) must be a finite number")
        if self.delta == 0 and self.y is not None:
            raise ValueError("a missing response (delta=0) must be None")


@dataclass(frozen=True, eq=False)
class FdaDataset:
    """Time-ordered sample ``(X_t, Y_t, delta_t)`` on a shared grid.

    Parameters
    ----------
    grid : Grid
    curves : array, shape (n, len(grid))
    y : array, shape (n,)
        Responses; entries where ``delta == 0`` are ignored and stored as nan.
    delta : array of {0, 1}, shape (n,)
    ids : optional sequence of row labels (defaults to ``0..n-1``)
    """

    grid: Grid
    curves: NDArray[np.float64]
    y: NDArray[np.float64]
    delta: NDArray[np.int8]
    ids: tuple = field(default=())

    def __post_init__(self):
        curves = np.array(self.curves, dtype=float)
        if curves.ndim == 1:
            curves = curves[None, :]
        if curves.ndim != 2 or curves.shape[1] != len(self.grid):
            raise MismatchedGrid(
                f"curves of shape {curves.shape} do not match grid of size {len(self.grid)}"
            )
        if not np.all(np.isfinite(curves)):
            raise ValueError("curve values must be finite")
        n = curves.shape[0]
        delta = np.array(self.delta, dtype=np.int8).ravel()
        y = np.array(self.y, dtype=float).ravel()
        if delta.size != n or y.size != n:
            raise MismatchedLength(
                f"{n} curves but {y.size} responses and {delta.size} flags"
            )
        if not np.all((delta == 0) | (delta == 1)):
            raise ValueError("delta flags must be 0 or 1")
        if not np.all(np.isfinite(y[delta == 1])):
            raise ValueError("observed responses must be finite")
        y = np.where(delta == 1, y, np.nan)
        ids = tuple(self.ids) if len(self.ids) else tuple(range(n))
        if len(ids) != n:
            raise MismatchedLength(f"{len(ids)} ids for {n} observations")
        for arr in (curves, y, delta):
            arr.setflags(write=False)
        object.__setattr__(self, "curves", curves)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "ids", ids)

    @classmethod
    def complete(cls, grid: Grid, curves: ArrayLike, y: ArrayLike, ids=()) -> "FdaDataset":
        y = np.asarray(y, dtype=float)
        return cls(grid, curves, y, np.ones(y.size, dtype=np.int8), ids)

    @classmethod
    def from_observations(cls, observations: Iterable[FdaObservation], ids=()) -> "FdaDataset":
        """Assemble a dataset; curves on other grids are linearly resampled
        onto the grid of the first observation."""
        obs = list(observations)
        if not obs:
            raise EmptyDataset("no observations")
        grid = obs[0].x.grid
        rows = []
        for o in obs:
            if o.x.grid == grid:
                rows.append(o.x.values)
            else:
                rows.append(np.interp(grid.points, o.x.grid.points, o.x.values))
        y = [np.nan if o.y is None else o.y for o in obs]
        return cls(grid, np.vstack(rows), y, [o.delta for o in obs], ids)

    def __len__(self) -> int:
        return self.curves.shape[0]

    def __getitem__(self, t: int) -> FdaObservation:
        d = int(self.delta[t])
        return FdaObservation(self.curve(t), float(self.y[t]) if d else None, d)

    @property
    def observations(self) -> list[FdaObservation]:
        return [self[t] for t in range(len(self))]

    @property
    def n_obs(self) -> int:
        return int(self.delta.sum())

    @property
    def is_complete(self) -> bool:
        return bool(np.all(self.delta == 1))

    def curve(self, t: int) -> Curve:
        return Curve(self.grid, self.curves[t])

    def responses_filled(self, fill: float = 0.0) -> NDArray[np.float64]:
        """Responses with the missing entries replaced by ``fill`` (for masked sums)."""
        return np.where(self.delta == 1, self.y, fill)

    def with_delta(self, delta: ArrayLike, y_full: Optional[ArrayLike] = None) -> "FdaDataset":
        """Same curves under a different missingness pattern.

        ``y_full`` supplies responses for positions that become observed.
        """
        y = self.y if y_full is None else np.asarray(y_full, dtype=float)
        return FdaDataset(self.grid, self.curves, y, delta, self.ids)

    def with_responses(self, y: ArrayLike) -> "FdaDataset":
        return FdaDataset(self.grid, self.curves, y, self.delta, self.ids)

    def take(self, index: ArrayLike) -> "FdaDataset":
        index = np.asarray(index)
        return FdaDataset(
            self.grid,
            self.curves[index],
            self.y[index],
            self.delta[index],
            tuple(self.ids[i] for i in index),
        )


def _as_values(values, grid: Grid) -> NDArray[np.float64]:
    vals = np.asarray(values, dtype=float)
    if vals.shape[-1] != len(grid):
        raise MismatchedLength(
            f"{vals.shape[-1]} values for a grid of {len(grid)} points"
        )
    return vals


def trapezoid_integrate(values, grid: Grid):
    """Composite trapezoid integral over the grid span.

    ``values`` may be 1-D (one integrand) or 2-D (one integrand per row).
    """
    vals = _as_values(values, grid)
    out = vals @ grid.weights
    return float(out) if np.ndim(out) == 0 else out


def derivative_values(values, grid: Grid, order: int = 1) -> NDArray[np.float64]:
    """Array form of :func:`finite_diff_derivative`; differentiates along the last axis."""
    if order < 1:
        raise ValueError(f"derivative order must be >= 1, got {order}")
    if not grid.is_uniform:
        raise NonUniformGrid("finite differences require a uniform grid")
    if len(grid) <= order + 1:
        raise GridTooShort(
            f"grid of {len(grid)} points too short for a derivative of order {order}"
        )
    out = _as_values(values, grid)
    for _ in range(order):
        # central differences inside, second-order one-sided at both ends
        out = np.gradient(out, grid.spacing, axis=-1, edge_order=2)
    return out


def finite_diff_derivative(curve: Curve, order: int = 1) -> Curve:
    return Curve(curve.grid, derivative_values(curve.values, curve.grid, order))


def log_returns(prices: Sequence[float]) -> NDArray[np.float64]:
    """Percent log returns ``100 * ln(P[t+1] / P[t])``."""
    p = np.asarray(prices, dtype=float).ravel()
    if p.size < 2:
        raise TooShort(f"need at least 2 prices, got {p.size}")
    if not np.all(p > 0):
        bad = int(np.argmin(p > 0))
        raise NonPositivePrice(f"price at position {bad} is not positive: {p[bad]!r}")
    return 100.0 * np.log(p[1:] / p[:-1])
