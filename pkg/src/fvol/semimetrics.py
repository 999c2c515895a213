"""Semi-metrics between discretised curves.

Every semi-metric here is a weighted Euclidean distance after a linear
"embedding" of the curve: the curve itself (plain L2), its finite-difference
derivative (derivative L2), or its scores on a functional-PCA basis.
Distance matrices are computed from those embeddings by direct differences,
which keeps them exactly symmetric with an exactly-zero diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from fvol.errors import EmptyDataset, KTooLarge, MismatchedGrid
from fvol.fda import Curve, FdaDataset, Grid, derivative_values

KINDS = ("l2", "deriv_l2", "pca")


@dataclass(frozen=True)
class SemiMetricSpec:
    kind: str = "deriv_l2"
    order: int = 1
    k: int = 4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown semi-metric kind {self.kind!r}; choose from {KINDS}")
        if self.kind == "deriv_l2" and self.order < 1:
            raise ValueError("deriv_l2 needs order >= 1 (use kind='l2' for order 0)")
        if self.kind == "pca" and self.k < 1:
            raise ValueError("pca needs k >= 1")

    @classmethod
    def l2(cls) -> "SemiMetricSpec":
        return cls("l2", 0)

    @classmethod
    def deriv(cls, order: int = 1) -> "SemiMetricSpec":
        return cls("deriv_l2", order)

    @classmethod
    def pca(cls, k: int = 4) -> "SemiMetricSpec":
        return cls("pca", k=k)

    @classmethod
    def parse(cls, text: str) -> "SemiMetricSpec":
        """Parse ``"l2"``, ``"deriv_l2:1"`` or ``"pca:4"``."""
        kind, _, arg = text.strip().partition(":")
        kind = kind.strip().lower()
        if kind == "l2":
            return cls.l2()
        if kind == "deriv_l2":
            return cls.deriv(int(arg) if arg else 1)
        if kind == "pca":
            return cls.pca(int(arg) if arg else 4)
        raise ValueError(f"cannot parse semi-metric {text!r}")

    def __str__(self) -> str:
        if self.kind == "l2":
            return "l2"
        if self.kind == "deriv_l2":
            return f"deriv_l2:{self.order}"
        return f"pca:{self.k}"


DEFAULT_SEMIMETRIC = SemiMetricSpec.deriv(1)


@dataclass(frozen=True, eq=False)
class PcaBasis:
    """Leading eigenpairs of the empirical covariance operator.

    ``eigenfunctions`` has shape (k, len(grid)) and is orthonormal for the
    trapezoid inner product on ``grid``.
    """

    grid: Grid
    eigenfunctions: NDArray[np.float64]
    eigenvalues: NDArray[np.float64]
    mean: NDArray[np.float64]

    @property
    def k(self) -> int:
        return self.eigenvalues.size

    def scores(self, values) -> NDArray[np.float64]:
        """Quadrature inner products of (uncentred) curves with each eigenfunction."""
        vals = np.asarray(values, dtype=float)
        return vals @ (self.eigenfunctions * self.grid.weights).T


def _covariance_operator(curves: NDArray, weights: NDArray) -> NDArray:
    centred = curves - curves.mean(axis=0)
    cov = centred.T @ centred / curves.shape[0]
    sw = np.sqrt(weights)
    return sw[:, None] * cov * sw[None, :]


def pca_fit(data: FdaDataset, k: int = 4) -> PcaBasis:
    """Top-``k`` eigenpairs of the quadrature-weighted covariance of the curves.

    The symmetric matrix ``W^1/2 C W^1/2`` is diagonalised and its eigenvectors
    mapped back by ``W^-1/2``, so the eigenfunctions are L2-orthonormal rather
    than merely coordinate-orthonormal. Each eigenfunction is signed so that its
    largest-magnitude coordinate is positive.
    """
    if len(data) == 0:
        raise EmptyDataset("cannot fit PCA on an empty dataset")
    p = len(data.grid)
    if k > p:
        raise KTooLarge(f"k={k} exceeds grid length {p}")
    w = data.grid.weights
    sym = _covariance_operator(data.curves, w)
    vals, vecs = np.linalg.eigh(sym)
    order = np.argsort(vals)[::-1][:k]
    vals = vals[order]
    phi = (vecs[:, order] / np.sqrt(w)[:, None]).T
    lead = np.argmax(np.abs(phi), axis=1)
    signs = np.sign(phi[np.arange(k), lead])
    signs[signs == 0] = 1.0
    phi = phi * signs[:, None]
    for arr in (phi, vals):
        arr.setflags(write=False)
    return PcaBasis(data.grid, phi, vals, data.curves.mean(axis=0))


def embed(values, grid: Grid, spec: SemiMetricSpec, basis: Optional[PcaBasis] = None):
    """Linear features and weights such that ``d(x, y)^2 = sum(w * (f(x) - f(y))^2)``."""
    vals = np.atleast_2d(np.asarray(values, dtype=float))
    if vals.shape[-1] != len(grid):
        raise MismatchedGrid(f"curves with {vals.shape[-1]} points on a grid of {len(grid)}")
    if spec.kind == "l2":
        return vals, grid.weights
    if spec.kind == "deriv_l2":
        return derivative_values(vals, grid, spec.order), grid.weights
    if basis is None:
        raise ValueError("the pca semi-metric needs a fitted PcaBasis")
    if basis.grid != grid:
        raise MismatchedGrid("curves are not on the PCA basis grid")
    if spec.k > basis.k:
        raise KTooLarge(f"semi-metric asks for {spec.k} components, basis has {basis.k}")
    return basis.scores(vals)[:, : spec.k], np.ones(spec.k)


def pairwise_distances(fa: NDArray, fb: NDArray, weights: NDArray, chunk: int = 256) -> NDArray:
    """Weighted Euclidean distances between rows of ``fa`` and rows of ``fb``."""
    fa = np.atleast_2d(fa)
    fb = np.atleast_2d(fb)
    out = np.empty((fa.shape[0], fb.shape[0]))
    for start in range(0, fa.shape[0], chunk):
        diff = fa[start : start + chunk, None, :] - fb[None, :, :]
        out[start : start + chunk] = np.sqrt((diff * diff) @ weights)
    return out


def _symmetric(mat: NDArray) -> NDArray:
    # BLAS may sum row i and row j in different orders; take the same value for both
    return np.minimum(mat, mat.T)


def _check_same_grid(x: Curve, y: Curve):
    if x.grid != y.grid:
        raise MismatchedGrid("curves are sampled on different grids")


def semimetric_l2_deriv(x: Curve, y: Curve, order: int = 1) -> float:
    """L2 distance between the ``order``-th derivatives (order 0: plain L2)."""
    _check_same_grid(x, y)
    a, b = x.values, y.values
    if order > 0:
        a = derivative_values(a, x.grid, order)
        b = derivative_values(b, x.grid, order)
    diff = a - b
    return float(np.sqrt((diff * diff) @ x.grid.weights))


def semimetric_pca(x: Curve, y: Curve, basis: PcaBasis, k: Optional[int] = None) -> float:
    _check_same_grid(x, y)
    if x.grid != basis.grid:
        raise MismatchedGrid("curves are not on the PCA basis grid")
    k = basis.k if k is None else k
    diff = basis.scores(x.values - y.values)[:k]
    return float(np.sqrt(diff @ diff))


def semimetric(x: Curve, y: Curve, spec: SemiMetricSpec, basis: Optional[PcaBasis] = None) -> float:
    if spec.kind == "pca":
        if basis is None:
            raise ValueError("the pca semi-metric needs a fitted PcaBasis")
        return semimetric_pca(x, y, basis, spec.k)
    return semimetric_l2_deriv(x, y, 0 if spec.kind == "l2" else spec.order)


def distance_matrix(data: FdaDataset, spec: SemiMetricSpec, basis: Optional[PcaBasis] = None) -> NDArray:
    feats, w = embed(data.curves, data.grid, spec, basis)
    return _symmetric(pairwise_distances(feats, feats, w))


class DistanceCache:
    """Lazily computed train-train and eval-train distance matrices per semi-metric.

    A PCA basis, when needed, is fitted once on the training curves.
    Matrices are read-only after construction.
    """

    def __init__(self, data: FdaDataset, eval_curves=None, bases: Optional[dict] = None):
        self.data = data
        self.eval_curves = None if eval_curves is None else np.atleast_2d(eval_curves)
        self._bases = dict(bases or {})
        self._train: dict = {}
        self._eval: dict = {}
        self._train_features: dict = {}

    def basis(self, spec: SemiMetricSpec) -> Optional[PcaBasis]:
        if spec.kind != "pca":
            return None
        if spec.k not in self._bases:
            fitted = [b for kk, b in self._bases.items() if kk >= spec.k]
            self._bases[spec.k] = fitted[0] if fitted else pca_fit(self.data, spec.k)
        return self._bases[spec.k]

    def _features(self, spec):
        if spec not in self._train_features:
            self._train_features[spec] = embed(
                self.data.curves, self.data.grid, spec, self.basis(spec)
            )
        return self._train_features[spec]

    def train(self, spec: SemiMetricSpec) -> NDArray:
        if spec not in self._train:
            feats, w = self._features(spec)
            mat = _symmetric(pairwise_distances(feats, feats, w))
            mat.setflags(write=False)
            self._train[spec] = mat
        return self._train[spec]

    def evaluation(self, spec: SemiMetricSpec) -> NDArray:
        if self.eval_curves is None:
            raise ValueError("no evaluation curves were supplied")
        if spec not in self._eval:
            feats, w = self._features(spec)
            ev, _ = embed(self.eval_curves, self.data.grid, spec, self.basis(spec))
            mat = pairwise_distances(ev, feats, w)
            mat.setflags(write=False)
            self._eval[spec] = mat
        return self._eval[spec]

    def to_point(self, x: Curve, spec: SemiMetricSpec) -> NDArray:
        """Distances from one curve to every training curve."""
        if x.grid != self.data.grid:
            raise MismatchedGrid("curve is not on the dataset grid")
        feats, w = self._features(spec)
        ev, _ = embed(x.values, self.data.grid, spec, self.basis(spec))
        return pairwise_distances(ev, feats, w)[0]
