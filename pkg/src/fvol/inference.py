"""Plug-in pieces of the asymptotic confidence intervals for U(x).

The asymptotic variance of the variance estimators involves the small-ball
behaviour of the covariate around ``x`` through the moment constants

    M_j = W^j(1) - int_0^1 (W^j)'(u) tau(u) du,       j = 1, 2,

where ``tau`` is replaced by the ratio of empirical small-ball probabilities.
Since that ratio is a step function, the integral is evaluated exactly,
segment by segment, from the antiderivative ``W^j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from fvol.errors import EmptyBall, NonPositivePlugin
from fvol.kernels import Kernel

_STD_NORMAL = NormalDist()


def normal_upper_quantile(nu: float) -> float:
    """Upper ``nu/2`` quantile ``q`` of N(0, 1): ``P(Z > q) = nu / 2``."""
    if not 0.0 < nu <= 1.0:
        raise ValueError(f"level must lie in (0, 1], got {nu}")
    return _STD_NORMAL.inv_cdf(1.0 - nu / 2.0)


@dataclass(frozen=True, eq=False)
class SmallBallProfile:
    """Sorted distances from an anchor curve to the sample, with bandwidth ``h``."""

    distances: NDArray[np.float64]
    h: float
    anchor: Optional[object] = None

    def __post_init__(self):
        d = np.sort(np.asarray(self.distances, dtype=float).ravel())
        if d.size == 0:
            raise ValueError("a small-ball profile needs at least one distance")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("distances must be finite and nonnegative")
        if not self.h > 0:
            raise ValueError(f"bandwidth must be positive, got {self.h}")
        d.setflags(write=False)
        object.__setattr__(self, "distances", d)

    @property
    def n(self) -> int:
        return self.distances.size


def empirical_small_ball(profile: SmallBallProfile, u: float) -> float:
    """Fraction of sample curves within distance ``u`` of the anchor (right-continuous)."""
    if u < 0:
        raise ValueError("radius must be nonnegative")
    return np.searchsorted(profile.distances, u, side="right") / profile.n


def _count_scaled(profile: SmallBallProfile, u: float) -> int:
    # #{t : d_t / h <= u}, i.e. n F(u h) without the rounding of u * h
    return int(np.searchsorted(profile.distances / profile.h, u, side="right"))


def tau_hat(profile: SmallBallProfile, u: float, strict: bool = False) -> float:
    """Small-ball ratio ``F(u h) / F(h)``.

    With ``strict=True`` the literal ratio ``F(u h) / F(u)`` is used instead;
    it is kept for comparison only and is not guaranteed to equal 1 at u = 1.
    """
    if strict:
        num = _count_scaled(profile, u)
        den = int(np.searchsorted(profile.distances, u, side="right"))
        if den == 0:
            if num:
                raise EmptyBall(f"F({u:g}) is zero")
            return 0.0
        return num / den
    den = _count_scaled(profile, 1.0)
    if den == 0:
        raise EmptyBall(f"no sample curve within bandwidth {profile.h:g}")
    return _count_scaled(profile, u) / den


def m_hat_moment(kernel_W: Kernel, j: int, profile: SmallBallProfile, strict: bool = False) -> float:
    """Plug-in ``M_j`` with the integral taken exactly against the step function ``tau_hat``."""
    if j not in (1, 2):
        raise ValueError(f"j must be 1 or 2, got {j}")
    scaled = profile.distances / profile.h
    knots = scaled[scaled <= 1.0]
    if strict:
        raw = profile.distances
        knots = np.concatenate([knots, raw[raw <= 1.0]])
    elif knots.size == 0:
        raise EmptyBall(f"no sample curve within bandwidth {profile.h:g}")
    edges = np.unique(np.concatenate([[0.0], knots, [1.0]]))
    g = kernel_W.power(j, edges)
    tau = np.array([tau_hat(profile, a, strict) for a in edges[:-1]])
    return float(g[-1] - np.sum(tau * np.diff(g)))


def moment_plugins(dist, hs, kernel_W: Kernel, strict: bool = False):
    """Row-wise ``(M_1, M_2)`` for a distance matrix and per-row bandwidths.

    For the default ratio the exact integral reduces to the mean of ``W^j``
    over the sample points inside the ball, which is what is computed here.
    """
    dist = np.atleast_2d(np.asarray(dist, dtype=float))
    hs = np.broadcast_to(np.asarray(hs, dtype=float), (dist.shape[0],))
    if strict:
        out = np.array(
            [
                [m_hat_moment(kernel_W, j, SmallBallProfile(row, h), strict=True) for j in (1, 2)]
                for row, h in zip(dist, hs)
            ]
        )
        return out[:, 0], out[:, 1]
    u = dist / hs[:, None]
    inside = u <= 1.0
    count = inside.sum(axis=1)
    w = np.where(inside, kernel_W(np.minimum(u, 1.0)), 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        m1 = w.sum(axis=1) / count
        m2 = (w * w).sum(axis=1) / count
    return m1, m2


def ci_half_width(omega, pi, m1, m2, f_hat, n, nu, imputed: bool = False):
    """Relative half-width ``q sqrt(M2)/M1 sqrt(omega/(n F pi))`` (or ``... omega pi/(n F)``).

    Vectorised and permissive: nonpositive plug-ins yield inf/nan rather
    than raising. Use :func:`ci_simplified` / :func:`ci_imputed` for the
    checked scalar versions.
    """
    q = normal_upper_quantile(nu)
    omega, pi, m1, m2, f_hat = (np.asarray(a, dtype=float) for a in (omega, pi, m1, m2, f_hat))
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = omega * pi / (n * f_hat) if imputed else omega / (n * f_hat * pi)
        return q * np.sqrt(m2) / m1 * np.sqrt(ratio)


def _check_plugins(**plugins):
    for name, value in plugins.items():
        if not (value > 0 and np.isfinite(value)):
            raise NonPositivePlugin(f"plug-in {name} must be positive and finite, got {value!r}")


def ci_simplified(u_hat, omega_hat, pi_hat, m1_hat, m2_hat, f_hat, n, nu=0.05):
    """Interval for U from the simplified estimator; widens as ``pi_hat`` falls."""
    _check_plugins(omega_hat=omega_hat, pi_hat=pi_hat, m1_hat=m1_hat, m2_hat=m2_hat, f_hat=f_hat, n=n)
    half = float(ci_half_width(omega_hat, pi_hat, m1_hat, m2_hat, f_hat, n, nu))
    return u_hat * (1.0 - half), u_hat * (1.0 + half)


def ci_imputed(u_hat, omega_hat, pi_hat, m1_hat, m2_hat, f_hat, n, nu=0.05):
    """Interval for U from the imputed estimator; narrows as ``pi_hat`` falls."""
    _check_plugins(omega_hat=omega_hat, pi_hat=pi_hat, m1_hat=m1_hat, m2_hat=m2_hat, f_hat=f_hat, n=n)
    half = float(ci_half_width(omega_hat, pi_hat, m1_hat, m2_hat, f_hat, n, nu, imputed=True))
    return u_hat * (1.0 - half), u_hat * (1.0 + half)
