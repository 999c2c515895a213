"""Slow reference implementations written from the formulas with plain loops.

Nothing here imports the package's numerical code, so agreement with it is
evidence rather than tautology.
"""

import math


def trapz(values, points):
    total = 0.0
    for i in range(len(points) - 1):
        total += (points[i + 1] - points[i]) * (values[i] + values[i + 1]) / 2.0
    return total


def gradient(values, step):
    n = len(values)
    out = [0.0] * n
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * step)
    out[-1] = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * step)
    for i in range(1, n - 1):
        out[i] = (values[i + 1] - values[i - 1]) / (2.0 * step)
    return out


def deriv_distance(x, y, points, order=1):
    step = points[1] - points[0]
    a, b = list(x), list(y)
    for _ in range(order):
        a, b = gradient(a, step), gradient(b, step)
    return math.sqrt(trapz([(u - v) ** 2 for u, v in zip(a, b)], points))


def quadratic(u):
    return 1.5 * (1.0 - u * u) if 0.0 <= u <= 1.0 else 0.0


def kernel(family):
    if family == "quadratic":
        return quadratic
    if family == "triangular":
        return lambda u: 2.0 * (1.0 - u) if 0.0 <= u <= 1.0 else 0.0
    return lambda u: 1.0 if 0.0 <= u <= 1.0 else 0.0


def weighted_average(dists, h, values, include, k=quadratic):
    num = den = 0.0
    for d, v, inc in zip(dists, values, include):
        if inc:
            w = k(d / h)
            num += w * v
            den += w
    if den <= 0:
        raise ZeroDivisionError("no neighbours")
    return num / den


def distance_rows(a_curves, b_curves, points, order=1):
    return [[deriv_distance(a, b, points, order) for b in b_curves] for a in a_curves]


def volatility_pipeline(curves, points, y, delta, eval_curves, h, mode, h_init=None):
    """All estimates at the evaluation curves for one of the three flavours.

    ``h`` = (h1, h2, h3, h4); ``h_init`` = (h1_init, h2_init) for the imputed
    flavour. Distances are derivative-L2 of order 1, every kernel quadratic.
    Returns a dict of lists keyed m, u, omega, pi, f, m1, m2.
    """
    n = len(curves)
    h1, h2, h3, h4 = h
    D = distance_rows(curves, curves, points)
    E = distance_rows(eval_curves, curves, points)
    obs = [d == 1 for d in delta]
    y0 = [yy if o else 0.0 for yy, o in zip(y, obs)]
    everyone = [True] * n
    if mode == "imputed":
        g1, g2 = h_init if h_init is not None else (h1, h2)
        m0 = [weighted_average(D[t], g1, y0, obs) for t in range(n)]
        y_hat = [y0[t] if obs[t] else m0[t] for t in range(n)]
        r = [(y0[t] - m0[t]) ** 2 if obs[t] else 0.0 for t in range(n)]
        u0 = [weighted_average(D[t], g2, r, obs) for t in range(n)]
        r_hat = [r[t] if obs[t] else u0[t] for t in range(n)]
        m_train = [weighted_average(D[t], h1, y_hat, everyone) for t in range(n)]
        u_train = [weighted_average(D[t], h2, r_hat, everyone) for t in range(n)]
        targ = [((y_hat[t] - m_train[t]) ** 2 / u_train[t] - 1.0) ** 2 for t in range(n)]
        inc, resp, u_targets = everyone, y_hat, r_hat
    else:
        m_train = [weighted_average(D[t], h1, y0, obs) for t in range(n)]
        r = [(y0[t] - m_train[t]) ** 2 if obs[t] else 0.0 for t in range(n)]
        u_train = [weighted_average(D[t], h2, r, obs) for t in range(n)]
        targ = [((y0[t] - m_train[t]) ** 2 / u_train[t] - 1.0) ** 2 if obs[t] else 0.0 for t in range(n)]
        inc, resp, u_targets = obs, y0, r
    out = {k: [] for k in ("m", "u", "omega", "pi", "f", "m1", "m2")}
    for row in E:
        out["m"].append(weighted_average(row, h1, resp, inc))
        out["u"].append(weighted_average(row, h2, u_targets, inc))
        out["omega"].append(weighted_average(row, h3, targ, inc))
        out["pi"].append(1.0 if mode == "complete" else weighted_average(row, h4, [float(o) for o in obs], everyone))
        inside = [d for d in row if d <= h2]
        out["f"].append(len(inside) / n)
        out["m1"].append(sum(quadratic(d / h2) for d in inside) / len(inside))
        out["m2"].append(sum(quadratic(d / h2) ** 2 for d in inside) / len(inside))
    return out


def loo_cv(dist, h, targets, include, scored, k=quadratic):
    total = 0.0
    n = len(targets)
    for t in range(n):
        if not scored[t]:
            continue
        num = den = 0.0
        for s in range(n):
            if s == t or not include[s]:
                continue
            w = k(dist[t][s] / h)
            num += w * targets[s]
            den += w
        if den <= 0:
            return float("nan")
        total += (targets[t] - num / den) ** 2
    return total


def moment_by_quadrature(kernel_pow, knots, j, cells=10_000):
    """``W^j(1) - int_0^1 (W^j)'(u) tau(u) du`` on a ``cells``-cell trapezoid grid.

    ``knots`` are scaled distances ``d / h`` that must sit on the grid
    ``i / cells``; tau is then constant on every cell and the only error left
    is the trapezoid error of the smooth factor ``(W^j)'``.
    """
    inside = sum(1 for k in knots if k <= 1.0)

    def dpow(u, eps=1e-6):
        lo, hi = max(u - eps, 0.0), min(u + eps, 1.0)
        return (kernel_pow(hi) ** j - kernel_pow(lo) ** j) / (hi - lo)

    total = 0.0
    prev_u, prev_g = 0.0, dpow(0.0)
    for i in range(1, cells + 1):
        u = i / cells
        g = dpow(u)
        tau = sum(1 for k in knots if k <= prev_u) / inside
        total += tau * (u - prev_u) * (g + prev_g) / 2.0
        prev_u, prev_g = u, g
    return kernel_pow(1.0) ** j - total
