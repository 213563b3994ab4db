"""Minimal-W1 repair of a measure pair into convex order.

The cumulative quantile gap ``Q`` of a pair is piecewise linear on the
merged quantile grid.  Its convex envelope ``F`` (greatest convex
function below ``Q``, pinned at ``Q(0)`` and ``Q(1)``) has a left
derivative ``f`` whose L1 norm is the minimal total repair cost; the
repaired quantile functions are ``Q_mu - f/alpha`` and
``Q_nu + f/beta``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import (
    DEFAULT_ORDER_TOL,
    EmpiricalMeasure,
    QuantileFunction,
    _merged_grid,
    convex_order_check,
    make_measure,
)


@dataclass(frozen=True)
class PiecewiseLinear:
    """Continuous piecewise-linear function given by its knots."""

    knots: np.ndarray
    values: np.ndarray

    def __call__(self, u):
        return np.interp(u, self.knots, self.values)


@dataclass(frozen=True)
class ConvexifyResult:
    mu_tilde: EmpiricalMeasure
    nu_tilde: EmpiricalMeasure
    f: QuantileFunction
    cost: float
    alpha: float
    beta: float


def cumulative_gap(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> PiecewiseLinear:
    """Exact piecewise-linear ``Q(t) = int_0^t (Q_mu - Q_nu)`` on the merged grid."""
    breaks, qmu, qnu = _merged_grid(mu, nu)
    lengths = np.diff(np.concatenate(([0.0], breaks)))
    values = np.concatenate(([0.0], np.cumsum(lengths * (qmu - qnu))))
    return PiecewiseLinear(np.concatenate(([0.0], breaks)), values)


def convex_envelope(q: PiecewiseLinear) -> PiecewiseLinear:
    """Greatest convex minorant of a piecewise-linear function.

    Equals the lower convex hull of the knot set, found by one
    monotone-chain sweep; endpoints are always hull vertices, so
    ``F(0) = Q(0)`` and ``F(1) = Q(1)``.
    """
    xs, ys = q.knots, q.values
    hull = [0]
    for k in range(1, len(xs)):
        while len(hull) > 1:
            i, j = hull[-2], hull[-1]
            cross = (xs[j] - xs[i]) * (ys[k] - ys[i]) - (xs[k] - xs[i]) * (ys[j] - ys[i])
            if cross <= 0.0:  # ys[j] lies on or above segment (i, k): drop it
                hull.pop()
            else:
                break
        hull.append(k)
    idx = np.array(hull)
    return PiecewiseLinear(xs[idx], ys[idx])


def _left_derivative(env: PiecewiseLinear, grid: np.ndarray) -> np.ndarray:
    """Slope of the envelope on each cell ``(grid[k-1], grid[k]]`` of a refinement of its knots."""
    env_at = env(grid)
    return np.diff(env_at) / np.diff(grid)


def convexify_pair(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    alpha: float = 2.0,
    beta: float = 2.0,
    tol: float = DEFAULT_ORDER_TOL,
) -> ConvexifyResult:
    """Repair ``(mu, nu)`` into convex order at minimal weighted W1 cost.

    ``alpha`` and ``beta`` weight the two W1 penalties and must satisfy
    ``1/alpha + 1/beta = 1`` with both greater than 1.  An already
    ordered pair is returned unchanged with cost 0.  The result
    satisfies ``alpha * W1(mu, mu_tilde) = beta * W1(nu, nu_tilde) =
    cost`` exactly by construction.
    """
    if not (alpha > 1.0 and beta > 1.0 and abs(1.0 / alpha + 1.0 / beta - 1.0) <= 1e-12):
        raise ValueError(f"need alpha, beta > 1 with 1/alpha + 1/beta = 1, got {alpha}, {beta}")

    report = convex_order_check(mu, nu, tol=tol)
    if report.ordered:
        f = QuantileFunction(np.array([1.0]), np.array([0.0]))
        return ConvexifyResult(mu, nu, f, 0.0, alpha, beta)

    q = cumulative_gap(mu, nu)
    env = convex_envelope(q)
    grid = q.knots
    slopes = _left_derivative(env, grid)

    breaks, qmu, qnu = _merged_grid(mu, nu)
    lengths = np.diff(grid)
    cost = float(np.dot(lengths, np.abs(slopes)))

    new_qmu = qmu - slopes / alpha
    new_qnu = qnu + slopes / beta
    for vals, label in ((new_qmu, "mu"), (new_qnu, "nu")):
        if np.any(np.diff(vals) < -1e-9):
            raise ArithmeticError(
                f"repaired quantile function for {label} lost monotonicity; "
                "this indicates a degenerate envelope"
            )

    mu_tilde = make_measure(new_qmu, lengths)
    nu_tilde = make_measure(new_qnu, lengths)
    f = QuantileFunction(breaks, slopes)
    return ConvexifyResult(mu_tilde, nu_tilde, f, cost, alpha, beta)
