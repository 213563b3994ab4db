"""Randomized-arcade configuration and the filtered conditional law.

A randomized arcade process on ``[t0, t1]`` carries a signal
``g0(t) X0 + g1(t) X1`` plus a centered bridge noise with variance
``v(t)`` vanishing at both endpoints.  Conditioning a discrete coupling
on the running information value yields a posterior over the target
atoms; its mean is the interpolating martingale and its derivative in
the coupling entries feeds the optimizer.  All densities are evaluated
in log space with a shared normalizer because ``v(t)`` underflows plain
Gaussian evaluation near the endpoints.

The information value is parameterized as ``xi = g0(t) x_u + g1(t) y_q
+ a``: conditioning row atom ``x_u``, anchor column ``y_q``, noise
coordinate ``a``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .coupling import Coupling


@dataclass(frozen=True)
class RapConfig:
    """Interval, signal coefficients, noise variance, and weight kernel.

    All handles must accept numpy arrays.  ``w`` is the weight kernel
    ``sqrt(h1' h2 - h1 h2') / (h1(t1) h2(t) - h1(t) h2(t1))`` of the
    driver covariance factors; the Brownian driver (``h1 = t``,
    ``h2 = 1``) gives ``w(t) = 1/(t1 - t)``.  ``driver`` tags configs
    whose noise admits exact bridge sampling.
    """

    t0: float
    t1: float
    g0: Callable
    g1: Callable
    v: Callable
    w: Callable
    h1: Optional[Callable] = None
    h2: Optional[Callable] = None
    driver: str = "custom"

    def __post_init__(self):
        if not self.t0 < self.t1:
            raise ValueError(f"need t0 < t1, got [{self.t0}, {self.t1}]")

    def validate(self, n_check: int = 17) -> None:
        """Spot-check the interpolation and noise invariants on a grid."""
        for fn, t, want, name in (
            (self.g0, self.t0, 1.0, "g0(t0)"),
            (self.g0, self.t1, 0.0, "g0(t1)"),
            (self.g1, self.t0, 0.0, "g1(t0)"),
            (self.g1, self.t1, 1.0, "g1(t1)"),
            (self.v, self.t0, 0.0, "v(t0)"),
            (self.v, self.t1, 0.0, "v(t1)"),
        ):
            got = float(fn(t))
            if abs(got - want) > 1e-10:
                raise ValueError(f"{name} = {got}, expected {want}")
        interior = self.t0 + (self.t1 - self.t0) * (np.arange(1, n_check) / n_check)
        if np.any(np.asarray(self.v(interior)) <= 0):
            raise ValueError("noise variance must be positive inside the interval")
        if np.any(np.asarray(self.w(interior)) <= 0):
            raise ValueError("weight kernel must be positive inside the interval")


def brownian_rap(t0: float = 0.0, t1: float = 1.0) -> RapConfig:
    """Standard randomized Brownian bridge on ``[t0, t1]``."""
    span = t1 - t0
    if span <= 0:
        raise ValueError(f"need t0 < t1, got [{t0}, {t1}]")
    return RapConfig(
        t0=t0,
        t1=t1,
        g0=lambda t: (t1 - np.asarray(t, dtype=float)) / span,
        g1=lambda t: (np.asarray(t, dtype=float) - t0) / span,
        v=lambda t: (t1 - np.asarray(t, dtype=float)) * (np.asarray(t, dtype=float) - t0) / span,
        w=lambda t: 1.0 / (t1 - np.asarray(t, dtype=float)),
        h1=lambda t: np.asarray(t, dtype=float),
        h2=lambda t: np.ones_like(np.asarray(t, dtype=float)),
        driver="brownian",
    )


def rap_from_driver_kernel(
    h1: Callable,
    h2: Callable,
    dh1: Callable,
    dh2: Callable,
    g0: Callable,
    g1: Callable,
    v: Callable,
    t0: float,
    t1: float,
) -> RapConfig:
    """Config for a Gauss-Markov driver with covariance ``h1(min) h2(max)``.

    The weight kernel is assembled from the factor handles and their
    almost-everywhere derivatives; signal coefficients and the noise
    variance are supplied directly.
    """

    def w(t):
        t = np.asarray(t, dtype=float)
        num = np.sqrt(dh1(t) * h2(t) - h1(t) * dh2(t))
        return num / (h1(t1) * h2(t) - h1(t) * h2(t1))

    return RapConfig(t0=t0, t1=t1, g0=g0, g1=g1, v=v, w=w, h1=h1, h2=h2, driver="custom")


@dataclass(frozen=True)
class FamPosterior:
    """Posterior over target atoms given ``(x_u, I_t)``, with mean and variance."""

    u: int
    a: float
    t: float
    post_weights: np.ndarray
    M: float
    Var: float


def noise_std(rap: RapConfig, t: float) -> float:
    """Standard deviation of the arcade noise at time ``t``."""
    if not rap.t0 <= t <= rap.t1:
        raise ValueError(f"t={t} outside [{rap.t0}, {rap.t1}]")
    return float(math.sqrt(max(float(rap.v(t)), 0.0)))


def weight_fn(rap: RapConfig, t: float) -> float:
    """Weight kernel value at ``t``; the kernel has a pole at ``t1``."""
    if not rap.t0 <= t < rap.t1:
        raise ValueError(f"t={t} outside [{rap.t0}, {rap.t1}) (kernel pole at t1)")
    return float(rap.w(t))


def _row_log_weights(P: Coupling, rap: RapConfig, u: int, q: int, a: float, t: float):
    """Unnormalized posterior log weights over the target atoms."""
    if not rap.t0 < t < rap.t1:
        raise ValueError(f"t={t} must lie strictly inside ({rap.t0}, {rap.t1})")
    if not np.isfinite(a):
        raise ValueError(f"noise coordinate must be finite, got {a}")
    row = P.p[u]
    if row.sum() <= 0:
        raise ValueError(f"row {u} has no mass")
    y = P.col_support
    v = float(rap.v(t))
    g1 = float(rap.g1(t))
    dev = a + g1 * (y[q] - y)  # xi - g0 x_u - g1 y_j
    with np.errstate(divide="ignore"):
        logits = np.where(row > 0, np.log(np.maximum(row, 1e-300)), -np.inf) - 0.5 * dev * dev / v
    return logits, y, v


def posterior_at(P: Coupling, rap: RapConfig, u: int, q: int, a: float, t: float) -> FamPosterior:
    """Posterior over target atoms given ``X0 = x_u`` and ``I_t = g0 x_u + g1 y_q + a``."""
    logits, y, _ = _row_log_weights(P, rap, u, q, a, t)
    logits = logits - logits.max()
    weights = np.exp(logits)
    weights /= weights.sum()
    m = float(weights @ y)
    var = float(weights @ (y - m) ** 2)
    return FamPosterior(u=u, a=float(a), t=float(t), post_weights=weights, M=m, Var=max(var, 0.0))


def dM_dp(P: Coupling, rap: RapConfig, u: int, q: int, a: float, t: float) -> float:
    """Derivative of the posterior mean in the coupling entry ``p[u, q]``.

    Equals ``phi_v(a) (y_q - M) / sum_j phi_v(a + g1 (y_q - y_j)) p[u, j]``,
    evaluated with the same log-space normalizer as the posterior; the
    Gaussian normalization constant cancels between numerator and
    denominator.
    """
    logits, y, v = _row_log_weights(P, rap, u, q, a, t)
    shift = logits.max()
    den = float(np.exp(logits - shift).sum())
    post = posterior_at(P, rap, u, q, a, t)
    log_num = -0.5 * a * a / v - shift
    return float(np.exp(log_num) * (y[q] - post.M) / den)
