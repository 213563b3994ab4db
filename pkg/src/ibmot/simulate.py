"""Monte-Carlo oracle: bridge paths, interpolating-martingale paths,
an independent estimator of the objective, innovations recovery, and
martingale diagnostics.

Paths are generated in fixed-size chunks, each driven by its own
counter-based generator jumped from the master seed, so results are
bit-reproducible from ``(seed, grid, n_paths)`` and the chunks are
independent by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .coupling import Coupling
from .fam import RapConfig

_CHUNK = 16_384


@dataclass(frozen=True)
class McEstimate:
    """Sample mean with its standard error and a truncation-bias envelope."""

    value: float
    std_error: float
    n_paths: int
    n_grid: int
    bias_bound: float


@dataclass
class PathBundle:
    """Simulated paths on a fixed time grid.

    ``i_paths`` holds the information process, ``m_paths`` the
    conditional-mean martingale; ``w_paths`` stays ``None`` until
    innovations recovery runs.  ``w_final`` is the recovered innovation
    at the right endpoint (integral completed over the last segment).
    """

    grid: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    i_paths: np.ndarray
    m_paths: np.ndarray
    n_paths: int
    seed: int
    w_paths: Optional[np.ndarray] = None
    w_final: Optional[np.ndarray] = None


@dataclass(frozen=True)
class LagStatistic:
    s: float
    t: float
    h: str
    estimate: float
    std_error: float


@dataclass(frozen=True)
class MartingaleDiagnostics:
    lag_stats: list
    pinning_start: float
    pinning_end: float
    mean_level_drift: float


def open_uniform_grid(rap: RapConfig, n: int) -> np.ndarray:
    """Uniform grid ``t0 + k (t1 - t0)/n`` for ``k = 1..n-1`` (endpoint guards of one step)."""
    if n < 3:
        raise ValueError("need at least three grid cells")
    step = (rap.t1 - rap.t0) / n
    return rap.t0 + step * np.arange(1, n)


def _check_grid(rap: RapConfig, grid: np.ndarray, endpoints_ok: bool) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2:
        raise ValueError("grid must be a 1-D array with at least two points")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    lo, hi = (rap.t0, rap.t1) if endpoints_ok else (rap.t0, rap.t1)
    if grid[0] < lo or grid[-1] > hi:
        raise ValueError(f"grid must lie inside [{rap.t0}, {rap.t1}]")
    if not endpoints_ok and (grid[0] <= rap.t0 or grid[-1] >= rap.t1):
        raise ValueError("grid must be strictly inside the interval")
    return grid


def _require_brownian(rap: RapConfig) -> None:
    if rap.driver != "brownian":
        raise NotImplementedError(
            "exact bridge sampling is only implemented for the Brownian driver"
        )


def _bridge_chunk(rap: RapConfig, grid: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Exact bridge noise at the grid times from standard normals (one column per time)."""
    t1 = rap.t1
    out = np.empty_like(normals)
    a = np.zeros(normals.shape[0])
    t_prev = rap.t0
    for k, t in enumerate(grid):
        if t >= t1:
            a = np.zeros_like(a)
        else:
            mean = a * (t1 - t) / (t1 - t_prev)
            var = (t - t_prev) * (t1 - t) / (t1 - t_prev)
            a = mean + math.sqrt(max(var, 0.0)) * normals[:, k]
        out[:, k] = a
        t_prev = t
    return out


def sample_bridge_path(rap: RapConfig, grid, rng: np.random.Generator) -> np.ndarray:
    """One exact arcade-noise path at the given times (endpoints allowed, pinned to 0).

    Sequential conditional Gaussian sampling of the Brownian bridge; the
    marginal variance at ``t`` is exactly ``v(t)``.
    """
    _require_brownian(rap)
    grid = _check_grid(rap, grid, endpoints_ok=True)
    normals = rng.standard_normal((1, len(grid)))
    return _bridge_chunk(rap, grid, normals)[0]


def _chunk_rng(seed: int, chunk_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.Philox(key=seed).jumped(chunk_index))


def simulate_fam(
    P: Coupling,
    rap: RapConfig,
    grid,
    n_paths: int,
    seed: int = 0,
):
    """Simulate interpolating-martingale paths and estimate the objective.

    Draws ``(x0, x1)`` from the coupling, builds the information path
    ``g0 x0 + g1 x1 + A`` on the grid, evaluates the posterior mean at
    every node, and integrates ``(x1 - M_t)^2 w(t)`` by the trapezoid
    rule extended to both endpoints (the integrand has the exact limit
    ``(x1 - x0)^2 w(t0)`` on the left and 0 on the right by pinning).
    The omitted right-tail curvature is covered by a Cauchy-Schwarz
    envelope reported as ``bias_bound``.

    Returns ``(PathBundle, McEstimate)``.
    """
    _require_brownian(rap)
    grid = _check_grid(rap, grid, endpoints_ok=False)
    if n_paths < 2:
        raise ValueError("need at least two paths")
    p = P.p
    total = p.sum()
    if total <= 0 or p.min() < 0:
        raise ValueError("coupling must be nonnegative with positive mass")
    l, m = p.shape
    flat = (p / total).ravel()
    x_atoms, y_atoms = P.row_support, P.col_support

    g0 = np.asarray(rap.g0(grid), dtype=float)
    g1 = np.asarray(rap.g1(grid), dtype=float)
    v = np.asarray(rap.v(grid), dtype=float)
    w_grid = np.asarray(rap.w(grid), dtype=float)
    w_t0 = float(rap.w(rap.t0))
    with np.errstate(divide="ignore"):
        logp = np.where(p > 0, np.log(np.maximum(p, 1e-300)), -np.inf)

    n_grid = len(grid)
    x0 = np.empty(n_paths)
    x1 = np.empty(n_paths)
    i_paths = np.empty((n_paths, n_grid))
    m_paths = np.empty((n_paths, n_grid))
    estimates = np.empty(n_paths)

    n_chunks = (n_paths + _CHUNK - 1) // _CHUNK
    for c in range(n_chunks):
        rng = _chunk_rng(seed, c)
        lo, hi = c * _CHUNK, min((c + 1) * _CHUNK, n_paths)
        size = hi - lo
        idx = rng.choice(l * m, size=size, p=flat)
        iu, jv = idx // m, idx % m
        cx0, cx1 = x_atoms[iu], y_atoms[jv]
        noise = _bridge_chunk(rap, grid, rng.standard_normal((size, n_grid)))
        info = g0[None, :] * cx0[:, None] + g1[None, :] * cx1[:, None] + noise
        cm = np.empty_like(info)
        for k in range(n_grid):
            dev = info[:, k, None] - g0[k] * cx0[:, None] - g1[k] * y_atoms[None, :]
            logits = logp[iu] - 0.5 * dev * dev / v[k]
            logits -= logits.max(axis=1, keepdims=True)
            wgt = np.exp(logits)
            cm[:, k] = (wgt @ y_atoms) / wgt.sum(axis=1)
        integrand = (cx1[:, None] - cm) ** 2 * w_grid[None, :]
        left = (cx1 - cx0) ** 2 * w_t0
        # trapezoid over [t0, grid..., t1] with exact endpoint limits
        acc = 0.5 * (left + integrand[:, 0]) * (grid[0] - rap.t0)
        steps = np.diff(grid)
        acc += 0.5 * ((integrand[:, :-1] + integrand[:, 1:]) * steps[None, :]).sum(axis=1)
        acc += 0.5 * integrand[:, -1] * (rap.t1 - grid[-1])
        x0[lo:hi], x1[lo:hi] = cx0, cx1
        i_paths[lo:hi], m_paths[lo:hi] = info, cm
        estimates[lo:hi] = acc

    value = float(estimates.mean())
    std_error = float(estimates.std(ddof=1) / math.sqrt(n_paths))
    # right-tail envelope: int_{t_last}^{t1} E[vol] <= sqrt(dt * E[Var at t_last])
    tail_var = float(np.mean((x1 - m_paths[:, -1]) ** 2))
    bias_bound = math.sqrt(max(rap.t1 - grid[-1], 0.0) * tail_var)
    bundle = PathBundle(
        grid=grid, x0=x0, x1=x1, i_paths=i_paths, m_paths=m_paths,
        n_paths=n_paths, seed=seed,
    )
    return bundle, McEstimate(value, std_error, n_paths, n_grid, bias_bound)


def innovations_path(bundle: PathBundle, P: Coupling, rap: RapConfig) -> np.ndarray:
    """Recover the driving Brownian motion from each simulated path.

    Discretizes ``dW_t = ((Z_t - M_t) w(t) + x0/(t1 - t0)) dt + dI_t``
    with ``Z_t = I_t - g0(t) x0`` (Brownian driver, centered noise).
    The stiff factor ``w(t) = 1/(t1 - t)`` is integrated exactly per
    step against the trapezoid of ``Z - M``; the first segment uses the
    exact zero drift limit at ``t0`` and the last segment uses the
    linear decay of the bridge to complete the integral at ``t1``.

    Fills ``bundle.w_paths`` (values at the grid nodes) and
    ``bundle.w_final`` and returns ``w_paths``.
    """
    _require_brownian(rap)
    grid = bundle.grid
    step = np.diff(grid)
    if len(grid) >= 2 and rap.t1 - grid[-1] < 0.5 * step[-1]:
        raise ValueError(
            "grid too coarse near t1: need t1 - t_last >= half the last step"
        )
    t0, t1 = rap.t0, rap.t1
    g0 = np.asarray(rap.g0(grid), dtype=float)
    x0 = bundle.x0
    zmm = bundle.i_paths - g0[None, :] * x0[:, None] - bundle.m_paths
    w = np.empty_like(bundle.i_paths)
    # first segment: Z - M has the exact limit -x0 at t0 and dI = I(grid[0]) - x0
    log0 = math.log((t1 - t0) / (t1 - grid[0]))
    w[:, 0] = (
        0.5 * (-x0 + zmm[:, 0]) * log0
        + x0 * (grid[0] - t0) / (t1 - t0)
        + bundle.i_paths[:, 0] - x0
    )
    for k in range(len(grid) - 1):
        logr = math.log((t1 - grid[k]) / (t1 - grid[k + 1]))
        w[:, k + 1] = (
            w[:, k]
            + 0.5 * (zmm[:, k] + zmm[:, k + 1]) * logr
            + x0 * (grid[k + 1] - grid[k]) / (t1 - t0)
            + bundle.i_paths[:, k + 1] - bundle.i_paths[:, k]
        )
    # last segment: conditionally E[Z - M] decays linearly to 0, so the
    # exact-kernel integral reduces to the current value once
    w_final = (
        w[:, -1]
        + zmm[:, -1]
        + x0 * (t1 - grid[-1]) / (t1 - t0)
        + bundle.x1 - bundle.i_paths[:, -1]
    )
    bundle.w_paths = w
    bundle.w_final = w_final
    return w


def martingale_diagnostics(bundle: PathBundle, lag_fractions=(0.1, 0.3, 0.5, 0.7, 0.9)) -> MartingaleDiagnostics:
    """Increment statistics ``E[(M_t - M_s) h(M_s)]`` for ``h in {1, id}`` plus pinning checks."""
    grid = bundle.grid
    n = len(grid)
    idxs = sorted({min(int(f * (n - 1)), n - 1) for f in lag_fractions})
    stats = []
    for a in range(len(idxs) - 1):
        s_i, t_i = idxs[a], idxs[a + 1]
        inc = bundle.m_paths[:, t_i] - bundle.m_paths[:, s_i]
        base = bundle.m_paths[:, s_i]
        for name, h in (("1", np.ones_like(base)), ("id", base)):
            vals = inc * h
            stats.append(
                LagStatistic(
                    s=float(grid[s_i]),
                    t=float(grid[t_i]),
                    h=name,
                    estimate=float(vals.mean()),
                    std_error=float(vals.std(ddof=1) / math.sqrt(bundle.n_paths)),
                )
            )
    pin_start = float(np.mean(np.abs(bundle.m_paths[:, 0] - bundle.x0)))
    pin_end = float(np.mean(np.abs(bundle.m_paths[:, -1] - bundle.x1)))
    level = bundle.m_paths.mean(axis=0)
    drift = float(np.abs(level - level[0]).max())
    return MartingaleDiagnostics(stats, pin_start, pin_end, drift)
