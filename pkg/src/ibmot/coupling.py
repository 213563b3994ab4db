"""The martingale-coupling polytope for a pair of empirical measures.

A coupling is an ``l x m`` matrix of joint probabilities on the product
of the two supports.  Feasibility means: nonnegativity, both marginals,
and the martingale condition (each row's conditional mean equals its
own atom).  This module provides validation, the independent-coupling
start, Euclidean projection onto the polytope via Dykstra's alternating
projections with a prefactored affine step, an affine null-space basis
for oracles, and CSV/JSON persistence.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .measures import EmpiricalMeasure, convex_order_check

#: Dykstra stopping tolerance on the Frobenius change between sweeps
DEFAULT_PROJECTION_TOL = 1e-10
DEFAULT_PROJECTION_MAX_ITER = 50_000

_RANK_RTOL = 1e-12


class InfeasibleMarginalsError(ValueError):
    """The marginals are not in convex order, so the polytope may be empty."""


class ProjectionError(RuntimeError):
    """Dykstra failed to converge; carries the residual report."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class Coupling:
    """Joint probabilities ``p[i, j]`` on ``row_support x col_support``."""

    p: np.ndarray
    row_support: np.ndarray
    col_support: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "row_support", np.asarray(self.row_support, dtype=float))
        object.__setattr__(self, "col_support", np.asarray(self.col_support, dtype=float))
        if p.shape != (len(self.row_support), len(self.col_support)):
            raise ValueError(
                f"coupling shape {p.shape} does not match supports "
                f"({len(self.row_support)}, {len(self.col_support)})"
            )


@dataclass(frozen=True)
class CouplingResiduals:
    """Max absolute violation per constraint family."""

    negativity: float
    row_sums: float
    col_sums: float
    martingale: float

    @property
    def max_residual(self) -> float:
        return max(self.negativity, self.row_sums, self.col_sums, self.martingale)

    def within(self, tol: float) -> bool:
        return self.max_residual <= tol


@dataclass(frozen=True)
class PolytopeBasis:
    """Feasible anchor plus an orthonormal basis of the equality null space."""

    anchor: Coupling
    directions: np.ndarray  # shape (dim, l, m)

    @property
    def dim(self) -> int:
        return self.directions.shape[0]


def _as_matrix(P) -> np.ndarray:
    if isinstance(P, Coupling):
        return P.p
    return np.asarray(P, dtype=float)


def independent_coupling(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> np.ndarray:
    """Product coupling ``p[i, j] = w_mu[i] * w_nu[j]`` (generally not martingale)."""
    return np.outer(mu.weights, nu.weights)


def validate_coupling(P, mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> CouplingResiduals:
    """Constraint residuals of a candidate coupling matrix."""
    p = _as_matrix(P)
    if p.shape != (len(mu), len(nu)):
        raise ValueError(f"coupling shape {p.shape} does not match ({len(mu)}, {len(nu)})")
    neg = float(max(0.0, -p.min()))
    row = float(np.abs(p.sum(axis=1) - mu.weights).max())
    col = float(np.abs(p.sum(axis=0) - nu.weights).max())
    mart = float(np.abs(p @ nu.atoms - mu.weights * mu.atoms).max())
    return CouplingResiduals(neg, row, col, mart)


class MartingaleProjector:
    """Euclidean projector onto the martingale polytope of a fixed pair.

    The equality constraints (row sums, column sums, scaled row means)
    are stacked and factored once by SVD; each Dykstra sweep then costs
    one affine least-squares correction plus a clamp onto the
    nonnegative orthant.  Martingale rows are scaled by
    ``1 / (1 + |x_i| + max_j |y_j|)`` to keep the system well
    conditioned across disparate atom scales.
    """

    def __init__(self, mu: EmpiricalMeasure, nu: EmpiricalMeasure, require_order: bool = True):
        if require_order:
            report = convex_order_check(mu, nu)
            if not report.ordered:
                raise InfeasibleMarginalsError(
                    "marginals are not in convex order "
                    f"(min_Q={report.min_Q:.3e}, Q(1)={report.Q_at_1:.3e}); "
                    "repair them first"
                )
        self.mu = mu
        self.nu = nu
        l, m = len(mu), len(nu)
        self.shape = (l, m)

        x, y = mu.atoms, nu.atoms
        rows = np.zeros((2 * l + m, l * m))
        rhs = np.zeros(2 * l + m)
        for i in range(l):
            rows[i, i * m : (i + 1) * m] = 1.0
            rhs[i] = mu.weights[i]
        for j in range(m):
            rows[l + j, j::m] = 1.0
            rhs[l + j] = nu.weights[j]
        scale = 1.0 + np.abs(x) + np.abs(y).max()
        for i in range(l):
            rows[l + m + i, i * m : (i + 1) * m] = (y - x[i]) / scale[i]
            rhs[l + m + i] = 0.0

        self._A = rows
        self._b = rhs
        u, s, vt = np.linalg.svd(rows, full_matrices=True)
        rank = int((s > s[0] * _RANK_RTOL).sum())
        self._u = u[:, :rank]
        self._s = s[:rank]
        self._vt = vt[:rank]
        self._null = vt[rank:]

    @property
    def nullspace_dim(self) -> int:
        return self._null.shape[0]

    def nullspace_basis(self) -> np.ndarray:
        """Orthonormal null-space directions, shape ``(dim, l, m)``."""
        return self._null.reshape(-1, *self.shape)

    def affine_project(self, P) -> np.ndarray:
        """Least-squares projection onto the equality constraints only."""
        p = _as_matrix(P).ravel()
        resid = self._A @ p - self._b
        corr = self._vt.T @ ((self._u.T @ resid) / self._s)
        return (p - corr).reshape(self.shape)

    def _kkt_polish(self, start_flat: np.ndarray, zero_mask: np.ndarray):
        """Exact projection for a candidate active set, or None.

        Solves the equality-constrained projection with the masked
        entries pinned to zero and certifies optimality for the full
        polytope: primal feasibility of the free part and nonnegative
        multipliers on the pinned part.  When certification succeeds
        the returned point is the exact Euclidean projection.
        """
        free = ~zero_mask
        a_free = self._A[:, free]
        u, s, vt = np.linalg.svd(a_free, full_matrices=False)
        rank = int((s > s[0] * _RANK_RTOL).sum()) if s.size else 0
        u, s, vt = u[:, :rank], s[:rank], vt[:rank]
        p_free = start_flat[free]
        resid = a_free @ p_free - self._b
        x_free = p_free - vt.T @ ((u.T @ resid) / s)
        if np.abs(a_free @ x_free - self._b).max() > 1e-9:
            return None  # pins made the system inconsistent
        if x_free.size and x_free.min() < -1e-12:
            return None
        lam = u @ ((vt @ (p_free - x_free)) / s)
        if np.abs(a_free.T @ lam - (p_free - x_free)).max() > 1e-9:
            return None  # stationarity not met: not a constrained minimizer
        mult = self._A[:, zero_mask].T @ lam - start_flat[zero_mask]
        if mult.size and mult.min() < -1e-10:
            return None
        x = np.zeros_like(start_flat)
        x[free] = np.maximum(x_free, 0.0)
        return x

    def project(
        self,
        P,
        tol: float = DEFAULT_PROJECTION_TOL,
        max_iter: int = DEFAULT_PROJECTION_MAX_ITER,
    ) -> np.ndarray:
        """Dykstra projection onto equalities intersected with the orthant.

        The affine set needs no correction term; the clamp onto the
        orthant carries the usual Dykstra increment.  Once the sweep
        change drops below ``tol`` (and periodically, since Dykstra can
        crawl along degenerate faces) the clamp pattern is used as an
        active-set guess for an exact KKT-certified finish; failing
        certification, sweeps continue.
        """
        start = _as_matrix(P).astype(float, copy=True)
        p = start.copy()
        incr = np.zeros_like(p)
        for sweep in range(1, max_iter + 1):
            affine = self.affine_project(p)
            shifted = affine + incr
            clamped = np.maximum(shifted, 0.0)
            incr = shifted - clamped
            change = float(np.linalg.norm(clamped - p))
            p = clamped
            if change < tol or sweep % 500 == 0:
                polished = self._kkt_polish(start.ravel(), (shifted < 0.0).ravel())
                if polished is not None:
                    return polished.reshape(self.shape)
                if change < tol and validate_coupling(p, self.mu, self.nu).within(1e-9):
                    return p
        raise ProjectionError(
            f"Dykstra did not converge within {max_iter} sweeps "
            f"(last change {change:.3e})",
            residuals=validate_coupling(p, self.mu, self.nu),
        )

    def coupling(self, p: np.ndarray) -> Coupling:
        return Coupling(p, self.mu.atoms, self.nu.atoms)


def project_to_martingale(
    P,
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    tol: float = DEFAULT_PROJECTION_TOL,
    max_iter: int = DEFAULT_PROJECTION_MAX_ITER,
) -> Coupling:
    """Project a matrix onto the martingale polytope of ``(mu, nu)``."""
    projector = MartingaleProjector(mu, nu)
    return projector.coupling(projector.project(P, tol=tol, max_iter=max_iter))


def polytope_basis(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> PolytopeBasis:
    """Feasible anchor (projected independent coupling) plus null-space directions."""
    projector = MartingaleProjector(mu, nu)
    anchor = projector.project(independent_coupling(mu, nu))
    return PolytopeBasis(projector.coupling(anchor), projector.nullspace_basis())


def coupling_diameter_bound(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Upper bound on the Frobenius diameter of the polytope.

    Any coupling satisfies ``|p|_F^2 <= max entry <= min(max_i w_mu,
    max_j w_nu)``, and couplings have nonnegative inner product, so the
    diameter is at most ``sqrt(2 min(max w_mu, max w_nu))``.
    """
    return float(np.sqrt(2.0 * min(mu.weights.max(), nu.weights.max())))


def write_coupling_csv(c: Coupling, path) -> None:
    """Cell-per-row CSV with header ``i,j,x,y,p`` (0-based indices)."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "x", "y", "p"])
        for i, x in enumerate(c.row_support):
            for j, y in enumerate(c.col_support):
                writer.writerow([i, j, repr(float(x)), repr(float(y)), repr(float(c.p[i, j]))])


def read_coupling_csv(path) -> Coupling:
    path = Path(path)
    cells = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"i", "j", "x", "y", "p"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise ValueError(f"{path}: coupling CSV needs columns {sorted(needed)}")
        for row in reader:
            cells.append((int(row["i"]), int(row["j"]), float(row["x"]), float(row["y"]), float(row["p"])))
    if not cells:
        raise ValueError(f"{path}: empty coupling file")
    l = max(c[0] for c in cells) + 1
    m = max(c[1] for c in cells) + 1
    p = np.zeros((l, m))
    x = np.full(l, np.nan)
    y = np.full(m, np.nan)
    for i, j, xi, yj, pij in cells:
        p[i, j] = pij
        x[i] = xi
        y[j] = yj
    if np.isnan(x).any() or np.isnan(y).any():
        raise ValueError(f"{path}: coupling CSV does not cover the full grid")
    return Coupling(p, x, y)


def write_coupling_json(c: Coupling, path) -> None:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(
            {
                "row_support": c.row_support.tolist(),
                "col_support": c.col_support.tolist(),
                "p": c.p.tolist(),
            },
            fh,
            indent=2,
        )
        fh.write("\n")


def read_coupling_json(path) -> Coupling:
    with open(Path(path)) as fh:
        payload = json.load(fh)
    return Coupling(
        np.asarray(payload["p"], dtype=float),
        np.asarray(payload["row_support"], dtype=float),
        np.asarray(payload["col_support"], dtype=float),
    )
