"""Empirical probability measures on the real line.

Measures are finite lists of strictly increasing atoms with positive
weights summing to one.  This module provides construction and
canonicalization, quantile functions, moments, the exact Wasserstein-1
distance, the convex-order criterion based on the cumulative quantile
gap, and file ingestion (JSON and CSV).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

#: relative tolerance below which two atoms are merged into one
ATOM_MERGE_RTOL = 1e-12
#: tolerance on |sum(weights) - 1| after canonicalization
WEIGHT_SUM_TOL = 1e-12
#: default absolute tolerance for the convex-order criterion
DEFAULT_ORDER_TOL = 1e-9

# breakpoints of the merged quantile grid closer than this are collapsed
_BREAK_COLLAPSE_TOL = 1e-14


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Canonical empirical measure: sorted atoms, positive weights, total mass one."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return len(self.atoms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmpiricalMeasure):
            return NotImplemented
        return np.array_equal(self.atoms, other.atoms) and np.array_equal(
            self.weights, other.weights
        )


@dataclass(frozen=True)
class QuantileFunction:
    """Left-continuous step function on (0, 1]: value ``values[k]`` on ``(breakpoints[k-1], breakpoints[k]]``."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        idx = np.searchsorted(self.breakpoints, u, side="left")
        idx = np.minimum(idx, len(self.values) - 1)
        return self.values[idx]


@dataclass(frozen=True)
class ConvexOrderReport:
    """Outcome of the cumulative quantile-gap criterion for a measure pair."""

    ordered: bool
    mean_gap: float
    min_Q: float
    argmin_Q: np.ndarray
    Q_at_1: float


def make_measure(atoms, weights=None) -> EmpiricalMeasure:
    """Build a canonical empirical measure.

    Atoms are sorted, near-duplicates (closer than ``1e-12 * (1 + |x|)``)
    are merged by weight addition, and weights are renormalized to sum
    to one.  ``weights=None`` yields the uniform measure.

    Raises
    ------
    ValueError
        on empty input, non-finite entries, negative weights, or a
        weight vector with zero total mass.
    """
    atoms = np.atleast_1d(np.asarray(atoms, dtype=float))
    if atoms.size == 0:
        raise ValueError("measure needs at least one atom")
    if weights is None:
        weights = np.full(atoms.shape, 1.0 / atoms.size)
    weights = np.atleast_1d(np.asarray(weights, dtype=float))
    if weights.shape != atoms.shape:
        raise ValueError(f"atoms and weights length mismatch: {atoms.shape} vs {weights.shape}")
    if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(weights))):
        raise ValueError("atoms and weights must be finite")
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    total = weights.sum()
    if total <= 0:
        raise ValueError("weights must have positive total mass")

    order = np.argsort(atoms, kind="stable")
    atoms, weights = atoms[order], weights[order]

    merged_atoms = [atoms[0]]
    merged_weights = [weights[0]]
    for a, w in zip(atoms[1:], weights[1:]):
        if a - merged_atoms[-1] <= ATOM_MERGE_RTOL * (1.0 + abs(a)):
            merged_weights[-1] += w
        else:
            merged_atoms.append(a)
            merged_weights.append(w)
    atoms = np.array(merged_atoms)
    weights = np.array(merged_weights)

    keep = weights > 0
    if not keep.any():
        raise ValueError("all weights are zero after merging")
    atoms, weights = atoms[keep], weights[keep]
    weights = weights / weights.sum()
    return EmpiricalMeasure(atoms, weights)


def from_samples(values) -> EmpiricalMeasure:
    """Uniform empirical measure of a sample vector (duplicates merged)."""
    return make_measure(values)


def quantile(m: EmpiricalMeasure, u: float) -> float:
    """Generalized inverse CDF, left-continuous: smallest atom whose CDF reaches ``u``."""
    if not 0.0 < u <= 1.0:
        raise ValueError(f"quantile level must lie in (0, 1], got {u}")
    cdf = np.cumsum(m.weights)
    cdf[-1] = 1.0
    idx = int(np.searchsorted(cdf, u, side="left"))
    return float(m.atoms[min(idx, len(m) - 1)])


def quantile_function(m: EmpiricalMeasure) -> QuantileFunction:
    """The measure's quantile function as an explicit step function."""
    breaks = np.cumsum(m.weights)
    breaks[-1] = 1.0
    return QuantileFunction(breaks, m.atoms.copy())


def mean(m: EmpiricalMeasure) -> float:
    return float(np.dot(m.weights, m.atoms))


def second_moment(m: EmpiricalMeasure) -> float:
    return float(np.dot(m.weights, m.atoms * m.atoms))


def _merged_grid(a: EmpiricalMeasure, b: EmpiricalMeasure):
    """Common refinement of the two quantile-step grids.

    Returns ``(breaks, qa, qb)`` where ``breaks`` is increasing and ends
    at 1, and ``qa[k]``, ``qb[k]`` are the quantile values of ``a`` and
    ``b`` on ``(breaks[k-1], breaks[k]]``.
    """
    ca = np.cumsum(a.weights)
    ca[-1] = 1.0
    cb = np.cumsum(b.weights)
    cb[-1] = 1.0
    breaks = np.union1d(ca, cb)
    # collapse breakpoints produced by cumsum rounding noise
    if len(breaks) > 1:
        keep = np.empty(len(breaks), dtype=bool)
        keep[:-1] = np.diff(breaks) > _BREAK_COLLAPSE_TOL
        keep[-1] = True
        breaks = breaks[keep]
    ia = np.minimum(np.searchsorted(ca, breaks, side="left"), len(a) - 1)
    ib = np.minimum(np.searchsorted(cb, breaks, side="left"), len(b) - 1)
    return breaks, a.atoms[ia], b.atoms[ib]


def w1_distance(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Wasserstein-1 distance, computed exactly on the merged quantile grid."""
    breaks, qa, qb = _merged_grid(a, b)
    lengths = np.diff(np.concatenate(([0.0], breaks)))
    return float(np.dot(lengths, np.abs(qa - qb)))


def convex_order_check(
    mu: EmpiricalMeasure, nu: EmpiricalMeasure, tol: float = DEFAULT_ORDER_TOL
) -> ConvexOrderReport:
    """Test ``mu <=cx nu`` via the cumulative quantile gap.

    The gap ``Q(t) = int_0^t (Q_mu - Q_nu)`` is piecewise linear on the
    merged grid; the order holds iff ``Q >= 0`` on [0, 1] and
    ``Q(1) = 0`` (both up to ``tol``).  The minimum of a piecewise
    linear function is attained at a breakpoint, so evaluating at the
    grid is exact.
    """
    breaks, qmu, qnu = _merged_grid(mu, nu)
    lengths = np.diff(np.concatenate(([0.0], breaks)))
    q_vals = np.concatenate(([0.0], np.cumsum(lengths * (qmu - qnu))))
    grid = np.concatenate(([0.0], breaks))
    min_q = float(q_vals.min())
    q_at_1 = float(q_vals[-1])
    argmin = grid[q_vals <= min_q + max(tol, 1e-300)]
    ordered = (min_q >= -tol) and (abs(q_at_1) <= tol)
    return ConvexOrderReport(
        ordered=ordered,
        mean_gap=mean(mu) - mean(nu),
        min_Q=min_q,
        argmin_Q=argmin,
        Q_at_1=q_at_1,
    )


def quantile_midpoints(m: EmpiricalMeasure, n: int) -> EmpiricalMeasure:
    """Reduce a measure to ``n`` quantile midpoints ``u_k = (k - 1/2)/n`` with uniform weights."""
    if n < 1:
        raise ValueError("need at least one midpoint")
    levels = (np.arange(n) + 0.5) / n
    qf = quantile_function(m)
    return make_measure(qf(levels))


def read_measure(path) -> EmpiricalMeasure:
    """Load a measure from ``.json`` ({"atoms": [...], "weights": [...]})
    or ``.csv`` (column ``value``, optional ``weight``)."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        with open(path) as fh:
            payload = json.load(fh)
        if "atoms" not in payload:
            raise ValueError(f"{path}: measure JSON needs an 'atoms' field")
        return make_measure(payload["atoms"], payload.get("weights"))
    if path.suffix.lower() == ".csv":
        values, weights = [], []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "value" not in reader.fieldnames:
                raise ValueError(f"{path}: sample CSV needs a 'value' column")
            has_weight = "weight" in reader.fieldnames
            for row in reader:
                values.append(float(row["value"]))
                if has_weight:
                    weights.append(float(row["weight"]))
        return make_measure(values, weights if weights else None)
    raise ValueError(f"unsupported measure format: {path}")


def write_measure(m: EmpiricalMeasure, path) -> None:
    """Write a measure as JSON."""
    path = Path(path)
    with open(path, "w") as fh:
        json.dump({"atoms": m.atoms.tolist(), "weights": m.weights.tolist()}, fh, indent=2)
        fh.write("\n")
