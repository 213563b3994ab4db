"""Quadrature evaluation of the transport objective and its gradient.

The objective of a coupling is the time integral, against the weight
kernel, of the expected squared estimation error of the interpolating
martingale:

    K(P) = int_t w(t) sum_{i,q} p[i,q] int phi(z) (y_q - M(xi))^2 dz dt,

where ``xi = g0 x_i + g1 y_q + sqrt(v) z`` and ``M`` is the posterior
mean of the target given ``(x_i, xi)``.  The noise integral is
standardized (``a = sqrt(v(t)) z``) so a single Gauss-Hermite node set
serves every time; the time integral uses Gauss-Legendre nodes, which
are strictly interior and therefore never touch the kernel's pole at
``t1``.

The gradient entry ``(u, h)`` is ``int_t w(t) int phi(z)
(y_h - M)^2 dz dt``: differentiating the error under the integral sign
leaves only this term because the posterior-mean residual is orthogonal
to every function of the observation.  Consequently the objective is
1-homogeneous in the coupling entries and ``K(P) = <grad K(P), P>``
exactly on shared nodes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_hermitenorm, roots_legendre

from .coupling import Coupling
from .fam import RapConfig
from .measures import EmpiricalMeasure, second_moment

#: Gauss-Hermite nodes for the standardized noise integral
DEFAULT_N_HERMITE = 512
#: Gauss-Legendre nodes for the open time integral
DEFAULT_N_TIME = 48


@dataclass(frozen=True)
class QuadratureSpec:
    """Precomputed node/weight sets for one interval configuration.

    ``z_weights`` are normalized against the standard normal density, so
    ``sum(w_k f(z_k))`` approximates ``E[f(Z)]``; ``t_weights`` include
    the interval scaling.  Kernel and signal values at the time nodes
    are cached to keep the evaluation loop free of callable overhead.
    """

    n_hermite: int
    n_time: int
    z_nodes: np.ndarray
    z_weights: np.ndarray
    t_nodes: np.ndarray
    t_weights: np.ndarray
    kappa_nodes: np.ndarray  # g1(t) / sqrt(v(t)) per time node
    w_nodes: np.ndarray      # weight kernel per time node

    @classmethod
    def build(
        cls,
        rap: RapConfig,
        n_hermite: int = DEFAULT_N_HERMITE,
        n_time: int = DEFAULT_N_TIME,
    ) -> "QuadratureSpec":
        if n_hermite < 2 or n_time < 2:
            raise ValueError("need at least two nodes per direction")
        z, wz = roots_hermitenorm(n_hermite)
        wz = wz / np.sqrt(2.0 * np.pi)
        u, wu = roots_legendre(n_time)
        half = 0.5 * (rap.t1 - rap.t0)
        t = rap.t0 + half * (u + 1.0)
        wt = half * wu
        v = np.asarray(rap.v(t), dtype=float)
        if np.any(v <= 0):
            raise ValueError("noise variance must be positive at interior time nodes")
        kappa = np.asarray(rap.g1(t), dtype=float) / np.sqrt(v)
        w = np.asarray(rap.w(t), dtype=float)
        if not np.all(np.isfinite(w)):
            raise ValueError("weight kernel must be finite at interior time nodes")
        return cls(n_hermite, n_time, z, wz, t, wt, kappa, w)


class Evaluator:
    """Objective/gradient/variance evaluation for one (rap, quad, support) triple.

    The per-node posterior tensor ``exp(-(z_k + kappa (y_q - y_j))^2/2)``
    is independent of the coupling, so it is built once per time node
    (optionally cached across calls) and every evaluation reduces to
    BLAS matrix products against the coupling rows.
    """

    def __init__(self, rap: RapConfig, quad: QuadratureSpec, col_support, cache: bool = True):
        self.rap = rap
        self.quad = quad
        self.y = np.asarray(col_support, dtype=float)
        self._cache_blocks = cache
        self._blocks = [None] * quad.n_time if cache else None
        self._y_rep = np.repeat(self.y, quad.n_hermite)
        self._y2 = self.y * self.y

    # -- per-time-node machinery -------------------------------------------

    def _block(self, ti: int) -> np.ndarray:
        """Shifted-exponent tensor at time node ``ti``, shape ``(m * K, m)``."""
        if self._blocks is not None and self._blocks[ti] is not None:
            return self._blocks[ti]
        z = self.quad.z_nodes
        kappa = self.quad.kappa_nodes[ti]
        shift = kappa * (self.y[:, None] - self.y[None, :])       # (q, j)
        zz = z[None, :, None] + shift[:, None, :]                 # (q, K, j)
        expo = -0.5 * zz * zz
        expo -= expo.max(axis=2, keepdims=True)
        block = np.exp(expo).reshape(-1, len(self.y))
        if self._blocks is not None:
            self._blocks[ti] = block
        return block

    def _fix_collapsed(self, ti, logp, bad, M, M2=None):
        """Replace 0/0 posteriors by the dominant supported atom.

        A denominator underflows only when every supported atom sits
        hundreds of noise standard deviations from the information
        value; the posterior is then a point mass on the atom with the
        largest log weight.
        """
        K = self.quad.n_hermite
        rows, cols = np.nonzero(bad)
        qb, kb = cols // K, cols % K
        kappa = self.quad.kappa_nodes[ti]
        dev = self.quad.z_nodes[kb, None] + kappa * (self.y[qb, None] - self.y[None, :])
        cand = logp[rows] - 0.5 * dev * dev
        jstar = np.argmax(cand, axis=1)
        M[bad] = self.y[jstar]
        if M2 is not None:
            M2[bad] = self._y2[jstar]

    def _node_stats(self, ti: int, p, py, logp, want_var: bool):
        """Per-(row, anchor) noise integrals at one time node.

        Returns ``(A, V)`` with ``A[i, q] = E_z[(y_q - M)^2]`` and, when
        requested, ``V[i, q] = E_z[Var]``.
        """
        K = self.quad.n_hermite
        m = len(self.y)
        block = self._block(ti)
        den = p @ block.T                                        # (l, m K)
        num = py @ block.T
        with np.errstate(invalid="ignore", divide="ignore"):
            M = num / den
        bad = den == 0.0
        M2 = None
        if want_var:
            num2 = (p * self._y2[None, :]) @ block.T
            with np.errstate(invalid="ignore", divide="ignore"):
                M2 = num2 / den
        if bad.any():
            self._fix_collapsed(ti, logp, bad, M, M2)
        err2 = self._y_rep[None, :] - M
        err2 *= err2
        A = err2.reshape(-1, m, K) @ self.quad.z_weights
        V = None
        if want_var:
            var = M2 - M * M
            np.maximum(var, 0.0, out=var)
            V = var.reshape(-1, m, K) @ self.quad.z_weights
        return A, V

    # -- evaluation entry points --------------------------------------------

    @staticmethod
    def _prep(p: np.ndarray):
        p = np.asarray(p, dtype=float)
        if p.ndim != 2:
            raise ValueError("coupling matrix must be 2-D")
        if np.any(p.sum(axis=1) <= 0):
            raise ValueError("every row needs positive mass")
        with np.errstate(divide="ignore"):
            logp = np.where(p > 0, np.log(np.maximum(p, 1e-300)), -np.inf)
        return p, logp

    def gradient(self, p: np.ndarray) -> np.ndarray:
        """Accumulated ``int w(t) E_z[(y_h - M)^2] dt`` per entry ``(u, h)``."""
        p, logp = self._prep(p)
        py = p * self.y[None, :]
        grad = np.zeros_like(p)
        for ti in range(self.quad.n_time):
            A, _ = self._node_stats(ti, p, py, logp, want_var=False)
            grad += (self.quad.t_weights[ti] * self.quad.w_nodes[ti]) * A
        return grad

    def value_and_gradient(self, p: np.ndarray):
        grad = self.gradient(p)
        return float((np.asarray(p, dtype=float) * grad).sum()), grad

    def value(self, p: np.ndarray) -> float:
        return self.value_and_gradient(p)[0]

    def variance_value(self, p: np.ndarray) -> float:
        """Same time integral with the inner integrand ``E_z[Var]`` instead of the squared error."""
        p, logp = self._prep(p)
        py = p * self.y[None, :]
        acc = np.zeros_like(p)
        for ti in range(self.quad.n_time):
            _, V = self._node_stats(ti, p, py, logp, want_var=True)
            acc += (self.quad.t_weights[ti] * self.quad.w_nodes[ti]) * V
        return float((p * acc).sum())

    def values(self, ps: np.ndarray) -> np.ndarray:
        """Objective for a batch of couplings, shape ``(B, l, m) -> (B,)``."""
        ps = np.asarray(ps, dtype=float)
        if ps.ndim != 3:
            raise ValueError("batch must have shape (B, l, m)")
        B, l, m = ps.shape
        flat = ps.reshape(B * l, m)
        _, logp = self._prep(flat)
        py = flat * self.y[None, :]
        acc = np.zeros_like(flat)
        for ti in range(self.quad.n_time):
            A, _ = self._node_stats(ti, flat, py, logp, want_var=False)
            acc += (self.quad.t_weights[ti] * self.quad.w_nodes[ti]) * A
        return (flat * acc).sum(axis=1).reshape(B, l).sum(axis=1)

    def inner_error_at(self, p: np.ndarray, t: float) -> float:
        """Inner expected squared error ``S(p, t)`` at an arbitrary interior time."""
        rap = self.rap
        if not rap.t0 < t < rap.t1:
            raise ValueError(f"t={t} must lie strictly inside ({rap.t0}, {rap.t1})")
        v = float(rap.v(t))
        if v <= 0:
            raise ValueError(f"degenerate noise variance v({t}) = {v}")
        single = QuadratureSpec(
            n_hermite=self.quad.n_hermite,
            n_time=1,
            z_nodes=self.quad.z_nodes,
            z_weights=self.quad.z_weights,
            t_nodes=np.array([t]),
            t_weights=np.array([1.0]),
            kappa_nodes=np.array([float(rap.g1(t)) / np.sqrt(v)]),
            w_nodes=np.array([1.0]),
        )
        ev = Evaluator(rap, single, self.y, cache=False)
        p, logp = ev._prep(p)
        A, _ = ev._node_stats(0, p, p * ev.y[None, :], logp, want_var=False)
        return float((p * A).sum())


def _evaluator(P: Coupling, rap: RapConfig, quad) -> Evaluator:
    if quad is None:
        quad = QuadratureSpec.build(rap)
    return Evaluator(rap, quad, P.col_support, cache=False)


def inner_error(P: Coupling, rap: RapConfig, t: float, quad: QuadratureSpec | None = None) -> float:
    """Expected squared estimation error at a single interior time."""
    return _evaluator(P, rap, quad).inner_error_at(P.p, t)


def k_objective(P: Coupling, rap: RapConfig, quad: QuadratureSpec | None = None) -> float:
    """Objective value of a coupling (time integral of the weighted inner error)."""
    return _evaluator(P, rap, quad).value(P.p)


def k_variance_form(P: Coupling, rap: RapConfig, quad: QuadratureSpec | None = None) -> float:
    """Objective computed through the conditional-variance form.

    Evaluates ``int w(t) E[Var[X1 | X0, I_t]] dt`` on the same node
    sets as :func:`k_objective`; by the tower property the two values
    agree up to inner-quadrature error.
    """
    return _evaluator(P, rap, quad).variance_value(P.p)


def k_gradient(P: Coupling, rap: RapConfig, quad: QuadratureSpec | None = None) -> np.ndarray:
    """Gradient of the objective in the coupling entries."""
    return _evaluator(P, rap, quad).gradient(P.p)


def k_value_and_gradient(P: Coupling, rap: RapConfig, quad: QuadratureSpec | None = None):
    """Objective and gradient in one pass (they share all node work)."""
    return _evaluator(P, rap, quad).value_and_gradient(P.p)


def k_upper_bound(mu: EmpiricalMeasure, nu: EmpiricalMeasure, rap: RapConfig) -> float:
    """Cauchy-Schwarz bound ``sqrt((t1 - t0)(m2(nu) - m2(mu)))`` valid for every feasible coupling."""
    gap = max(second_moment(nu) - second_moment(mu), 0.0)
    return float(np.sqrt((rap.t1 - rap.t0) * gap))
