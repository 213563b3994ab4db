import numpy as np
import pytest

from ibmot import (
    Coupling,
    MartingaleProjector,
    QuadratureSpec,
    brownian_rap,
    independent_coupling,
    make_measure,
)


def random_ordered_pair(rng, l, m, spread=2.0):
    """Random convexly ordered pair with an interior feasible witness.

    Draws a column measure and a random coupling with its column sums,
    then defines the row atoms as the coupling's conditional means; the
    witness matrix is feasible by construction.
    """
    while True:
        y = np.sort(rng.normal(scale=spread, size=m))
        if m == 1 or np.min(np.diff(y)) > 1e-2:
            break
    wnu = rng.uniform(0.2, 1.0, size=m)
    wnu = wnu / wnu.sum()
    witness = rng.uniform(0.05, 1.0, size=(l, m))
    witness = witness / witness.sum(axis=0, keepdims=True) * wnu[None, :]
    wmu = witness.sum(axis=1)
    x = (witness @ y) / wmu
    order = np.argsort(x)
    x, wmu, witness = x[order], wmu[order], witness[order]
    if l > 1 and np.min(np.diff(x)) < 1e-6:
        return random_ordered_pair(rng, l, m, spread)
    mu = make_measure(x, wmu)
    nu = make_measure(y, wnu)
    if len(mu) != l or len(nu) != m:  # atom merging collapsed something
        return random_ordered_pair(rng, l, m, spread)
    return mu, nu, witness


def random_feasible_coupling(rng, mu, nu, projector=None):
    """Random point of the martingale polytope (witness-free route)."""
    if projector is None:
        projector = MartingaleProjector(mu, nu)
    anchor = projector.project(independent_coupling(mu, nu))
    basis = projector.nullspace_basis()
    if basis.shape[0] == 0:
        return anchor
    coeffs = rng.standard_normal(basis.shape[0]) * 0.2
    return projector.project(anchor + np.tensordot(coeffs, basis, axes=1))


@pytest.fixture(scope="session")
def rap():
    return brownian_rap()


@pytest.fixture(scope="session")
def quad(rap):
    return QuadratureSpec.build(rap)


@pytest.fixture(scope="session")
def quad_fast(rap):
    return QuadratureSpec.build(rap, n_hermite=64, n_time=48)


def _forced_2x2():
    mu = make_measure([-1.0, 1.0])
    nu = make_measure([-2.0, 2.0])
    p = np.array([[0.375, 0.125], [0.125, 0.375]])
    return mu, nu, Coupling(p, mu.atoms, nu.atoms)


@pytest.fixture(scope="session")
def forced_2x2():
    return _forced_2x2()


def ci_instance_set():
    """Fixed small instances used across the consistency criteria."""
    out = []
    mu, nu, c = _forced_2x2()
    out.append(("forced_2x2", mu, nu, c))

    mu = make_measure([0.0])
    nu = make_measure([-1.0, 1.0])
    c = Coupling(np.array([[0.5, 0.5]]), mu.atoms, nu.atoms)
    out.append(("single_row", mu, nu, c))

    mu = make_measure([-1.0, 1.0])
    nu = make_measure([-2.0, 0.0, 2.0])
    proj = MartingaleProjector(mu, nu)
    p = proj.project(independent_coupling(mu, nu))
    out.append(("sym_2x3", mu, nu, Coupling(p, mu.atoms, nu.atoms)))

    mu = make_measure([-1.0, 1.0])
    nu = make_measure([-3.0, -1.0, 1.0, 3.0])
    proj = MartingaleProjector(mu, nu)
    p = proj.project(independent_coupling(mu, nu))
    out.append(("sym_2x4", mu, nu, Coupling(p, mu.atoms, nu.atoms)))

    rng = np.random.default_rng(20240505)
    mu, nu, witness = random_ordered_pair(rng, 3, 4)
    out.append(("random_3x4", mu, nu, Coupling(witness, mu.atoms, nu.atoms)))
    return out


@pytest.fixture(scope="session")
def ci_instances():
    return ci_instance_set()
