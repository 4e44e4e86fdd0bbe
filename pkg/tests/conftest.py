import numpy as np
import pytest

from obsent import DensityMatrix, HermitianOperator, ModelSpec, build, run_open
from obsent.graining import CoarseGraining


def random_hermitian(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return HermitianOperator((a + a.conj().T) / 2)


def random_unitary(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(a)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_density(rng, d, rank=None, dims=None):
    r = rank or d
    g = rng.normal(size=(d, r)) + 1j * rng.normal(size=(d, r))
    m = g @ g.conj().T
    return DensityMatrix(m / np.trace(m).real, dims)


def random_partition(rng, d, n_blocks=None):
    """Random block sizes summing to d."""
    if n_blocks is None:
        n_blocks = int(rng.integers(1, d + 1))
    cuts = np.sort(rng.choice(np.arange(1, d), size=n_blocks - 1,
                              replace=False)) if n_blocks > 1 else np.array([], int)
    edges = np.concatenate([[0], cuts, [d]])
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def random_graining(rng, d, n_blocks=None):
    basis = random_unitary(rng, d)
    slices = random_partition(rng, d, n_blocks)
    return CoarseGraining(basis, slices, list(range(len(slices))))


@pytest.fixture(scope="session")
def reference_model():
    spec = ModelSpec(kind="spin_star", bath_sites=(8,), coupling=(0.15,),
                     bath_ring=0.2, eps0=1.0, tunnel=0.4,
                     drive_kind="ramp", drive_amplitude=0.15, seed=7)
    return build(spec, 8.0, 200)


@pytest.fixture(scope="session")
def reference_ledger(reference_model):
    """The reference open run: qubit + 8-spin bath, dim 512, 200 grid steps."""
    model = reference_model
    return run_open(model, model.protocol, (8.0, 200), 0.8, 1.0)


@pytest.fixture(scope="session")
def coarse_ledger():
    """Same drive on a coarser grid (half the steps) for scaling checks."""
    spec = ModelSpec(kind="spin_star", bath_sites=(8,), coupling=(0.15,),
                     bath_ring=0.2, eps0=1.0, tunnel=0.4,
                     drive_kind="ramp", drive_amplitude=0.15, seed=7)
    model = build(spec, 8.0, 100)
    return run_open(model, model.protocol, (8.0, 100), 0.8, 1.0)
