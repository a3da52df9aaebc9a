import numpy as np
import pytest

from clusterens import EmbeddingMatrix, Labeling, SynthSpec, gen_synthetic


@pytest.fixture(scope="session")
def blobs_small():
    """Well-separated blobs small enough for exact/brute-force checks."""
    return gen_synthetic(SynthSpec(n=120, d=16, k=4, separation=20.0, seed=11))


@pytest.fixture(scope="session")
def blobs_medium():
    return gen_synthetic(SynthSpec(n=400, d=32, k=5, separation=20.0, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_labeling(rng, n, k):
    labels = rng.integers(1, k + 1, size=n)
    return Labeling(labels)


def random_features(rng, n, d):
    return EmbeddingMatrix(rng.normal(size=(n, d)))
