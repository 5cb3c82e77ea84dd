"""Shared fixtures: a small direct-problem model and one simulated draw."""

import numpy as np
import pytest

from seqcred import DdmParams, generate_signal, make_model, simulate


@pytest.fixture(scope="session")
def small_model():
    return make_model(epsilon=0.1, p=0.0, n_trunc=256)


@pytest.fixture(scope="session")
def sobolev_signal():
    return generate_signal("sobolev-boundary", {"beta": 1.0, "Q": 1.0}, n_trunc=256)


@pytest.fixture(scope="session")
def small_data(small_model, sobolev_signal):
    return simulate(small_model, sobolev_signal, seed=12345)


@pytest.fixture(scope="session")
def params():
    return DdmParams(K=2.0, alpha=0.04)


def rng_datasets(n_sets, n, scale=1.0, entropy=909090):
    """Deterministic batch of raw data arrays for oracle comparisons."""
    ss = np.random.SeedSequence(entropy)
    rngs = [np.random.default_rng(c) for c in ss.spawn(n_sets)]
    return [scale * r.standard_normal(n) for r in rngs]
