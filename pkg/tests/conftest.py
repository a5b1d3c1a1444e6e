"""Shared fixture builders for the test suite."""

import numpy as np
import pytest

from metaembed.store import EmbeddingTable, SequenceTable


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_vector_table(rng, n, dim, prefix="w"):
    ids = [f"{prefix}{i}" for i in range(n)]
    return EmbeddingTable(ids, rng.normal(size=(n, dim)))


def make_sequence_table(rng, ids, dim, max_len=4):
    lengths = rng.integers(1, max_len + 1, size=len(ids))
    return SequenceTable(list(ids), [rng.normal(size=(s, dim)) for s in lengths])


def random_spd(rng, n, jitter=0.5):
    a = rng.normal(size=(n, n))
    return a @ a.T + (n + jitter) * np.eye(n)


def random_symmetric(rng, n):
    a = rng.normal(size=(n, n))
    return 0.5 * (a + a.T)
