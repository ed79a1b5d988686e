import numpy as np
import pytest

from tctcolbert.encoder import EmbeddingTable, Projection, Vocabulary


def make_table(rows, tokens=None):
    """Embedding table whose row i (after UNK at 0) is ``rows[i]``."""
    rows = np.asarray(rows, dtype=np.float32)
    tokens = tokens or [f"tok{i}" for i in range(len(rows))]
    vocab = Vocabulary(["[UNK]"] + list(tokens))
    table = np.vstack([np.full((1, rows.shape[1]), 0.5, dtype=np.float32), rows])
    return EmbeddingTable(vocab, table)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def identity2():
    return Projection(np.eye(2))
