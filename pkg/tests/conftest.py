import importlib.resources

import numpy as np
import pytest

from histvae.chemgraph import qm9_vocabulary
from histvae.smiles import load_dataset


def toy_corpus_path() -> str:
    return str(importlib.resources.files("histvae").joinpath("data/toy_qm9_500.smi"))


@pytest.fixture(scope="session")
def vocab():
    return qm9_vocabulary()


@pytest.fixture(scope="session")
def toy_corpus(vocab):
    loaded = load_dataset(toy_corpus_path(), vocab)
    assert not loaded.failures
    assert len(loaded.records) == 500
    return loaded.graphs


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
