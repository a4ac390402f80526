import numpy as np
import pytest

from copymtl.data import Instance, Triplet, make_batch
from copymtl.encoder import Vocab
from copymtl.model import CopyMTL, ModelConfig

TOKENS = ["a", "b", "c", "d", "e"]
RELATIONS = ["r0", "r1"]


def tiny_instances():
    return [
        Instance(["a", "b", "c", "d"], [Triplet("r0", (0, 0), (2, 3)), Triplet("r1", (2, 3), (1, 1))]),
        Instance(["c", "a", "e"], [Triplet("r1", (0, 0), (2, 2))]),
        Instance(["e", "d", "a", "b", "c"], []),
    ]


def tiny_model(scorer="fused", use_mask=False, max_triplets=2, decoder_mode="one", seed=0,
               embedding_dim=8, hidden=12):
    vocab = Vocab(TOKENS)
    cfg = ModelConfig(len(vocab), len(RELATIONS), embedding_dim, hidden, scorer, use_mask, max_triplets,
                      decoder_mode)
    return CopyMTL(cfg, seed=seed), vocab


def tiny_batch(vocab, instances=None, max_triplets=2):
    return make_batch(instances or tiny_instances(), vocab, RELATIONS, max_triplets)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
