import numpy as np
import pytest
import torch

from src.corpus.synth import synth_corpus
from src.model.pawa import ModelConfig, PawaModel
from src.store.embed_store import EmbeddingCorpus, ItemRecord, normalize


def unit_corpus(n: int, dim: int, seed: int = 0, prefix: str = "v") -> EmbeddingCorpus:
    rng = np.random.default_rng(seed)
    records = [ItemRecord(item_id=f"{prefix}{i:04d}", rep=normalize(rng.normal(size=dim))) for i in range(n)]
    return EmbeddingCorpus(dim=dim, records=tuple(records))


def random_model(config: ModelConfig, seed: int = 0, dtype=torch.float32) -> PawaModel:
    """Model with non-zero weight heads so predictions are far from uniform."""
    torch.manual_seed(seed)
    model = PawaModel(config, zero_weight_heads=False).to(dtype)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.5 * torch.randn_like(p))
    model.eval()
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_corpus():
    return unit_corpus(60, 8, seed=3)


@pytest.fixture(scope="session")
def clustered():
    # 4 well separated clusters of 10 items, 3 queries per item
    return synth_corpus(4, 10, 3, 16, seed=11)


@pytest.fixture
def micro_config():
    return ModelConfig(
        vocab_size=20, k=3, max_semid_len=3, hidden=8, layers=1, heads=2, ffn_dim=16,
        max_query_len=8, dropout=0.0, adaptor_hidden=4,
    )
