import os
from typing import Any, Dict, List, Literal, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, model_validator

from src.utils.errors import ConfigError

DEFAULT_CONFIG_PATH = "config/config.yaml"


class SystemConfig(BaseModel):
    random_seed: int = 42
    num_threads: int = Field(1, ge=1)
    log_level: str = "INFO"


class PathsConfig(BaseModel):
    data: str = "data/"
    artifacts: str = "data/artifacts/"
    reports: str = "reports/"
    logs: str = "logs/"
    # Optional inputs; when unset the run synthesizes its data.
    corpus: Optional[str] = None
    queries: Optional[str] = None
    query_embeddings: Optional[str] = None


class IndexConfig(BaseModel):
    """Semantic tree construction."""
    k: int = Field(30, ge=2)
    c: int = Field(30, ge=1)
    m: int = Field(2, ge=0)
    seed: int = Field(42, ge=0)
    # When set, build a single-level tree of this many clusters instead.
    flat_clusters: Optional[int] = Field(None, ge=1)


class CorpusConfig(BaseModel):
    max_query_len: int = Field(64, ge=1)
    queries: Literal["original", "expansion", "all"] = "all"


class ModelSection(BaseModel):
    hidden: int = Field(64, ge=1)
    layers: int = Field(2, ge=1)
    heads: int = Field(4, ge=1)
    ffn_dim: int = Field(128, ge=1)
    dropout: float = Field(0.1, ge=0.0, lt=1.0)
    adaptor_hidden: int = Field(32, ge=1)
    share_positions: bool = False


class TrainSection(BaseModel):
    lr_encoder: float = Field(2e-4, gt=0)
    lr_decoder: float = Field(1e-4, gt=0)
    batch_size: int = Field(16, ge=1)
    epochs: int = Field(200, ge=0)
    seed: int = 42


class DecodeConfig(BaseModel):
    top_k: int = Field(11, ge=1)
    # None means 2 x top_k.
    beam_width: Optional[int] = Field(None, ge=1)

    def resolved_beam_width(self, top_k: Optional[int] = None) -> int:
        k = self.top_k if top_k is None else top_k
        if k < 1:
            raise ConfigError(f"top_k must be >= 1, got {k}")
        return 2 * k if self.beam_width is None else max(self.beam_width, k)


class SynthConfig(BaseModel):
    clusters: int = Field(16, ge=1)
    items_per_cluster: int = Field(40, ge=1)
    queries_per_item: int = Field(11, ge=1)
    heldout_per_item: int = Field(1, ge=0)
    dim: int = Field(32, ge=1)
    n_frames: int = Field(0, ge=0)
    seed: int = 7

    @model_validator(mode="after")
    def _heldout_leaves_training(self) -> "SynthConfig":
        if self.heldout_per_item >= self.queries_per_item:
            raise ValueError("heldout_per_item must leave at least one training query per item")
        return self


class EvalConfig(BaseModel):
    ks: List[int] = [1, 5, 10]
    max_queries: Optional[int] = Field(None, ge=1)
    sweep: bool = False
    sweep_ms: List[int] = [0, 1, 2]
    sweep_top_k: int = Field(15, ge=1)
    sweep_epochs: Optional[int] = Field(None, ge=0)


class BenchConfig(BaseModel):
    sizes: List[int] = [1000, 3000, 5000, 10000]
    n_queries: int = Field(100, ge=1)
    warmup: int = Field(10, ge=0)
    top_k: int = Field(3, ge=1)
    k: int = Field(32, ge=2)
    c: int = Field(32, ge=1)
    clusters: int = Field(32, ge=1)
    dim: int = Field(32, ge=1)
    epochs: int = Field(5, ge=0)
    reranker: Literal["cosine", "pairwise"] = "pairwise"


class AppConfig(BaseModel):
    system: SystemConfig = SystemConfig()
    paths: PathsConfig = PathsConfig()
    index: IndexConfig = IndexConfig()
    corpus: CorpusConfig = CorpusConfig()
    model: ModelSection = ModelSection()
    train: TrainSection = TrainSection()
    decode: DecodeConfig = DecodeConfig()
    synth: SynthConfig = SynthConfig()
    eval: EvalConfig = EvalConfig()
    bench: BenchConfig = BenchConfig()


def resolve_config_path(path: Optional[str] = None) -> str:
    """CLI flag first, then SEMINDEX_CONFIG (a .env file is honoured), then the default."""
    if path:
        return path
    load_dotenv()
    return os.getenv("SEMINDEX_CONFIG", DEFAULT_CONFIG_PATH)


def load_config(path: Optional[str] = None) -> AppConfig:
    """Loads config.yaml into a validated AppConfig."""
    config_path = resolve_config_path(path)
    try:
        with open(config_path, "r") as f:
            raw: Dict[str, Any] = yaml.safe_load(f) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {config_path}")
    except yaml.YAMLError as e:
        raise ConfigError(f"config file {config_path} is not valid YAML: {e}")
    return parse_config(raw)


def parse_config(raw: Dict[str, Any]) -> AppConfig:
    try:
        return AppConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}")
