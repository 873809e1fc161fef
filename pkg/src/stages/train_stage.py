import os

from src.corpus.queries import Vocab, build_training_pairs
from src.index.semtree import shape_hash
from src.model.checkpoint import CheckpointState, save_checkpoint
from src.model.trainer import TrainConfig, model_config_for, train
from src.orchestrator.graph_state import RunState
from src.utils.config import AppConfig
from src.utils.errors import SemIndexError
from src.utils.log import get_logger, stage_banner
from src.utils.seeding import set_seeds

logger = get_logger(__name__)


class TrainStage:
    def __init__(self, config: AppConfig):
        self.config = config

    def build_pairs_node(self, state: RunState) -> RunState:
        """Builds the vocabulary and binds training queries to truncated SemIds."""
        stage_banner(logger, "train stage (pairs)", state["log"])
        if state["error"]:
            return state
        try:
            vocab = Vocab.build(q.text for q in state["train_queries"])
            pair_set = build_training_pairs(
                state["tree"], state["train_queries"], vocab, self.config.index.m, self.config.corpus.max_query_len
            )
        except SemIndexError as e:
            logger.error("Train stage: %s", e)
            state["error"] = f"Train stage: {e}"
            state["log"].append(state["error"])
            return state
        state["vocab"] = vocab
        state["pairs"] = pair_set.pairs
        state["log"].append(f"Train stage: {len(pair_set.pairs)} pairs, {pair_set.skipped} skipped, "
                            f"vocab of {len(vocab)}.")
        return state

    def train_node(self, state: RunState) -> RunState:
        stage_banner(logger, "train stage (fit)", state["log"])
        if state["error"]:
            return state
        cfg = self.config
        set_seeds(cfg.train.seed, cfg.system.num_threads)
        try:
            model_config = model_config_for(
                state["tree"], cfg.index.m, len(state["vocab"]), cfg.corpus.max_query_len, **cfg.model.model_dump()
            )
            result = train(state["pairs"], model_config, TrainConfig(**cfg.train.model_dump()))
            ckpt = CheckpointState(
                model=result.model,
                vocab=state["vocab"],
                m=cfg.index.m,
                shape_hash=shape_hash(state["tree"]),
                seed=cfg.train.seed,
                history=result.history,
            )
            os.makedirs(cfg.paths.artifacts, exist_ok=True)
            save_checkpoint(ckpt, os.path.join(cfg.paths.artifacts, "model.npz"))
        except SemIndexError as e:
            logger.error("Train stage: %s", e)
            state["error"] = f"Train stage: {e}"
            state["log"].append(state["error"])
            return state
        state["checkpoint"] = ckpt
        final = f"{result.history[-1]:.4f}" if result.history else "n/a"
        state["log"].append(f"Train stage: {len(result.history)} epochs, final loss {final}.")
        return state
