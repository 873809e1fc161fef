import os

from src.index.semtree import build_flat_tree, build_tree, save_tree, tree_stats
from src.orchestrator.graph_state import RunState
from src.utils.config import AppConfig
from src.utils.errors import SemIndexError
from src.utils.log import get_logger, stage_banner

logger = get_logger(__name__)


class IndexStage:
    def __init__(self, config: AppConfig):
        self.config = config

    def build_tree_node(self, state: RunState) -> RunState:
        """Clusters the corpus into the semantic tree (or the flat ablation) and saves it."""
        stage_banner(logger, "index stage (tree)", state["log"])
        if state["error"]:
            return state
        idx = self.config.index
        try:
            if idx.flat_clusters:
                tree = build_flat_tree(state["corpus"], idx.flat_clusters, seed=idx.seed)
            else:
                tree = build_tree(state["corpus"], idx.k, idx.c, seed=idx.seed)
            os.makedirs(self.config.paths.artifacts, exist_ok=True)
            save_tree(tree, os.path.join(self.config.paths.artifacts, "tree.json"))
        except SemIndexError as e:
            logger.error("Index stage: %s", e)
            state["error"] = f"Index stage: {e}"
            state["log"].append(state["error"])
            return state

        state["tree"] = tree
        state["tree_stats"] = tree_stats(tree)
        state["log"].append(f"Index stage: {state['tree_stats']['leaves']} leaves, "
                            f"max depth {state['tree_stats']['max_depth']}.")
        return state
