from src.corpus.queries import filter_queries, load_queries, split_heldout
from src.corpus.synth import synth_corpus
from src.orchestrator.graph_state import RunState
from src.store.embed_store import guess_format, load_corpus
from src.utils.config import AppConfig
from src.utils.errors import SemIndexError
from src.utils.log import get_logger, stage_banner

logger = get_logger(__name__)


class DataStage:
    def __init__(self, config: AppConfig):
        self.config = config

    def load_data_node(self, state: RunState) -> RunState:
        """Loads (or synthesizes) items, queries and query embeddings, then splits the queries."""
        stage_banner(logger, "data stage (load)", state["log"])
        paths = self.config.paths
        try:
            if paths.corpus:
                if not (paths.queries and paths.query_embeddings):
                    raise SemIndexError("paths.queries and paths.query_embeddings are required with paths.corpus")
                corpus = load_corpus(paths.corpus, guess_format(paths.corpus))
                queries = load_queries(paths.queries)
                query_embeddings = load_corpus(paths.query_embeddings, guess_format(paths.query_embeddings))
                source = paths.corpus
            else:
                s = self.config.synth
                data = synth_corpus(
                    s.clusters, s.items_per_cluster, s.queries_per_item, s.dim,
                    seed=s.seed, n_frames=s.n_frames,
                )
                corpus, queries, query_embeddings = data.corpus, data.queries, data.query_embeddings
                source = "synthetic"
        except SemIndexError as e:
            logger.error("Data stage: %s", e)
            state["error"] = f"Data stage: {e}"
            state["log"].append(state["error"])
            return state

        train, heldout = split_heldout(queries, self.config.synth.heldout_per_item)
        train = filter_queries(train, self.config.corpus.queries)
        state["corpus"] = corpus
        state["train_queries"] = train
        state["eval_queries"] = heldout
        state["query_embeddings"] = query_embeddings
        state["ground_truth"] = {q.query_id: q.item_id for q in queries}
        msg = (f"Data stage: {len(corpus)} items from {source}, {len(train)} training queries "
               f"({self.config.corpus.queries}), {len(heldout)} held out.")
        logger.info(msg)
        state["log"].append(msg)
        return state
