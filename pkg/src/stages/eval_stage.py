from src.model.trainer import TrainConfig
from src.orchestrator.graph_state import RunState
from src.pipeline.metrics import audit_misses, eval_recall, recall_table
from src.pipeline.retriever import RetrievalEngine, brute_force, run_queries
from src.pipeline.sweep import run_sweep
from src.utils.config import AppConfig
from src.utils.errors import SemIndexError
from src.utils.log import get_logger, stage_banner

logger = get_logger(__name__)


class EvalStage:
    def __init__(self, config: AppConfig):
        self.config = config

    def evaluate_node(self, state: RunState) -> RunState:
        """
        Retrieves held-out and seen queries one by one, then scores R@K
        for the two-stage engine and for brute force over the corpus.
        """
        stage_banner(logger, "eval stage (recall)", state["log"])
        if state["error"]:
            return state
        cfg = self.config
        limit = cfg.eval.max_queries
        heldout = state["eval_queries"][:limit] if limit else state["eval_queries"]
        seen = state["train_queries"][: len(heldout) or limit]
        gt = state["ground_truth"]
        try:
            engine = RetrievalEngine.from_checkpoint(
                state["checkpoint"], state["tree"], state["corpus"],
                top_k=cfg.decode.top_k, beam_width=cfg.decode.beam_width,
            )
            reports = {}
            if heldout:
                two_stage = run_queries(engine, heldout, state["query_embeddings"])
                brute = {
                    q.query_id: brute_force(state["query_embeddings"].rep(q.query_id), state["corpus"], engine.reranker)
                    for q in heldout
                }
                reports["two-stage (held-out)"] = eval_recall(two_stage, gt, cfg.eval.ks)
                reports["brute force (held-out)"] = eval_recall(brute, gt, cfg.eval.ks)
                audit = audit_misses(two_stage, brute, gt, max(cfg.eval.ks))
                state["log"].append(f"Eval stage: miss audit at K={max(cfg.eval.ks)}: {audit}")
            if seen:
                reports["two-stage (seen)"] = eval_recall(run_queries(engine, seen, state["query_embeddings"]), gt, cfg.eval.ks)
        except SemIndexError as e:
            logger.error("Eval stage: %s", e)
            state["error"] = f"Eval stage: {e}"
            state["log"].append(state["error"])
            return state

        state["eval_reports"] = {name: rep.model_dump() for name, rep in reports.items()}
        state["recall_table"] = recall_table(reports) if reports else None
        for name, rep in reports.items():
            msg = f"Eval stage: {name}: " + ", ".join(f"{k} {v:.2f}" for k, v in rep.row().items())
            logger.info(msg)
            state["log"].append(msg)
        return state

    def sweep_node(self, state: RunState) -> RunState:
        stage_banner(logger, "eval stage (sweep)", state["log"])
        if state["error"]:
            return state
        cfg = self.config
        train_cfg = TrainConfig(**cfg.train.model_dump())
        if cfg.eval.sweep_epochs is not None:
            train_cfg = train_cfg.model_copy(update={"epochs": cfg.eval.sweep_epochs})
        limit = cfg.eval.max_queries
        heldout = state["eval_queries"][:limit] if limit else state["eval_queries"]
        try:
            df = run_sweep(
                state["tree"], state["corpus"], state["train_queries"], heldout,
                state["query_embeddings"], state["ground_truth"], state["vocab"], train_cfg,
                ms=cfg.eval.sweep_ms, max_top_k=cfg.eval.sweep_top_k, ks=cfg.eval.ks,
                max_query_len=cfg.corpus.max_query_len, **cfg.model.model_dump(),
            )
        except SemIndexError as e:
            logger.error("Sweep: %s", e)
            state["error"] = f"Sweep: {e}"
            state["log"].append(state["error"])
            return state
        state["sweep"] = df.to_dict(orient="records")
        state["log"].append(f"Sweep: {len(df)} (m, top_k) settings evaluated.")
        return state
