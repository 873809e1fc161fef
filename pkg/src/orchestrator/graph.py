import json
import os
from typing import Literal

from langgraph.graph import END, StateGraph

from src.orchestrator.graph_state import BULKY_FIELDS, RunState
from src.stages.data_stage import DataStage
from src.stages.eval_stage import EvalStage
from src.stages.index_stage import IndexStage
from src.stages.train_stage import TrainStage
from src.utils.config import AppConfig
from src.utils.log import get_logger

logger = get_logger(__name__)


def build_index_graph(config: AppConfig):
    """
    Builds the end-to-end graph: data -> tree -> pairs -> train -> evaluate -> optional sweep.
    """
    data_stage = DataStage(config)
    index_stage = IndexStage(config)
    train_stage = TrainStage(config)
    eval_stage = EvalStage(config)

    workflow = StateGraph(RunState)

    workflow.add_node("load_data", data_stage.load_data_node)
    workflow.add_node("build_tree", index_stage.build_tree_node)
    workflow.add_node("build_pairs", train_stage.build_pairs_node)
    workflow.add_node("train", train_stage.train_node)
    workflow.add_node("evaluate", eval_stage.evaluate_node)
    workflow.add_node("sweep", eval_stage.sweep_node)

    workflow.set_entry_point("load_data")

    workflow.add_edge("load_data", "build_tree")
    workflow.add_edge("build_tree", "build_pairs")
    workflow.add_edge("build_pairs", "train")
    workflow.add_edge("train", "evaluate")

    workflow.add_conditional_edges(
        "evaluate",
        lambda state: should_sweep(state, config),
        {
            "sweep": "sweep",
            "finish": END,
        },
    )
    workflow.add_edge("sweep", END)

    return workflow.compile()


def should_sweep(state: RunState, config: AppConfig) -> Literal["sweep", "finish"]:
    """Decision node: the sweep runs only when enabled and nothing has failed."""
    logger.info("---  EXECUTING DECISION NODE ---")
    if config.eval.sweep and not state["error"]:
        logger.info("Decision: sweep enabled. Running the m x top_k sweep.")
        return "sweep"
    logger.info("Decision: finishing run.")
    return "finish"


def save_outputs(state: RunState, config: AppConfig) -> None:
    """
    Saves the evaluation report as JSON and Markdown, plus the run log.
    """
    logger.info("---  SAVING OUTPUTS ---")
    report_path = config.paths.reports
    os.makedirs(report_path, exist_ok=True)
    os.makedirs(config.paths.logs, exist_ok=True)

    with open(os.path.join(report_path, "eval_report.json"), "w") as f:
        json.dump(state["eval_reports"], f, indent=2)

    with open(os.path.join(report_path, "report.md"), "w") as f:
        f.write("# Generative Semantic Index Report\n\n")
        if state["error"]:
            f.write(f"**Run failed:** {state['error']}\n\n")

        f.write("## 1. Semantic Tree\n\n")
        if not state["tree_stats"]:
            f.write("No tree was built.\n\n")
        else:
            for key, value in state["tree_stats"].items():
                f.write(f"-   **{key}:** {value}\n")
            f.write("\n")

        f.write("## 2. Recall\n\n")
        if not state["recall_table"]:
            f.write("No evaluation was run.\n\n")
        else:
            f.write("```\n" + state["recall_table"] + "\n```\n\n")
            for name, rep in state["eval_reports"].items():
                f.write(f"### {name}\n\n")
                f.write(f"-   **Queries:** {rep['n_queries']}\n")
                if rep["stage1_hit_rate"] is not None:
                    f.write(f"-   **Stage-1 hit rate:** {rep['stage1_hit_rate']:.2f}%\n")
                    f.write(f"-   **Candidates (min/mean/max):** {rep['candidates_min']} / "
                            f"{rep['candidates_mean']:.1f} / {rep['candidates_max']}\n")
                f.write(f"-   **Mean latency:** stage 1 {rep['mean_stage1_ms']:.2f} ms, "
                        f"stage 2 {rep['mean_stage2_ms']:.2f} ms\n\n")

        if state["sweep"]:
            f.write("## 3. Parameter Sweep\n\n")
            cols = list(state["sweep"][0])
            f.write("| " + " | ".join(cols) + " |\n")
            f.write("|" + "---|" * len(cols) + "\n")
            for row in state["sweep"]:
                f.write("| " + " | ".join(_cell(row[c]) for c in cols) + " |\n")
            f.write("\n")

    with open(os.path.join(config.paths.logs, "run_log.json"), "w") as f:
        log_state = {k: v for k, v in state.items() if k not in BULKY_FIELDS}
        json.dump(log_state, f, indent=2, default=str)

    logger.info("Outputs saved to %s", report_path)


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)
