"""Recall@K evaluation and the plain-text recall table."""
from typing import Dict, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from src.pipeline.retriever import RetrievalResult
from src.utils.errors import MissingGroundTruthError

DEFAULT_KS = (1, 5, 10)


class EvalReport(BaseModel):
    n_queries: int = Field(ge=0)
    recall_at: Dict[int, float]
    recall_sum: float
    # share of queries whose ground-truth item survived stage 1
    stage1_hit_rate: Optional[float] = None
    mean_stage1_ms: float = 0.0
    mean_stage2_ms: float = 0.0
    mean_total_ms: float = 0.0
    candidates_min: Optional[int] = None
    candidates_mean: Optional[float] = None
    candidates_max: Optional[int] = None

    def row(self) -> Dict[str, float]:
        out = {f"R@{k}": round(v, 2) for k, v in sorted(self.recall_at.items())}
        out["R@sum"] = round(self.recall_sum, 2)
        return out


def eval_recall(
    results: Mapping[str, RetrievalResult],
    ground_truth: Mapping[str, str],
    ks: Sequence[int] = DEFAULT_KS,
) -> EvalReport:
    """R@K = 100 * share of queries whose true item is ranked within the top K."""
    missing = [qid for qid in results if qid not in ground_truth]
    if missing:
        raise MissingGroundTruthError(f"{len(missing)} queries have no ground truth, e.g. {missing[0]!r}")
    ks = sorted(set(ks))
    n = len(results)
    ranks = [res.rank_of(ground_truth[qid]) for qid, res in results.items()]
    recall_at = {
        k: (100.0 * sum(1 for r in ranks if r is not None and r <= k) / n if n else 0.0)
        for k in ks
    }

    with_candidates = [(qid, res) for qid, res in results.items() if res.candidates is not None]
    sizes = np.array([len(res.candidates) for _, res in with_candidates], dtype=np.int64)
    hit_rate = None
    if with_candidates:
        hits = sum(1 for qid, res in with_candidates if ground_truth[qid] in set(res.candidates.items))
        hit_rate = 100.0 * hits / len(with_candidates)

    def mean_ms(values) -> float:
        values = list(values)
        return 1000.0 * float(np.mean(values)) if values else 0.0

    return EvalReport(
        n_queries=n,
        recall_at=recall_at,
        recall_sum=sum(recall_at.values()),
        stage1_hit_rate=hit_rate,
        mean_stage1_ms=mean_ms(r.stage1_time for r in results.values()),
        mean_stage2_ms=mean_ms(r.stage2_time for r in results.values()),
        mean_total_ms=mean_ms(r.total_time for r in results.values()),
        candidates_min=int(sizes.min()) if sizes.size else None,
        candidates_mean=float(sizes.mean()) if sizes.size else None,
        candidates_max=int(sizes.max()) if sizes.size else None,
    )


def recall_table(reports: Mapping[str, EvalReport]) -> str:
    """Aligned R@K / R@sum table, one row per named run."""
    df = pd.DataFrame.from_dict({name: rep.row() for name, rep in reports.items()}, orient="index")
    df.index.name = "method"
    return df.to_string(float_format=lambda v: f"{v:.2f}")


def audit_misses(
    two_stage: Mapping[str, RetrievalResult],
    brute: Mapping[str, RetrievalResult],
    ground_truth: Mapping[str, str],
    k: int,
) -> Dict[str, int]:
    """Attributes every two-stage miss at K to stage 1, to the reranker, or to neither.

    "unexplained" counts misses where the truth survived stage 1 and brute
    force finds it within K; it stays 0 while rerank is a restriction of
    brute force to the candidate set.
    """
    counts = {"misses": 0, "stage1": 0, "rerank": 0, "unexplained": 0}
    for qid, res in two_stage.items():
        truth = ground_truth[qid]
        rank = res.rank_of(truth)
        if rank is not None and rank <= k:
            continue
        counts["misses"] += 1
        bf_rank = brute[qid].rank_of(truth)
        if res.candidates is not None and truth not in res.candidates.items:
            counts["stage1"] += 1
        elif bf_rank is None or bf_rank > k:
            counts["rerank"] += 1
        else:
            counts["unexplained"] += 1
    return counts
