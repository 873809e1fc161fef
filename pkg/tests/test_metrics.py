import numpy as np
import pytest

from src.decode.beam import SemIdRanking
from src.pipeline.metrics import audit_misses, eval_recall, recall_table
from src.pipeline.retriever import CandidateSet, RetrievalResult
from src.utils.errors import MissingGroundTruthError


def _result(items, candidates=None, stage1=0.001, stage2=0.002):
    cand = None if candidates is None else CandidateSet(semids=SemIdRanking(), items=list(candidates))
    return RetrievalResult(ranked_items=[(i, 1.0 - 0.01 * n) for n, i in enumerate(items)],
                           stage1_time=stage1, stage2_time=stage2, candidates=cand)


def test_recall_at_worked_example():
    ranked = [f"x{i}" for i in range(10)]
    results = {
        "q1": _result(["a"] + ranked),              # rank 1
        "q2": _result(ranked[:3] + ["b"] + ranked),  # rank 4
        "q3": _result(ranked[:9] + ["c"]),          # rank 10
        "q4": _result(ranked),                      # missing
    }
    truth = {"q1": "a", "q2": "b", "q3": "c", "q4": "d"}
    report = eval_recall(results, truth, ks=(10, 1, 5))
    assert report.recall_at == {1: 25.0, 5: 50.0, 10: 75.0}
    assert report.recall_sum == 150.0
    assert report.n_queries == 4
    assert report.row() == {"R@1": 25.0, "R@5": 50.0, "R@10": 75.0, "R@sum": 150.0}


def test_recall_is_monotone_in_k():
    rng = np.random.default_rng(0)
    results, truth = {}, {}
    for q in range(200):
        items = [f"i{j}" for j in rng.permutation(30)[:12]]
        results[f"q{q}"] = _result(items)
        truth[f"q{q}"] = f"i{int(rng.integers(30))}"
    report = eval_recall(results, truth, ks=range(1, 13))
    values = [report.recall_at[k] for k in range(1, 13)]
    assert values == sorted(values)
    assert all(0.0 <= v <= 100.0 for v in values)


def test_random_ranking_recall_matches_expectation():
    rng = np.random.default_rng(7)
    n_items, n_queries = 50, 4000
    results, truth = {}, {}
    for q in range(n_queries):
        order = [f"i{j}" for j in rng.permutation(n_items)]
        results[f"q{q}"] = _result(order)
        truth[f"q{q}"] = "i0"
    report = eval_recall(results, truth, ks=(1, 5, 10))
    for k in (1, 5, 10):
        assert abs(report.recall_at[k] - 100.0 * k / n_items) < 2.0


def test_stage1_hit_rate_and_candidate_sizes():
    results = {
        "q1": _result(["a", "b"], candidates=["a", "b"]),
        "q2": _result(["c"], candidates=["c"]),
        "q3": _result(["e", "f", "g"], candidates=["e", "f", "g"]),
    }
    truth = {"q1": "b", "q2": "d", "q3": "g"}
    report = eval_recall(results, truth, ks=(1,))
    assert report.stage1_hit_rate == pytest.approx(200.0 / 3)
    assert (report.candidates_min, report.candidates_max) == (1, 3)
    assert report.candidates_mean == pytest.approx(2.0)
    assert report.mean_stage1_ms == pytest.approx(1.0)
    assert report.mean_total_ms == pytest.approx(3.0)


def test_brute_force_results_have_no_hit_rate():
    report = eval_recall({"q": _result(["a"])}, {"q": "a"})
    assert report.stage1_hit_rate is None and report.candidates_mean is None


def test_empty_and_missing_ground_truth():
    report = eval_recall({}, {})
    assert report.recall_at == {1: 0.0, 5: 0.0, 10: 0.0}
    with pytest.raises(MissingGroundTruthError):
        eval_recall({"q": _result(["a"])}, {})


def test_recall_table_layout():
    a = eval_recall({"q": _result(["a"])}, {"q": "a"})
    b = eval_recall({"q": _result(["b", "a"])}, {"q": "a"})
    table = recall_table({"two-stage": a, "brute force": b})
    lines = table.splitlines()
    assert lines[0].split() == ["R@1", "R@5", "R@10", "R@sum"]
    assert lines[1].strip() == "method"
    assert lines[2].split()[0] == "two-stage"
    assert "100.00" in lines[2] and "0.00" in lines[3]


def test_audit_attributes_misses():
    truth = {"q1": "a", "q2": "b", "q3": "c"}
    two_stage = {
        "q1": _result(["a"], candidates=["a"]),
        "q2": _result(["x"], candidates=["x"]),
        "q3": _result(["y", "c"], candidates=["y", "c"]),
    }
    brute = {"q1": _result(["a"]), "q2": _result(["b", "x"]), "q3": _result(["y", "c"])}
    counts = audit_misses(two_stage, brute, truth, k=1)
    assert counts == {"misses": 2, "stage1": 1, "rerank": 1, "unexplained": 0}
