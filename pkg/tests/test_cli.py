import yaml

from src.cli import main
from src.corpus.queries import load_queries


def _write_config(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump({
        "paths": {"reports": str(tmp_path / "reports"), "logs": str(tmp_path / "logs")},
        "index": {"k": 3, "c": 6, "seed": 0},
        "model": {"hidden": 8, "layers": 1, "heads": 2, "ffn_dim": 16, "adaptor_hidden": 4, "dropout": 0.0},
        "train": {"epochs": 1},
        "eval": {"sweep_ms": [0, 1], "sweep_top_k": 3, "sweep_epochs": 1},
        "synth": {"clusters": 3, "items_per_cluster": 6, "queries_per_item": 2, "dim": 8},
    }))
    return str(path)


def test_offline_and_online_commands(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    out = tmp_path / "synth"
    tree, ckpt = str(tmp_path / "tree.json"), str(tmp_path / "model.npz")
    items, qemb, queries = str(out / "items.sgix"), str(out / "query_embeddings.sgix"), str(out / "queries.jsonl")

    assert main(["--config", cfg, "synth", "--out-dir", str(out)]) == 0
    assert main(["--config", cfg, "build-tree", "--corpus", items, "--out", tree]) == 0
    assert main(["--config", cfg, "train", "--pairs", queries, "--tree", tree, "--out", ckpt]) == 0
    capsys.readouterr()

    assert main(["--config", cfg, "assign-ids", "--tree", tree]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 18 and lines[0].startswith("v000000\t0")

    first = load_queries(queries)[0]
    assert main(["--config", cfg, "decode", "--ckpt", ckpt, "--tree", tree, "--topk", "2", "--query", first.text]) == 0
    ranked = capsys.readouterr().out.splitlines()
    assert len(ranked) == 2 and all(line.startswith("0") for line in ranked)

    assert main(["--config", cfg, "retrieve", "--ckpt", ckpt, "--tree", tree, "--corpus", items,
                 "--query-embeddings", qemb, "--query", first.text, "--query-id", first.query_id]) == 0
    assert "candidates" in capsys.readouterr().out

    report = tmp_path / "eval.json"
    assert main(["--config", cfg, "eval", "--ckpt", ckpt, "--tree", tree, "--corpus", items,
                 "--query-embeddings", qemb, "--queries", queries, "--brute-force", "--report", str(report)]) == 0
    table = capsys.readouterr().out
    assert "two-stage" in table and "brute force" in table
    assert report.exists()

    assert main(["--config", cfg, "eval", "--ckpt", ckpt, "--tree", tree, "--corpus", items,
                 "--query-embeddings", qemb, "--queries", queries, "--sweep", "--train-queries", queries]) == 0
    assert "candidates_mean" in capsys.readouterr().out
    assert (tmp_path / "reports" / "sweep.csv").exists()


def test_library_errors_exit_with_one(tmp_path):
    cfg = _write_config(tmp_path)
    assert main(["--config", cfg, "assign-ids", "--tree", str(tmp_path / "missing.json")]) == 1
    assert main(["--config", str(tmp_path / "nope.yaml"), "assign-ids", "--tree", "x"]) == 1


def _pair_count(out: str) -> int:
    line = next(line for line in out.splitlines() if line.startswith("Built "))
    return int(line.split()[1])


def test_train_query_source_flag(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    out = tmp_path / "synth"
    tree, queries = str(tmp_path / "tree.json"), str(out / "queries.jsonl")
    assert main(["--config", cfg, "synth", "--out-dir", str(out)]) == 0
    assert main(["--config", cfg, "build-tree", "--corpus", str(out / "items.sgix"), "--out", tree]) == 0
    capsys.readouterr()

    counts = {}
    for source in ("original", "all"):
        ckpt = str(tmp_path / f"{source}.npz")
        assert main(["--config", cfg, "train", "--pairs", queries, "--queries", source, "--epochs", "0",
                     "--tree", tree, "--out", ckpt]) == 0
        counts[source] = _pair_count(capsys.readouterr().out)
    assert counts == {"original": 18, "all": 36}


def test_eval_sweep_needs_training_queries(tmp_path):
    cfg = _write_config(tmp_path)
    out = tmp_path / "synth"
    tree, ckpt = str(tmp_path / "tree.json"), str(tmp_path / "model.npz")
    items, qemb, queries = str(out / "items.sgix"), str(out / "query_embeddings.sgix"), str(out / "queries.jsonl")
    assert main(["--config", cfg, "synth", "--out-dir", str(out)]) == 0
    assert main(["--config", cfg, "build-tree", "--corpus", items, "--out", tree]) == 0
    assert main(["--config", cfg, "train", "--pairs", queries, "--tree", tree, "--out", ckpt]) == 0
    assert main(["--config", cfg, "eval", "--ckpt", ckpt, "--tree", tree, "--corpus", items,
                 "--query-embeddings", qemb, "--queries", queries, "--sweep"]) == 1
