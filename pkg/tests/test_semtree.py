import json

import numpy as np
import pytest

from conftest import unit_corpus
from src.corpus.synth import synth_corpus
from src.index.semtree import (
    SemId,
    assign_semid,
    build_flat_tree,
    build_tree,
    deserialize_tree,
    insert_item,
    load_tree,
    save_tree,
    semid_groups,
    serialize_tree,
    shape_hash,
    tree_hash,
    tree_stats,
)
from src.store.embed_store import EmbeddingCorpus, ItemRecord, normalize
from src.utils.errors import (
    CorruptTreeError,
    DuplicateItemIdError,
    EmptyInputError,
    InvalidSemIdError,
    IoFailureError,
    NonUnitInputError,
    TruncationTooDeepError,
    UnknownItemError,
)


def _leaf_partition(tree):
    return {frozenset(tree.nodes[leaf].members) for leaf in tree.leaves()}


def _label_partition(labels):
    groups = {}
    for item_id, j in labels.items():
        groups.setdefault(j, set()).add(item_id)
    return {frozenset(g) for g in groups.values()}


def test_semid_rendering_and_truncation():
    sid = SemId((0, 2, 9, 21))
    assert sid.render() == "0-2-9-21"
    assert SemId.parse("0-2-9-21") == sid
    assert sid.truncated(1) == SemId((0, 2, 9))
    with pytest.raises(TruncationTooDeepError):
        sid.truncated(4)
    with pytest.raises(InvalidSemIdError):
        SemId((1, 2))


def test_small_corpus_is_a_single_leaf(small_corpus):
    tree = build_tree(small_corpus, k=4, c=100, seed=0)
    assert tree.leaves() == [tree.root]
    assert all(assign_semid(tree, i) == SemId((0,)) for i in small_corpus.ids)


def test_three_separated_clusters():
    data = synth_corpus(3, 30, 1, 16, seed=5)
    tree = build_tree(data.corpus, k=3, c=40, seed=1)
    assert tree.max_depth() == 1 and len(tree.leaves()) == 3
    assert _leaf_partition(tree) == _label_partition(data.labels)


def test_sixteen_clusters_give_sixteen_leaves():
    data = synth_corpus(16, 40, 1, 32, seed=2)
    tree = build_tree(data.corpus, k=16, c=40, seed=0)
    assert len(tree.leaves()) == 16
    assert _leaf_partition(tree) == _label_partition(data.labels)


@pytest.mark.parametrize("seed", range(5))
def test_tree_invariants_on_random_corpora(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(50, 400))
    base = unit_corpus(n, 6, seed=seed)
    # inject exact duplicates of the first few reps under new ids
    dups = [ItemRecord(item_id=f"d{i}", rep=base.records[i].rep) for i in range(10)]
    corpus = base.extended(dups)
    tree = build_tree(corpus, k=4, c=25, seed=seed)

    seen = []
    for leaf in tree.leaves():
        node = tree.nodes[leaf]
        seen.extend(node.members)
        if not node.stagnated:
            assert len(node.members) <= 25
    assert sorted(seen) == sorted(corpus.ids)
    assert deserialize_tree(serialize_tree(tree)) == tree
    assert serialize_tree(build_tree(corpus, k=4, c=25, seed=seed)) == serialize_tree(tree)


def test_identical_items_stagnate():
    rep = normalize([1.0, 2.0, 3.0])
    corpus = EmbeddingCorpus(dim=3, records=tuple(ItemRecord(item_id=f"x{i}", rep=rep) for i in range(10)))
    tree = build_tree(corpus, k=3, c=4, seed=0)
    assert len(tree.leaves()) == 1
    assert tree.nodes[tree.root].stagnated


def test_assign_semid_with_truncation():
    data = synth_corpus(3, 30, 1, 16, seed=5)
    tree = build_tree(data.corpus, k=3, c=40, seed=1)
    item = data.corpus.ids[0]
    full = assign_semid(tree, item)
    assert len(full) == 2
    assert assign_semid(tree, item, 1) == SemId((0,))
    with pytest.raises(TruncationTooDeepError):
        assign_semid(tree, item, 2)
    with pytest.raises(UnknownItemError):
        assign_semid(tree, "missing")
    assert tree.walk(full.tokens) == tree.leaf_of[item]


def test_semid_groups_cover_every_item():
    data = synth_corpus(4, 12, 1, 8, seed=9)
    tree = build_tree(data.corpus, k=2, c=6, seed=0)
    groups = semid_groups(tree, 0)
    assert sorted(i for members in groups.values() for i in members) == sorted(data.corpus.ids)
    for semid, members in groups.items():
        assert all(assign_semid(tree, i) == semid for i in members)


def test_insert_into_matching_leaf():
    data = synth_corpus(3, 30, 1, 16, seed=5)
    tree = build_tree(data.corpus, k=3, c=40, seed=1)
    before = shape_hash(tree)
    target = tree.leaves()[1]
    rec = ItemRecord.from_vector("new-exact", tree.nodes[target].centroid)
    semid = insert_item(tree, rec)
    assert tree.leaf_of["new-exact"] == target
    assert semid == SemId(tree.path_tokens(target))
    assert shape_hash(tree) == before
    with pytest.raises(DuplicateItemIdError):
        insert_item(tree, rec)


def test_insert_matches_linear_scan(rng):
    data = synth_corpus(4, 20, 1, 8, seed=3)
    tree = build_tree(data.corpus, k=4, c=10, seed=0)
    for n in range(500):
        rec = ItemRecord.from_vector(f"r{n}", rng.normal(size=8))
        leaves = tree.leaves()
        sims = [float(tree.nodes[leaf].centroid @ rec.rep.astype(np.float64)) for leaf in leaves]
        insert_item(tree, rec)
        assert tree.leaf_of[rec.item_id] == leaves[int(np.argmax(sims))]


def test_insert_rejects_non_unit():
    data = synth_corpus(2, 5, 1, 4, seed=1)
    tree = build_tree(data.corpus, k=2, c=3, seed=0)
    with pytest.raises(NonUnitInputError):
        insert_item(tree, ItemRecord(item_id="bad", rep=np.array([2.0, 0.0, 0.0, 0.0], dtype=np.float32)))


def test_serialization_round_trip_and_corruption(tmp_path):
    data = synth_corpus(3, 30, 1, 16, seed=5)
    tree = build_tree(data.corpus, k=3, c=40, seed=1)
    raw = serialize_tree(tree)
    again = deserialize_tree(raw)
    assert again == tree and tree_hash(again) == tree_hash(tree)
    with pytest.raises(CorruptTreeError):
        deserialize_tree(raw[: len(raw) // 2])
    path = tmp_path / "tree.json"
    save_tree(tree, str(path))
    assert load_tree(str(path)) == tree
    with pytest.raises(IoFailureError):
        load_tree(str(tmp_path / "missing.json"))


def test_deserialize_rejects_wide_nodes_and_non_unit_centroids():
    data = synth_corpus(3, 30, 1, 16, seed=5)
    tree = build_tree(data.corpus, k=3, c=40, seed=1)
    doc = json.loads(serialize_tree(tree))
    assert len(next(n for n in doc["nodes"] if n["node_id"] == doc["root"])["children"]) == 3

    narrow = dict(doc, k=2)
    with pytest.raises(CorruptTreeError, match="children"):
        deserialize_tree(json.dumps(narrow).encode("utf-8"))

    stretched = json.loads(serialize_tree(tree))
    stretched["nodes"][1]["centroid"] = [2.0 * v for v in stretched["nodes"][1]["centroid"]]
    with pytest.raises(CorruptTreeError, match="non-unit"):
        deserialize_tree(json.dumps(stretched).encode("utf-8"))


def test_flat_tree_is_one_level():
    data = synth_corpus(5, 8, 1, 16, seed=4)
    tree = build_flat_tree(data.corpus, 5, seed=0)
    assert tree.max_depth() == 1 and len(tree.leaves()) == 5
    assert tree.c == 8
    assert _leaf_partition(tree) == _label_partition(data.labels)


def test_tree_stats_and_empty_input(small_corpus):
    tree = build_tree(small_corpus, k=3, c=10, seed=0)
    stats = tree_stats(tree)
    assert stats["items"] == 60
    assert stats["leaves"] == len(tree.leaves())
    assert stats["leaf_size_max"] <= 10 or stats["stagnated_leaves"] > 0
    with pytest.raises(EmptyInputError):
        build_tree(EmbeddingCorpus(dim=4), k=2, c=2)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(50))
def test_tree_invariants_at_scale(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(500, 5000))
    base = unit_corpus(n, 16, seed=100 + seed)
    corpus = base.extended(ItemRecord(item_id=f"d{i}", rep=base.records[i].rep) for i in range(20))
    tree = build_tree(corpus, k=8, c=30, seed=seed)
    members = [i for leaf in tree.leaves() for i in tree.nodes[leaf].members]
    assert sorted(members) == sorted(corpus.ids)
    assert all(len(tree.nodes[leaf].members) <= 30 or tree.nodes[leaf].stagnated for leaf in tree.leaves())
    assert serialize_tree(build_tree(corpus, k=8, c=30, seed=seed)) == serialize_tree(tree)
