import itertools

import numpy as np
import pytest
import torch

from conftest import random_model
from src.decode.beam import beam_search, default_beam_width
from src.decode.trie import DecodingTrie
from src.index.semtree import SemId
from src.model.pawa import PawaModel
from src.utils.errors import StateMismatchError


def _full_trie(k=3, depth=2):
    semids = [SemId((0,) + labels) for labels in itertools.product(range(k), repeat=depth)]
    return DecodingTrie.from_semids(semids, k=k)


def _mixed_trie():
    return DecodingTrie.from_semids(
        [SemId((0, 0)), SemId((0, 1, 0)), SemId((0, 1, 2)), SemId((0, 2, 1)), SemId((0, 2)), SemId((0, 1))], k=3
    )


def _oracle(model, query, trie, top_k):
    scored = [
        (model.sequence_logprob(query, list(s.tokens) + [trie.end_token]), s)
        for s in trie.terminals()
    ]
    scored.sort(key=lambda pair: (-pair[0], pair[1].tokens))
    return scored[:top_k]


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("make_trie", [_full_trie, _mixed_trie])
def test_wide_beam_matches_exhaustive_scoring(micro_config, seed, make_trie):
    model = random_model(micro_config, seed=seed)
    trie = make_trie()
    query = [2 + seed, 7]
    for top_k in (1, 3, len(trie)):
        ranking = beam_search(model, query, trie, beam_width=len(trie), top_k=top_k)
        expected = _oracle(model, query, trie, top_k)
        assert ranking.semids() == [s for _, s in expected]
        assert [r.logprob for r in ranking] == [lp for lp, _ in expected]


def test_results_are_valid_distinct_and_sorted(micro_config):
    model = random_model(micro_config, seed=11)
    trie = _mixed_trie()
    ranking = beam_search(model, [3, 4, 5], trie, top_k=4)
    assert len(ranking) == 4
    assert len(set(ranking.semids())) == 4
    assert all(s in trie for s in ranking.semids())
    scores = [r.logprob for r in ranking]
    assert scores == sorted(scores, reverse=True)
    assert all(lp <= 0.0 for lp in scores)


def test_top_k_larger_than_trie(micro_config):
    model = random_model(micro_config, seed=12)
    trie = DecodingTrie.from_semids([SemId((0, 1)), SemId((0, 2))], k=3)
    assert len(beam_search(model, [2], trie, top_k=5)) == 2


def test_wider_beam_never_lowers_best_score(micro_config):
    for seed in range(5):
        model = random_model(micro_config, seed=20 + seed)
        trie = _full_trie()
        narrow = beam_search(model, [4, 9], trie, beam_width=1, top_k=1)
        wide = beam_search(model, [4, 9], trie, beam_width=len(trie), top_k=1)
        assert wide[0].logprob >= narrow[0].logprob


def test_uniform_model_breaks_ties_lexicographically(micro_config):
    torch.manual_seed(0)
    model = PawaModel(micro_config).eval()
    ranking = beam_search(model, [2], _full_trie(), top_k=3)
    assert ranking.semids() == [SemId((0, 0, 0)), SemId((0, 0, 1)), SemId((0, 0, 2))]


def test_single_root_terminal(micro_config):
    model = random_model(micro_config, seed=13)
    trie = DecodingTrie.from_semids([SemId((0,))], k=3)
    ranking = beam_search(model, [], trie, top_k=3)
    assert ranking.semids() == [SemId((0,))]
    assert ranking[0].logprob == model.sequence_logprob([], [0, 3])


def test_render_and_head(micro_config):
    model = random_model(micro_config, seed=14)
    ranking = beam_search(model, [5], _full_trie(), top_k=4)
    assert ranking.head(2).semids() == ranking.semids()[:2]
    semid, score = ranking[0].render().split("\t")
    assert SemId.parse(semid) == ranking[0].semid
    assert float(score) == pytest.approx(ranking[0].logprob, abs=1e-6)


def test_training_mode_is_switched_off(micro_config):
    model = random_model(micro_config, seed=15)
    model.train()
    beam_search(model, [5], _full_trie(), top_k=1)
    assert not model.training


def test_errors(micro_config):
    model = random_model(micro_config, seed=16)
    with pytest.raises(ValueError):
        beam_search(model, [2], _full_trie(), top_k=0)
    with pytest.raises(ValueError):
        beam_search(model, [2], _full_trie(), beam_width=2, top_k=3)
    with pytest.raises(StateMismatchError):
        beam_search(model, [2], DecodingTrie.from_semids([SemId((0, 1))], k=4), top_k=1)
    assert default_beam_width(11) == 22


def _random_trie(rng):
    n = int(rng.integers(1, 14))
    semids = {SemId((0,) + tuple(int(x) for x in rng.integers(0, 3, size=int(rng.integers(0, 3))))) for _ in range(n)}
    return DecodingTrie.from_semids(semids, k=3)


def test_random_instances_match_exhaustive_scoring(micro_config):
    rng = np.random.default_rng(0)
    for instance in range(100):
        model = random_model(micro_config, seed=100 + instance)
        trie = _random_trie(rng)
        query = [int(t) for t in rng.integers(1, micro_config.vocab_size, size=int(rng.integers(0, 6)))]
        top_k = int(rng.integers(1, len(trie) + 1))
        ranking = beam_search(model, query, trie, beam_width=max(len(trie), top_k), top_k=top_k)
        expected = _oracle(model, query, trie, top_k)
        assert [(r.logprob, r.semid) for r in ranking] == expected


def test_narrow_beams_only_emit_trie_paths(micro_config):
    rng = np.random.default_rng(1)
    models = [random_model(micro_config, seed=200 + i) for i in range(5)]
    for n in range(300):
        trie = _random_trie(rng)
        query = [int(t) for t in rng.integers(1, micro_config.vocab_size, size=3)]
        ranking = beam_search(models[n % 5], query, trie, beam_width=int(rng.integers(1, 4)), top_k=1)
        assert len(ranking) == 1 and ranking[0].semid in trie
