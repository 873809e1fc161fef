"""Trie-constrained beam search over SemIds.

Scores are raw summed log-probabilities (no length normalization), so
terminals at different depths compete directly. Ties are broken by the
token sequence in lexicographic order.
"""
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import torch

from src.decode.trie import DecodingTrie
from src.index.semtree import SemId
from src.model.pawa import PawaModel
from src.utils.errors import EmptyTrieError, StateMismatchError
from src.utils.log import get_logger

logger = get_logger(__name__)

DEFAULT_TOP_K = 11


@dataclass(frozen=True)
class BeamHypothesis:
    tokens: Tuple[int, ...]
    logprob: float = 0.0

    def sort_key(self) -> Tuple[float, Tuple[int, ...]]:
        return -self.logprob, self.tokens


@dataclass(frozen=True)
class RankedSemId:
    semid: SemId
    logprob: float

    def render(self) -> str:
        return f"{self.semid.render()}\t{self.logprob:.6f}"


@dataclass
class SemIdRanking:
    entries: List[RankedSemId] = field(default_factory=list)

    def __iter__(self) -> Iterator[RankedSemId]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> RankedSemId:
        return self.entries[i]

    def semids(self) -> List[SemId]:
        return [e.semid for e in self.entries]

    def head(self, n: int) -> "SemIdRanking":
        return SemIdRanking(self.entries[:n])


def default_beam_width(top_k: int) -> int:
    return 2 * top_k


def beam_search(
    model: PawaModel,
    query_tokens: Sequence[int],
    trie: DecodingTrie,
    beam_width: Optional[int] = None,
    top_k: int = DEFAULT_TOP_K,
) -> SemIdRanking:
    """Top-k terminal SemIds of the trie by log p(SemId, END | query)."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    beam_width = default_beam_width(top_k) if beam_width is None else beam_width
    if beam_width < top_k:
        raise ValueError(f"beam width {beam_width} is smaller than top_k {top_k}")
    if not len(trie):
        raise EmptyTrieError("the decoding trie has no terminals")
    end = trie.end_token
    if end != model.config.end_token:
        raise StateMismatchError(f"trie END token {end} does not match model k={model.config.k}")
    if model.training:
        model.eval()

    finished: List[BeamHypothesis] = []
    with torch.no_grad():
        enc = model.encode(torch.tensor([list(query_tokens)], dtype=torch.long))
        beam = [BeamHypothesis(tokens=(0,))]
        while beam:
            candidates: List[BeamHypothesis] = []
            for hyp in beam:
                allowed = trie.allowed(hyp.tokens)
                log_probs = model.step_log_probs(enc, hyp.tokens)
                for token in allowed:
                    candidates.append(BeamHypothesis(hyp.tokens + (token,), hyp.logprob + float(log_probs[token])))
            candidates.sort(key=BeamHypothesis.sort_key)
            beam = []
            for cand in candidates[:beam_width]:
                if cand.tokens[-1] == end:
                    finished.append(cand)
                else:
                    beam.append(cand)
            if len(finished) >= top_k and beam:
                # step log-probs are <= 0, so live hypotheses can only fall further
                kth = sorted(finished, key=BeamHypothesis.sort_key)[top_k - 1]
                if beam[0].logprob < kth.logprob:
                    break

    finished.sort(key=BeamHypothesis.sort_key)
    return SemIdRanking([RankedSemId(SemId(h.tokens[:-1]), h.logprob) for h in finished[:top_k]])
