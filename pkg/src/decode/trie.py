"""Prefix trie over the SemIds that actually hold items."""
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Tuple

from src.index.semtree import SemId, SemTree, semid_groups, shape_hash
from src.utils.errors import EmptyTrieError, InvalidSemIdError

Path = Tuple[int, ...]


@dataclass
class TrieNode:
    children: Dict[int, Path] = field(default_factory=dict)
    terminal: bool = False


@dataclass
class DecodingTrie:
    end_token: int
    m: int = 0
    shape_hash: str = ""
    nodes: Dict[Path, TrieNode] = field(default_factory=dict)

    def add(self, semid: SemId) -> None:
        tokens = semid.tokens
        if not tokens or tokens[0] != 0:
            raise InvalidSemIdError(f"SemId {semid} does not start at the root")
        if any(t >= self.end_token for t in tokens[1:]):
            raise InvalidSemIdError(f"SemId {semid} has a label >= {self.end_token}")
        node = self.nodes.setdefault(tokens[:1], TrieNode())
        for i in range(1, len(tokens)):
            node.children[tokens[i]] = tokens[: i + 1]
            node = self.nodes.setdefault(tokens[: i + 1], TrieNode())
        node.terminal = True

    def allowed(self, prefix: Path) -> List[int]:
        """Next tokens that keep prefix on a stored path, END included when prefix is terminal."""
        node = self.nodes.get(tuple(prefix))
        if node is None:
            return []
        out = sorted(node.children)
        if node.terminal:
            out.append(self.end_token)
        return out

    def is_terminal(self, prefix: Path) -> bool:
        node = self.nodes.get(tuple(prefix))
        return node is not None and node.terminal

    def terminals(self) -> List[SemId]:
        return sorted(SemId(p) for p, node in self.nodes.items() if node.terminal)

    def __len__(self) -> int:
        return sum(1 for node in self.nodes.values() if node.terminal)

    def __contains__(self, semid: SemId) -> bool:
        return self.is_terminal(semid.tokens)

    @classmethod
    def from_semids(cls, semids: Iterable[SemId], k: int, m: int = 0, shape_hash: str = "") -> "DecodingTrie":
        trie = cls(end_token=k, m=m, shape_hash=shape_hash)
        for semid in semids:
            trie.add(semid)
        if not len(trie):
            raise EmptyTrieError("no SemIds to index")
        return trie


def build_trie(tree: SemTree, m: int = 0) -> DecodingTrie:
    """Trie of every truncated SemId with at least one member."""
    return DecodingTrie.from_semids(semid_groups(tree, m), k=tree.k, m=m, shape_hash=shape_hash(tree))
