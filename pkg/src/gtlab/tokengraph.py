"""Token graph: the encoder input sequence seen as a graph.

Nodes are the subword positions of the linearized reified graph.  Every
subword position of a concept (including variable tokens emitted at
re-entrant revisits) is connected to each relation node adjacent to that
concept: a `direct` edge along the original role direction plus its paired
`reverse` edge.  Role labels stay atomic, so a relation occupies exactly
one position.  An end-of-sequence token is appended and left isolated.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .amr import ReifiedGraph, linearize
from .bpe import Vocab

DIRECT = 1
REVERSE = 2
SELF = 3

EOS_NODE = "<eos>"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TokenGraph:
    tokens: tuple[int, ...]
    origin: tuple[tuple[str, int], ...]
    edges: tuple[tuple[int, int, str], ...]

    @property
    def n(self) -> int:
        return len(self.tokens)

    def direct_edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u, v, kind in self.edges if kind == "direct"]

    def undirected_pairs(self) -> set[tuple[int, int]]:
        """Unordered connected pairs, no self loops."""
        return {(min(u, v), max(u, v)) for u, v, _ in self.edges if u != v}

    def to_json(self) -> str:
        return json.dumps(
            {
                "tokens": list(self.tokens),
                "origin": [list(o) for o in self.origin],
                "edges": [[u, v, kind] for u, v, kind in self.edges],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "TokenGraph":
        d = json.loads(text)
        return cls(
            tokens=tuple(d["tokens"]),
            origin=tuple((node, int(i)) for node, i in d["origin"]),
            edges=tuple((int(u), int(v), kind) for u, v, kind in d["edges"]),
        )


def build_token_graph(rg: ReifiedGraph, vocab: Vocab) -> TokenGraph:
    """Expand the linearization into subword positions and wire the edges."""
    items = linearize(rg)
    tokens: list[int] = []
    origin: list[tuple[str, int]] = []
    positions: dict[str, list[int]] = defaultdict(list)
    relation_pos: dict[str, int] = {}
    subword_count: dict[str, int] = defaultdict(int)

    for item in items:
        if item.kind == "relation":
            if not vocab.is_atomic(item.text):
                raise ConfigError(f"role label {item.text!r} is not atomic in the vocabulary")
            pos = len(tokens)
            tokens.append(vocab.encode(item.text)[0])
            origin.append((item.node_id, 0))
            relation_pos[item.node_id] = pos
        else:
            ids = vocab.encode(item.text)
            if not ids:
                raise ValueError(f"label {item.text!r} encodes to no tokens")
            for tid in ids:
                pos = len(tokens)
                tokens.append(tid)
                origin.append((item.node_id, subword_count[item.node_id]))
                positions[item.node_id].append(pos)
                subword_count[item.node_id] += 1

    tokens.append(vocab.eos_id)
    origin.append((EOS_NODE, 0))

    target_of = {}
    source_of = {}
    for a, b in rg.edges:
        if rg.is_relation(b):
            source_of[b] = a
        else:
            target_of[a] = b

    edges: list[tuple[int, int, str]] = []
    for rid, _ in rg.relations:
        rpos = relation_pos[rid]
        for u in positions[source_of[rid]]:
            edges.append((u, rpos, "direct"))
            edges.append((rpos, u, "reverse"))
        for w in positions[target_of[rid]]:
            edges.append((rpos, w, "direct"))
            edges.append((w, rpos, "reverse"))

    return TokenGraph(tokens=tuple(tokens), origin=tuple(origin), edges=tuple(edges))


def adjacency(tg: TokenGraph, typed: bool = False, self_loops: bool = False) -> np.ndarray:
    """Dense adjacency of the token graph.

    Untyped: symmetric 0/1.  Typed: DIRECT/REVERSE entries (SELF on the
    diagonal when self_loops is set).
    """
    n = tg.n
    a = np.zeros((n, n), dtype=np.int8)
    for u, v, kind in tg.edges:
        if typed:
            a[u, v] = DIRECT if kind == "direct" else REVERSE
        else:
            a[u, v] = 1
            a[v, u] = 1
    if self_loops:
        np.fill_diagonal(a, SELF if typed else 1)
    return a
