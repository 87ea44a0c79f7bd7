"""Deterministic byte-pair subword vocabulary with an atomic escape hatch.

Words get a leading '▁' marker (SentencePiece style) so sequences of
words round-trip through encode/decode with their spaces.  Strings in the
atomic set (role labels such as ':ARG0') always map to exactly one id and
are never split.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

WORD_MARK = "▁"

SPECIALS = ("<pad>", "<unk>", "<bos>", "<eos>", "<mask>")


@dataclass
class Vocab:
    tokens: list[str]
    merges: list[tuple[str, str]]
    atomic: tuple[str, ...]
    specials: dict[str, int]
    _index: dict[str, int] = field(default_factory=dict, repr=False)
    _merge_rank: dict[tuple[str, str], int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {t: i for i, t in enumerate(self.tokens)}
        self._merge_rank = {m: r for r, m in enumerate(self.merges)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.specials["<pad>"]

    @property
    def unk_id(self) -> int:
        return self.specials["<unk>"]

    @property
    def bos_id(self) -> int:
        return self.specials["<bos>"]

    @property
    def eos_id(self) -> int:
        return self.specials["<eos>"]

    @property
    def mask_id(self) -> int:
        return self.specials["<mask>"]

    def id_of(self, token: str) -> int:
        return self._index.get(token, self.unk_id)

    def is_atomic(self, s: str) -> bool:
        return s in self.atomic

    def _encode_word(self, word: str) -> list[int]:
        pieces = [c if c in self._index else "<unk>" for c in WORD_MARK + word]
        while len(pieces) > 1:
            best_rank, best_pos = None, None
            for i in range(len(pieces) - 1):
                rank = self._merge_rank.get((pieces[i], pieces[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank, best_pos = rank, i
            if best_pos is None:
                break
            pieces[best_pos : best_pos + 2] = [pieces[best_pos] + pieces[best_pos + 1]]
        return [self.id_of(p) for p in pieces]

    def encode(self, text: str) -> list[int]:
        """Encode whitespace-separated words; atomic strings become one id."""
        ids: list[int] = []
        for word in text.split():
            if word in self.atomic:
                ids.append(self._index[word])
            else:
                ids.extend(self._encode_word(word))
        return ids

    def decode(self, ids: list[int]) -> str:
        text = "".join(self.tokens[i] for i in ids if self.tokens[i] not in SPECIALS)
        return text.replace(WORD_MARK, " ").strip()

    def to_json(self) -> str:
        payload = {
            "tokens": self.tokens,
            "merges": [list(m) for m in self.merges],
            "atomic": list(self.atomic),
            "specials": self.specials,
        }
        return json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=None)

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        d = json.loads(text)
        return cls(
            tokens=list(d["tokens"]),
            merges=[tuple(m) for m in d["merges"]],
            atomic=tuple(d["atomic"]),
            specials=dict(d["specials"]),
        )


def train_vocab(corpus: list[str], size: int, atomic: list[str] | tuple[str, ...] = ()) -> Vocab:
    """Learn greedy byte-pair merges from word frequencies.

    `corpus` entries are whitespace-split into words; atomic strings are
    injected as unsplittable ids.  Ties in pair frequency break by the
    lexicographically smallest pair, so training is deterministic given the
    same corpus multiset.
    """
    atomic = tuple(dict.fromkeys(atomic))
    counts: Counter[str] = Counter()
    for entry in corpus:
        for word in entry.split():
            if word not in atomic:
                counts[word] += 1

    alphabet = sorted({c for w in counts for c in w} | {WORD_MARK})
    base = len(SPECIALS) + len(alphabet) + len(atomic)
    if size < base:
        raise ValueError(f"vocab size {size} below minimum {base} (specials + alphabet + atomic)")

    words = {w: [c for c in WORD_MARK + w] for w in counts}
    merges: list[tuple[str, str]] = []
    n_tokens = base
    while n_tokens < size:
        pair_counts: Counter[tuple[str, str]] = Counter()
        for w, pieces in words.items():
            freq = counts[w]
            for i in range(len(pieces) - 1):
                pair_counts[(pieces[i], pieces[i + 1])] += freq
        if not pair_counts:
            break
        best = min(pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        if pair_counts[best] < 2:
            break
        merges.append(best)
        merged = best[0] + best[1]
        for w, pieces in words.items():
            i = 0
            while i < len(pieces) - 1:
                if pieces[i] == best[0] and pieces[i + 1] == best[1]:
                    pieces[i : i + 2] = [merged]
                else:
                    i += 1
        n_tokens += 1

    tokens = list(SPECIALS) + alphabet + list(atomic)
    for a, b in merges:
        tokens.append(a + b)
    specials = {s: i for i, s in enumerate(SPECIALS)}
    return Vocab(tokens=tokens, merges=merges, atomic=atomic, specials=specials)
