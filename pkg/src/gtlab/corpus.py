"""Synthetic graph-to-text corpus.

Random concept/role graphs over a fixed grammar (predicates with
:ARG0/:ARG1, coordination with :op1/:op2, noun :mod attachment) paired
with deterministic template verbalizations.  The verbalization is a pure
function of the graph, and word order depends on edge direction, so a
bag-of-tokens encoder cannot resolve who does what to whom.

Splits draw from disjoint child seed streams of the corpus seed, and the
emitted JSONL is byte-identical for a given spec.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .amr import AmrGraph, serialize
from .bpe import Vocab, train_vocab

ROLES = (":ARG0", ":ARG1", ":op1", ":op2", ":mod")

NOUNS = (
    "boy girl dog cat bird fox wolf bear horse cow sheep mouse frog fish whale "
    "eagle crow snake tiger lion judge baker farmer doctor pilot sailor teacher "
    "singer dancer painter hunter guard clerk monk king queen thief chef poet scout"
).split()

TRANS_VERBS = (
    "chase find watch follow help ignore greet trust blame praise carry tease "
    "push pull visit warn scold hug"
).split()

INTRANS_VERBS = "sleep run swim jump laugh cry wait dance".split()

COMPL_VERBS = "want try hope plan refuse decide".split()

ADJECTIVES = "red blue old young small large happy angry quiet clever lazy brave shy proud".split()


def third_person(verb: str) -> str:
    if verb.endswith(("ch", "sh", "s", "x", "z")):
        return verb + "es"
    if verb.endswith("y") and verb[-2] not in "aeiou":
        return verb[:-1] + "ies"
    return verb + "s"


@dataclass(frozen=True)
class CorpusSpec:
    seed: int = 0
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    n_lemmas: int = 87
    max_depth: int = 3
    max_branching: int = 2
    reentrancy_p: float = 0.1

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CorpusSpec":
        return cls(**json.loads(text))


def _take(pool, fraction, total, minimum=2):
    k = max(minimum, round(total * fraction))
    return pool[: min(k, len(pool))]


class _Lexicon:
    def __init__(self, spec: CorpusSpec):
        t = spec.n_lemmas
        self.nouns = _take(NOUNS, 0.46, t)
        self.trans = _take(TRANS_VERBS, 0.21, t)
        self.intrans = _take(INTRANS_VERBS, 0.09, t)
        self.compl = _take(COMPL_VERBS, 0.07, t)
        self.adjectives = _take(ADJECTIVES, 0.17, t)


class _Builder:
    """Accumulates nodes/edges with penman-style variable names."""

    def __init__(self):
        self.nodes: list[tuple[str, str]] = []
        self.edges: list[tuple[str, str, str]] = []
        self._used: set[str] = set()

    def add_node(self, concept: str) -> str:
        base = concept[0]
        var = base
        k = 2
        while var in self._used:
            var = f"{base}{k}"
            k += 1
        self._used.add(var)
        self.nodes.append((var, concept))
        return var

    def add_edge(self, src: str, role: str, tgt: str) -> None:
        self.edges.append((src, role, tgt))


def _sample_np(rng: np.random.Generator, b: _Builder, lex: _Lexicon, allow_coord: bool):
    """Noun phrase: returns (var, surface text, is_plural)."""
    if allow_coord and rng.random() < 0.12:
        and_var = b.add_node("and")
        n1, t1, _ = _sample_np(rng, b, lex, allow_coord=False)
        n2, t2, _ = _sample_np(rng, b, lex, allow_coord=False)
        b.add_edge(and_var, ":op1", n1)
        b.add_edge(and_var, ":op2", n2)
        return and_var, f"{t1} and {t2}", True
    noun = rng.choice(lex.nouns)
    var = b.add_node(noun)
    text = f"the {noun}"
    if rng.random() < 0.35:
        adj = rng.choice(lex.adjectives)
        a_var = b.add_node(adj)
        b.add_edge(var, ":mod", a_var)
        text = f"the {adj} {noun}"
    return var, text, False


def _sample_clause(rng: np.random.Generator, b: _Builder, lex: _Lexicon, spec: CorpusSpec, depth: int):
    """Returns (verb var, full clause text, verb-phrase text in base form)."""
    allow_coord = spec.max_branching >= 2
    can_nest = depth + 1 < spec.max_depth
    kinds = ["trans", "intrans"] + (["compl"] if can_nest else [])
    weights = [0.55, 0.2, 0.25][: len(kinds)]
    kind = rng.choice(kinds, p=np.asarray(weights) / sum(weights))

    subj_var, subj_text, plural = _sample_np(rng, b, lex, allow_coord)

    def conj(verb):
        return verb if plural else third_person(verb)

    if kind == "intrans":
        verb = rng.choice(lex.intrans)
        v_var = b.add_node(f"{verb}-01")
        b.add_edge(v_var, ":ARG0", subj_var)
        return v_var, f"{subj_text} {conj(verb)}", verb
    if kind == "trans":
        verb = rng.choice(lex.trans)
        v_var = b.add_node(f"{verb}-01")
        b.add_edge(v_var, ":ARG0", subj_var)
        obj_var, obj_text, _ = _sample_np(rng, b, lex, allow_coord)
        b.add_edge(v_var, ":ARG1", obj_var)
        return v_var, f"{subj_text} {conj(verb)} {obj_text}", f"{verb} {obj_text}"

    verb = rng.choice(lex.compl)
    v_var = b.add_node(f"{verb}-01")
    b.add_edge(v_var, ":ARG0", subj_var)
    reentrant = not plural and rng.random() < spec.reentrancy_p
    if reentrant:
        inner_var, inner_vp = _sample_vp(rng, b, lex, spec, depth + 1, subj_var)
        b.add_edge(v_var, ":ARG1", inner_var)
        return v_var, f"{subj_text} {conj(verb)} to {inner_vp}", f"{verb} to {inner_vp}"
    inner_subj, inner_subj_text, _ = _sample_np(rng, b, lex, allow_coord=False)
    inner_var, inner_vp = _sample_vp(rng, b, lex, spec, depth + 1, inner_subj)
    b.add_edge(v_var, ":ARG1", inner_var)
    text = f"{subj_text} {conj(verb)} {inner_subj_text} to {inner_vp}"
    return v_var, text, f"{verb} {inner_subj_text} to {inner_vp}"


def _sample_vp(rng, b, lex, spec, depth: int, subj_var: str):
    """Verb phrase with a given subject node; verb kept in base form."""
    allow_coord = spec.max_branching >= 2
    if rng.random() < 0.35:
        verb = rng.choice(lex.intrans)
        v_var = b.add_node(f"{verb}-01")
        b.add_edge(v_var, ":ARG0", subj_var)
        return v_var, verb
    verb = rng.choice(lex.trans)
    v_var = b.add_node(f"{verb}-01")
    b.add_edge(v_var, ":ARG0", subj_var)
    obj_var, obj_text, _ = _sample_np(rng, b, lex, allow_coord)
    b.add_edge(v_var, ":ARG1", obj_var)
    return v_var, f"{verb} {obj_text}"


def sample_pair(rng: np.random.Generator, lex: _Lexicon, spec: CorpusSpec) -> tuple[AmrGraph, str]:
    b = _Builder()
    root, text, _ = _sample_clause(rng, b, lex, spec, depth=0)
    graph = AmrGraph(nodes=tuple(b.nodes), edges=tuple(b.edges), root=root)
    return graph, text


def gen_split(spec: CorpusSpec, stream: np.random.SeedSequence, count: int) -> list[dict]:
    rng = np.random.default_rng(stream)
    lex = _Lexicon(spec)
    out = []
    for _ in range(count):
        g, text = sample_pair(rng, lex, spec)
        out.append({"graph": serialize(g), "text": text})
    return out


def gen_corpus(spec: CorpusSpec) -> dict[str, list[dict]]:
    train_s, dev_s, test_s = np.random.SeedSequence(spec.seed).spawn(3)
    return {
        "train": gen_split(spec, train_s, spec.n_train),
        "dev": gen_split(spec, dev_s, spec.n_dev),
        "test": gen_split(spec, test_s, spec.n_test),
    }


def build_vocab(samples: list[dict], size: int = 512) -> Vocab:
    """BPE vocabulary over concept labels and reference texts, with role
    labels injected as atomic tokens."""
    entries = []
    for s in samples:
        entries.append(s["text"])
        for tok in s["graph"].replace("(", " ").replace(")", " ").split():
            if tok not in ("/",) and not tok.startswith(":"):
                entries.append(tok)
    return train_vocab(entries, size=size, atomic=ROLES)


def write_jsonl(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_corpus(spec: CorpusSpec, outdir: str | Path, vocab_size: int = 512) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    splits = gen_corpus(spec)
    for name, rows in splits.items():
        write_jsonl(outdir / f"{name}.jsonl", rows)
    vocab = build_vocab(splits["train"], size=vocab_size)
    (outdir / "vocab.json").write_text(vocab.to_json(), encoding="utf-8")
    (outdir / "corpus_spec.json").write_text(spec.to_json(), encoding="utf-8")
