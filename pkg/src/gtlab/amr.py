"""AMR-style concept/role graphs and their PENMAN-lite serialization.

PENMAN-lite is the subset `(var / concept :role (...)|var)` with nesting and
variable re-use for re-entrancy.  No wiki links, alignments, or string
literals.  A variable reference must point to a variable introduced earlier
in the string.

Relations are reified into nodes of their own (one per edge), which is the
graph form the token graph is later built from.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field


class ParseError(ValueError):
    """Raised on malformed PENMAN-lite input; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class AmrGraph:
    """Concept/role graph: nodes are (var, concept), edges are (src, role, tgt)."""

    nodes: tuple[tuple[str, str], ...]
    edges: tuple[tuple[str, str, str], ...]
    root: str

    def node_label(self, var: str) -> str:
        for v, label in self.nodes:
            if v == var:
                return label
        raise KeyError(var)

    def validate(self) -> None:
        ids = [v for v, _ in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids")
        known = set(ids)
        if self.root not in known:
            raise ValueError("root is not a node")
        for src, role, tgt in self.edges:
            if src not in known or tgt not in known:
                raise ValueError(f"edge endpoint missing: ({src}, {role}, {tgt})")
            if not role.startswith(":"):
                raise ValueError(f"role does not start with ':': {role}")
        # connectivity from root, edges taken as undirected
        adj = defaultdict(set)
        for src, _, tgt in self.edges:
            adj[src].add(tgt)
            adj[tgt].add(src)
        seen = {self.root}
        stack = [self.root]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        if seen != known:
            raise ValueError(f"graph not connected from root: unreachable {known - seen}")


_TOKEN_RE = re.compile(r"\(|\)|/|:[^\s()/]+|[^\s()/:]+")


def _lex(text: str) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        tokens.append((m.group(), pos))
        pos = m.end()
    return tokens


def parse_penman(text: str) -> AmrGraph:
    """Parse a PENMAN-lite string into an AmrGraph.

    Re-entrant variable references add edges to the existing node rather
    than introducing duplicates.
    """
    tokens = _lex(text)
    if not tokens:
        raise ParseError("empty input", 0)
    idx = 0

    def peek():
        return tokens[idx] if idx < len(tokens) else (None, len(text))

    def take(expected: str | None = None) -> tuple[str, int]:
        nonlocal idx
        tok, off = peek()
        if tok is None:
            raise ParseError("unexpected end of input", off)
        if expected is not None and tok != expected:
            raise ParseError(f"expected {expected!r}, found {tok!r}", off)
        idx += 1
        return tok, off

    nodes: list[tuple[str, str]] = []
    edges: list[tuple[str, str, str]] = []
    known: dict[str, str] = {}

    def parse_node() -> str:
        take("(")
        var, var_off = take()
        if var in ("(", ")", "/") or var.startswith(":"):
            raise ParseError(f"expected variable, found {var!r}", var_off)
        if var in known:
            raise ParseError(f"variable {var!r} redefined", var_off)
        take("/")
        concept, c_off = take()
        if concept in ("(", ")", "/") or concept.startswith(":"):
            raise ParseError("empty or malformed concept", c_off)
        known[var] = concept
        nodes.append((var, concept))
        while True:
            tok, off = peek()
            if tok == ")":
                take()
                return var
            if tok is None:
                raise ParseError("unbalanced parentheses: missing ')'", off)
            if not tok.startswith(":"):
                raise ParseError(f"expected role or ')', found {tok!r}", off)
            role, _ = take()
            tok, off = peek()
            if tok == "(":
                child = parse_node()
            elif tok is None or tok in (")", "/") or tok.startswith(":"):
                raise ParseError(f"role {role} has no target", off)
            else:
                ref, ref_off = take()
                if ref not in known:
                    raise ParseError(f"unknown variable reference {ref!r}", ref_off)
                child = ref
            edges.append((var, role, child))

    root = parse_node()
    tok, off = peek()
    if tok is not None:
        raise ParseError(f"trailing input {tok!r}", off)
    g = AmrGraph(nodes=tuple(nodes), edges=tuple(edges), root=root)
    g.validate()
    return g


def serialize(g: AmrGraph) -> str:
    """PENMAN-lite text for a graph whose nodes are all reachable from the
    root along edge direction (true for generator output)."""
    children = defaultdict(list)
    for src, role, tgt in g.edges:
        children[src].append((role, tgt))
    labels = dict(g.nodes)
    emitted: set[str] = set()

    def emit(var: str) -> str:
        emitted.add(var)
        parts = [f"({var} / {labels[var]}"]
        for role, tgt in children[var]:
            if tgt in emitted:
                parts.append(f"{role} {tgt}")
            else:
                parts.append(f"{role} {emit(tgt)}")
        return " ".join(parts) + ")"

    out = emit(g.root)
    if len(emitted) != len(g.nodes):
        missing = {v for v, _ in g.nodes} - emitted
        raise ValueError(f"nodes unreachable along edge direction: {missing}")
    return out


@dataclass(frozen=True)
class ReifiedGraph:
    """Bipartite graph after turning each role edge into a relation node.

    Edges run concept -> relation -> concept along the original direction.
    Relation node ids carry a '#' so they can never collide with variables.
    """

    concepts: tuple[tuple[str, str], ...]
    relations: tuple[tuple[str, str], ...]
    edges: tuple[tuple[str, str], ...]
    root: str

    def is_relation(self, node_id: str) -> bool:
        return "#" in node_id


def reify(g: AmrGraph) -> ReifiedGraph:
    relations = []
    edges = []
    for i, (src, role, tgt) in enumerate(g.edges):
        rid = f"r#{i}"
        relations.append((rid, role))
        edges.append((src, rid))
        edges.append((rid, tgt))
    return ReifiedGraph(
        concepts=tuple(g.nodes),
        relations=tuple(relations),
        edges=tuple(edges),
        root=g.root,
    )


def check_bipartite(rg: ReifiedGraph) -> None:
    """2-coloring check: every edge joins a concept and a relation node."""
    for a, b in rg.edges:
        if rg.is_relation(a) == rg.is_relation(b):
            raise ValueError(f"edge ({a}, {b}) is not concept<->relation")


@dataclass(frozen=True)
class LinearItem:
    """One emitted label of the linearization.

    kind is 'concept' (full label at first visit), 'relation' (role label),
    or 'ref' (variable token for a re-entrant revisit).  node_id is the
    reified-graph node the item belongs to.
    """

    node_id: str
    text: str
    kind: str


def linearize(rg: ReifiedGraph) -> list[LinearItem]:
    """Depth-first pre-order label sequence, children in source order.

    Re-entrant concepts emit their variable name at revisits instead of
    the concept label.
    """
    role_of = dict(rg.relations)
    label_of = dict(rg.concepts)
    out_rel = defaultdict(list)
    target_of = {}
    for a, b in rg.edges:
        if rg.is_relation(b):
            out_rel[a].append(b)
        else:
            target_of[a] = b
    items: list[LinearItem] = []
    visited: set[str] = set()

    def walk(concept: str) -> None:
        visited.add(concept)
        items.append(LinearItem(concept, label_of[concept], "concept"))
        for rel in out_rel[concept]:
            items.append(LinearItem(rel, role_of[rel], "relation"))
            tgt = target_of[rel]
            if tgt in visited:
                items.append(LinearItem(tgt, tgt, "ref"))
            else:
                walk(tgt)

    walk(rg.root)
    return items
