"""Bottleneck adapters: vanilla MLP, and graph-aware variants (GCN / GAT /
RGCN) whose down-projection is a single GNN layer over the token graph.

All variants compute  h + W_up . f(LayerNorm(h))  so they reduce to the
identity while the up-projection is zero (its init).  GCN and GAT consume
the symmetrized untyped adjacency; only RGCN sees direct/reverse edge
types, realized as relation-specific input projections (self loops are a
third relation).

The GCN normalizer follows the formula as printed in its source,
1/(deg(u)*deg(v)); the conventional 1/sqrt(deg(u)*deg(v)) is available as
gcn_norm="symmetric_sqrt".  deg is the row sum of the adjacency actually
supplied (so self loops count).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tk
from .tensor import Tensor
from .tokengraph import DIRECT, REVERSE, SELF

ADAPTER_KINDS = ("mlp", "gcn", "gat", "rgcn")

NEG_INF = -1e9


class IsolatedNodeError(ValueError):
    """Degree-0 node under a normalization that divides by degree."""


@dataclass(frozen=True)
class AdapterSpec:
    kind: str = "mlp"
    d_g: int = 32
    gcn_norm: str = "paper"  # or "symmetric_sqrt"
    self_loops: bool = True
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.kind not in ADAPTER_KINDS:
            raise ValueError(f"unknown adapter kind {self.kind!r}")
        if self.d_g < 1:
            raise ValueError("bottleneck width must be >= 1")
        if self.gcn_norm not in ("paper", "symmetric_sqrt"):
            raise ValueError(f"unknown gcn_norm {self.gcn_norm!r}")


def init_adapter_params(spec: AdapterSpec, d_model: int, rng: np.random.Generator, dtype=np.float32) -> dict[str, Tensor]:
    """Fresh adapter parameters; up-projection starts at zero so the adapter
    is the identity at initialization."""

    def p(arr):
        return Tensor(arr.astype(dtype), requires_grad=True)

    def w(rows, cols):
        return p(rng.normal(0.0, 1.0 / np.sqrt(cols), size=(rows, cols)))

    d_g = spec.d_g
    params = {
        "ln.g": p(np.ones(d_model)),
        "ln.b": p(np.zeros(d_model)),
        "w_up": p(np.zeros((d_model, d_g))),
        "b_up": p(np.zeros(d_model)),
    }
    if spec.kind == "mlp":
        params["w_down"] = w(d_g, d_model)
        params["b_down"] = p(np.zeros(d_g))
    elif spec.kind == "gcn":
        params["w"] = w(d_g, d_model)
        params["b"] = p(np.zeros(d_g))
    elif spec.kind == "gat":
        params["w"] = w(d_g, d_model)
        params["b"] = p(np.zeros(d_g))
        params["a"] = p(rng.normal(0.0, 1.0 / np.sqrt(d_g), size=(2, d_g)))
    else:  # rgcn
        for rel in ("direct", "reverse", "self"):
            params[f"w_{rel}"] = w(d_g, d_model)
        params["b"] = p(np.zeros(d_g))
    return params


def _rownorm(a: np.ndarray) -> np.ndarray:
    deg = a.sum(axis=-1, keepdims=True)
    return a / np.maximum(deg, 1.0)


def graph_tensors(
    untyped: list[np.ndarray],
    typed: list[np.ndarray],
    spec: AdapterSpec,
    n_max: int,
    dtype=np.float32,
) -> dict[str, np.ndarray]:
    """Pad per-sample adjacencies into the constant batch arrays each GNN
    kind consumes.  Raises IsolatedNodeError when a degree normalization
    would divide by zero (only possible with self_loops off)."""
    bsz = len(untyped)
    out: dict[str, np.ndarray] = {}
    if spec.kind == "mlp":
        return out
    if spec.kind in ("gcn", "gat"):
        for a in untyped:
            if not spec.self_loops and (np.asarray(a).sum(axis=1) == 0).any():
                raise IsolatedNodeError("degree-0 node with self_loops disabled")
    if spec.kind == "gcn":
        coef = np.zeros((bsz, n_max, n_max), dtype=dtype)
        for i, a in enumerate(untyped):
            a = np.asarray(a, dtype=np.float64)
            a = (a != 0).astype(np.float64)
            n = a.shape[0]
            deg = np.maximum(a.sum(axis=1), 1.0)
            if spec.gcn_norm == "paper":
                c = a / np.outer(deg, deg)
            else:
                c = a / np.sqrt(np.outer(deg, deg))
            coef[i, :n, :n] = c
        out["coef"] = coef
    elif spec.kind == "gat":
        mask = np.zeros((bsz, n_max, n_max), dtype=dtype)
        for i, a in enumerate(untyped):
            n = a.shape[0]
            mask[i, :n, :n] = (np.asarray(a) != 0).astype(dtype)
        out["mask"] = mask
        out["neg"] = (1.0 - mask) * NEG_INF
        out["has_nbr"] = (mask.sum(axis=-1, keepdims=True) > 0).astype(dtype)
    else:  # rgcn
        for name, code in (("direct", DIRECT), ("reverse", REVERSE), ("self", SELF)):
            coef = np.zeros((bsz, n_max, n_max), dtype=dtype)
            for i, t in enumerate(typed):
                t = np.asarray(t)
                bad = set(np.unique(t)) - {0, DIRECT, REVERSE, SELF}
                if bad:
                    raise ValueError(f"unknown relation tag(s) {sorted(bad)} in typed adjacency")
                n = t.shape[0]
                coef[i, :n, :n] = _rownorm((t == code).astype(np.float64))
            out[f"coef_{name}"] = coef
    return out


def gcn_layer(z: Tensor, coef: np.ndarray, w: Tensor, b: Tensor) -> Tensor:
    """relu(C @ (z W^T) + b) with C the degree-normalized adjacency."""
    return tk.relu(tk.matmul(Tensor(coef.astype(z.dtype)), tk.linear(z, w)) + b)


def gat_layer(z: Tensor, gb: dict[str, np.ndarray], w: Tensor, a: Tensor, b: Tensor, slope: float = 0.2) -> Tensor:
    s = tk.linear(z, w)  # (B, n, d_g)
    e_src = tk.linear(s, a[0:1])  # (B, n, 1)
    e_dst = tk.transpose(tk.linear(s, a[1:2]), (-1, -2))  # (B, 1, n)
    e = tk.leaky_relu(e_src + e_dst, slope)
    att = tk.softmax(e + Tensor(gb["neg"].astype(z.dtype)), axis=-1)
    att = att * Tensor(gb["has_nbr"].astype(z.dtype))
    return tk.relu(tk.matmul(att, s) + b)


def rgcn_layer(z: Tensor, gb: dict[str, np.ndarray], params: dict[str, Tensor], self_loops: bool) -> Tensor:
    acc = tk.matmul(Tensor(gb["coef_direct"].astype(z.dtype)), tk.linear(z, params["w_direct"]))
    acc = acc + tk.matmul(Tensor(gb["coef_reverse"].astype(z.dtype)), tk.linear(z, params["w_reverse"]))
    if self_loops:
        acc = acc + tk.matmul(Tensor(gb["coef_self"].astype(z.dtype)), tk.linear(z, params["w_self"]))
    return tk.relu(acc + params["b"])


def adapter_forward(
    h: Tensor,
    params: dict[str, Tensor],
    spec: AdapterSpec,
    gb: dict[str, np.ndarray] | None = None,
    valid: np.ndarray | None = None,
) -> Tensor:
    """Residual adapter output  h + W_up . f(LayerNorm(h)).

    gb holds the constant graph tensors from graph_tensors() (unused for
    the MLP kind); valid is an optional (B, n, 1) mask that zeroes the
    update on padded positions.
    """
    z = tk.layer_norm(h, params["ln.g"], params["ln.b"])
    if spec.kind == "mlp":
        g = tk.relu(tk.linear(z, params["w_down"], params["b_down"]))
    elif spec.kind == "gcn":
        g = gcn_layer(z, gb["coef"], params["w"], params["b"])
    elif spec.kind == "gat":
        g = gat_layer(z, gb, params["w"], params["a"], params["b"], spec.leaky_slope)
    else:
        g = rgcn_layer(z, gb, params, spec.self_loops)
    delta = tk.linear(g, params["w_up"], params["b_up"])
    if valid is not None:
        delta = delta * Tensor(valid.astype(h.dtype))
    return h + delta
