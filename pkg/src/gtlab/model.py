"""Encoder-decoder transformer with bucketed relative-position biases.

Pre-layer-norm blocks.  A single scalar-bias table per head is shared by
all encoder layers, a second one by all decoder self-attention layers;
cross-attention carries no positional bias.  The encoder bias can be
switched off (all zeros) or computed over shuffled position indices;
decoder biases are always on.  Each layer ends in an adapter slot:
graph-aware kinds in the encoder, plain MLP in the decoder.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, replace

import numpy as np

from . import tensor as tk
from .adapters import AdapterSpec, adapter_forward, graph_tensors, init_adapter_params
from .tensor import Tensor, no_grad

NEG_INF = -1e9


@dataclass(frozen=True)
class ModelSpec:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 3
    n_dec_layers: int = 3
    d_ff: int = 128
    rpe_num_buckets: int = 32
    rpe_max_distance: int = 128
    max_target_len: int = 64

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        for field in ("vocab_size", "d_model", "n_heads", "n_enc_layers", "n_dec_layers", "d_ff"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be >= 1")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls(**json.loads(text))


@dataclass(frozen=True)
class RpeMode:
    kind: str = "on"  # on | off | shuffle
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("on", "off", "shuffle"):
            raise ValueError(f"unknown rpe mode {self.kind!r}")


def rel_bucket(delta, num_buckets: int = 32, max_distance: int = 128) -> np.ndarray:
    """Bucketed signed relative offset (T5-family convention).

    Half the buckets per direction; within a direction the first half are
    exact offsets and the rest grow logarithmically up to max_distance,
    clamping beyond.  Offset 0 has its own bucket.
    """
    delta = np.asarray(delta, dtype=np.int64)
    half = num_buckets // 2
    bucket = (delta > 0).astype(np.int64) * half
    ad = np.abs(delta)
    max_exact = half // 2
    with np.errstate(divide="ignore"):
        log_ratio = np.log(np.maximum(ad, 1) / max_exact) / np.log(max_distance / max_exact)
    large = max_exact + (log_ratio * (half - max_exact)).astype(np.int64)
    large = np.minimum(large, half - 1)
    return bucket + np.where(ad < max_exact, ad, large)


def relative_bias(table: Tensor, pos_q: np.ndarray, pos_k: np.ndarray, num_buckets: int, max_distance: int) -> Tensor:
    """Bias tensor from a (heads, buckets) table.

    1-D positions give (H, nq, nk); 2-D per-sample positions (B, n) give
    (B, H, nq, nk).  bias[i][j] depends only on pos_k[j] - pos_q[i].
    """
    delta = pos_k[..., None, :] - pos_q[..., :, None]
    buckets = rel_bucket(delta, num_buckets, max_distance)
    values = tk.embedding_lookup(tk.transpose(table), buckets)  # (..., nq, nk, H)
    if buckets.ndim == 2:
        return tk.permute(values, (2, 0, 1))
    return tk.permute(values, (0, 3, 1, 2))


def attention(q: Tensor, k: Tensor, v: Tensor, bias: Tensor | None = None, mask: np.ndarray | None = None):
    """softmax(q k^T / sqrt(d_k) + bias + mask) v.

    q, k, v: (..., n, d_k); bias broadcastable to the logit shape; mask is
    an additive ndarray (0 for keep, large negative for drop).  Returns
    (context, attention weights).
    """
    d_k = q.shape[-1]
    logits = tk.matmul(q, tk.transpose(k)) * (1.0 / np.sqrt(d_k))
    if bias is not None:
        logits = logits + bias
    if mask is not None:
        logits = logits + Tensor(np.asarray(mask, dtype=logits.dtype))
    attn = tk.softmax(logits, axis=-1)
    return tk.matmul(attn, v), attn


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, n, d = x.shape
    return tk.permute(tk.reshape(x, (b, n, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return tk.reshape(tk.permute(x, (0, 2, 1, 3)), (b, n, h * dh))


def init_backbone_params(spec: ModelSpec, rng: np.random.Generator, dtype=np.float32) -> dict[str, Tensor]:
    def p(arr):
        return Tensor(arr.astype(dtype), requires_grad=True)

    def w(rows, cols):
        return p(rng.normal(0.0, 1.0 / np.sqrt(cols), size=(rows, cols)))

    d, ff = spec.d_model, spec.d_ff
    params = {
        "backbone.embed": p(rng.normal(0.0, 0.5, size=(spec.vocab_size, d))),
        "backbone.enc.rel": p(np.zeros((spec.n_heads, spec.rpe_num_buckets))),
        "backbone.dec.rel": p(np.zeros((spec.n_heads, spec.rpe_num_buckets))),
    }

    def block(prefix, cross: bool):
        params[f"{prefix}.ln1.g"] = p(np.ones(d))
        params[f"{prefix}.ln1.b"] = p(np.zeros(d))
        for name in ("wq", "wk", "wv", "wo"):
            params[f"{prefix}.attn.{name}"] = w(d, d)
            params[f"{prefix}.attn.{name[1]}b"] = p(np.zeros(d))
        if cross:
            params[f"{prefix}.lnx.g"] = p(np.ones(d))
            params[f"{prefix}.lnx.b"] = p(np.zeros(d))
            for name in ("wq", "wk", "wv", "wo"):
                params[f"{prefix}.xattn.{name}"] = w(d, d)
                params[f"{prefix}.xattn.{name[1]}b"] = p(np.zeros(d))
        params[f"{prefix}.ln2.g"] = p(np.ones(d))
        params[f"{prefix}.ln2.b"] = p(np.zeros(d))
        params[f"{prefix}.ffw.w1"] = w(ff, d)
        params[f"{prefix}.ffw.b1"] = p(np.zeros(ff))
        params[f"{prefix}.ffw.w2"] = w(d, ff)
        params[f"{prefix}.ffw.b2"] = p(np.zeros(d))

    for i in range(spec.n_enc_layers):
        block(f"backbone.enc.{i}", cross=False)
    for i in range(spec.n_dec_layers):
        block(f"backbone.dec.{i}", cross=True)
    for side in ("enc", "dec"):
        params[f"backbone.{side}.ln_f.g"] = p(np.ones(d))
        params[f"backbone.{side}.ln_f.b"] = p(np.zeros(d))
    return params


class Seq2SeqModel:
    """Backbone parameters plus optional per-layer adapters.

    Adapter parameters live under the 'adapter.' prefix so that
    freeze/checksum logic can separate them from the backbone.
    """

    def __init__(
        self,
        spec: ModelSpec,
        params: dict[str, Tensor],
        enc_adapter: AdapterSpec | None = None,
        dec_adapter: AdapterSpec | None = None,
    ):
        self.spec = spec
        self.params = params
        self.enc_adapter = enc_adapter
        self.dec_adapter = dec_adapter

    @classmethod
    def init(
        cls,
        spec: ModelSpec,
        seed: int,
        enc_adapter: AdapterSpec | None = None,
        dec_adapter: AdapterSpec | None = None,
        dtype=np.float32,
    ) -> "Seq2SeqModel":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB0DE]))
        params = init_backbone_params(spec, rng, dtype)
        model = cls(spec, params, enc_adapter, dec_adapter)
        model.attach_adapters(enc_adapter, dec_adapter, seed, dtype)
        return model

    def attach_adapters(self, enc_adapter, dec_adapter, seed: int, dtype=np.float32) -> None:
        self.enc_adapter = enc_adapter
        self.dec_adapter = dec_adapter
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xADA7]))
        self.params = {k: v for k, v in self.params.items() if not k.startswith("adapter.")}
        if enc_adapter is not None:
            for i in range(self.spec.n_enc_layers):
                for name, t in init_adapter_params(enc_adapter, self.spec.d_model, rng, dtype).items():
                    self.params[f"adapter.enc.{i}.{name}"] = t
        if dec_adapter is not None:
            for i in range(self.spec.n_dec_layers):
                for name, t in init_adapter_params(dec_adapter, self.spec.d_model, rng, dtype).items():
                    self.params[f"adapter.dec.{i}.{name}"] = t

    # parameter bookkeeping -------------------------------------------------

    def backbone_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items() if k.startswith("backbone.")}

    def adapter_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items() if k.startswith("adapter.")}

    def trainable(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if v.requires_grad}

    def freeze_backbone(self) -> None:
        for k, v in self.params.items():
            if k.startswith("backbone."):
                v.requires_grad = False

    def n_params(self, prefix: str = "") -> int:
        return sum(v.data.size for k, v in self.params.items() if k.startswith(prefix))

    # forward ---------------------------------------------------------------

    def _adapter_params(self, side: str, i: int) -> dict[str, Tensor]:
        prefix = f"adapter.{side}.{i}."
        return {k[len(prefix) :]: v for k, v in self.params.items() if k.startswith(prefix)}

    def _enc_bias(self, n: int, rpe: RpeMode, perms: np.ndarray | None) -> Tensor | None:
        if rpe.kind == "off":
            return None
        if rpe.kind == "shuffle":
            if perms is None:
                raise ValueError("rpe mode 'shuffle' needs per-sample position permutations")
            pos = perms
        else:
            pos = np.arange(n)
        return relative_bias(
            self.params["backbone.enc.rel"], pos, pos, self.spec.rpe_num_buckets, self.spec.rpe_max_distance
        )

    def encode(
        self,
        ids: np.ndarray,
        pad_mask: np.ndarray,
        gb: dict[str, np.ndarray] | None = None,
        rpe: RpeMode = RpeMode("on"),
        perms: np.ndarray | None = None,
        collect: bool = False,
    ):
        """Run the encoder stack.

        ids, pad_mask: (B, n); gb: constant graph tensors for the adapter.
        Returns (final states (B, n, d), per-layer adapter outputs, per-layer
        attention weights); the layer lists are empty unless collect is set.
        """
        bsz, n = ids.shape
        bias = self._enc_bias(n, rpe, perms)
        key_mask = ((1.0 - pad_mask) * NEG_INF)[:, None, None, :]
        valid = pad_mask[:, :, None]
        x = tk.embedding_lookup(self.params["backbone.embed"], ids)
        hiddens, attns = [], []
        for i in range(self.spec.n_enc_layers):
            pr = f"backbone.enc.{i}"
            x = self._self_attn_block(x, pr, bias, key_mask, store=attns if collect else None)
            x = self._ffw_block(x, pr)
            if self.enc_adapter is not None:
                x = adapter_forward(x, self._adapter_params("enc", i), self.enc_adapter, gb, valid)
            if collect:
                hiddens.append(x)
        out = tk.layer_norm(x, self.params["backbone.enc.ln_f.g"], self.params["backbone.enc.ln_f.b"])
        return out, hiddens, attns

    def _self_attn_block(self, x, pr, bias, mask, store=None):
        z = tk.layer_norm(x, self.params[f"{pr}.ln1.g"], self.params[f"{pr}.ln1.b"])
        h = self.spec.n_heads
        q = _split_heads(tk.linear(z, self.params[f"{pr}.attn.wq"], self.params[f"{pr}.attn.qb"]), h)
        k = _split_heads(tk.linear(z, self.params[f"{pr}.attn.wk"], self.params[f"{pr}.attn.kb"]), h)
        v = _split_heads(tk.linear(z, self.params[f"{pr}.attn.wv"], self.params[f"{pr}.attn.vb"]), h)
        ctx, attn = attention(q, k, v, bias, mask)
        if store is not None:
            store.append(attn)
        return x + tk.linear(_merge_heads(ctx), self.params[f"{pr}.attn.wo"], self.params[f"{pr}.attn.ob"])

    def _ffw_block(self, x, pr):
        z = tk.layer_norm(x, self.params[f"{pr}.ln2.g"], self.params[f"{pr}.ln2.b"])
        inner = tk.relu(tk.linear(z, self.params[f"{pr}.ffw.w1"], self.params[f"{pr}.ffw.b1"]))
        return x + tk.linear(inner, self.params[f"{pr}.ffw.w2"], self.params[f"{pr}.ffw.b2"])

    def decode_logits(
        self,
        dec_ids: np.ndarray,
        dec_pad: np.ndarray,
        enc_out: Tensor,
        enc_pad: np.ndarray,
    ) -> Tensor:
        """Teacher-forced decoder logits (B, m, vocab)."""
        bsz, m = dec_ids.shape
        h = self.spec.n_heads
        bias = relative_bias(
            self.params["backbone.dec.rel"],
            np.arange(m),
            np.arange(m),
            self.spec.rpe_num_buckets,
            self.spec.rpe_max_distance,
        )
        causal = np.triu(np.full((m, m), NEG_INF), k=1)[None, None]
        self_mask = causal + ((1.0 - dec_pad) * NEG_INF)[:, None, None, :]
        cross_mask = ((1.0 - enc_pad) * NEG_INF)[:, None, None, :]
        valid = dec_pad[:, :, None]
        x = tk.embedding_lookup(self.params["backbone.embed"], dec_ids)
        for i in range(self.spec.n_dec_layers):
            pr = f"backbone.dec.{i}"
            x = self._self_attn_block(x, pr, bias, self_mask)
            z = tk.layer_norm(x, self.params[f"{pr}.lnx.g"], self.params[f"{pr}.lnx.b"])
            q = _split_heads(tk.linear(z, self.params[f"{pr}.xattn.wq"], self.params[f"{pr}.xattn.qb"]), h)
            k = _split_heads(tk.linear(enc_out, self.params[f"{pr}.xattn.wk"], self.params[f"{pr}.xattn.kb"]), h)
            v = _split_heads(tk.linear(enc_out, self.params[f"{pr}.xattn.wv"], self.params[f"{pr}.xattn.vb"]), h)
            ctx, _ = attention(q, k, v, None, cross_mask)
            x = x + tk.linear(_merge_heads(ctx), self.params[f"{pr}.xattn.wo"], self.params[f"{pr}.xattn.ob"])
            x = self._ffw_block(x, pr)
            if self.dec_adapter is not None:
                x = adapter_forward(x, self._adapter_params("dec", i), self.dec_adapter, None, valid)
        x = tk.layer_norm(x, self.params["backbone.dec.ln_f.g"], self.params["backbone.dec.ln_f.b"])
        return tk.matmul(x, tk.transpose(self.params["backbone.embed"]))

    def loss(
        self,
        enc_ids: np.ndarray,
        enc_pad: np.ndarray,
        dec_in: np.ndarray,
        dec_pad: np.ndarray,
        targets: np.ndarray,
        target_mask: np.ndarray,
        gb: dict[str, np.ndarray] | None = None,
        rpe: RpeMode = RpeMode("on"),
        perms: np.ndarray | None = None,
    ) -> Tensor:
        enc_out, _, _ = self.encode(enc_ids, enc_pad, gb, rpe, perms)
        logits = self.decode_logits(dec_in, dec_pad, enc_out, enc_pad)
        return tk.cross_entropy(logits, targets, target_mask)

    # generation ------------------------------------------------------------

    def beam_search(
        self,
        enc_ids: np.ndarray,
        enc_pad: np.ndarray,
        bos_id: int,
        eos_id: int,
        pad_id: int,
        beam: int = 5,
        max_len: int | None = None,
        gb: dict[str, np.ndarray] | None = None,
        rpe: RpeMode = RpeMode("on"),
        perms: np.ndarray | None = None,
    ) -> tuple[list[list[int]], np.ndarray]:
        """Length-normalized beam search over a batch of samples.

        Candidate beams are ranked by cumulative log-probability with ties
        broken by token id; finished hypotheses compare by logp / length.
        Returns token lists (eos stripped) and their normalized scores.
        """
        if beam < 1:
            raise ValueError("beam must be >= 1")
        if max_len is None:
            max_len = self.spec.max_target_len
        n_samples = enc_ids.shape[0]
        with no_grad():
            enc_out, _, _ = self.encode(enc_ids, enc_pad, gb, rpe, perms)
            enc_rep = Tensor(np.repeat(enc_out.data, beam, axis=0))
            pad_rep = np.repeat(enc_pad, beam, axis=0)
            seqs = np.full((n_samples * beam, 1), bos_id, dtype=np.int64)
            scores = np.full((n_samples, beam), -np.inf)
            scores[:, 0] = 0.0
            done = np.zeros((n_samples, beam), dtype=bool)
            lengths = np.zeros((n_samples, beam), dtype=np.int64)
            for _ in range(max_len):
                if done.all():
                    break
                dec_pad = np.ones_like(seqs, dtype=np.float64)
                logits = self.decode_logits(seqs, dec_pad, enc_rep, pad_rep).data[:, -1]
                logits = logits - logits.max(axis=-1, keepdims=True)
                logp = logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))
                vocab = logp.shape[-1]
                logp = logp.reshape(n_samples, beam, vocab)
                # finished beams only extend with pad at unchanged score
                logp[done] = -np.inf
                logp[done, pad_id] = 0.0
                total = scores[:, :, None] + logp
                flat = total.reshape(n_samples, beam * vocab)
                next_tok = np.empty((n_samples * beam, 1), dtype=np.int64)
                new_seqs = np.empty((n_samples * beam, seqs.shape[1]), dtype=np.int64)
                for s in range(n_samples):
                    order = np.lexsort((np.arange(beam * vocab), -flat[s]))[:beam]
                    src_beam = order // vocab
                    tok = order % vocab
                    scores[s] = flat[s, order]
                    was_done = done[s, src_beam]
                    done[s] = was_done | (tok == eos_id)
                    lengths[s] = lengths[s, src_beam] + (~was_done)
                    rows = s * beam + np.arange(beam)
                    new_seqs[rows] = seqs[s * beam + src_beam]
                    next_tok[rows, 0] = tok
                seqs = np.concatenate([new_seqs, next_tok], axis=1)
        norm = scores / np.maximum(lengths, 1)
        outs: list[list[int]] = []
        best_scores = np.empty(n_samples)
        for s in range(n_samples):
            best = int(np.argmax(norm[s]))
            best_scores[s] = norm[s, best]
            toks = []
            for t in seqs[s * beam + best, 1:]:
                if t == eos_id or t == pad_id:
                    break
                toks.append(int(t))
            outs.append(toks)
        return outs, best_scores
