"""Quantity encoders: one representation vector per entry of Q^(0).

Text quantities get the contextual vector at their sentinel-token position,
from either a small trainable encoder (bidirectional GRU stack or a
self-attention stack) or a frozen externally-exported embedding file.
Constants are position-less and always come from a learned per-constant
table.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError
from .ingest import ProblemInstance, QUANT_TOKEN
from .tensor import ParamStore, Tensor

UNK = "<unk>"


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    dim: int = 64
    kind: str = "bigru"            # bigru | attention
    layers: int = 2
    heads: int = 4
    max_len: int = 512             # attention kind only
    mode: str = "trainable"        # trainable | frozen
    n_constants: int = 2
    dropout: float = 0.0

    def __post_init__(self):
        if self.kind == "bigru" and self.dim % 2:
            raise ConfigError("bigru encoder needs an even dim")
        if self.kind == "attention" and self.dim % self.heads:
            raise ConfigError("attention encoder needs dim divisible by heads")
        if self.kind not in ("bigru", "attention"):
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        if self.mode not in ("trainable", "frozen"):
            raise ConfigError(f"unknown encoder mode {self.mode!r}")


@dataclass
class Vocab:
    index: dict[str, int]

    @staticmethod
    def build(instances: list[ProblemInstance], min_freq: int = 1) -> "Vocab":
        counts: dict[str, int] = {}
        for inst in instances:
            for tok in inst.tokens:
                counts[tok] = counts.get(tok, 0) + 1
        index = {UNK: 0}
        for tok in sorted(counts):
            if counts[tok] >= min_freq:
                index[tok] = len(index)
        return Vocab(index)

    def ids(self, tokens: list[str]) -> list[int]:
        return [self.index.get(t, 0) for t in tokens]

    def __len__(self):
        return len(self.index)

    def to_json(self) -> dict:
        return {"index": self.index}

    @staticmethod
    def from_json(obj: dict) -> "Vocab":
        return Vocab({k: int(v) for k, v in obj["index"].items()})


@dataclass
class Runtime:
    """Per-forward execution context: train-mode flag plus the dropout rng."""
    train: bool = False
    rng: np.random.Generator | None = None


def init_encoder_params(store: ParamStore, cfg: EncoderConfig, rng: np.random.Generator) -> None:
    d = cfg.dim
    store.new("enc.const_emb", (cfg.n_constants, d), rng)
    if cfg.mode == "frozen":
        return
    store.new("enc.tok_emb", (cfg.vocab_size, d), rng)
    if cfg.kind == "bigru":
        h = d // 2
        for layer in range(cfg.layers):
            for direction in ("f", "b"):
                pfx = f"enc.l{layer}.{direction}"
                store.new(f"{pfx}.w_ih", (d, 3 * h), rng)
                store.new(f"{pfx}.w_hh", (h, 3 * h), rng)
                store.new(f"{pfx}.b_ih", (3 * h,), rng, decay=False)
                store.new(f"{pfx}.b_hh", (3 * h,), rng, decay=False)
    else:
        store.new("enc.pos_emb", (cfg.max_len, d), rng)
        for layer in range(cfg.layers):
            pfx = f"enc.l{layer}"
            for w in ("wq", "wk", "wv", "wo"):
                store.new(f"{pfx}.attn.{w}", (d, d), rng)
            store.new(f"{pfx}.ln1.g", (d,), rng, init="ones", decay=False)
            store.new(f"{pfx}.ln1.b", (d,), rng, init="zeros", decay=False)
            store.new(f"{pfx}.ffn.w1", (d, 2 * d), rng)
            store.new(f"{pfx}.ffn.b1", (2 * d,), rng, decay=False)
            store.new(f"{pfx}.ffn.w2", (2 * d, d), rng)
            store.new(f"{pfx}.ffn.b2", (d,), rng, decay=False)
            store.new(f"{pfx}.ln2.g", (d,), rng, init="ones", decay=False)
            store.new(f"{pfx}.ln2.b", (d,), rng, init="zeros", decay=False)


def gru_cell(x: Tensor, h: Tensor, w_ih: Tensor, w_hh: Tensor,
             b_ih: Tensor, b_hh: Tensor) -> Tensor:
    """One GRU step; works for a single vector or a batch of row vectors.

    Gate layout along the last axis is [reset | update | candidate].
    """
    gi = T.add(T.matmul(x, w_ih), b_ih)
    gh = T.add(T.matmul(h, w_hh), b_hh)
    hsize = h.shape[-1]
    if x.data.ndim == 1:
        split = lambda t, k: T.pick_slice(t, k * hsize, (k + 1) * hsize)
    else:
        split = lambda t, k: T.col_slice(t, k * hsize, (k + 1) * hsize)
    r = T.sigmoid(T.add(split(gi, 0), split(gh, 0)))
    z = T.sigmoid(T.add(split(gi, 1), split(gh, 1)))
    n = T.tanh(T.add(split(gi, 2), T.mul(r, split(gh, 2))))
    one_minus_z = T.add(T.ones_like(z), T.scale(z, -1.0))
    return T.add(T.mul(one_minus_z, n), T.mul(z, h))


def _gru_direction(seq: Tensor, store: ParamStore, pfx: str, reverse: bool) -> list[Tensor]:
    n, _ = seq.shape
    hsize = store[f"{pfx}.w_hh"].shape[0]
    h = Tensor(np.zeros(hsize))
    outs: list[Tensor] = [None] * n  # type: ignore[list-item]
    order = range(n - 1, -1, -1) if reverse else range(n)
    for k in order:
        h = gru_cell(T.row(seq, k), h, store[f"{pfx}.w_ih"], store[f"{pfx}.w_hh"],
                     store[f"{pfx}.b_ih"], store[f"{pfx}.b_hh"])
        outs[k] = h
    return outs


def _encode_bigru(ids: list[int], store: ParamStore, cfg: EncoderConfig) -> Tensor:
    seq = T.embedding(store["enc.tok_emb"], ids)
    for layer in range(cfg.layers):
        fwd = _gru_direction(seq, store, f"enc.l{layer}.f", reverse=False)
        bwd = _gru_direction(seq, store, f"enc.l{layer}.b", reverse=True)
        seq = T.stack_rows([T.concat_vecs([f, b]) for f, b in zip(fwd, bwd)])
    return seq


def multi_head_attention(x: Tensor, store: ParamStore, pfx: str, heads: int) -> Tensor:
    """Standard scaled dot-product self-attention over the rows of x."""
    n, d = x.shape
    dh = d // heads
    q = T.matmul(x, store[f"{pfx}.wq"])
    k = T.matmul(x, store[f"{pfx}.wk"])
    v = T.matmul(x, store[f"{pfx}.wv"])
    head_outs = []
    for hh in range(heads):
        qs = T.col_slice(q, hh * dh, (hh + 1) * dh)
        ks = T.col_slice(k, hh * dh, (hh + 1) * dh)
        vs = T.col_slice(v, hh * dh, (hh + 1) * dh)
        att = T.softmax(T.scale(T.matmul(qs, T.transpose(ks)), 1.0 / np.sqrt(dh)))
        head_outs.append(T.matmul(att, vs))
    return T.matmul(T.hconcat(head_outs), store[f"{pfx}.wo"])


def _encode_attention(ids: list[int], store: ParamStore, cfg: EncoderConfig, rt: Runtime) -> Tensor:
    if len(ids) > cfg.max_len:
        raise DataError(f"sequence of {len(ids)} tokens exceeds encoder max_len {cfg.max_len}")
    seq = T.add(T.embedding(store["enc.tok_emb"], ids),
                T.embedding(store["enc.pos_emb"], list(range(len(ids)))))
    for layer in range(cfg.layers):
        pfx = f"enc.l{layer}"
        att = multi_head_attention(seq, store, f"{pfx}.attn", cfg.heads)
        seq = T.add(T.mul_rows(T.layer_norm(T.add(seq, att)), store[f"{pfx}.ln1.g"]), store[f"{pfx}.ln1.b"])
        h = T.relu(T.add(T.matmul(seq, store[f"{pfx}.ffn.w1"]), store[f"{pfx}.ffn.b1"]))
        h = T.dropout(h, cfg.dropout, rt.train, rt.rng)
        h = T.add(T.matmul(h, store[f"{pfx}.ffn.w2"]), store[f"{pfx}.ffn.b2"])
        seq = T.add(T.mul_rows(T.layer_norm(T.add(seq, h)), store[f"{pfx}.ln2.g"]), store[f"{pfx}.ln2.b"])
    return seq


def encode(instance: ProblemInstance, vocab: Vocab | None, store: ParamStore,
           cfg: EncoderConfig, rt: Runtime,
           frozen: "FrozenEmbeddings | None" = None) -> Tensor:
    """Q^(0) representation matrix: one row per textual quantity (sentinel
    position) followed by one learned row per constant."""
    sentinel_positions = [m.token_index for m in instance.quantities]
    if cfg.mode == "frozen":
        if frozen is None:
            raise ConfigError("frozen encoder mode needs an embedding file")
        mat = frozen.lookup(instance.id)
        if mat.shape[0] != len(sentinel_positions):
            raise DataError(
                f"instance {instance.id}: embedding file has {mat.shape[0]} rows, "
                f"instance has {len(sentinel_positions)} quantities")
        text_rows = Tensor(mat)
    else:
        ids = vocab.ids(instance.tokens)
        seq = _encode_bigru(ids, store, cfg) if cfg.kind == "bigru" \
            else _encode_attention(ids, store, cfg, rt)
        text_rows = T.gather_rows(seq, np.asarray(sentinel_positions, dtype=np.intp)) \
            if sentinel_positions else Tensor(np.zeros((0, cfg.dim)))
    if len(instance.constants):
        const_rows = T.embedding(store["enc.const_emb"], list(range(len(instance.constants))))
        if text_rows.shape[0] == 0:
            return const_rows
        return T.vstack2(text_rows, const_rows)
    return text_rows


# ------------------------------------------------- frozen embedding files

@dataclass
class FrozenEmbeddings:
    """Embedding exchange format: JSON manifest + raw little-endian f32 blob,
    rows per instance in textual-quantity order, widened to f64 at load."""

    dim: int
    matrices: dict[str, np.ndarray] = field(default_factory=dict)

    def lookup(self, instance_id: str) -> np.ndarray:
        if instance_id not in self.matrices:
            raise DataError(f"no embeddings for instance {instance_id!r}")
        return self.matrices[instance_id]


def load_external_embeddings(prefix: str, expect_dim: int | None = None) -> FrozenEmbeddings:
    with open(prefix + ".manifest.json", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("dtype") != "f32":
        raise DataError(f"embedding blob dtype {manifest.get('dtype')!r} is not f32")
    dim = int(manifest["dim"])
    if expect_dim is not None and dim != expect_dim:
        raise ConfigError(f"embedding file dim {dim} does not match configured dim {expect_dim}")
    blob = open(prefix + ".bin", "rb").read()
    if "content_sha256" in manifest:
        actual = hashlib.sha256(blob).hexdigest()
        if actual != manifest["content_sha256"]:
            raise DataError("embedding blob hash mismatch")
    out = FrozenEmbeddings(dim=dim)
    for entry in manifest["instances"]:
        rows, offset = int(entry["rows"]), int(entry["offset"])
        nbytes = rows * dim * 4
        if offset + nbytes > len(blob):
            raise DataError(f"embedding blob truncated at instance {entry['id']!r}")
        mat = np.frombuffer(blob[offset:offset + nbytes], dtype="<f4").reshape(rows, dim)
        out.matrices[str(entry["id"])] = mat.astype(np.float64)
    return out
