"""Bidirectional transformer over a joint word + entity token sequence.

Entity tokens carry no sequence position of their own: each one is tied to
its mention span through position embeddings summed (or averaged, behind a
config flag) over the mention's word positions.  Words and entities then go
through ordinary full self-attention together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import CapacityError, ConfigError, ContractError, VocabError

WORD_TYPE_ID = 0
ENTITY_TYPE_ID = 1

NEG_INF = -1e30


@dataclass
class EncoderConfig:
    word_vocab_size: int
    entity_vocab_size: int
    hidden_size: int = 768
    entity_emb_size: int = 256
    layers: int = 12
    heads: int = 12
    ffn_size: int = 3072
    max_positions: int = 512
    type_count: int = 2
    dropout: float = 0.1
    entity_position_mode: str = "sum"  # "sum" or "mean"
    layer_norm_eps: float = 1e-5

    def validate(self):
        if self.hidden_size % self.heads != 0:
            raise ConfigError(f"hidden_size {self.hidden_size} not divisible by heads {self.heads}")
        if self.entity_emb_size > self.hidden_size:
            raise ConfigError("entity_emb_size must be <= hidden_size")
        if self.max_positions < 1:
            raise ConfigError("max_positions must be >= 1")
        if self.type_count < 2:
            raise ConfigError("type_count must be >= 2 (word type, entity type)")
        if self.entity_position_mode not in ("sum", "mean"):
            raise ConfigError(f"unknown entity_position_mode {self.entity_position_mode!r}")
        return self

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        return cls(**d).validate()


@dataclass
class EncodedSequence:
    """Word ids plus entity ids with their mention position sets."""

    word_ids: list
    entity_ids: list = field(default_factory=list)
    entity_positions: list = field(default_factory=list)  # per entity: ordered word positions
    word_type_ids: list | None = None
    entity_type_ids: list | None = None

    def validate(self, config: EncoderConfig | None = None):
        m = len(self.word_ids)
        if len(self.entity_ids) != len(self.entity_positions):
            raise ContractError("entity_ids and entity_positions length mismatch")
        for pos in self.entity_positions:
            if not pos:
                raise ContractError("entity with empty mention position set")
            if min(pos) < 0 or max(pos) >= m:
                raise ContractError(f"entity position out of range [0, {m})")
        if config is not None and m > config.max_positions:
            raise CapacityError(f"sequence of {m} words exceeds max_positions {config.max_positions}")
        return self

    @property
    def num_words(self):
        return len(self.word_ids)

    @property
    def num_entities(self):
        return len(self.entity_ids)


@dataclass
class ContextualOutput:
    word_vectors: np.ndarray  # (m, hidden) or (B, m, hidden)
    entity_vectors: np.ndarray  # (n, hidden) or (B, n, hidden)
    word_tensor: "T.Tensor | None" = None
    entity_tensor: "T.Tensor | None" = None


def _init_matrix(rng, shape, std=0.02):
    return rng.normal(0.0, std, size=shape)


def init_params(config: EncoderConfig, rng) -> dict:
    """Fresh parameter dict keyed by stable names."""
    config.validate()
    H, E = config.hidden_size, config.entity_emb_size
    p = {}

    def par(name, arr):
        p[name] = T.parameter(arr, name=name)

    par("word_emb", _init_matrix(rng, (config.word_vocab_size, H)))
    par("pos_emb", _init_matrix(rng, (config.max_positions, H)))
    par("type_emb", _init_matrix(rng, (config.type_count, H)))
    par("entity_emb", _init_matrix(rng, (config.entity_vocab_size, E)))
    par("entity_proj_w", _init_matrix(rng, (E, H)))
    par("entity_proj_b", np.zeros(H))
    par("entity_type_emb", _init_matrix(rng, (config.type_count, H)))
    par("emb_ln_gain", np.ones(H))
    par("emb_ln_bias", np.zeros(H))
    for l in range(config.layers):
        pre = f"layer{l}."
        for nm in ("wq", "wk", "wv", "wo"):
            par(pre + "attn." + nm, _init_matrix(rng, (H, H)))
            par(pre + "attn." + nm[1] + "b", np.zeros(H))
        par(pre + "attn_ln.gain", np.ones(H))
        par(pre + "attn_ln.bias", np.zeros(H))
        par(pre + "ffn.w1", _init_matrix(rng, (H, config.ffn_size)))
        par(pre + "ffn.b1", np.zeros(config.ffn_size))
        par(pre + "ffn.w2", _init_matrix(rng, (config.ffn_size, H)))
        par(pre + "ffn.b2", np.zeros(H))
        par(pre + "ffn_ln.gain", np.ones(H))
        par(pre + "ffn_ln.bias", np.zeros(H))
    return p


def embed_words(params, config, word_ids, positions=None, type_ids=None):
    """Per-token sum of token, position, and type embedding lookups.

    word_ids may be (m,) or batched (B, m); positions defaults to 0..m-1.
    """
    word_ids = np.asarray(word_ids)
    if word_ids.size and (word_ids.min() < 0 or word_ids.max() >= config.word_vocab_size):
        raise VocabError(f"word id out of range for vocab of {config.word_vocab_size}")
    m = word_ids.shape[-1]
    if positions is None:
        positions = np.broadcast_to(np.arange(m), word_ids.shape)
    positions = np.asarray(positions)
    if positions.size and positions.max() >= config.max_positions:
        raise CapacityError(f"position {positions.max()} >= max_positions {config.max_positions}")
    if type_ids is None:
        type_ids = np.full(word_ids.shape, WORD_TYPE_ID)
    tok = T.embedding(params["word_emb"], word_ids)
    pos = T.embedding(params["pos_emb"], positions)
    typ = T.embedding(params["type_emb"], np.asarray(type_ids))
    return tok + pos + typ


def embed_entities(params, config, entity_ids, entity_positions, type_ids=None, position_mask=None):
    """Entity token embedding: projected id embedding + type + mention-position term.

    For a plain (unbatched) call, entity_positions is a list of non-empty
    position lists.  For a batched call, pass entity_ids (B, n), a padded
    index array entity_positions (B, n, P) and position_mask (B, n, P).
    The position term is the sum of word-position embeddings over the
    mention's positions ("mean" mode divides by the position count).
    """
    entity_ids = np.asarray(entity_ids)
    if entity_ids.size and (entity_ids.min() < 0 or entity_ids.max() >= config.entity_vocab_size):
        raise VocabError(f"entity id out of range for vocab of {config.entity_vocab_size}")

    if position_mask is None:
        # list-of-lists form
        for pos in entity_positions:
            if len(pos) == 0:
                raise ContractError("entity with empty mention position set")
        P = max((len(pos) for pos in entity_positions), default=1)
        idx = np.zeros(entity_ids.shape + (P,), dtype=np.int64)
        position_mask = np.zeros(entity_ids.shape + (P,))
        for i, pos in enumerate(entity_positions):
            idx[i, : len(pos)] = pos
            position_mask[i, : len(pos)] = 1.0
        entity_positions = idx
    else:
        if not np.all(position_mask.sum(axis=-1) > 0):
            raise ContractError("entity with empty mention position set")

    if type_ids is None:
        type_ids = np.full(entity_ids.shape, ENTITY_TYPE_ID)

    tok = T.embedding(params["entity_emb"], entity_ids)
    proj = T.matmul(tok, params["entity_proj_w"]) + params["entity_proj_b"]
    typ = T.embedding(params["entity_type_emb"], np.asarray(type_ids))
    pos_rows = T.embedding(params["pos_emb"], np.asarray(entity_positions))  # (..., P, H)
    masked = T.mul(pos_rows, T.constant(position_mask[..., None]))
    pos_term = T.reduce_sum(masked, axis=masked.ndim - 2)
    if config.entity_position_mode == "mean":
        counts = position_mask.sum(axis=-1, keepdims=True)
        pos_term = T.mul(pos_term, T.constant(1.0 / counts))
    return proj + typ + pos_term


def _attention(params, config, x, attn_mask, layer, rng, train):
    B, S, H = x.shape
    nh = config.heads
    dh = H // nh
    pre = f"layer{layer}.attn."

    def heads_split(t):
        return T.transpose(T.reshape(t, (B, S, nh, dh)), (0, 2, 1, 3))

    q = heads_split(T.matmul(x, params[pre + "wq"]) + params[pre + "qb"])
    k = heads_split(T.matmul(x, params[pre + "wk"]) + params[pre + "kb"])
    v = heads_split(T.matmul(x, params[pre + "wv"]) + params[pre + "vb"])
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    bias = np.where(attn_mask[:, None, None, :] > 0, 0.0, NEG_INF)
    probs = T.softmax(scores + T.constant(bias), axis=-1)
    if train and config.dropout > 0:
        probs = T.dropout(probs, config.dropout, rng)
    ctx = T.matmul(probs, v)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, S, H))
    return T.matmul(ctx, params[pre + "wo"]) + params[pre + "ob"]


def _ffn(params, config, x, layer):
    pre = f"layer{layer}.ffn."
    h = T.gelu(T.matmul(x, params[pre + "w1"]) + params[pre + "b1"])
    return T.matmul(h, params[pre + "w2"]) + params[pre + "b2"]


def encode_batch(params, config, batch, rng=None, train=False):
    """Run a padded batch through the encoder.

    `batch` is a dict with word_ids (B, M), word_mask (B, M), entity_ids
    (B, N), entity_mask (B, N), entity_pos (B, N, P), entity_pos_mask
    (B, N, P).  N may be 0.  Returns ContextualOutput with graph tensors
    attached for training use.
    """
    if train and config.dropout > 0 and rng is None:
        raise ContractError("training-mode encode with dropout needs an rng")
    word_ids = np.asarray(batch["word_ids"])
    word_mask = np.asarray(batch["word_mask"], dtype=np.float64)
    B, M = word_ids.shape
    if M > config.max_positions:
        raise CapacityError(f"{M} words exceed max_positions {config.max_positions}")

    w = embed_words(params, config, word_ids)
    n_ent = np.asarray(batch.get("entity_ids", np.zeros((B, 0), dtype=np.int64))).shape[1]
    if n_ent:
        e = embed_entities(
            params,
            config,
            batch["entity_ids"],
            batch["entity_pos"],
            position_mask=np.asarray(batch["entity_pos_mask"], dtype=np.float64),
        )
        x = T.concat([w, e], axis=1)
        attn_mask = np.concatenate([word_mask, np.asarray(batch["entity_mask"], dtype=np.float64)], axis=1)
    else:
        x = w
        attn_mask = word_mask

    x = T.layer_norm(x, params["emb_ln_gain"], params["emb_ln_bias"], eps=config.layer_norm_eps)
    if train and config.dropout > 0:
        x = T.dropout(x, config.dropout, rng)

    for l in range(config.layers):
        a = _attention(params, config, x, attn_mask, l, rng, train)
        if train and config.dropout > 0:
            a = T.dropout(a, config.dropout, rng)
        x = T.layer_norm(x + a, params[f"layer{l}.attn_ln.gain"], params[f"layer{l}.attn_ln.bias"],
                         eps=config.layer_norm_eps)
        f = _ffn(params, config, x, l)
        if train and config.dropout > 0:
            f = T.dropout(f, config.dropout, rng)
        x = T.layer_norm(x + f, params[f"layer{l}.ffn_ln.gain"], params[f"layer{l}.ffn_ln.bias"],
                         eps=config.layer_norm_eps)

    wt = x[:, :M, :]
    et = x[:, M:, :] if n_ent else T.constant(np.zeros((B, 0, config.hidden_size)))
    return ContextualOutput(word_vectors=wt.data, entity_vectors=et.data, word_tensor=wt, entity_tensor=et)


def pack_batch(seqs, pad_word_id=0, pad_entity_id=0):
    """Pad a list of EncodedSequence into the array dict encode_batch expects."""
    B = len(seqs)
    M = max((s.num_words for s in seqs), default=1)
    N = max((s.num_entities for s in seqs), default=0)
    P = max((max((len(p) for p in s.entity_positions), default=1) for s in seqs), default=1)
    word_ids = np.full((B, M), pad_word_id, dtype=np.int64)
    word_mask = np.zeros((B, M))
    entity_ids = np.full((B, N), pad_entity_id, dtype=np.int64)
    entity_mask = np.zeros((B, N))
    entity_pos = np.zeros((B, N, P), dtype=np.int64)
    entity_pos_mask = np.zeros((B, N, P))
    # padded entities keep one dummy position so the position-set invariant holds
    entity_pos_mask[:, :, 0] = 1.0
    for b, s in enumerate(seqs):
        m = s.num_words
        word_ids[b, :m] = s.word_ids
        word_mask[b, :m] = 1.0
        for j, (eid, pos) in enumerate(zip(s.entity_ids, s.entity_positions)):
            entity_ids[b, j] = eid
            entity_mask[b, j] = 1.0
            entity_pos[b, j, : len(pos)] = pos
            entity_pos_mask[b, j, :] = 0.0
            entity_pos_mask[b, j, : len(pos)] = 1.0
    return {
        "word_ids": word_ids,
        "word_mask": word_mask,
        "entity_ids": entity_ids,
        "entity_mask": entity_mask,
        "entity_pos": entity_pos,
        "entity_pos_mask": entity_pos_mask,
    }


def encode(params, config, seq: EncodedSequence, rng=None, train=False) -> ContextualOutput:
    """Single-sequence convenience wrapper around encode_batch."""
    seq.validate(config)
    out = encode_batch(params, config, pack_batch([seq]), rng=rng, train=train)
    m, n = seq.num_words, seq.num_entities
    return ContextualOutput(
        word_vectors=out.word_vectors[0, :m],
        entity_vectors=out.entity_vectors[0, :n],
        word_tensor=out.word_tensor,
        entity_tensor=out.entity_tensor,
    )
