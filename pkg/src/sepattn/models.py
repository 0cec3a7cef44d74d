"""Scoring models: single-tower baselines and the separate-and-attend model.

Each tower is a per-item scorer: it embeds and pools the query n-gram features,
concatenates the document feature set it owns (pooled sparse embeddings, the
raw dense vector, or both), and runs the result through a small feed-forward
net ending in one scalar per document. The separate-and-attend model runs a
sparse tower and a dense tower, then fuses the two score vectors with
prediction-level attention:

    u_s = tanh(W h_s + b),  u_d = tanh(W h_d + b)
    alpha_s, alpha_d = softmax(u_s . v, u_d . v)
    h_final = alpha_s * h_s + alpha_d * h_d

Padded list slots are forced to a -1e9 score so any downstream softmax ignores
them, and are zero-masked on the way into the attention transform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, InternalError
from .features import RankingExample
from .nn import Adagrad, DenseLayer, EmbeddingTable, Parameter, glorot_uniform, masked_log_softmax

PAD_SCORE = -1e9

MODEL_KINDS = ("dense_only", "sparse_only", "concat", "sepattn")
FEATURE_SETS = ("sparse", "dense", "concat")

CHECKPOINT_VERSION = 1


@dataclass
class ModelSpec:
    """Structural description of a model; everything a checkpoint must pin."""

    kind: str = "sepattn"
    mode: str = "classification"
    list_size: int = 1
    embedding_dim: int = 100
    dense_dim: int = 100
    word_vocab_rows: int = 1001        # embedding-table rows, padding row included
    char_vocab_rows: int = 0
    use_char_ngrams: bool = False
    hidden_dims: tuple[int, ...] = (50,)
    activation: str = "tanh"
    share_query_embeddings: bool = False
    freeze_embeddings: bool = False

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.mode not in ("ranking", "classification"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "classification" and self.list_size != 1:
            raise ConfigError("classification mode requires list_size = 1")
        if self.list_size < 1:
            raise ConfigError("list_size must be >= 1")
        if self.use_char_ngrams and self.char_vocab_rows < 2:
            raise ConfigError("char n-grams enabled but char_vocab_rows < 2")
        if not self.hidden_dims:
            raise ConfigError("at least one hidden layer is required")
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "mode": self.mode, "list_size": self.list_size,
            "embedding_dim": self.embedding_dim, "dense_dim": self.dense_dim,
            "word_vocab_rows": self.word_vocab_rows, "char_vocab_rows": self.char_vocab_rows,
            "use_char_ngrams": self.use_char_ngrams, "hidden_dims": list(self.hidden_dims),
            "activation": self.activation,
            "share_query_embeddings": self.share_query_embeddings,
            "freeze_embeddings": self.freeze_embeddings,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        data = dict(data)
        data["hidden_dims"] = tuple(data.get("hidden_dims", (50,)))
        return cls(**data)


# ---------------------------------------------------------------------------
# Batch packing
# ---------------------------------------------------------------------------

class PackedIds:
    """Variable-length id lists packed as one 0-padded matrix plus lengths."""

    def __init__(self, ids: np.ndarray, lengths: np.ndarray):
        self.ids = ids
        self.lengths = lengths

    @classmethod
    def from_lists(cls, id_lists: Sequence[Sequence[int]]) -> "PackedIds":
        lengths = np.array([len(lst) for lst in id_lists], dtype=np.int64)
        width = int(lengths.max()) if len(id_lists) else 0
        ids = np.zeros((len(id_lists), width), dtype=np.int64)
        for r, lst in enumerate(id_lists):
            if lst:
                ids[r, :len(lst)] = lst
        return cls(ids, lengths)

    def select(self, rows: np.ndarray) -> "PackedIds":
        return PackedIds(self.ids[rows], self.lengths[rows])


class Batch:
    """Model-ready arrays for a set of examples (docs flattened row-major)."""

    def __init__(self, q_word: PackedIds, q_char: PackedIds, d_word: PackedIds,
                 d_char: PackedIds, dense: np.ndarray, mask: np.ndarray,
                 labels: np.ndarray, weights: np.ndarray):
        self.q_word = q_word
        self.q_char = q_char
        self.d_word = d_word
        self.d_char = d_char
        self.dense = dense            # (B, n, dense_dim)
        self.mask = mask              # (B, n) float 0/1
        self.mask_bool = mask > 0.0
        self.labels = labels          # (B, n) float
        self.weights = weights        # (B,)

    @property
    def size(self) -> int:
        return self.dense.shape[0]

    @property
    def list_size(self) -> int:
        return self.dense.shape[1]


class PackedDataset:
    """All examples packed once; mini-batches are row selections."""

    def __init__(self, examples: Sequence[RankingExample], list_size: int, dense_dim: int):
        if not examples:
            raise DataError("cannot pack an empty example list")
        for ex in examples:
            if len(ex.docs) != list_size:
                raise ConfigError(f"example has {len(ex.docs)} doc slots, expected {list_size}")
        self.list_size = list_size
        self.dense_dim = dense_dim
        self.size = len(examples)
        self.q_word = PackedIds.from_lists([ex.query.ngram_ids for ex in examples])
        self.q_char = PackedIds.from_lists([ex.query.char_ngram_ids for ex in examples])
        self.d_word = PackedIds.from_lists(
            [doc.sparse.ngram_ids for ex in examples for doc in ex.docs])
        self.d_char = PackedIds.from_lists(
            [doc.sparse.char_ngram_ids for ex in examples for doc in ex.docs])
        dense = np.zeros((self.size, list_size, dense_dim))
        for i, ex in enumerate(examples):
            for j, doc in enumerate(ex.docs):
                if ex.mask[j]:
                    if doc.dense.shape != (dense_dim,):
                        raise ConfigError(f"doc dense vector has length {doc.dense.shape[0]}, "
                                          f"expected {dense_dim}")
                    dense[i, j] = doc.dense
        self.dense = dense
        self.mask = np.array([ex.mask for ex in examples], dtype=np.float64)
        self.labels = np.array([ex.labels for ex in examples], dtype=np.float64)
        self.weights = np.array([ex.propensity_weight for ex in examples], dtype=np.float64)

    def batch(self, rows: np.ndarray) -> Batch:
        rows = np.asarray(rows, dtype=np.int64)
        doc_rows = (rows[:, None] * self.list_size + np.arange(self.list_size)).reshape(-1)
        return Batch(
            q_word=self.q_word.select(rows), q_char=self.q_char.select(rows),
            d_word=self.d_word.select(doc_rows), d_char=self.d_char.select(doc_rows),
            dense=self.dense[rows], mask=self.mask[rows], labels=self.labels[rows],
            weights=self.weights[rows])

    def full_batch(self) -> Batch:
        return self.batch(np.arange(self.size))


def _pool_forward(table: EmbeddingTable, packed: PackedIds) -> np.ndarray:
    if packed.ids.size and int(packed.ids.max()) >= table.vocab_size:
        raise DataError(f"embedding {table.name!r}: token id {int(packed.ids.max())} "
                        f"out of range [0, {table.vocab_size})")
    rows, width = packed.ids.shape
    if width == 0:
        return np.zeros((rows, table.dim))
    pooled = table.rows.value[packed.ids].sum(axis=1)
    return pooled / np.maximum(packed.lengths, 1)[:, None]


def _pool_backward(table: EmbeddingTable, packed: PackedIds, grad_pooled: np.ndarray) -> None:
    if not table.rows.trainable:
        return
    rows, width = packed.ids.shape
    if width == 0:
        return
    inv = np.zeros(rows)
    nz = packed.lengths > 0
    inv[nz] = 1.0 / packed.lengths[nz]
    present = packed.lengths[:, None] > np.arange(width)[None, :]
    r_idx, c_idx = np.nonzero(present)
    np.add.at(table.rows.grad, packed.ids[r_idx, c_idx],
              grad_pooled[r_idx] * inv[r_idx, None])
    table.rows.grad[0, :] = 0.0   # padding row stays frozen


# ---------------------------------------------------------------------------
# Towers
# ---------------------------------------------------------------------------

class Tower:
    """Per-item scorer over one document feature set, query features included."""

    def __init__(self, name: str, feature_set: str, spec: ModelSpec,
                 rng: np.random.Generator,
                 shared_query_tables: tuple[EmbeddingTable, EmbeddingTable | None] | None = None):
        if feature_set not in FEATURE_SETS:
            raise ConfigError(f"unknown feature set {feature_set!r}")
        self.name = name
        self.feature_set = feature_set
        self.spec = spec
        emb_dim = spec.embedding_dim
        trainable = not spec.freeze_embeddings

        if shared_query_tables is not None:
            self.q_word_emb, self.q_char_emb = shared_query_tables
        else:
            self.q_word_emb = EmbeddingTable(f"{name}/query_word_embedding",
                                             spec.word_vocab_rows, emb_dim, rng,
                                             trainable=trainable)
            self.q_char_emb = (EmbeddingTable(f"{name}/query_char_embedding",
                                              spec.char_vocab_rows, emb_dim, rng,
                                              trainable=trainable)
                               if spec.use_char_ngrams else None)
        self.d_word_emb = None
        self.d_char_emb = None
        if feature_set in ("sparse", "concat"):
            self.d_word_emb = EmbeddingTable(f"{name}/doc_word_embedding",
                                             spec.word_vocab_rows, emb_dim, rng,
                                             trainable=trainable)
            if spec.use_char_ngrams:
                self.d_char_emb = EmbeddingTable(f"{name}/doc_char_embedding",
                                                 spec.char_vocab_rows, emb_dim, rng,
                                                 trainable=trainable)

        query_width = emb_dim * (2 if spec.use_char_ngrams else 1)
        doc_sparse_width = emb_dim * (2 if spec.use_char_ngrams else 1)
        self.input_dim = query_width
        if feature_set in ("sparse", "concat"):
            self.input_dim += doc_sparse_width
        if feature_set in ("dense", "concat"):
            self.input_dim += spec.dense_dim

        self.layers: list[DenseLayer] = []
        in_dim = self.input_dim
        for i, h in enumerate(spec.hidden_dims):
            self.layers.append(DenseLayer(f"{name}/hidden{i}", in_dim, h,
                                          spec.activation, rng))
            in_dim = h
        self.layers.append(DenseLayer(f"{name}/output", in_dim, 1, "identity", rng))

    def embedding_tables(self) -> list[EmbeddingTable]:
        tables = [self.q_word_emb, self.q_char_emb, self.d_word_emb, self.d_char_emb]
        return [t for t in tables if t is not None]

    def parameters(self) -> list[Parameter]:
        params = [t.rows for t in self.embedding_tables()]
        for layer in self.layers:
            params.extend(layer.parameters())
        return params

    def _input_blocks(self, batch: Batch) -> tuple[np.ndarray, list]:
        n = batch.list_size
        blocks = []
        layout = []  # (kind, table, packed, width) in concat order
        q_tables = [(self.q_word_emb, batch.q_word)]
        if self.q_char_emb is not None:
            q_tables.append((self.q_char_emb, batch.q_char))
        for table, packed in q_tables:
            pooled = _pool_forward(table, packed)                    # (B, dim)
            blocks.append(np.repeat(pooled, n, axis=0))              # (B*n, dim)
            layout.append(("query", table, packed, table.dim))
        if self.feature_set in ("sparse", "concat"):
            d_tables = [(self.d_word_emb, batch.d_word)]
            if self.d_char_emb is not None:
                d_tables.append((self.d_char_emb, batch.d_char))
            for table, packed in d_tables:
                blocks.append(_pool_forward(table, packed))          # (B*n, dim)
                layout.append(("doc", table, packed, table.dim))
        if self.feature_set in ("dense", "concat"):
            blocks.append(batch.dense.reshape(-1, self.spec.dense_dim))
            layout.append(("dense", None, None, self.spec.dense_dim))
        return np.concatenate(blocks, axis=1), layout

    def forward_batch(self, batch: Batch) -> tuple[np.ndarray, tuple]:
        """Scores ``(B, n)`` with PAD_SCORE at padded slots, plus a backward cache."""
        x, layout = self._input_blocks(batch)
        if x.shape[1] != self.input_dim:
            raise ConfigError(f"tower {self.name!r}: built input width {x.shape[1]} "
                              f"!= expected {self.input_dim}")
        caches = []
        h = x
        for layer in self.layers:
            h, cache = layer.forward(h)
            caches.append(cache)
        raw = h.reshape(batch.size, batch.list_size)
        scores = np.where(batch.mask_bool, raw, PAD_SCORE)
        return scores, (layout, caches, batch)

    def backward_batch(self, grad_scores: np.ndarray, cache: tuple) -> None:
        layout, caches, batch = cache
        n = batch.list_size
        g = (grad_scores * batch.mask).reshape(-1, 1)
        for layer, layer_cache in zip(reversed(self.layers), reversed(caches)):
            g, _ = layer.backward(g, layer_cache)
        offset = 0
        for kind, table, packed, width in layout:
            block = g[:, offset:offset + width]
            offset += width
            if kind == "query":
                # The query block is repeated across the n doc rows; fold back.
                _pool_backward(table, packed, block.reshape(batch.size, n, width).sum(axis=1))
            elif kind == "doc":
                _pool_backward(table, packed, block)
            # dense inputs are leaf data, no parameters behind them

    def score_example(self, example: RankingExample) -> np.ndarray:
        packed = PackedDataset([example], len(example.docs), self.spec.dense_dim)
        scores, _ = self.forward_batch(packed.full_batch())
        return scores[0]


# ---------------------------------------------------------------------------
# Prediction-level attention
# ---------------------------------------------------------------------------

class AttentionAggregator:
    """Two-way attention over the sparse/dense tower score vectors."""

    def __init__(self, list_size: int, rng: np.random.Generator, name: str = "attention"):
        n = list_size
        self.list_size = n
        self.weight = Parameter(f"{name}/weight", glorot_uniform(rng, n, n, (n, n)))
        self.bias = Parameter(f"{name}/bias", np.zeros(n))
        self.context = Parameter(f"{name}/context", glorot_uniform(rng, n, 1, (n,)))

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias, self.context]

    def forward_batch(self, h_sparse: np.ndarray, h_dense: np.ndarray,
                      mask: np.ndarray) -> tuple:
        """Returns (u_s, u_d, alpha_s, alpha_d, cache) for (B, n) score matrices."""
        if h_sparse.shape != h_dense.shape or h_sparse.shape[1] != self.list_size:
            raise ConfigError(f"attention: score shapes {h_sparse.shape}/{h_dense.shape} "
                              f"do not match list_size {self.list_size}")
        hs_in = h_sparse * mask   # zero-masked attention inputs
        hd_in = h_dense * mask
        W, b, v = self.weight.value, self.bias.value, self.context.value
        u_s = np.tanh(hs_in @ W.T + b)
        u_d = np.tanh(hd_in @ W.T + b)
        a_s = u_s @ v
        a_d = u_d @ v
        m = np.maximum(a_s, a_d)
        e_s = np.exp(a_s - m)
        e_d = np.exp(a_d - m)
        z = e_s + e_d
        alpha_s = e_s / z
        alpha_d = e_d / z
        cache = (hs_in, hd_in, u_s, u_d, alpha_s, alpha_d, mask)
        return u_s, u_d, alpha_s, alpha_d, cache

    def backward_batch(self, cache: tuple, g_alpha_s: np.ndarray,
                       g_alpha_d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Backprop total dL/dalpha through the 2-way softmax and transform.

        Returns the attention-path gradients on the raw tower scores.
        """
        hs_in, hd_in, u_s, u_d, alpha_s, alpha_d, mask = cache
        W, v = self.weight.value, self.context.value
        d_a = alpha_s * alpha_d * (g_alpha_s - g_alpha_d)   # dL/d(a_s); dL/d(a_d) = -d_a
        g_us = d_a[:, None] * v[None, :]
        g_ud = -g_us
        self.context.grad += ((u_s - u_d) * d_a[:, None]).sum(axis=0)
        g_zs = g_us * (1.0 - u_s * u_s)
        g_zd = g_ud * (1.0 - u_d * u_d)
        self.weight.grad += g_zs.T @ hs_in + g_zd.T @ hd_in
        self.bias.grad += g_zs.sum(axis=0) + g_zd.sum(axis=0)
        g_hs = (g_zs @ W) * mask
        g_hd = (g_zd @ W) * mask
        return g_hs, g_hd


def attention_aggregate(h_sparse, h_dense, params: AttentionAggregator,
                        mask=None) -> tuple:
    """Single-list attention fusion: (h_final, alpha_s, alpha_d, u_s, u_d)."""
    h_sparse = np.asarray(h_sparse, dtype=np.float64)
    h_dense = np.asarray(h_dense, dtype=np.float64)
    if mask is None:
        mask = np.ones_like(h_sparse)
    u_s, u_d, alpha_s, alpha_d, _ = params.forward_batch(
        h_sparse[None, :], h_dense[None, :], np.asarray(mask, dtype=np.float64)[None, :])
    a_s, a_d = float(alpha_s[0]), float(alpha_d[0])
    h_final = a_s * h_sparse + a_d * h_dense
    return h_final, a_s, a_d, u_s[0], u_d[0]


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ModelOutput:
    """Per-list forward products; baseline models only fill the final fields."""

    h_final: np.ndarray
    p_final: np.ndarray
    h_sparse: np.ndarray | None = None
    h_dense: np.ndarray | None = None
    alpha_sparse: float | None = None
    alpha_dense: float | None = None
    u_sparse: np.ndarray | None = None
    u_dense: np.ndarray | None = None
    p_sparse: np.ndarray | None = None
    p_dense: np.ndarray | None = None


@dataclass(eq=False)
class SepAttnForward:
    h_sparse: np.ndarray
    h_dense: np.ndarray
    h_final: np.ndarray
    u_sparse: np.ndarray
    u_dense: np.ndarray
    alpha_sparse: np.ndarray
    alpha_dense: np.ndarray
    sparse_cache: tuple
    dense_cache: tuple
    attn_cache: tuple
    batch: Batch


@dataclass(eq=False)
class SingleTowerForward:
    h_final: np.ndarray
    cache: tuple
    batch: Batch


class SingleTowerModel:
    """dense_only / sparse_only / concat baseline."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        if spec.kind == "sepattn":
            raise ConfigError("SingleTowerModel cannot be built from a sepattn spec")
        self.spec = spec
        feature_set = {"dense_only": "dense", "sparse_only": "sparse",
                       "concat": "concat"}[spec.kind]
        self.tower = Tower("tower", feature_set, spec, rng)

    def parameters(self) -> list[Parameter]:
        return _unique_params(self.tower.parameters())

    def forward_batch(self, batch: Batch) -> SingleTowerForward:
        scores, cache = self.tower.forward_batch(batch)
        return SingleTowerForward(h_final=scores, cache=cache, batch=batch)

    def backward_batch(self, fwd: SingleTowerForward, g_h_final: np.ndarray) -> None:
        self.tower.backward_batch(g_h_final, fwd.cache)


class SepAttnModel:
    """Separate sparse/dense towers fused by prediction-level attention."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        if spec.kind != "sepattn":
            raise ConfigError(f"SepAttnModel requires kind='sepattn', got {spec.kind!r}")
        self.spec = spec
        self.sparse_tower = Tower("sparse_tower", "sparse", spec, rng)
        shared = ((self.sparse_tower.q_word_emb, self.sparse_tower.q_char_emb)
                  if spec.share_query_embeddings else None)
        self.dense_tower = Tower("dense_tower", "dense", spec, rng,
                                 shared_query_tables=shared)
        self.attention = AttentionAggregator(spec.list_size, rng)

    def parameters(self) -> list[Parameter]:
        return _unique_params(self.sparse_tower.parameters()
                              + self.dense_tower.parameters()
                              + self.attention.parameters())

    def forward_batch(self, batch: Batch) -> SepAttnForward:
        h_s, cache_s = self.sparse_tower.forward_batch(batch)
        h_d, cache_d = self.dense_tower.forward_batch(batch)
        u_s, u_d, alpha_s, alpha_d, attn_cache = self.attention.forward_batch(
            h_s, h_d, batch.mask)
        h_f = alpha_s[:, None] * h_s + alpha_d[:, None] * h_d
        return SepAttnForward(h_sparse=h_s, h_dense=h_d, h_final=h_f,
                              u_sparse=u_s, u_dense=u_d,
                              alpha_sparse=alpha_s, alpha_dense=alpha_d,
                              sparse_cache=cache_s, dense_cache=cache_d,
                              attn_cache=attn_cache, batch=batch)

    def backward_batch(self, fwd: SepAttnForward, g_h_final: np.ndarray,
                       g_h_sparse_direct: np.ndarray, g_h_dense_direct: np.ndarray,
                       g_alpha_s_direct: np.ndarray, g_alpha_d_direct: np.ndarray) -> None:
        # dL/dalpha totals: the h_final mixing path plus the caller's direct path.
        # Padded slots contribute nothing because g_h_final is zero there.
        g_alpha_s = (g_h_final * fwd.h_sparse).sum(axis=1) + g_alpha_s_direct
        g_alpha_d = (g_h_final * fwd.h_dense).sum(axis=1) + g_alpha_d_direct
        g_hs_attn, g_hd_attn = self.attention.backward_batch(
            fwd.attn_cache, g_alpha_s, g_alpha_d)
        g_hs = fwd.alpha_sparse[:, None] * g_h_final + g_h_sparse_direct + g_hs_attn
        g_hd = fwd.alpha_dense[:, None] * g_h_final + g_h_dense_direct + g_hd_attn
        self.sparse_tower.backward_batch(g_hs, fwd.sparse_cache)
        self.dense_tower.backward_batch(g_hd, fwd.dense_cache)


Model = SingleTowerModel | SepAttnModel


def _unique_params(params: list[Parameter]) -> list[Parameter]:
    seen: dict[int, Parameter] = {}
    for p in params:
        seen.setdefault(id(p), p)
    out = list(seen.values())
    names = [p.name for p in out]
    if len(set(names)) != len(names):
        raise InternalError(f"duplicate parameter names: {sorted(names)}")
    return out


def build_model(spec: ModelSpec, rng: np.random.Generator) -> Model:
    if spec.kind == "sepattn":
        return SepAttnModel(spec, rng)
    return SingleTowerModel(spec, rng)


def init_word_embeddings(model: Model, vectors: np.ndarray) -> None:
    """Copy a pre-built (rows, dim) table into every word-ngram embedding."""
    tables = []
    towers = ([model.tower] if isinstance(model, SingleTowerModel)
              else [model.sparse_tower, model.dense_tower])
    for tower in towers:
        tables.extend(t for t in tower.embedding_tables()
                      if t.name.endswith("word_embedding"))
    for table in {id(t): t for t in tables}.values():
        if table.rows.value.shape != vectors.shape:
            raise ConfigError(f"embedding init shape {vectors.shape} does not match "
                              f"table {table.name!r} shape {table.rows.value.shape}")
        table.rows.value[...] = vectors
        table.rows.value[0, :] = 0.0


def stable_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def predict_binary(score: float) -> float:
    """Logistic head for classification mode (list_size = 1)."""
    return float(stable_sigmoid(np.array([score]))[0])


def score_tower(example: RankingExample, tower: Tower) -> np.ndarray:
    """Spec surface: per-item scores for one example through one tower."""
    return tower.score_example(example)


def sepattn_forward(example: RankingExample, model: SepAttnModel) -> ModelOutput:
    """Full forward pass for a single example, with normalized distributions.

    Ranking mode fills masked-softmax distributions over valid docs;
    classification mode fills Bernoulli pairs [p, 1 - p] from the logistic head.
    """
    packed = PackedDataset([example], model.spec.list_size, model.spec.dense_dim)
    batch = packed.full_batch()
    fwd = model.forward_batch(batch)
    if model.spec.mode == "ranking":
        _, p_s = masked_log_softmax(fwd.h_sparse, batch.mask_bool)
        _, p_d = masked_log_softmax(fwd.h_dense, batch.mask_bool)
        _, p_f = masked_log_softmax(fwd.h_final, batch.mask_bool)
        p_s, p_d, p_f = p_s[0], p_d[0], p_f[0]
    else:
        def bernoulli(h):
            p = predict_binary(float(h[0]))
            return np.array([p, 1.0 - p])
        p_s, p_d, p_f = (bernoulli(fwd.h_sparse[0]), bernoulli(fwd.h_dense[0]),
                         bernoulli(fwd.h_final[0]))
    return ModelOutput(
        h_final=fwd.h_final[0], p_final=p_f,
        h_sparse=fwd.h_sparse[0], h_dense=fwd.h_dense[0],
        alpha_sparse=float(fwd.alpha_sparse[0]), alpha_dense=float(fwd.alpha_dense[0]),
        u_sparse=fwd.u_sparse[0], u_dense=fwd.u_dense[0],
        p_sparse=p_s, p_dense=p_d)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: Model, optimizer: Adagrad | None = None,
                    epoch: int = 0, run_config: dict | None = None) -> None:
    header = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "model_spec": model.spec.to_dict(),
        "epoch": epoch,
        "run_config": run_config or {},
    }
    arrays = {"param//" + p.name: p.value for p in model.parameters()}
    if optimizer is not None:
        arrays.update({"opt//" + name: acc for name, acc in optimizer.state_dict().items()})
    np.savez(path, __header__=np.array(json.dumps(header)), **arrays)


@dataclass(eq=False)
class Checkpoint:
    model: Model
    spec: ModelSpec
    epoch: int
    run_config: dict
    optimizer_state: dict[str, np.ndarray]


def load_checkpoint(path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as data:
        if "__header__" not in data:
            raise DataError(f"{path}: not a model checkpoint (missing header)")
        header = json.loads(str(data["__header__"]))
        if header.get("checkpoint_version") != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version "
                            f"{header.get('checkpoint_version')}")
        spec = ModelSpec.from_dict(header["model_spec"])
        model = build_model(spec, np.random.default_rng(0))
        for p in model.parameters():
            key = "param//" + p.name
            if key not in data:
                raise DataError(f"{path}: checkpoint missing tensor {p.name!r}")
            stored = np.asarray(data[key], dtype=np.float64)
            if stored.shape != p.value.shape:
                raise DataError(f"{path}: tensor {p.name!r} has shape {stored.shape}, "
                                f"expected {p.value.shape}")
            p.value[...] = stored
        opt_state = {key[len("opt//"):]: np.array(data[key])
                     for key in data.files if key.startswith("opt//")}
    return Checkpoint(model=model, spec=spec, epoch=int(header.get("epoch", 0)),
                      run_config=header.get("run_config", {}), optimizer_state=opt_state)
