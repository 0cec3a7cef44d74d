"""Seeded synthetic datasets with exact, re-derivable label rules.

Three rules over a query token q, a document token d (both embedded as random
unit vectors), and a dense vector x ~ Uniform[-0.5, 0.5]^dense_dim:

* ``sparse``:   y = 1 iff cos(emb(d), emb(q)) > 0. Dense features are noise.
* ``dense``:    y = 1 iff q is a trigger word and sum(x) < 0. Sparse doc
                features are noise (but the query token still matters).
* ``combined``: the conjunction of the two.

Embeddings are i.i.d. Gaussian vectors normalized to unit length, which
preserves the only property the rules depend on: the sign of the cosine
against a uniformly random direction on the sphere. A sidecar file stores the
table and the trigger set so labels can be re-derived from any emitted file.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterable

import numpy as np

from .errors import ConfigError, DataError
from .features import (DatasetHeader, Document, DocSparseFeatures, QueryFeatures,
                       RankingExample, Vocab)

DEFAULT_TRIGGER_WORDS = ("recent", "latest", "newest", "today")

# RNG stream tags so embeddings / train / test draws never overlap.
_STREAM_EMBEDDINGS = 0
_STREAM_TRAIN = 1
_STREAM_TEST = 2

RULES = ("sparse", "dense", "combined")


@dataclass
class SynthConfig:
    rule: str = "sparse"
    embedding_dim: int = 100
    vocab_size: int = 1000
    dense_dim: int = 100
    num_train: int = 20000
    num_test: int = 20000
    seed: int = 0
    trigger_fraction: float = 0.5
    trigger_words: tuple[str, ...] = DEFAULT_TRIGGER_WORDS
    list_size: int = 1

    def __post_init__(self):
        if self.rule not in RULES:
            raise ConfigError(f"unknown rule {self.rule!r}; expected one of {RULES}")
        for name in ("embedding_dim", "vocab_size", "dense_dim", "num_train",
                     "num_test", "list_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.trigger_fraction <= 1.0:
            raise ConfigError("trigger_fraction must be in [0, 1]")
        if not self.trigger_words:
            raise ConfigError("trigger vocabulary must be non-empty")
        if len(self.trigger_words) > self.vocab_size:
            raise ConfigError("trigger vocabulary larger than the whole vocabulary")

    @property
    def mode(self) -> str:
        return "classification" if self.list_size == 1 else "ranking"


@dataclass(eq=False)
class SyntheticEmbeddings:
    """Token strings, their unit-norm vectors (row 0 = padding), trigger set."""

    tokens: list[str]
    vectors: np.ndarray
    trigger_words: tuple[str, ...]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def vocab(self) -> Vocab:
        return Vocab(mode="explicit",
                     token_to_id={t: i + 1 for i, t in enumerate(self.tokens)})

    def trigger_ids(self) -> frozenset[int]:
        index = {t: i + 1 for i, t in enumerate(self.tokens)}
        return frozenset(index[t] for t in self.trigger_words)


def gen_embedding_table(cfg: SynthConfig) -> SyntheticEmbeddings:
    """Seeded random unit vectors, one per vocabulary token.

    Trigger words occupy ids 1..len(triggers); the rest are filler tokens.
    """
    rng = np.random.default_rng([cfg.seed, _STREAM_EMBEDDINGS])
    tokens = list(cfg.trigger_words)
    tokens += [f"w{i:05d}" for i in range(cfg.vocab_size - len(tokens))]
    vectors = np.zeros((cfg.vocab_size + 1, cfg.embedding_dim))
    raw = rng.standard_normal((cfg.vocab_size, cfg.embedding_dim))
    vectors[1:] = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    return SyntheticEmbeddings(tokens=tokens, vectors=vectors,
                               trigger_words=tuple(cfg.trigger_words))


def save_embeddings(path, emb: SyntheticEmbeddings) -> None:
    np.savez(path, tokens=np.array(emb.tokens), vectors=emb.vectors,
             trigger_words=np.array(list(emb.trigger_words)))


def load_embeddings(path) -> SyntheticEmbeddings:
    with np.load(path, allow_pickle=False) as data:
        try:
            return SyntheticEmbeddings(tokens=[str(t) for t in data["tokens"]],
                                       vectors=np.array(data["vectors"]),
                                       trigger_words=tuple(str(t) for t in data["trigger_words"]))
        except KeyError as exc:
            raise DataError(f"embedding sidecar {path} missing array {exc}") from exc


def _label_sparse(emb: SyntheticEmbeddings, q_id: int, d_id: int) -> int:
    # Unit rows, so the cosine sign is the dot-product sign.
    return int(float(emb.vectors[d_id] @ emb.vectors[q_id]) > 0.0)


def _label_dense(trigger_ids: frozenset[int], q_id: int, dense: np.ndarray) -> int:
    return int(q_id in trigger_ids and float(dense.sum()) < 0.0)


def derive_label(rule: str, emb: SyntheticEmbeddings, trigger_ids: frozenset[int],
                 q_id: int, d_id: int, dense: np.ndarray) -> int:
    if rule == "sparse":
        return _label_sparse(emb, q_id, d_id)
    if rule == "dense":
        return _label_dense(trigger_ids, q_id, dense)
    if rule == "combined":
        return _label_sparse(emb, q_id, d_id) & _label_dense(trigger_ids, q_id, dense)
    raise ConfigError(f"unknown rule {rule!r}")


def _sample_query(cfg: SynthConfig, emb: SyntheticEmbeddings, rng: np.random.Generator,
                  trigger_only: bool = False) -> int:
    n_trig = len(cfg.trigger_words)
    if cfg.rule == "sparse" and not trigger_only:
        return int(rng.integers(1, cfg.vocab_size + 1))
    if trigger_only or rng.random() < cfg.trigger_fraction:
        return int(rng.integers(1, n_trig + 1))
    return int(rng.integers(n_trig + 1, cfg.vocab_size + 1))


def _sample_doc(cfg: SynthConfig, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    d_id = int(rng.integers(1, cfg.vocab_size + 1))
    dense = rng.uniform(-0.5, 0.5, cfg.dense_dim)
    return d_id, dense


def _make_example(q_id: int, docs: list[tuple[int, np.ndarray]],
                  labels: list[int]) -> RankingExample:
    return RankingExample(
        query=QueryFeatures(ngram_ids=[q_id]),
        docs=[Document(sparse=DocSparseFeatures(ngram_ids=[d_id]), dense=dense)
              for d_id, dense in docs],
        mask=np.ones(len(docs), dtype=bool),
        labels=np.array(labels, dtype=np.int64),
    )


def generate_examples(cfg: SynthConfig, emb: SyntheticEmbeddings, count: int,
                      stream: int) -> list[RankingExample]:
    """Generate ``count`` examples for cfg.rule from the given RNG stream.

    ``list_size == 1`` yields binary-classification examples whose label is the
    rule itself. ``list_size > 1`` yields ranked lists: one rule-positive doc
    (the click) and ``list_size - 1`` rule-negative docs under a shared query.
    For the dense/combined rules a ranked list can only contain a positive if
    the query is a trigger word, so list queries are drawn from the trigger set.
    """
    rng = np.random.default_rng([cfg.seed, stream])
    trigger_ids = frozenset() if cfg.rule == "sparse" else emb.trigger_ids()
    examples = []
    for _ in range(count):
        if cfg.list_size == 1:
            q_id = _sample_query(cfg, emb, rng)
            d_id, dense = _sample_doc(cfg, rng)
            label = derive_label(cfg.rule, emb, trigger_ids, q_id, d_id, dense)
            examples.append(_make_example(q_id, [(d_id, dense)], [label]))
            continue
        q_id = _sample_query(cfg, emb, rng, trigger_only=cfg.rule != "sparse")
        docs: list[tuple[int, np.ndarray]] = []
        labels: list[int] = []
        click_slot = int(rng.integers(0, cfg.list_size))
        for slot in range(cfg.list_size):
            want = 1 if slot == click_slot else 0
            while True:  # rejection-sample a doc with the wanted rule outcome
                d_id, dense = _sample_doc(cfg, rng)
                if derive_label(cfg.rule, emb, trigger_ids, q_id, d_id, dense) == want:
                    break
            docs.append((d_id, dense))
            labels.append(want)
        examples.append(_make_example(q_id, docs, labels))
    return examples


@dataclass(eq=False)
class SynthDataset:
    config: SynthConfig
    embeddings: SyntheticEmbeddings
    train: list[RankingExample]
    test: list[RankingExample]

    def header(self) -> DatasetHeader:
        return DatasetHeader(mode=self.config.mode, list_size=self.config.list_size,
                             dense_dim=self.config.dense_dim)


def gen_dataset(cfg: SynthConfig) -> SynthDataset:
    emb = gen_embedding_table(cfg)
    return SynthDataset(
        config=cfg,
        embeddings=emb,
        train=generate_examples(cfg, emb, cfg.num_train, _STREAM_TRAIN),
        test=generate_examples(cfg, emb, cfg.num_test, _STREAM_TEST),
    )


def gen_dataset_sparse_rule(cfg: SynthConfig) -> SynthDataset:
    return gen_dataset(_with_rule(cfg, "sparse"))


def gen_dataset_dense_rule(cfg: SynthConfig) -> SynthDataset:
    return gen_dataset(_with_rule(cfg, "dense"))


def gen_dataset_combined_rule(cfg: SynthConfig) -> SynthDataset:
    return gen_dataset(_with_rule(cfg, "combined"))


def _with_rule(cfg: SynthConfig, rule: str) -> SynthConfig:
    kwargs = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    kwargs["rule"] = rule
    return SynthConfig(**kwargs)


def rederive_labels(example: RankingExample, rule: str,
                    emb: SyntheticEmbeddings) -> np.ndarray:
    """Recompute labels from stored features; the oracle for generated files."""
    trigger_ids = emb.trigger_ids()
    labels = np.zeros_like(example.labels)
    q_id = example.query.ngram_ids[0]
    for i, doc in enumerate(example.docs):
        if example.mask[i]:
            labels[i] = derive_label(rule, emb, trigger_ids, q_id,
                                     doc.sparse.ngram_ids[0], doc.dense)
    return labels


def count_label_mismatches(examples: Iterable[RankingExample], rule: str,
                           emb: SyntheticEmbeddings) -> int:
    return sum(int(not np.array_equal(ex.labels, rederive_labels(ex, rule, emb)))
               for ex in examples)
