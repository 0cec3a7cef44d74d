"""Feature data model, n-gram tokenization, vocabularies, and dataset file I/O.

Dataset file format (version 1)
-------------------------------
Line-delimited text, one example per line, UTF-8. The first line is a header::

    #sepattn-dataset\tv1\tmode=<ranking|classification>\tlist_size=<int>\tdense_dim=<int>\tquery=<ids|text>

Each record has 3 or 4 tab-separated fields::

    <query>\t<docs>\t<labels>[\t<weight>]

* ``query`` with ``query=ids``: ``<idlist>;<idlist>`` (word-ngram ids, then
  char-ngram ids). With ``query=text``: the raw query string (tabs forbidden);
  loading then requires a featurizer callback.
* ``docs``: exactly ``list_size`` docs joined by ``|``. A padded slot is the
  single character ``_``. A real doc is ``<idlist>;<idlist>;<floatlist>``
  (word-ngram ids, char-ngram ids, dense vector of length ``dense_dim``).
* ``labels``: ``list_size`` comma-separated 0/1 click indicators. Padded slots
  must be 0; ranking mode requires exactly one 1 among valid slots.
* ``weight``: optional positive propensity weight (defaults to 1.0).
* ``idlist``: comma-separated non-negative ints, possibly empty.
* ``floatlist``: comma-separated floats (``repr`` round-trip precision).

Round-trip identity (write then load gives elementwise-equal examples) is a
hard contract covered by tests.
"""

from __future__ import annotations

import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import ConfigError, DataError, ValidationError

# Joiner for word n-grams; non-printable so the bigram "a b" cannot collide
# with a literal token containing a space.
WORD_NGRAM_SEP = "\x1f"

DEFAULT_WORD_ORDERS = (1, 2)
DEFAULT_CHAR_ORDERS = (3, 4)

HEADER_PREFIX = "#sepattn-dataset"
FORMAT_VERSION = 1

MODES = ("ranking", "classification")


@dataclass
class QueryFeatures:
    ngram_ids: list[int] = field(default_factory=list)
    char_ngram_ids: list[int] = field(default_factory=list)


@dataclass
class DocSparseFeatures:
    ngram_ids: list[int] = field(default_factory=list)
    char_ngram_ids: list[int] = field(default_factory=list)


@dataclass(eq=False)
class Document:
    sparse: DocSparseFeatures
    dense: np.ndarray


@dataclass(eq=False)
class RankingExample:
    """One query with a fixed-size candidate list.

    ``docs`` always has ``list_size`` entries; ``mask`` marks the real ones.
    Padded slots carry empty sparse features and a zero dense vector.
    """

    query: QueryFeatures
    docs: list[Document]
    mask: np.ndarray
    labels: np.ndarray
    propensity_weight: float = 1.0


@dataclass
class Vocab:
    """Token-to-id mapping. Id 0 is reserved for padding/unknown.

    ``explicit`` mode carries a fixed map; ``hashed`` mode maps any token onto
    ``[1, bucket_count]`` with a stable CRC32 hash.
    """

    mode: str
    token_to_id: dict[str, int] | None = None
    bucket_count: int = 0

    def __post_init__(self):
        if self.mode not in ("explicit", "hashed"):
            raise ConfigError(f"unknown vocab mode {self.mode!r}")
        if self.mode == "explicit" and self.token_to_id is None:
            raise ConfigError("explicit vocab requires a token map")
        if self.mode == "hashed" and self.bucket_count < 1:
            raise ConfigError("hashed vocab requires bucket_count >= 1")

    @property
    def table_rows(self) -> int:
        """Embedding-table row count, including the padding row 0."""
        if self.mode == "explicit":
            return len(self.token_to_id) + 1
        return self.bucket_count + 1

    def lookup(self, token: str) -> int:
        if self.mode == "explicit":
            return self.token_to_id.get(token, 0)
        return 1 + zlib.crc32(token.encode("utf-8")) % self.bucket_count


def build_vocab(tokens: Iterable[str], min_frequency: int = 1) -> Vocab:
    """Explicit vocab of tokens with frequency >= min_frequency.

    Ids are assigned 1..K by descending frequency, ties broken lexicographically,
    so indexing is stable across runs for the same stream.
    """
    if min_frequency < 1:
        raise ConfigError(f"min_frequency must be >= 1, got {min_frequency}")
    counts = Counter(tokens)
    kept = sorted((t for t, c in counts.items() if c >= min_frequency),
                  key=lambda t: (-counts[t], t))
    return Vocab(mode="explicit", token_to_id={t: i + 1 for i, t in enumerate(kept)})


def word_ngrams(tokens: list[str], order: int) -> list[str]:
    return [WORD_NGRAM_SEP.join(tokens[i:i + order]) for i in range(len(tokens) - order + 1)]


def char_ngrams(text: str, order: int) -> list[str]:
    return [text[i:i + order] for i in range(len(text) - order + 1)]


def featurize_text(text: str, vocab: Vocab,
                   ngram_orders: Iterable[int] = DEFAULT_WORD_ORDERS,
                   char_ngram_orders: Iterable[int] = DEFAULT_CHAR_ORDERS,
                   char_vocab: Vocab | None = None) -> tuple[list[int], list[int]]:
    """Word and character n-gram ids for a string.

    Word n-grams are taken over whitespace-split lowercased tokens, character
    n-grams over the raw lowercased string. ``char_vocab`` defaults to
    ``vocab``. At least one order set must be non-empty. Deterministic and
    total on arbitrary strings; an empty string yields two empty lists.
    """
    word_orders = sorted(set(ngram_orders))
    char_orders = sorted(set(char_ngram_orders))
    if not word_orders and not char_orders:
        raise ConfigError("featurize_text: both order sets are empty")
    lowered = text.lower()
    tokens = lowered.split()
    ngram_ids = [vocab.lookup(g) for order in word_orders for g in word_ngrams(tokens, order)]
    cv = char_vocab if char_vocab is not None else vocab
    char_ids = [cv.lookup(g) for order in char_orders for g in char_ngrams(lowered, order)]
    return ngram_ids, char_ids


@dataclass
class DenseStats:
    mean: np.ndarray
    std: np.ndarray


def compute_dense_stats(vectors: Iterable[np.ndarray]) -> DenseStats:
    """Per-dimension mean and population stddev; compute on the training split only."""
    mat = np.asarray(list(vectors), dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] == 0:
        raise DataError("compute_dense_stats: need a non-empty list of equal-length vectors")
    return DenseStats(mean=mat.mean(axis=0), std=mat.std(axis=0))


def normalize_dense(values, stats: DenseStats) -> np.ndarray:
    """(x - mean) / max(std, 1e-6) per dimension."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != stats.mean.shape:
        raise DataError(
            f"normalize_dense: vector length {values.shape} != stats length {stats.mean.shape}")
    return (values - stats.mean) / np.maximum(stats.std, 1e-6)


@dataclass
class DatasetHeader:
    mode: str
    list_size: int
    dense_dim: int
    query_encoding: str = "ids"
    version: int = FORMAT_VERSION


def validate_example(example: RankingExample, header: DatasetHeader) -> None:
    """Enforce the record invariants for the header's mode."""
    n = header.list_size
    if len(example.docs) != n or example.mask.shape != (n,) or example.labels.shape != (n,):
        raise ValidationError(f"example does not have exactly {n} doc slots")
    if example.propensity_weight <= 0:
        raise ValidationError(f"propensity weight must be positive, "
                              f"got {example.propensity_weight}")
    for i, doc in enumerate(example.docs):
        if example.mask[i]:
            if doc.dense.shape != (header.dense_dim,):
                raise ValidationError(
                    f"doc {i}: dense vector length {doc.dense.shape[0]} != {header.dense_dim}")
        elif example.labels[i] != 0:
            raise ValidationError(f"padded slot {i} carries a click label")
    labels = example.labels[example.mask.astype(bool)]
    if not np.isin(labels, (0, 1)).all():
        raise ValidationError("labels must be 0 or 1")
    clicks = int(labels.sum())
    if header.mode == "ranking" and clicks != 1:
        raise ValidationError(f"ranking example must have exactly one click, got {clicks}")


def _format_header(header: DatasetHeader) -> str:
    return "\t".join([
        HEADER_PREFIX,
        f"v{header.version}",
        f"mode={header.mode}",
        f"list_size={header.list_size}",
        f"dense_dim={header.dense_dim}",
        f"query={header.query_encoding}",
    ])


def _parse_header(line: str) -> DatasetHeader:
    parts = line.rstrip("\n").split("\t")
    if not parts or parts[0] != HEADER_PREFIX:
        raise DataError(f"line 1: missing {HEADER_PREFIX} header")
    if len(parts) < 2 or not parts[1].startswith("v"):
        raise DataError("line 1: header missing format version")
    try:
        version = int(parts[1][1:])
    except ValueError as exc:
        raise DataError(f"line 1: bad format version {parts[1]!r}") from exc
    if version != FORMAT_VERSION:
        raise DataError(f"line 1: unsupported format version {version}")
    kv = {}
    for part in parts[2:]:
        key, _, value = part.partition("=")
        kv[key] = value
    try:
        header = DatasetHeader(
            mode=kv["mode"],
            list_size=int(kv["list_size"]),
            dense_dim=int(kv["dense_dim"]),
            query_encoding=kv.get("query", "ids"),
            version=version,
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"line 1: bad header field ({exc})") from exc
    if header.mode not in MODES:
        raise DataError(f"line 1: unknown mode {header.mode!r}")
    if header.query_encoding not in ("ids", "text"):
        raise DataError(f"line 1: unknown query encoding {header.query_encoding!r}")
    if header.list_size < 1 or header.dense_dim < 1:
        raise DataError("line 1: list_size and dense_dim must be >= 1")
    return header


def _format_idlist(ids: list[int]) -> str:
    return ",".join(str(i) for i in ids)


def _parse_idlist(text: str, lineno: int) -> list[int]:
    if text == "":
        return []
    try:
        ids = [int(t) for t in text.split(",")]
    except ValueError as exc:
        raise DataError(f"line {lineno}: bad id list {text!r}") from exc
    if any(i < 0 for i in ids):
        raise DataError(f"line {lineno}: negative token id in {text!r}")
    return ids


def _format_floats(values: np.ndarray) -> str:
    return ",".join(repr(float(v)) for v in values)


def _parse_floats(text: str, lineno: int) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",")] if text else [], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"line {lineno}: bad float list {text!r}") from exc


def format_record(example: RankingExample) -> str:
    """Serialize one example (ids query encoding)."""
    query = f"{_format_idlist(example.query.ngram_ids)};{_format_idlist(example.query.char_ngram_ids)}"
    docs = []
    for i, doc in enumerate(example.docs):
        if not example.mask[i]:
            docs.append("_")
            continue
        docs.append(";".join([
            _format_idlist(doc.sparse.ngram_ids),
            _format_idlist(doc.sparse.char_ngram_ids),
            _format_floats(doc.dense),
        ]))
    labels = ",".join(str(int(l)) for l in example.labels)
    return "\t".join([query, "|".join(docs), labels, repr(float(example.propensity_weight))])


def parse_record(line: str, lineno: int, header: DatasetHeader,
                 featurizer: Callable[[str], tuple[list[int], list[int]]] | None = None,
                 ) -> RankingExample:
    fields = line.rstrip("\n").split("\t")
    if len(fields) not in (3, 4):
        raise DataError(f"line {lineno}: expected 3 or 4 tab-separated fields, got {len(fields)}")
    query_field, docs_field, labels_field = fields[:3]

    if header.query_encoding == "text":
        if featurizer is None:
            raise ConfigError("dataset stores text queries; a featurizer is required to load it")
        ngram_ids, char_ids = featurizer(query_field)
        query = QueryFeatures(ngram_ids=ngram_ids, char_ngram_ids=char_ids)
    else:
        qparts = query_field.split(";")
        if len(qparts) != 2:
            raise DataError(f"line {lineno}: query field must be '<ids>;<ids>'")
        query = QueryFeatures(ngram_ids=_parse_idlist(qparts[0], lineno),
                              char_ngram_ids=_parse_idlist(qparts[1], lineno))

    doc_fields = docs_field.split("|")
    if len(doc_fields) != header.list_size:
        raise DataError(f"line {lineno}: expected {header.list_size} docs, got {len(doc_fields)}")
    docs: list[Document] = []
    mask = np.zeros(header.list_size, dtype=bool)
    for i, df in enumerate(doc_fields):
        if df == "_":
            docs.append(Document(sparse=DocSparseFeatures(),
                                 dense=np.zeros(header.dense_dim)))
            continue
        dparts = df.split(";")
        if len(dparts) != 3:
            raise DataError(f"line {lineno}: doc {i} must be '<ids>;<ids>;<floats>' or '_'")
        dense = _parse_floats(dparts[2], lineno)
        if dense.shape != (header.dense_dim,):
            raise DataError(f"line {lineno}: doc {i} dense length {dense.shape[0]} "
                            f"!= {header.dense_dim}")
        docs.append(Document(
            sparse=DocSparseFeatures(ngram_ids=_parse_idlist(dparts[0], lineno),
                                     char_ngram_ids=_parse_idlist(dparts[1], lineno)),
            dense=dense))
        mask[i] = True

    label_parts = labels_field.split(",")
    if len(label_parts) != header.list_size:
        raise DataError(f"line {lineno}: expected {header.list_size} labels, "
                        f"got {len(label_parts)}")
    try:
        labels = np.array([int(t) for t in label_parts], dtype=np.int64)
    except ValueError as exc:
        raise DataError(f"line {lineno}: bad label list {labels_field!r}") from exc

    weight = 1.0
    if len(fields) == 4:
        try:
            weight = float(fields[3])
        except ValueError as exc:
            raise DataError(f"line {lineno}: bad weight {fields[3]!r}") from exc

    example = RankingExample(query=query, docs=docs, mask=mask, labels=labels,
                             propensity_weight=weight)
    try:
        validate_example(example, header)
    except ValidationError as exc:
        raise ValidationError(f"line {lineno}: {exc}") from exc
    return example


def write_dataset(path, examples: Iterable[RankingExample], header: DatasetHeader) -> int:
    """Write examples in the ids encoding; returns the record count."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_format_header(header) + "\n")
        for example in examples:
            validate_example(example, header)
            fh.write(format_record(example) + "\n")
            count += 1
    return count


def iter_dataset(path, featurizer=None) -> Iterator[RankingExample]:
    """Stream examples from a dataset file (header is consumed and checked)."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if first == "":
            raise DataError("line 1: empty dataset file")
        header = _parse_header(first)
        for lineno, line in enumerate(fh, start=2):
            if line.strip() == "":
                raise DataError(f"line {lineno}: blank or truncated record")
            yield parse_record(line, lineno, header, featurizer)


def read_header(path) -> DatasetHeader:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if first == "":
            raise DataError("line 1: empty dataset file")
        return _parse_header(first)


def load_dataset(path, featurizer=None) -> tuple[DatasetHeader, list[RankingExample]]:
    header = read_header(path)
    return header, list(iter_dataset(path, featurizer))


def examples_equal(a: RankingExample, b: RankingExample) -> bool:
    """Elementwise equality, exact on floats (repr round-trips are lossless)."""
    if a.query != b.query or a.propensity_weight != b.propensity_weight:
        return False
    if not (np.array_equal(a.mask, b.mask) and np.array_equal(a.labels, b.labels)):
        return False
    if len(a.docs) != len(b.docs):
        return False
    for da, db in zip(a.docs, b.docs):
        if da.sparse != db.sparse or not np.array_equal(da.dense, db.dense):
            return False
    return True
