"""Skip-gram with negative sampling over normalized gadget tokens."""
from __future__ import annotations

import hashlib
import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from ._accel import njit, select
from .errors import ConfigError, DimensionMismatch, EmptyCorpus, IoFailure

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<PAD>", "<UNK>"
MAGIC = b"GFEM"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Vocab:
    tokens: tuple  # id -> token
    counts: tuple  # id -> corpus count (specials count UNK hits only)

    def __post_init__(self):
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self._index.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        return np.asarray([self._index.get(t, UNK) for t in tokens], dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self.tokens[int(i)] for i in ids]

    @property
    def digest(self) -> str:
        blob = json.dumps(list(self.tokens), ensure_ascii=False).encode("utf-8")
        return hashlib.blake2b(blob, digest_size=8).hexdigest()

    def to_json(self) -> dict:
        return {"tokens": list(self.tokens), "counts": list(self.counts), "digest": self.digest}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocab":
        return cls(tuple(obj["tokens"]), tuple(int(c) for c in obj["counts"]))


def _token_lists(corpus) -> List[Sequence[str]]:
    return [g.tokens if hasattr(g, "tokens") else g for g in corpus]


def build_vocab(corpus, min_count: int = 1) -> Vocab:
    """Ids: PAD, UNK, then tokens with count >= min_count by count desc, token asc."""
    seqs = _token_lists(corpus)
    counts = Counter(t for seq in seqs for t in seq)
    if not counts:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    unk_hits = sum(c for t, c in counts.items() if c < min_count)
    return Vocab((PAD_TOKEN, UNK_TOKEN) + tuple(kept), (0, unk_hits) + tuple(counts[t] for t in kept))


def skipgram_pairs(tokens: Sequence, window: int = 5) -> list:
    """All (center, context) pairs within a fixed window, scanning left to right."""
    n = len(tokens)
    out = []
    for i in range(n):
        for j in range(max(0, i - window), min(n, i + window + 1)):
            if j != i:
                out.append((tokens[i], tokens[j]))
    return out


def _pair_array(seqs: List[np.ndarray], window: int) -> np.ndarray:
    parts = []
    for ids in seqs:
        n = len(ids)
        if n < 2:
            continue
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        keep = (i != j) & (np.abs(i - j) <= window)
        parts.append(np.stack([ids[i[keep]], ids[j[keep]]], axis=1))
    if not parts:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(parts).astype(np.int64)


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sgns_loss(w_in: np.ndarray, w_out: np.ndarray, center: int, context: int, negatives: Sequence[int]) -> float:
    """-log s(v.u_o) - sum_n log s(-v.u_n) for one example."""
    v = w_in[center]
    loss = np.logaddexp(0.0, -(v @ w_out[context]))
    for n in negatives:
        loss += np.logaddexp(0.0, v @ w_out[n])
    return float(loss)


@njit
def _sgns_epoch_nb(w_in, w_out, pairs, negs, lr0, done0, total):
    dim = w_in.shape[1]
    k = negs.shape[1]
    grad_v = np.zeros(dim)
    coef = np.zeros(k + 1)
    for p in range(pairs.shape[0]):
        lr = lr0 * max(1.0 - (done0 + p) / total, 1e-4)
        c = pairs[p, 0]
        for t in range(k + 1):
            tgt = pairs[p, 1] if t == 0 else negs[p, t - 1]
            dot = 0.0
            for d in range(dim):
                dot += w_in[c, d] * w_out[tgt, d]
            label = 1.0 if t == 0 else 0.0
            coef[t] = (label - 1.0 / (1.0 + np.exp(-dot))) * lr
        for d in range(dim):
            grad_v[d] = 0.0
        for t in range(k + 1):
            tgt = pairs[p, 1] if t == 0 else negs[p, t - 1]
            for d in range(dim):
                grad_v[d] += coef[t] * w_out[tgt, d]
        for t in range(k + 1):
            tgt = pairs[p, 1] if t == 0 else negs[p, t - 1]
            for d in range(dim):
                w_out[tgt, d] += coef[t] * w_in[c, d]
        for d in range(dim):
            w_in[c, d] += grad_v[d]


def _sgns_epoch_np(w_in, w_out, pairs, negs, lr0, done0, total):
    labels = np.zeros(negs.shape[1] + 1)
    labels[0] = 1.0
    for p in range(pairs.shape[0]):
        lr = lr0 * max(1.0 - (done0 + p) / total, 1e-4)
        c = pairs[p, 0]
        tgts = np.concatenate(([pairs[p, 1]], negs[p]))
        v = w_in[c].copy()
        u = w_out[tgts]
        coef = (labels - 1.0 / (1.0 + np.exp(-(u @ v)))) * lr
        np.add.at(w_out, tgts, coef[:, None] * v)
        w_in[c] += coef @ u


@dataclass
class EmbeddingConfig:
    dim: int = 100
    window: int = 5
    negatives: int = 5
    lr: float = 0.025
    epochs: int = 5
    min_count: int = 1
    seed: int = 0

    def validate(self) -> None:
        for name in ("dim", "window", "negatives", "min_count"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"embedding.{name} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("embedding.epochs must be >= 0")
        if not self.lr > 0:
            raise ConfigError("embedding.lr must be > 0")

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EmbeddingTable:
    vocab: Vocab
    input_vectors: np.ndarray
    output_vectors: np.ndarray
    config: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.input_vectors.shape[1]

    def vector(self, token: str) -> np.ndarray:
        return self.input_vectors[self.vocab.id(token)]

    def cosine(self, a: str, b: str) -> float:
        u, v = self.vector(a), self.vector(b)
        den = np.linalg.norm(u) * np.linalg.norm(v)
        return float(u @ v / den) if den > 0 else 0.0


def init_table(vocab: Vocab, dim: int, seed: int) -> tuple:
    rng = np.random.default_rng(seed)
    w_in = rng.uniform(-0.5 / dim, 0.5 / dim, size=(len(vocab), dim))
    w_in[PAD] = 0.0
    return w_in, np.zeros((len(vocab), dim))


def train_embeddings(corpus, cfg: Optional[EmbeddingConfig] = None, vocab: Optional[Vocab] = None) -> EmbeddingTable:
    """Deterministic SGD over shuffled pairs, lr decaying linearly to ~0 across all epochs.

    Negatives are drawn up front per epoch from unigram counts ** 0.75. PAD
    never appears in a pair, so its input row stays zero.
    """
    cfg = cfg or EmbeddingConfig()
    cfg.validate()
    seqs_tok = _token_lists(corpus)
    vocab = vocab or build_vocab(seqs_tok, cfg.min_count)
    w_in, w_out = init_table(vocab, cfg.dim, cfg.seed)
    pairs = _pair_array([vocab.encode(s) for s in seqs_tok], cfg.window)
    noise = np.asarray(vocab.counts, dtype=np.float64) ** 0.75
    noise[PAD] = 0.0
    if cfg.epochs > 0 and len(pairs) and noise.sum() > 0:
        noise /= noise.sum()
        rng = np.random.default_rng(cfg.seed + 1)
        total = float(cfg.epochs * len(pairs))
        kernel = select(_sgns_epoch_nb, _sgns_epoch_np)
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(pairs))
            negs = rng.choice(len(vocab), size=(len(pairs), cfg.negatives), p=noise).astype(np.int64)
            kernel(w_in, w_out, np.ascontiguousarray(pairs[order]), negs, float(cfg.lr),
                   float(epoch * len(pairs)), total)
    return EmbeddingTable(vocab, w_in, w_out, cfg.to_json())


def embed_ids(ids: np.ndarray, table: EmbeddingTable) -> np.ndarray:
    return table.input_vectors[np.asarray(ids, dtype=np.int64)]


def embed_gadget(gadget, table: EmbeddingTable, dim: Optional[int] = None) -> np.ndarray:
    """T x dim matrix of input vectors; out-of-vocabulary tokens take the UNK row."""
    if dim is not None and dim != table.dim:
        raise DimensionMismatch(f"model expects dim {dim}, embedding table has {table.dim}")
    tokens = gadget.tokens if hasattr(gadget, "tokens") else gadget
    return embed_ids(table.vocab.encode(tokens), table)


# ----------------------------------------------------------------------------
# files: <stem>.bin (header + float32 rows, input then output vectors), vocab.json

_HEADER = struct.Struct("<4sIII16s")


def save_table(table: EmbeddingTable, path) -> None:
    path = Path(path)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, len(table.vocab), table.dim, table.vocab.digest.encode("ascii"))
    body = np.concatenate([table.input_vectors, table.output_vectors]).astype("<f4").tobytes()
    path.write_bytes(header + body)
    meta = {"vocab": table.vocab.to_json(), "config": table.config}
    vocab_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8")


def vocab_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".vocab.json")


def load_table(path) -> EmbeddingTable:
    path = Path(path)
    try:
        raw = path.read_bytes()
        meta = json.loads(vocab_path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read embedding table {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise IoFailure(f"{path}: truncated header")
    magic, version, n, dim, digest = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != FORMAT_VERSION:
        raise IoFailure(f"{path}: not an embedding file (magic {magic!r}, version {version})")
    vocab = Vocab.from_json(meta["vocab"])
    if len(vocab) != n or vocab.digest != digest.decode("ascii"):
        raise IoFailure(f"{path}: vocabulary does not match header")
    rows = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    if rows.size != 2 * n * dim:
        raise IoFailure(f"{path}: expected {2 * n * dim} floats, found {rows.size}")
    rows = rows.astype(np.float64).reshape(2 * n, dim)
    return EmbeddingTable(vocab, rows[:n].copy(), rows[n:].copy(), meta.get("config", {}))


def export_tsv(table: EmbeddingTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok, row in zip(table.vocab.tokens, table.input_vectors):
            fh.write(tok + "\t" + "\t".join(f"{v:.6g}" for v in row) + "\n")


def table_digest(table: EmbeddingTable) -> str:
    """Digest of the vocabulary and the float32 input vectors as stored on disk."""
    h = hashlib.blake2b(digest_size=8)
    h.update(table.vocab.digest.encode("ascii"))
    h.update(table.input_vectors.astype("<f4").tobytes())
    return h.hexdigest()
