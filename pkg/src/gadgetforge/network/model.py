"""BiLSTM, inception, attention and classifier forward passes."""
from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..autodiff import (
    Tensor,
    add,
    as_tensor,
    concat,
    conv1d,
    dropout,
    gather,
    matmul,
    mul,
    no_grad,
    pad_axis,
    reduce_sum,
    reshape,
    sigmoid,
    softmax,
    tanh,
)
from ..errors import AllMasked, ConfigError, DimensionMismatch, ShapeMismatch
from ..kan import STRUCT_DIM, FeatureScaler, KanLayer, kan_forward
from .lstm import lstm_sequence, reversal_index, time_permute

DIRECTIONS = ("fwd", "bwd")


@dataclass
class ModelConfig:
    embed_dim: int = 100
    hidden: int = 128  # per direction; 2*hidden per timestep
    layers: int = 3
    attention_dim: int = 128
    kernel_sizes: tuple = (1, 3, 5)
    dropout: float = 0.5
    max_tokens: int = 500
    struct_dim: int = STRUCT_DIM
    kan_hidden: Optional[int] = None  # None -> 2 * struct_dim + 1
    kan_out: Optional[int] = None  # None -> struct_dim
    kan_grid: int = 5
    kan_order: int = 3
    use_kan: bool = True
    trainable_embeddings: bool = False
    vocab_size: int = 0  # only read when embeddings are trainable
    seed: int = 0

    def __post_init__(self):
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)

    def validate(self) -> None:
        for name in ("embed_dim", "hidden", "layers", "attention_dim", "max_tokens"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"model.{name} must be >= 1")
        if not self.kernel_sizes or any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise ConfigError(f"model.kernel_sizes must be odd and positive, got {self.kernel_sizes}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("model.dropout must lie in [0, 1)")
        if self.trainable_embeddings and self.vocab_size < 2:
            raise ConfigError("trainable embeddings need model.vocab_size")

    @property
    def kan_widths(self) -> Tuple[int, int, int]:
        d = self.struct_dim
        hid = 2 * d + 1 if self.kan_hidden is None else self.kan_hidden
        return d, hid, d if self.kan_out is None else self.kan_out

    @property
    def feature_dim(self) -> int:
        """Width of the classifier input z."""
        return 2 * self.hidden + (self.kan_widths[2] if self.use_kan else 0)

    def to_json(self) -> dict:
        d = asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)

    @property
    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode("utf-8")
        return hashlib.blake2b(blob, digest_size=8).hexdigest()


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class NetworkInput:
    """Token ids (at most max_tokens) plus the scaled structural feature vector.

    ``padded_ids`` and ``mask`` give the fixed-length view; batches are
    computed on the longest real length in the batch, which is equivalent
    because trailing PAD never changes a score.
    """
    ids: np.ndarray
    struct: np.ndarray
    max_tokens: int = 500

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)[: self.max_tokens]
        self.struct = np.asarray(self.struct, dtype=np.float64)

    @property
    def length(self) -> int:
        return int(self.ids.size)

    def padded_ids(self) -> np.ndarray:
        out = np.zeros(self.max_tokens, dtype=np.int64)
        out[: self.length] = self.ids
        return out

    def mask(self) -> np.ndarray:
        return np.arange(self.max_tokens) < self.length

    def matrix(self, embeddings: np.ndarray) -> np.ndarray:
        """T x dim embedding matrix with PAD rows after the real tokens."""
        return np.asarray(embeddings)[self.padded_ids()]


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape)


class ModelBundle:
    """All trainable state plus the records needed to use it later."""

    def __init__(self, config: ModelConfig, params: "OrderedDict[str, Tensor]", kan: List[KanLayer],
                 scaler: Optional[FeatureScaler] = None, embedding_digest: str = "",
                 embeddings: Optional[np.ndarray] = None, history: Optional[list] = None,
                 meta: Optional[dict] = None):
        self.config = config
        self.params = params
        self.kan = kan
        self.scaler = scaler
        self.embedding_digest = embedding_digest
        self.embeddings = embeddings  # frozen lookup table (not a parameter)
        self.history = history if history is not None else []
        self.meta = meta if meta is not None else {}  # free-form JSON record, e.g. pipeline digest

    @property
    def config_digest(self) -> str:
        return self.config.digest

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def named_arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.data) for k, t in self.params.items())

    def n_parameters(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    def lstm_params(self, layer: int, direction: str) -> tuple:
        p = f"lstm.{layer}.{direction}."
        return tuple(self.params[p + k] for k in ("W", "U", "P", "b"))

    def embedding_matrix(self):
        if self.config.trainable_embeddings:
            return self.params["embedding"]
        if self.embeddings is None:
            raise DimensionMismatch("model has no embedding table attached")
        return self.embeddings


def init_model(config: ModelConfig, embeddings: Optional[np.ndarray] = None, embedding_digest: str = "",
               scaler: Optional[FeatureScaler] = None) -> ModelBundle:
    """Seeded initialization. Forget-gate biases start at 1."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    h, e, a = config.hidden, config.embed_dim, config.attention_dim
    params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add_param(name, arr):
        params[name] = Tensor(arr, requires_grad=True, name=name)

    if config.trainable_embeddings:
        if embeddings is not None and embeddings.shape != (config.vocab_size, e):
            raise DimensionMismatch(f"embeddings {embeddings.shape} vs ({config.vocab_size}, {e})")
        init = embeddings.copy() if embeddings is not None else _uniform(rng, 0.5 / e, (config.vocab_size, e))
        add_param("embedding", init)
    bound = 1.0 / np.sqrt(h)
    for layer in range(config.layers):
        n_in = e if layer == 0 else 2 * h
        for d in DIRECTIONS:
            p = f"lstm.{layer}.{d}."
            add_param(p + "W", _uniform(rng, bound, (n_in, 4 * h)))
            add_param(p + "U", _uniform(rng, bound, (h, 4 * h)))
            add_param(p + "P", _uniform(rng, bound, (3, h)))
            b = np.zeros(4 * h)
            b[h:2 * h] = 1.0
            add_param(p + "b", b)
    for k in config.kernel_sizes:
        add_param(f"inception.k{k}", _uniform(rng, 1.0 / np.sqrt(k * 2 * h * len(config.kernel_sizes)),
                                              (k, 2 * h, 2 * h)))
    bound = 1.0 / np.sqrt(2 * h)
    add_param("attention.W", _uniform(rng, bound, (2 * h, a)))
    add_param("attention.U", _uniform(rng, bound, (2 * h, a)))
    add_param("attention.b", np.zeros(a))
    add_param("attention.v", _uniform(rng, 1.0 / np.sqrt(a), (a, 1)))
    kan: List[KanLayer] = []
    if config.use_kan:
        widths = config.kan_widths
        for i in range(2):
            layer = KanLayer(widths[i], widths[i + 1], config.kan_grid, config.kan_order, rng)
            kan.append(layer)
            for key, t in zip(("wb", "ws", "coef"), layer.parameters()):
                t.name = f"kan.{i}.{key}"
                params[t.name] = t
    add_param("out.W", _uniform(rng, 1.0 / np.sqrt(config.feature_dim), (config.feature_dim, 1)))
    add_param("out.b", np.zeros(1))
    return ModelBundle(config, params, kan, scaler, embedding_digest,
                       None if config.trainable_embeddings else embeddings)


# ----------------------------------------------------------------------------
# single-step reference


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_step(params, x_t, state: LstmState) -> LstmState:
    """One peephole LSTM step on plain arrays; ``params`` is (W, U, P, b)."""
    w, u, p, b = (t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64) for t in params)
    x_t = np.asarray(x_t, dtype=np.float64)
    h = u.shape[0]
    if x_t.shape != (w.shape[0],) or state.h.shape != (h,) or state.c.shape != (h,):
        raise ShapeMismatch(f"lstm_step: x {x_t.shape}, h {state.h.shape}, c {state.c.shape} for W {w.shape}")
    z = x_t @ w + state.h @ u + b
    z[:3 * h] += (p * state.c).reshape(-1)
    i, f, o = _sigmoid(z[:h]), _sigmoid(z[h:2 * h]), _sigmoid(z[2 * h:3 * h])
    g = np.tanh(z[3 * h:])
    c = f * state.c + i * g
    return LstmState(o * np.tanh(c), c)


# ----------------------------------------------------------------------------
# batched forward pieces


@dataclass
class Batch:
    ids: np.ndarray  # (B, T) with PAD=0 after each row's length
    lengths: np.ndarray  # (B,)
    struct: np.ndarray  # (B, d)
    labels: Optional[np.ndarray] = None

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.ids.shape[1])[None, :] < self.lengths[:, None]


def make_batch(inputs: Sequence[NetworkInput], labels=None, width: Optional[int] = None) -> Batch:
    """Stack inputs, padding to the longest (or ``width``) length."""
    if not inputs:
        raise ShapeMismatch("empty batch")
    lengths = np.asarray([x.length for x in inputs], dtype=np.int64)
    t = int(lengths.max()) if width is None else int(width)
    if t < 1:
        raise AllMasked("every sequence in the batch is empty")
    ids = np.zeros((len(inputs), t), dtype=np.int64)
    for r, x in enumerate(inputs):
        ids[r, : x.length] = x.ids
    struct = np.stack([x.struct for x in inputs])
    lab = None if labels is None else np.asarray(labels, dtype=np.float64)
    return Batch(ids, lengths, struct, lab)


def embed_batch(model: ModelBundle, batch: Batch) -> Tensor:
    table = model.embedding_matrix()
    if isinstance(table, Tensor):
        return gather(table, batch.ids)
    if table.shape[1] != model.config.embed_dim:
        raise DimensionMismatch(f"embedding dim {table.shape[1]} vs model {model.config.embed_dim}")
    return Tensor(table[batch.ids])


def bilstm_forward(model: ModelBundle, x, lengths, train: bool = False,
                   rng: Optional[np.random.Generator] = None) -> Tensor:
    """Stacked bidirectional LSTM over (B, T, E); returns (B, T, 2H) with PAD rows zeroed.

    The right-to-left direction runs the same kernel on each row reversed
    within its own length, then un-reverses, so PAD never leaks into real steps.
    """
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[2] != model.config.embed_dim:
        raise ShapeMismatch(f"bilstm_forward expects (B, T, {model.config.embed_dim}), got {x.shape}")
    lengths = np.asarray(lengths, dtype=np.int64)
    t = x.shape[1]
    rev = reversal_index(lengths, t)
    h = x
    for layer in range(model.config.layers):
        if layer > 0:
            h = dropout(h, model.config.dropout, rng, train)
        fwd = lstm_sequence(h, *model.lstm_params(layer, "fwd"))
        bwd = time_permute(lstm_sequence(time_permute(h, rev), *model.lstm_params(layer, "bwd")), rev)
        h = concat([fwd, bwd], axis=-1)
    mask = (np.arange(t)[None, :] < lengths[:, None]).astype(np.float64)[:, :, None]
    return mul(h, mask)


def inception_kernel(model: ModelBundle) -> Tensor:
    """Sum of the banks zero-padded to the widest size: one conv equal to summing all bank outputs."""
    sizes = model.config.kernel_sizes
    widest = max(sizes)
    total = None
    for k in sizes:
        w = model.params[f"inception.k{k}"]
        if k < widest:
            w = pad_axis(w, 0, (widest - k) // 2, (widest - k) // 2)
        total = w if total is None else add(total, w)
    return total


def inception(model: ModelBundle, h) -> Tensor:
    h = as_tensor(h)
    width = 2 * model.config.hidden
    if h.shape[-1] != width:
        raise ShapeMismatch(f"inception expects width {width}, got {h.shape[-1]}")
    return conv1d(h, inception_kernel(model))


def masked_mean(h: Tensor, mask: np.ndarray) -> Tensor:
    m = np.asarray(mask, dtype=np.float64)
    counts = m.sum(axis=1, keepdims=True)
    if np.any(counts == 0):
        raise AllMasked("masked mean over a fully masked sequence")
    return mul(reduce_sum(mul(h, m[:, :, None]), axis=1), 1.0 / counts)


def attention(model: ModelBundle, h, mask) -> Tuple[Tensor, Tensor]:
    """Pooled additive attention: query is the masked mean; returns (context (B, 2H), weights (B, T))."""
    h = as_tensor(h)
    squeeze = h.ndim == 2
    if squeeze:
        h = reshape(h, (1,) + h.shape)
        mask = np.asarray(mask)[None, :]
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != h.shape[:2]:
        raise ShapeMismatch(f"attention mask {mask.shape} vs states {h.shape}")
    if not np.all(mask.any(axis=1)):
        raise AllMasked("attention needs at least one unmasked position")
    p = model.params
    b, t, _ = h.shape
    a = model.config.attention_dim
    query = matmul(masked_mean(h, mask), p["attention.W"])
    keys = matmul(h, p["attention.U"])
    e = tanh(add(add(keys, reshape(query, (b, 1, a))), p["attention.b"]))
    energies = reshape(matmul(e, p["attention.v"]), (b, t))
    alpha = softmax(energies, mask)
    context = reduce_sum(mul(h, reshape(alpha, (b, t, 1))), axis=1)
    if squeeze:
        return reshape(context, context.shape[1:]), reshape(alpha, alpha.shape[1:])
    return context, alpha


def forward_batch(model: ModelBundle, batch: Batch, train: bool = False,
                  rng: Optional[np.random.Generator] = None, zero_context: bool = False,
                  with_context: bool = True) -> Tensor:
    """Probabilities (B,) for a batch."""
    mask = batch.mask
    x = embed_batch(model, batch)
    h = bilstm_forward(model, x, batch.lengths, train, rng)
    hc = inception(model, h)
    pooled = masked_mean(hc, mask)
    if with_context:
        context, _ = attention(model, hc, mask)
        if zero_context:
            context = mul(context, 0.0)
        pooled = add(pooled, context)
    feats = [pooled]
    if model.config.use_kan:
        feats.append(kan_forward(model.kan, Tensor(batch.struct)))
    z = concat(feats, axis=-1) if len(feats) > 1 else pooled
    z = dropout(z, model.config.dropout, rng, train)
    logit = add(matmul(z, model.params["out.W"]), model.params["out.b"])
    return reshape(sigmoid(logit), (len(batch.lengths),))


def classify(model: ModelBundle, inp: NetworkInput) -> float:
    """Eval-mode probability for one input."""
    with no_grad():
        return float(forward_batch(model, make_batch([inp])).data[0])


def predict_scores(model: ModelBundle, inputs: Sequence[NetworkInput], batch_size: int = 64,
                   threads: int = 1) -> np.ndarray:
    """Eval-mode scores; batches are formed in length order and mapped back.

    Batch composition never depends on ``threads``; workers only share out
    whole batches, so scores are identical for any thread count.
    """
    order = sorted(range(len(inputs)), key=lambda i: (inputs[i].length, i))
    chunks = [order[s:s + batch_size] for s in range(0, len(order), batch_size)]

    def run(idx):
        with no_grad():
            return forward_batch(model, make_batch([inputs[i] for i in idx])).data

    if threads > 1 and len(chunks) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(idx) for idx in chunks]
    out = np.zeros(len(inputs))
    for idx, r in zip(chunks, results):
        out[idx] = r
    return out
