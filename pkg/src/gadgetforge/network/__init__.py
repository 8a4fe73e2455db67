"""BiLSTM-residual-attention classifier with inception blocks and a KAN feature branch."""
from __future__ import annotations

from typing import Tuple

import numpy as np

from ..embedding import EmbeddingTable, table_digest
from ..errors import ConfigDigestMismatch, ScalerNotFitted
from ..kan import struct_features
from .checkpoint import dumps_model, load_model, loads_model, save_model
from .lstm import lstm_sequence, reversal_index, time_permute
from .model import (
    Batch,
    LstmState,
    ModelBundle,
    ModelConfig,
    NetworkInput,
    attention,
    bilstm_forward,
    classify,
    forward_batch,
    inception,
    init_model,
    lstm_step,
    make_batch,
    masked_mean,
    predict_scores,
)
from .train import TrainConfig, epoch_batches, heldout_metrics, train


def make_input(model: ModelBundle, gadget, table: EmbeddingTable, graphs=None, raw_struct=None) -> NetworkInput:
    """Token ids via the table's vocabulary plus scaled structural features.

    ``graphs`` is the FunctionGraphs of the gadget's function; pass
    ``raw_struct`` instead when the unscaled vector is already known.
    """
    cfg = model.config
    if cfg.use_kan:
        if raw_struct is None:
            raw_struct = struct_features(graphs.ast, graphs.pdg, gadget)
        if model.scaler is None or not model.scaler.fitted:
            raise ScalerNotFitted("model has no fitted feature scaler")
        struct = model.scaler.transform(np.asarray(raw_struct)[None, :])[0]
    else:
        struct = np.zeros(0)
    return NetworkInput(table.vocab.encode(gadget.tokens), struct, cfg.max_tokens)


def check_embeddings(model: ModelBundle, table: EmbeddingTable) -> None:
    if table.dim != model.config.embed_dim:
        raise ConfigDigestMismatch(f"embedding dim {table.dim} vs model {model.config.embed_dim}")
    if model.embedding_digest and model.embedding_digest != table_digest(table):
        raise ConfigDigestMismatch("embedding table does not match the one the model was trained with")


def predict(model: ModelBundle, gadget, table: EmbeddingTable, graphs=None, threshold: float = 0.5,
            raw_struct=None) -> Tuple[float, int]:
    """Eval-mode (score, label); label is 1 iff score >= threshold."""
    check_embeddings(model, table)
    if model.embeddings is None and not model.config.trainable_embeddings:
        model.embeddings = table.input_vectors
    score = classify(model, make_input(model, gadget, table, graphs, raw_struct))
    return score, int(score >= threshold)


__all__ = [
    "Batch",
    "LstmState",
    "ModelBundle",
    "ModelConfig",
    "NetworkInput",
    "TrainConfig",
    "attention",
    "bilstm_forward",
    "check_embeddings",
    "classify",
    "dumps_model",
    "epoch_batches",
    "forward_batch",
    "heldout_metrics",
    "inception",
    "init_model",
    "load_model",
    "loads_model",
    "lstm_sequence",
    "lstm_step",
    "make_batch",
    "make_input",
    "masked_mean",
    "predict",
    "predict_scores",
    "reversal_index",
    "save_model",
    "time_permute",
    "train",
]
