"""Small model factories shared by the network and acceptance tests."""
from __future__ import annotations

import numpy as np

from gadgetforge.network import ModelConfig, NetworkInput, init_model

VOCAB = 30


def tiny_model(layers: int = 2, seed: int = 0, dropout: float = 0.0, use_kan: bool = True, **kw):
    opts = dict(embed_dim=6, hidden=4, attention_dim=5, struct_dim=3)
    opts.update(kw)
    cfg = ModelConfig(layers=layers, dropout=dropout, use_kan=use_kan, seed=seed, **opts)
    rng = np.random.default_rng(seed + 100)
    emb = rng.normal(size=(VOCAB, 6))
    emb[0] = 0.0
    return init_model(cfg, emb)


def random_inputs(rng, lengths, struct_dim: int = 3):
    return [NetworkInput(rng.integers(2, VOCAB, n), rng.uniform(-1, 1, struct_dim)) for n in lengths]


def mirror_directions(model) -> None:
    """Make every right-to-left LSTM the mirror image of its left-to-right twin.

    Layer 0 copies the weights. Deeper layers read [fwd | bwd] halves of the
    layer below, so the mirror also swaps those two row blocks of W.
    """
    h = model.config.hidden
    for layer in range(model.config.layers):
        fw = model.lstm_params(layer, "fwd")
        bw = model.lstm_params(layer, "bwd")
        for src, dst in zip(fw, bw):
            dst.data[...] = src.data
        if layer > 0:
            w = fw[0].data
            bw[0].data[...] = np.concatenate([w[h:2 * h], w[:h]], axis=0)


def small_pipeline_config(root, n_functions: int = 80, epochs: int = 2, **over) -> dict:
    """A pipeline config that runs end to end in a few seconds."""
    cfg = {
        "seed": 3,
        "paths": {"corpus_dir": str(root / "corpus"), "artifacts_dir": str(root / "artifacts")},
        "corpus": {"n_functions": n_functions},
        "embedding": {"dim": 8, "epochs": 1},
        "model": {"hidden": 6, "layers": 1, "attention_dim": 6, "dropout": 0.2},
        "train": {"batch": 16, "epochs": epochs, "lr": 0.01},
    }
    cfg.update(over)
    return cfg
