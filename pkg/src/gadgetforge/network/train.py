"""Minibatch training with BCE and AdaMax, seeded end to end."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from ..autodiff import Adam, AdaMax, backward, bce_loss
from ..errors import ConfigError, EmptyDataset
from ..evaluation import confusion, metrics
from .model import ModelBundle, NetworkInput, forward_batch, make_batch, predict_scores

log = logging.getLogger(__name__)

OPTIMIZERS = {"adamax": AdaMax, "adam": Adam}


@dataclass
class TrainConfig:
    batch: int = 64
    epochs: int = 30
    optimizer: str = "adamax"
    lr: float = 0.001
    seed: int = 0
    bucket: int = 8  # batches per length-sorted pool; 0 disables bucketing
    threshold: float = 0.5

    def validate(self) -> None:
        if self.batch < 1:
            raise ConfigError("train.batch must be >= 1")
        if self.epochs < 0:
            raise ConfigError("train.epochs must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"train.optimizer must be one of {sorted(OPTIMIZERS)}")
        if not self.lr > 0:
            raise ConfigError("train.lr must be > 0")
        if self.bucket < 0:
            raise ConfigError("train.bucket must be >= 0")

    def to_json(self) -> dict:
        return asdict(self)


def epoch_batches(lengths: np.ndarray, batch: int, bucket: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Shuffle, then (optionally) sort pools of ``bucket`` batches by length and shuffle the batch order."""
    order = rng.permutation(len(lengths))
    if bucket <= 1:
        return [order[s:s + batch] for s in range(0, len(order), batch)]
    out = []
    pool = batch * bucket
    for s in range(0, len(order), pool):
        chunk = order[s:s + pool]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        out.extend(chunk[i:i + batch] for i in range(0, len(chunk), batch))
    return [out[i] for i in rng.permutation(len(out))]


def heldout_metrics(model: ModelBundle, inputs: Sequence[NetworkInput], labels: Sequence[int],
                    threshold: float = 0.5) -> dict:
    scores = predict_scores(model, inputs)
    preds = (scores >= threshold).astype(int)
    rep = metrics(confusion(preds.tolist(), [int(y) for y in labels]))
    return rep.as_floats()


def train(model: ModelBundle, inputs: Sequence[NetworkInput], labels: Sequence[int],
          cfg: Optional[TrainConfig] = None, heldout: Optional[tuple] = None,
          on_epoch: Optional[Callable[[dict], None]] = None) -> ModelBundle:
    """Train in place and append one history record per epoch.

    ``heldout`` is an optional (inputs, labels) pair scored after each epoch.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    if len(inputs) == 0:
        raise EmptyDataset("no training examples")
    if len(inputs) != len(labels):
        raise EmptyDataset(f"{len(inputs)} inputs vs {len(labels)} labels")
    y = np.asarray(labels, dtype=np.float64)
    lengths = np.asarray([x.length for x in inputs])
    rng = np.random.default_rng(cfg.seed)
    opt = OPTIMIZERS[cfg.optimizer](model.parameters(), lr=cfg.lr)
    for epoch in range(1, cfg.epochs + 1):
        total, seen = 0.0, 0
        for idx in epoch_batches(lengths, cfg.batch, cfg.bucket, rng):
            batch = make_batch([inputs[i] for i in idx], y[idx])
            opt.zero_grad()
            loss = bce_loss(forward_batch(model, batch, train=True, rng=rng), batch.labels)
            backward(loss)
            opt.step()
            total += loss.item() * len(idx)
            seen += len(idx)
        record = {"epoch": epoch, "loss": total / seen}
        if heldout is not None and len(heldout[0]):
            record["heldout"] = heldout_metrics(model, heldout[0], heldout[1], cfg.threshold)
        model.history.append(record)
        log.info("epoch %d loss %.6f %s", epoch, record["loss"], record.get("heldout", ""))
        if on_epoch is not None:
            on_epoch(record)
    return model
