"""Stage-1 detector training and batched inference."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dpnet import DpnetModel, clone_params, forward, load_params
from .losses import LossWeights, train_loss
from .metrics import accuracy, auc
from .optim import Adam, StepLR
from .rng import make_rng
from .synthdata import ArrayDataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 2e-4
    betas: tuple = (0.999, 0.99)
    decay_every: int = 5
    decay_gamma: float = 0.5
    val_fraction: float = 0.1


@dataclass
class TrainHistory:
    epoch_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_auc: list = field(default_factory=list)
    best_epoch: int = -1


def predict(model: DpnetModel, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Sigmoid scores (probability of fake) for an image array (N, 1, H, W)."""
    out = []
    for start in range(0, len(images), batch_size):
        logits, _ = forward(model, Tensor(images[start:start + batch_size]))
        out.append(ad._sigmoid(logits.data))
    return np.concatenate(out) if out else np.zeros(0)


def split_validation(data: ArrayDataset, fraction: float, seed: int) -> tuple[ArrayDataset, ArrayDataset | None]:
    if fraction <= 0:
        return data, None
    rng = make_rng(seed, "val-split")
    perm = rng.permutation(len(data))
    n_val = max(2, int(round(fraction * len(data))))
    if n_val >= len(data):
        return data, None
    return data.subset(np.sort(perm[n_val:])), data.subset(np.sort(perm[:n_val]))


def train_detector(model: DpnetModel, data: ArrayDataset, cfg: TrainConfig = TrainConfig(),
                   weights: LossWeights = LossWeights(), seed: int = 0) -> tuple[DpnetModel, TrainHistory]:
    """Train with BCE + lambda*ICC; returns the best-validation-AUC model (last epoch if no split)."""
    train_set, val_set = split_validation(data, cfg.val_fraction, seed)
    opt = Adam(model.parameters(), lr=cfg.lr, betas=tuple(cfg.betas))
    sched = StepLR(opt, cfg.decay_every, cfg.decay_gamma)
    hist = TrainHistory()
    best_auc, best = -1.0, None
    for epoch in range(cfg.epochs):
        sched.set_epoch(epoch)
        perm = make_rng(seed, "epoch", epoch).permutation(len(train_set))
        losses = []
        for start in range(0, len(perm), cfg.batch_size):
            batch = train_set.subset(perm[start:start + cfg.batch_size])
            opt.zero_grad()
            logits, emb = forward(model, Tensor(batch.images))
            loss = train_loss(logits, batch.labels, emb, weights)
            loss.backward()
            opt.step()
            losses.append(loss.item())
        hist.epoch_loss.append(float(np.mean(losses)))
        hist.train_acc.append(accuracy(predict(model, train_set.images), train_set.labels))
        score = auc(predict(model, val_set.images), val_set.labels) if val_set is not None else None
        hist.val_auc.append(score)
        log.info("epoch %d loss=%.4f train_acc=%.3f val_auc=%s", epoch, hist.epoch_loss[-1], hist.train_acc[-1], score)
        if val_set is None or (score is not None and score > best_auc):
            best_auc = score if score is not None else best_auc
            best = clone_params(model)
            hist.best_epoch = epoch
    if best is None:
        return model, hist
    return load_params(model, best), hist
