"""Held-out-technique experiment: does guided few-shot adaptation help?

For one seed: build a corpus, train the detector on the known techniques,
meta-train the control generator on them, then score the held-out technique's
test set before adaptation and after 1-shot and 5-shot adaptation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dpnet import DpnetModel, build_model
from .fgl import GuidedUpdateConfig, SourceSampler, adapt, draw_few_shot, init_generator, meta_train_generator
from .losses import LossWeights
from .metrics import accuracy, auc
from .rng import make_rng
from .synthdata import CorpusConfig, generate_samples, select
from .train import TrainConfig, predict, train_detector

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    held_out: str = "checker_grid"
    train_per_class: int = 150
    test_per_class: int = 100
    support_per_class: int = 20
    query_per_class: int = 20
    train: TrainConfig = TrainConfig(epochs=6, lr=1e-3, betas=(0.9, 0.999))
    fgl: GuidedUpdateConfig = GuidedUpdateConfig(meta_lr=1e-2)
    meta_episodes: int = 40
    support_draws: int = 3
    weights: LossWeights = LossWeights()


@dataclass
class ExperimentResult:
    seed: int
    auc_base: float
    auc_1shot: float
    auc_5shot: float
    acc_base: float
    acc_1shot: float
    acc_5shot: float
    train_acc: float
    meta_losses: list = field(default_factory=list)


def _adapted_scores(model: DpnetModel, gen, pool, test, train_set, technique: str, shots: int,
                    cfg: ExperimentConfig, seed: int) -> tuple[float, float]:
    aucs, accs = [], []
    fgl_cfg = GuidedUpdateConfig(**{**cfg.fgl.__dict__, "shots": shots})
    for d in range(cfg.support_draws):
        support = draw_few_shot(pool, technique, shots, make_rng(seed, "support-draw", shots, d))
        sampler = SourceSampler(train_set, fgl_cfg.source_batch, seed=seed, stream=f"adapt-{shots}-{d}")
        adapted = adapt(model, gen, support, sampler, fgl_cfg, cfg.weights).model
        scores = predict(adapted, test.images)
        aucs.append(auc(scores, test.labels))
        accs.append(accuracy(scores, test.labels))
    return float(np.mean(aucs)), float(np.mean(accs))


def run_heldout_experiment(seed: int, cfg: ExperimentConfig = ExperimentConfig()) -> ExperimentResult:
    corpus = CorpusConfig(
        seed=seed,
        known=tuple(f for f in ("checker_grid", "band_stop", "blend_seam", "ring_noise") if f != cfg.held_out),
        unknown=(cfg.held_out,),
        train_per_class=cfg.train_per_class,
        test_per_class=cfg.test_per_class,
        support_per_class=cfg.support_per_class,
        query_per_class=cfg.query_per_class,
    )
    records = generate_samples(corpus)
    known = list(corpus.known)
    train_set = select(records, "train", known)
    model, hist = train_detector(build_model(seed=seed), train_set, cfg.train, cfg.weights, seed=seed)

    gen = init_generator(model.n_layers, seed=seed, l_base=cfg.fgl.l_base, w_range=cfg.fgl.w_range)
    gen, meta = meta_train_generator(
        gen, model, train_set,
        select(records, "support", known), select(records, "query", known), known,
        cfg.fgl, cfg.meta_episodes, seed=seed, weights=cfg.weights,
    )

    test = select(records, "test", [cfg.held_out])
    pool = select(records, "support", [cfg.held_out])
    base_scores = predict(model, test.images)
    a1, c1 = _adapted_scores(model, gen, pool, test, train_set, cfg.held_out, 1, cfg, seed)
    a5, c5 = _adapted_scores(model, gen, pool, test, train_set, cfg.held_out, 5, cfg, seed)
    result = ExperimentResult(
        seed=seed,
        auc_base=auc(base_scores, test.labels),
        auc_1shot=a1,
        auc_5shot=a5,
        acc_base=accuracy(base_scores, test.labels),
        acc_1shot=c1,
        acc_5shot=c5,
        train_acc=hist.train_acc[hist.best_epoch],
        meta_losses=meta.query_losses,
    )
    log.info("seed %d: %s", seed, result)
    return result
