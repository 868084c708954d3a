"""Forgery-guided learning: a generated, per-layer update rule for few-shot adaptation.

Every inner step summarizes the detector by its per-layer mean weight and
mean gradient (the learning state ``t``, length ``2n`` for ``n`` layers),
feeds ``t`` through a two-layer MLP and reads off one learning rate ``l`` and
one decay factor ``w`` per layer.  The parameters then move by::

    theta <- w * theta - l * grad

which, for scalar ``l`` and ``w = 1 - l * lam``, is exactly gradient descent
with an L2 penalty ``lam / 2 * ||theta||^2``.

The generator itself is meta-trained episodically: one known technique plays
the unknown one, the detector adapts on a few of its samples, and the loss on
held-out query samples of that technique is pushed back into the generator.
Inner gradients are treated as constants (first-order meta-gradient).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .dpnet import DpnetModel, Snapshot, clone_params, forward, load_params
from .losses import LossWeights, adaptation_loss, bce
from .optim import Adam
from .rng import kaiming_uniform, make_rng
from .synthdata import LABEL_FAKE, LABEL_REAL, ArrayDataset

log = logging.getLogger(__name__)

# keep l > 0 and w strictly inside (1 - w_range, 1 + w_range) even when softplus
# underflows or tanh rounds to +-1; both are invisible at ordinary raw outputs
L_FLOOR = 1e-300
W_MARGIN = 1e-6


@dataclass(frozen=True)
class GuidedUpdateConfig:
    inner_steps: int = 3
    reg_lambda: float = 1e-4
    l_base: float = 2e-4
    w_range: float = 0.01
    shots: int = 1
    meta_lr: float = 1e-3
    source_batch: int = 16
    query_per_class: int = 10

    def __post_init__(self):
        if self.inner_steps < 0:
            raise ValueError("inner_steps must be >= 0")
        if self.l_base <= 0:
            raise ValueError("l_base must be positive")
        if not 0 <= self.w_range < 1:
            raise ValueError("w_range must lie in [0, 1)")


@dataclass
class LearningState:
    theta_bar: np.ndarray  # (n,)
    delta_bar: np.ndarray  # (n,)

    @property
    def t(self) -> np.ndarray:
        return np.concatenate([self.theta_bar, self.delta_bar])

    @property
    def n(self) -> int:
        return len(self.theta_bar)


def compute_learning_state(params: Mapping[str, Mapping[str, np.ndarray]],
                           grads: Mapping[str, Mapping[str, np.ndarray]]) -> LearningState:
    """Per-layer mean of all weights and of all gradients in that layer."""
    theta_bar, delta_bar = [], []
    for name, group in params.items():
        if name not in grads:
            raise KeyError(f"no gradient for layer {name!r}")
        g = grads[name]
        ws = np.concatenate([np.ravel(group[k]) for k in group])
        try:
            gs = np.concatenate([np.ravel(g[k]) for k in group])
        except KeyError as exc:
            raise KeyError(f"no gradient for {name}.{exc.args[0]}") from None
        theta_bar.append(ws.mean())
        delta_bar.append(gs.mean())
    return LearningState(np.array(theta_bar), np.array(delta_bar))


@dataclass
class ControlVariables:
    l: Tensor  # (n,)
    w: Tensor  # (n,)

    def per_layer(self, names: Sequence[str]) -> dict[str, tuple[float, float]]:
        if len(names) != self.l.shape[0]:
            raise ShapeError(f"{len(names)} layers but {self.l.shape[0]} control pairs")
        return {name: (float(self.l.data[i]), float(self.w.data[i])) for i, name in enumerate(names)}


@dataclass
class ControlGenerator:
    """Two-layer MLP ``2n -> 4n -> 2n`` emitting per-layer (l, w)."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    l_base: float = 2e-4
    w_range: float = 0.01

    @property
    def n(self) -> int:
        return self.w2.shape[0] // 2

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def named_parameters(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def __call__(self, state: LearningState) -> ControlVariables:
        return generate_controls(self, state)


def init_generator(n_layers: int, seed: int = 0, l_base: float = 2e-4, w_range: float = 0.01) -> ControlGenerator:
    """Hidden layer Kaiming-initialized; output layer zero so every layer starts at
    ``l = softplus(0) * l_base`` and ``w = 1``."""
    rng = make_rng(seed, "generator-init")
    d_in, d_h = 2 * n_layers, 4 * n_layers
    return ControlGenerator(
        w1=Tensor(kaiming_uniform(rng, (d_h, d_in), d_in), requires_grad=True),
        b1=Tensor(np.zeros(d_h), requires_grad=True),
        w2=Tensor(np.zeros((d_in, d_h)), requires_grad=True),
        b2=Tensor(np.zeros(d_in), requires_grad=True),
        l_base=l_base,
        w_range=w_range,
    )


def generate_controls(gen: ControlGenerator, state: LearningState) -> ControlVariables:
    n = gen.n
    if state.n != n:
        raise ShapeError(f"generator built for {n} layers, learning state has {state.n}")
    t = Tensor(state.t.reshape(1, 2 * n))
    h = ad.relu(ad.linear(t, gen.w1, gen.b1))
    raw = ad.reshape(ad.linear(h, gen.w2, gen.b2), (2 * n,))
    l = ad.softplus(ad.index(raw, slice(0, n))) * gen.l_base + L_FLOOR
    w = ad.tanh(ad.index(raw, slice(n, 2 * n))) * (gen.w_range * (1.0 - W_MARGIN)) + 1.0
    return ControlVariables(l=l, w=w)


@dataclass
class FixedControls:
    """Stand-in generator returning the same (l, w) for every layer and step."""

    l: float = 0.0
    w: float = 1.0

    def __call__(self, state: LearningState) -> ControlVariables:
        return ControlVariables(Tensor(np.full(state.n, self.l)), Tensor(np.full(state.n, self.w)))


def guided_update(theta: np.ndarray, grad: np.ndarray, w, l) -> np.ndarray:
    """``w ⊙ theta - l ⊙ grad`` with w, l scalars or arrays shaped like theta."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if theta.shape != grad.shape:
        raise ShapeError(f"parameter shape {theta.shape} != gradient shape {grad.shape}")
    for c in (w, l):
        if np.ndim(c) and np.shape(c) != theta.shape:
            raise ShapeError(f"control shape {np.shape(c)} does not match parameter shape {theta.shape}")
    return w * theta - l * grad


def l2_regularized_step(theta: np.ndarray, grad: np.ndarray, l: float, lam: float) -> np.ndarray:
    """Plain gradient step on ``loss + lam/2 * ||theta||^2``."""
    return theta - l * (grad + lam * theta)


def guided_step(params: Snapshot, grads: Snapshot, c: ControlVariables) -> Snapshot:
    """Apply per-layer scalar controls, broadcast over each layer's tensors."""
    controls = c.per_layer(list(params))
    out = {}
    for name, group in params.items():
        l, w = controls[name]
        out[name] = {k: guided_update(v, grads[name][k], w, l) for k, v in group.items()}
    return out


# ---------------------------------------------------------------- adaptation
class SourceSampler:
    """Class-balanced batches from the source (training) set, one stream per step."""

    def __init__(self, data: ArrayDataset, batch_size: int, seed: int = 0, stream: str = "source"):
        self.data = data
        self.batch_size = batch_size
        self.seed = seed
        self.stream = stream
        self.reals = np.flatnonzero(data.labels == LABEL_REAL)
        self.fakes = np.flatnonzero(data.labels == LABEL_FAKE)
        if len(self.reals) == 0 or len(self.fakes) == 0:
            raise ValueError("source set needs both real and fake samples")

    def __call__(self, step: int) -> ArrayDataset:
        rng = make_rng(self.seed, self.stream, step)
        half = self.batch_size // 2
        idx = np.concatenate([
            rng.choice(self.reals, size=half, replace=len(self.reals) < half),
            rng.choice(self.fakes, size=self.batch_size - half, replace=len(self.fakes) < self.batch_size - half),
        ])
        return self.data.subset(idx)


def _tensor_params(arrays: Snapshot) -> dict[str, dict[str, Tensor]]:
    return {n: {k: Tensor(v, requires_grad=True) for k, v in g.items()} for n, g in arrays.items()}


@dataclass
class InnerStep:
    params: Snapshot
    grads: Snapshot
    controls: ControlVariables
    loss: float


@dataclass
class AdaptResult:
    model: DpnetModel
    steps: list = field(default_factory=list)
    support_ids: list = field(default_factory=list)


def adaptation_objective(model: DpnetModel, params, source: ArrayDataset, support: ArrayDataset,
                         weights: LossWeights) -> Tensor:
    x = np.concatenate([source.images, support.images])
    labels = np.concatenate([source.labels, support.labels])
    logits, emb = forward(model, Tensor(x), params)
    ns = len(source)
    src_logits = ad.index(logits, slice(0, ns))
    sup_logits = ad.index(logits, slice(ns, None))
    if weights.nu and np.any(np.linalg.norm(emb.data, axis=1) == 0):
        log.warning("zero-norm embedding in adaptation batch: contrastive term skipped")
        weights = LossWeights(weights.icc_lambda, weights.mu, 0.0, weights.tau)
    return adaptation_loss(src_logits, source.labels, sup_logits, support.labels, emb, labels, weights)


def adapt(model: DpnetModel, gen: Callable[[LearningState], ControlVariables], support: ArrayDataset,
          source_sampler: Callable[[int], ArrayDataset], cfg: GuidedUpdateConfig,
          weights: LossWeights = LossWeights()) -> AdaptResult:
    """Adapt a copy of ``model`` to ``support`` with ``cfg.inner_steps`` guided steps.

    The input model is never modified.
    """
    if len(support) == 0:
        raise ValueError("empty support set")
    params = clone_params(model)
    steps = []
    for i in range(cfg.inner_steps):
        source = source_sampler(i)
        tp = _tensor_params(params)
        loss = adaptation_objective(model, tp, source, support, weights)
        loss.backward()
        grads = {n: {k: t.grad if t.grad is not None else np.zeros_like(t.data) for k, t in g.items()}
                 for n, g in tp.items()}
        state = compute_learning_state(params, grads)
        controls = gen(state)
        steps.append(InnerStep(params, grads, controls, loss.item()))
        params = guided_step(params, grads, controls)
    return AdaptResult(load_params(model, params), steps, list(support.ids))


def unrolled_params(steps: Sequence[InnerStep], names: Sequence[str]) -> dict[str, dict[str, Tensor]]:
    """Final parameters as tensors differentiable w.r.t. every step's controls.

    Gradients from each step enter as constants (first-order treatment).
    """
    first = steps[0].params
    out = {n: {k: Tensor(v) for k, v in g.items()} for n, g in first.items()}
    for step in steps:
        for j, name in enumerate(names):
            l_j = ad.index(step.controls.l, j)
            w_j = ad.index(step.controls.w, j)
            for k, theta in out[name].items():
                shape = theta.shape
                ones = (1,) * len(shape)
                w_b = ad.expand(ad.reshape(w_j, ones), shape)
                l_b = ad.expand(ad.reshape(l_j, ones), shape)
                out[name][k] = w_b * theta - l_b * Tensor(step.grads[name][k])
    return out


# ---------------------------------------------------------------- meta-training
@dataclass
class EpisodeData:
    technique: str
    support: ArrayDataset
    query: ArrayDataset
    source: ArrayDataset


def draw_few_shot(pool: ArrayDataset, technique: str, k: int, rng: np.random.Generator) -> ArrayDataset:
    """``k`` fakes of ``technique`` plus ``k`` reals, drawn without replacement."""
    fakes = np.flatnonzero((pool.labels == LABEL_FAKE) & (pool.techniques == technique))
    reals = np.flatnonzero(pool.labels == LABEL_REAL)
    if len(fakes) < k or len(reals) < k:
        raise ValueError(f"need {k} real and {k} fake samples of {technique!r}, "
                         f"have {len(reals)} and {len(fakes)}")
    idx = np.concatenate([np.sort(rng.choice(reals, k, replace=False)), np.sort(rng.choice(fakes, k, replace=False))])
    return pool.subset(idx)


def sample_episode(train: ArrayDataset, support_pool: ArrayDataset, query_pool: ArrayDataset,
                   known: Sequence[str], cfg: GuidedUpdateConfig, seed: int, episode: int) -> EpisodeData:
    if len(known) < 2:
        raise ValueError("meta-training needs at least two known techniques")
    rng = make_rng(seed, "episode", episode)
    tech = str(known[rng.integers(len(known))])
    support = draw_few_shot(support_pool, tech, cfg.shots, rng)
    query = draw_few_shot(query_pool, tech, cfg.query_per_class, rng)
    others = (train.labels == LABEL_REAL) | np.isin(train.techniques, [t for t in known if t != tech])
    return EpisodeData(tech, support, query, train.subset(np.flatnonzero(others)))


def query_loss(model: DpnetModel, params, query: ArrayDataset) -> Tensor:
    logits, _ = forward(model, Tensor(query.images), params)
    return bce(logits, query.labels)


@dataclass
class MetaHistory:
    techniques: list = field(default_factory=list)
    query_losses: list = field(default_factory=list)


def meta_train_generator(gen: ControlGenerator, model: DpnetModel, train: ArrayDataset,
                         support_pool: ArrayDataset, query_pool: ArrayDataset, known: Sequence[str],
                         cfg: GuidedUpdateConfig, episodes: int, seed: int = 0,
                         weights: LossWeights = LossWeights()) -> tuple[ControlGenerator, MetaHistory]:
    """Episodic leave-one-technique-out training of the control generator (in place)."""
    if len(set(known)) < 2:
        raise ValueError("meta-training needs at least two known techniques")
    opt = Adam(gen.parameters(), lr=cfg.meta_lr)
    names = model.layer_names()
    history = MetaHistory()
    for e in range(episodes):
        ep = sample_episode(train, support_pool, query_pool, known, cfg, seed, e)
        sampler = SourceSampler(ep.source, cfg.source_batch, seed=seed, stream=f"meta-source-{e}")
        opt.zero_grad()
        result = adapt(model, gen, ep.support, sampler, cfg, weights)
        if not result.steps:
            break
        final = unrolled_params(result.steps, names)
        loss = query_loss(model, final, ep.query)
        loss.backward()
        opt.step()
        history.techniques.append(ep.technique)
        history.query_losses.append(loss.item())
        log.info("episode %d technique=%s query_bce=%.4f", e, ep.technique, loss.item())
    return gen, history
