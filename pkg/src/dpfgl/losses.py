"""Training and adaptation objectives.

* ``bce``            mean binary cross-entropy on raw logits
* ``icc_loss``       pull real embeddings to their batch center, push fakes away
* ``train_loss``     bce + lambda * icc
* ``fc_loss``        InfoNCE-style contrast over temperature-scaled cosine similarity
* ``adaptation_loss`` source bce + mu * support bce + nu * fc
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    icc_lambda: float = 0.5
    mu: float = 1.0
    nu: float = 0.1
    tau: float = 0.1

    def __post_init__(self):
        vals = (self.icc_lambda, self.mu, self.nu, self.tau)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("loss weights must be finite")
        if self.tau <= 0:
            raise ValueError("temperature tau must be positive")


class NoRealSamples(ValueError):
    """Raised when a batch has no real-labelled sample to define the center."""


@dataclass
class RealCenter:
    c_real: Tensor  # (D,)


def _labels(labels) -> np.ndarray:
    return np.asarray(labels, dtype=np.float64).reshape(-1)


def bce(logits: Tensor, labels) -> Tensor:
    """Mean of softplus(z) - y*z, the stable form of -[y log p + (1-y) log(1-p)]."""
    y = Tensor(_labels(labels))
    return ad.mean(ad.softplus(logits) - logits * y)


def real_center(embeddings: Tensor, labels) -> RealCenter:
    y = _labels(labels)
    idx = np.flatnonzero(y == 0)
    if idx.size == 0:
        raise NoRealSamples("batch contains no real samples")
    return RealCenter(ad.mean(ad.index(embeddings, idx), axis=0))


def icc_loss(embeddings: Tensor, labels, c: RealCenter) -> Tensor:
    """Mean squared distance of reals to the center minus that of fakes.

    A batch without fakes contributes only the positive term.
    """
    y = _labels(labels)
    D = embeddings.shape[1]

    def term(mask):
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return None
        sel = ad.index(embeddings, idx)
        diff = sel - ad.expand(ad.reshape(c.c_real, (1, D)), sel.shape)
        return ad.mean(ad.tsum(ad.square(diff), axis=1))

    pos = term(y == 0)
    neg = term(y == 1)
    if pos is None:
        raise NoRealSamples("batch contains no real samples")
    return pos if neg is None else pos - neg


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    B, D = x.shape
    norm = ad.sqrt(ad.tsum(ad.square(x), axis=1, keepdims=True) + eps)
    return x / ad.expand(norm, (B, D))


def ball_project(x: Tensor) -> Tensor:
    """Rows with norm above 1 are scaled back onto the unit sphere; shorter rows pass unchanged."""
    B, D = x.shape
    norm = ad.sqrt(ad.tsum(ad.square(x), axis=1, keepdims=True) + 1e-24)
    denom = ad.relu(norm - 1.0) + 1.0
    return x / ad.expand(denom, (B, D))


def train_loss(logits: Tensor, labels, embeddings: Tensor, w: LossWeights = LossWeights(),
               normalize: bool = True) -> Tensor:
    """bce + lambda * icc.

    With ``normalize`` the ICC term sees embeddings projected into the unit
    ball. The fake term of ICC is unbounded below on raw embeddings and drives
    training to diverge; inside the ball every squared distance is at most 4.
    Full sphere normalization also bounds it but makes the term scale
    invariant, and training then drifts to vanishing embedding norms.
    """
    loss = bce(logits, labels)
    if w.icc_lambda == 0:
        return loss
    if normalize:
        embeddings = ball_project(embeddings)
    try:
        c = real_center(embeddings, labels)
    except NoRealSamples:
        log.debug("batch without real samples: ICC term skipped")
        return loss
    return loss + icc_loss(embeddings, labels, c) * w.icc_lambda


def similarity_matrix(features: Tensor, tau: float) -> Tensor:
    """S[i, j] = cos(f_i, f_j) / tau."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    norms = np.linalg.norm(features.data, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm feature row in batch")
    B, D = features.shape
    norm = ad.sqrt(ad.tsum(ad.square(features), axis=1, keepdims=True))
    unit = features / ad.expand(norm, (B, D))
    return ad.matmul(unit, ad.transpose(unit)) * (1.0 / tau)


def positive_partners(labels) -> np.ndarray:
    """Next same-label index (cyclically) for every sample, -1 if none."""
    y = _labels(labels)
    B = y.size
    out = np.full(B, -1, dtype=np.int64)
    for i in range(B):
        for step in range(1, B):
            j = (i + step) % B
            if y[j] == y[i]:
                out[i] = j
                break
    return out


def fc_loss(features: Tensor, labels, tau: float, return_count: bool = False):
    """Contrastive loss with one positive per anchor and self excluded from the denominator.

    Anchors without a same-label partner are dropped from the mean; if none
    remain the loss is zero (``count == 0`` signals this to the caller).
    """
    pos = positive_partners(labels)
    keep = np.flatnonzero(pos >= 0)
    if keep.size == 0:
        log.warning("fc_loss: no sample has a same-label partner; loss is zero")
        zero = ad.tsum(features * 0.0)
        return (zero, 0) if return_count else zero
    S = similarity_matrix(features, tau)
    B = S.shape[0]
    # self-similarity pushed to -inf-like so it drops out of the logsumexp
    self_mask = np.where(np.eye(B, dtype=bool), -1e300, 0.0)
    masked = S + Tensor(self_mask)
    rows = ad.index(masked, keep)
    lse = ad.logsumexp(rows, axis=1)
    pos_sim = ad.index(S, (keep, pos[keep]))
    loss = ad.mean(lse - pos_sim)
    return (loss, int(keep.size)) if return_count else loss


def fc_loss_bruteforce(features: np.ndarray, labels, tau: float) -> float:
    """Double-loop reference for :func:`fc_loss` (plain floats, no autodiff)."""
    f = np.asarray(features, dtype=np.float64)
    y = _labels(labels)
    B = len(y)
    total, count = 0.0, 0
    for i in range(B):
        partner = -1
        for step in range(1, B):
            j = (i + step) % B
            if y[j] == y[i]:
                partner = j
                break
        if partner < 0:
            continue
        sims = []
        for j in range(B):
            dot = sum(f[i, d] * f[j, d] for d in range(f.shape[1]))
            ni = np.sqrt(sum(v * v for v in f[i]))
            nj = np.sqrt(sum(v * v for v in f[j]))
            sims.append(dot / (ni * nj * tau))
        denom = sum(np.exp(sims[j]) for j in range(B) if j != i)
        total += -np.log(np.exp(sims[partner]) / denom)
        count += 1
    return total / count if count else 0.0


def adaptation_loss(source_logits: Tensor, source_labels, support_logits: Tensor, support_labels,
                    features: Tensor, feature_labels, w: LossWeights = LossWeights()) -> Tensor:
    loss = bce(source_logits, source_labels)
    if w.mu:
        loss = loss + bce(support_logits, support_labels) * w.mu
    if w.nu:
        loss = loss + fc_loss(features, feature_labels, w.tau) * w.nu
    return loss
