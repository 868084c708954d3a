"""Finite-difference verification of every differentiable component.

Each component builds a scalar function of a few named tensors, backprops
once, then compares against central differences on (a sample of) the
coordinates of every tensor.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .afrp import afrp_forward, afrp_from_params, init_afrp
from .autodiff import Tensor
from .dpnet import BackboneConfig, build_model, forward
from .fpm import fpf_forward, fpf_from_params, init_fpf
from .losses import LossWeights, bce, fc_loss, icc_loss, real_center, train_loss
from .rng import make_rng

TOLERANCE = 1e-4
COMPONENTS = ("fpf", "afrp", "bce", "icc", "fc", "dpnet")


@dataclass
class GradCheckResult:
    component: str
    worst_rel_error: float
    coords_checked: int
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.worst_rel_error) and self.worst_rel_error <= self.tolerance)


def check_tensors(loss_fn: Callable[[], Tensor], tensors: dict[str, Tensor], rng: np.random.Generator,
                  max_coords: int | None = None, h: float = 1e-5, normwise: bool = False,
                  kink_retry: bool = False) -> tuple[float, int]:
    """Relative error of analytic vs central-difference gradients.

    ``loss_fn`` must read the tensors in ``tensors`` (they are perturbed in
    place and restored). With ``max_coords`` only that many coordinates per
    tensor are sampled. The default metric is the worst elementwise
    ``|a - n| / (|n| + 1e-8)``; ``normwise`` gives ``||a - n|| / ||n||`` over
    all checked coordinates instead.

    With ``kink_retry`` every coordinate is also differenced at ``h/10``; if
    the two quotients disagree by more than 1e-4 relative, the wider step
    straddled a ReLU kink and the narrower estimate is kept. The choice never
    looks at the analytic value.
    """
    for t in tensors.values():
        t.requires_grad = True
        t.grad = None
    loss_fn().backward()
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}
    worst, count = 0.0, 0
    all_a, all_n = [], []
    for k, t in tensors.items():
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, max_coords, replace=False))
        numeric = np.empty(len(coords))

        def quotient(i, step):
            orig = flat[i]
            flat[i] = orig + step
            fp = loss_fn().item()
            flat[i] = orig - step
            fm = loss_fn().item()
            flat[i] = orig
            return (fp - fm) / (2 * step)

        for j, i in enumerate(coords):
            numeric[j] = quotient(i, h)
            if kink_retry:
                fine = quotient(i, h / 10)
                if abs(fine - numeric[j]) > 1e-4 * (abs(fine) + 1e-8):
                    numeric[j] = fine
        a = analytic[k].reshape(-1)[coords]
        worst = max(worst, ad.rel_error(a, numeric))
        all_a.append(a)
        all_n.append(numeric)
        count += len(coords)
    if normwise:
        a, n = np.concatenate(all_a), np.concatenate(all_n)
        return float(np.linalg.norm(a - n) / max(np.linalg.norm(n), 1e-300)), count
    return worst, count


def _projection(rng, shape) -> Tensor:
    return Tensor(rng.normal(size=shape))


def _tensors(d: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in d.items()}


def check_fpf(seed: int = 0) -> GradCheckResult:
    rng = make_rng(seed, "gradcheck", "fpf")
    params = _tensors(init_fpf(rng, channels=3, size=8, num_filters=4, mask_jitter=0.3))
    params["s"].data = np.array([0.8])
    params["b"].data = np.array([0.1])
    x = Tensor(rng.normal(size=(2, 3, 8, 8)), requires_grad=True)
    proj = _projection(rng, (2, 3, 8, 8))
    fn = lambda: ad.tsum(fpf_forward(x, *fpf_from_params(params)) * proj)
    err, n = check_tensors(fn, {"x": x, **params}, rng)
    return GradCheckResult("fpf", err, n)


def check_afrp(seed: int = 0) -> GradCheckResult:
    rng = make_rng(seed, "gradcheck", "afrp")
    raw = init_afrp(rng, channels=8, r=4)
    # a non-trivial global matrix exercises every adjacency term
    raw["m_l"] = raw["m_l"] + rng.normal(scale=0.3, size=raw["m_l"].shape)
    params = _tensors(raw)
    x = Tensor(rng.normal(size=(2, 8, 4, 4)), requires_grad=True)
    proj = _projection(rng, (2, 8, 4, 4))
    fn = lambda: ad.tsum(afrp_forward(x, afrp_from_params(params)) * proj)
    err, n = check_tensors(fn, {"x": x, **params}, rng)
    return GradCheckResult("afrp", err, n)


def _labels(rng, n: int) -> np.ndarray:
    y = rng.integers(0, 2, size=n)
    y[0], y[1] = 0, 1
    return y


def check_bce(seed: int = 0) -> GradCheckResult:
    rng = make_rng(seed, "gradcheck", "bce")
    z = Tensor(rng.normal(scale=3.0, size=12), requires_grad=True)
    y = _labels(rng, 12)
    err, n = check_tensors(lambda: bce(z, y), {"logits": z}, rng)
    return GradCheckResult("bce", err, n)


def check_icc(seed: int = 0) -> GradCheckResult:
    rng = make_rng(seed, "gradcheck", "icc")
    e = Tensor(rng.normal(size=(10, 6)), requires_grad=True)
    y = _labels(rng, 10)
    err, n = check_tensors(lambda: icc_loss(e, y, real_center(e, y)), {"embeddings": e}, rng)
    return GradCheckResult("icc", err, n)


def check_fc(seed: int = 0) -> GradCheckResult:
    rng = make_rng(seed, "gradcheck", "fc")
    f = Tensor(rng.normal(size=(10, 6)), requires_grad=True)
    y = _labels(rng, 10)
    err, n = check_tensors(lambda: fc_loss(f, y, tau=0.5), {"features": f}, rng)
    return GradCheckResult("fc", err, n)


def check_dpnet(seed: int = 0, max_coords: int = 3, h: float = 1e-5) -> GradCheckResult:
    """Full model under the training loss; a few coordinates of every parameter tensor.

    Normwise error: some true gradient entries are ~1e-7 (paths scaled by the
    1e-6 global adjacency) and the difference quotient's cancellation noise
    (~1e-10) is already 1e-3 of them, while a larger step starts crossing
    ReLU kinks in the 32x32 feature maps. Kinks hit at ``h`` itself are
    handled by the ``kink_retry`` refinement.
    """
    rng = make_rng(seed, "gradcheck", "dpnet")
    model = build_model(BackboneConfig(), seed=seed)
    x = Tensor(rng.uniform(size=(4, 1, 32, 32)))
    y = np.array([0, 1, 0, 1])

    def fn():
        logits, emb = forward(model, x)
        return train_loss(logits, y, emb, LossWeights())

    named = {f"{layer}/{k}": t for layer, group in model.layers.items() for k, t in group.items()}
    err, n = check_tensors(fn, named, rng, max_coords=max_coords, h=h, normwise=True, kink_retry=True)
    return GradCheckResult("dpnet", err, n)


CHECKS = {
    "fpf": check_fpf,
    "afrp": check_afrp,
    "bce": check_bce,
    "icc": check_icc,
    "fc": check_fc,
    "dpnet": check_dpnet,
}


def run_all(seed: int = 0) -> list[GradCheckResult]:
    return [CHECKS[name](seed) for name in COMPONENTS]
