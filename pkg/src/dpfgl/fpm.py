"""Frequency-domain perception filter: a dynamically routed bank of spectral masks.

For an input feature map ``x`` the filter computes::

    R(x)  = s * relu(x)**2 + b
    X_F   = FFT2(R(x))
    w     = softmax_k(phi_k * MLP(GAP(x))_k)
    X_w   = sum_k w_k * (mask_k ⊙ X_F)
    out   = Re(IFFT2(X_w))

Masks are real-valued and shared across channels, so they scale the real and
imaginary parts of the spectrum identically.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .fft import ComplexGrid, fft2, ifft2
from .rng import bias_uniform, kaiming_uniform

DEFAULT_NUM_FILTERS = 4


@dataclass
class StarReLUParams:
    s: Tensor  # shape (1,)
    b: Tensor  # shape (1,)


@dataclass
class FilterBank:
    masks: Tensor  # (K, H, W)

    @property
    def K(self) -> int:
        return self.masks.shape[0]


@dataclass
class RoutingHead:
    w1: Tensor  # (C/2, C)
    b1: Tensor
    w2: Tensor  # (K, C/2)
    b2: Tensor
    phi: Tensor  # (K,)

    @property
    def K(self) -> int:
        return self.phi.shape[0]


def init_fpf(rng: np.random.Generator, channels: int, size: int, num_filters: int = DEFAULT_NUM_FILTERS,
             mask_jitter: float = 0.05) -> dict[str, np.ndarray]:
    """Fresh FPF parameters as plain arrays.

    Masks start near all-pass: ones plus a small uniform jitter. With exactly
    equal masks the routing head receives an identically zero gradient, so the
    jitter is what lets it learn at all.
    """
    hidden = max(channels // 2, 1)
    masks = np.ones((num_filters, size, size))
    if mask_jitter:
        masks += rng.uniform(-mask_jitter, mask_jitter, size=masks.shape)
    return {
        "masks": masks,
        "w1": kaiming_uniform(rng, (hidden, channels), channels),
        "b1": bias_uniform(rng, (hidden,), channels),
        "w2": kaiming_uniform(rng, (num_filters, hidden), hidden),
        "b2": bias_uniform(rng, (num_filters,), hidden),
        "phi": np.ones(num_filters),
        "s": np.ones(1),
        "b": np.zeros(1),
    }


def star_relu(x: Tensor, p: StarReLUParams) -> Tensor:
    r = ad.square(ad.relu(x))
    return ad.expand(p.s, x.shape) * r + ad.expand(p.b, x.shape)


def routing_weights(x: Tensor, head: RoutingHead) -> Tensor:
    """Per-sample mixture weights over the K filters, shape (B, K)."""
    B, C = x.shape[:2]
    if head.w1.shape[1] != C:
        raise ShapeError(f"routing head expects {head.w1.shape[1]} channels, got {C}")
    pooled = ad.reshape(ad.global_avg_pool(x), (B, C))
    hidden = ad.relu(ad.linear(pooled, head.w1, head.b1))
    scores = ad.linear(hidden, head.w2, head.b2)
    logits = scores * ad.expand(head.phi, scores.shape)
    return ad.softmax(logits, axis=1)


def apply_filter_bank(spec: ComplexGrid, bank: FilterBank, w: Tensor) -> ComplexGrid:
    B, C, H, W = spec.shape
    K = bank.K
    if bank.masks.shape[1:] != (H, W):
        raise ShapeError(f"mask shape {bank.masks.shape[1:]} does not match spectrum {(H, W)}")
    if w.shape != (B, K):
        raise ShapeError(f"routing weights have shape {w.shape}, expected {(B, K)}")
    # sum_k w_k (M_k ⊙ X) == (sum_k w_k M_k) ⊙ X
    mixed = ad.matmul(w, ad.reshape(bank.masks, (K, H * W)))
    mixed = ad.expand(ad.reshape(mixed, (B, 1, H, W)), (B, C, H, W))
    return ComplexGrid(spec.real * mixed, spec.imag * mixed)


def fpf_forward(x: Tensor, bank: FilterBank, head: RoutingHead, p: StarReLUParams) -> Tensor:
    w = routing_weights(x, head)
    spec = fft2(star_relu(x, p))
    return ifft2(apply_filter_bank(spec, bank, w))


def fpf_from_params(params: dict[str, Tensor]) -> tuple[FilterBank, RoutingHead, StarReLUParams]:
    return (
        FilterBank(params["masks"]),
        RoutingHead(params["w1"], params["b1"], params["w2"], params["b2"], params["phi"]),
        StarReLUParams(params["s"], params["b"]),
    )
