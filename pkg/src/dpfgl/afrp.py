"""Channel-vertex graph gating.

Channels of a feature map are pooled into a vertex vector, related through a
composite adjacency matrix ``M = I ⊙ diag(softmax(conv(V))) + M_l`` and turned
into a per-channel sigmoid gate that rescales the input map.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .rng import bias_uniform, kaiming_uniform

DEFAULT_REDUCTION = 4
ML_INIT = 1e-6


@dataclass
class AfrpParams:
    conv_r_w: Tensor  # (C', C)
    conv_r_b: Tensor
    vertex_w: Tensor  # (C', C')
    vertex_b: Tensor
    m_l: Tensor  # (C', C')
    conv_ir_w: Tensor  # (C, C')
    conv_ir_b: Tensor

    @property
    def channels(self) -> int:
        return self.conv_r_w.shape[1]

    @property
    def reduced(self) -> int:
        return self.conv_r_w.shape[0]


@dataclass
class AdjacencyMatrix:
    M: Tensor  # (B, C', C')
    M_I: np.ndarray  # (C', C')
    M_sa: Tensor  # (B, C', C')
    M_l: Tensor  # (C', C')

    def reconstruct(self) -> np.ndarray:
        return self.M_I * self.M_sa.data + self.M_l.data


def init_afrp(rng: np.random.Generator, channels: int, r: int = DEFAULT_REDUCTION) -> dict[str, np.ndarray]:
    if channels % r:
        raise ShapeError(f"channel count {channels} not divisible by reduction ratio {r}")
    red = channels // r
    return {
        "conv_r_w": kaiming_uniform(rng, (red, channels), channels),
        "conv_r_b": bias_uniform(rng, (red,), channels),
        "vertex_w": kaiming_uniform(rng, (red, red), red),
        "vertex_b": bias_uniform(rng, (red,), red),
        "m_l": np.full((red, red), ML_INIT),
        "conv_ir_w": kaiming_uniform(rng, (channels, red), red),
        "conv_ir_b": bias_uniform(rng, (channels,), red),
    }


def afrp_from_params(params: dict[str, Tensor]) -> AfrpParams:
    return AfrpParams(**{k: params[k] for k in AfrpParams.__dataclass_fields__})


def _vertex_conv(v: Tensor, p: AfrpParams) -> Tensor:
    B, _, Cr = v.shape
    out = ad.linear(ad.reshape(v, (B, Cr)), p.vertex_w, p.vertex_b)
    return ad.reshape(out, (B, 1, Cr))


def build_vertices(x: Tensor, p: AfrpParams) -> Tensor:
    """Pooled, reduced channel vertices, shape (B, 1, C')."""
    B, C = x.shape[:2]
    if C != p.channels:
        raise ShapeError(f"AFRP block expects {p.channels} channels, got {C}")
    if C % p.reduced:
        raise ShapeError(f"channel count {C} not divisible into {p.reduced} vertices")
    pooled = ad.reshape(ad.global_avg_pool(x), (B, C))
    reduced = ad.linear(pooled, p.conv_r_w, p.conv_r_b)
    return ad.reshape(reduced, (B, 1, p.reduced))


def build_adjacency(v: Tensor, p: AfrpParams) -> AdjacencyMatrix:
    B, _, Cr = v.shape
    attn = ad.softmax(_vertex_conv(v, p), axis=-1)
    m_sa = ad.diag_embed(ad.reshape(attn, (B, Cr)))
    eye = np.eye(Cr)
    self_part = m_sa * Tensor(np.broadcast_to(eye, (B, Cr, Cr)).copy())
    M = self_part + ad.expand(p.m_l, (B, Cr, Cr))
    return AdjacencyMatrix(M=M, M_I=eye, M_sa=m_sa, M_l=p.m_l)


def channel_gate(x: Tensor, p: AfrpParams) -> Tensor:
    """Sigmoid gate per (sample, channel), shape (B, C)."""
    B, C = x.shape[:2]
    v = build_vertices(x, p)
    adj = build_adjacency(v, p)
    mixed = ad.matmul(v, adj.M)
    h = ad.relu(_vertex_conv(mixed, p))
    restored = ad.linear(ad.reshape(h, (B, p.reduced)), p.conv_ir_w, p.conv_ir_b)
    return ad.sigmoid(restored)


def afrp_forward(x: Tensor, p: AfrpParams) -> Tensor:
    B, C, H, W = x.shape
    gate = channel_gate(x, p)
    return x * ad.expand(ad.reshape(gate, (B, C, 1, 1)), (B, C, H, W))
