"""Toy dual-stream detector: conv backbone + frequency filters + graph gates.

Forward pass for the default configuration (1x32x32 input)::

    stage1  conv 1->16, stride 1      32x32
    fpf1    x + FPF(x)
    stage2  conv 16->32, stride 2     16x16
    fpf2    x + FPF(x)
    afrp2   graph gate
    stage3  conv 32->64, stride 2     8x8
    afrp3   graph gate
    GAP -> 64-d embedding -> linear -> logit

Parameters are grouped into named layers; the ordered layer list is what the
guided update rule summarizes and controls, one (lr, decay) pair per layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .afrp import afrp_forward, afrp_from_params, init_afrp
from .autodiff import ShapeError, Tensor
from .fpm import fpf_forward, fpf_from_params, init_fpf
from .rng import bias_uniform, kaiming_uniform, make_rng

# how FPF / AFRP parameter dicts are split into named layers
FPF_GROUPS = {"filters": ("masks",), "router": ("w1", "b1", "w2", "b2", "phi"), "act": ("s", "b")}
AFRP_GROUPS = {
    "reduce": ("conv_r_w", "conv_r_b"),
    "vertex": ("vertex_w", "vertex_b"),
    "adjacency": ("m_l",),
    "restore": ("conv_ir_w", "conv_ir_b"),
}

Params = Mapping[str, Mapping[str, Tensor]]


@dataclass(frozen=True)
class BackboneConfig:
    widths: tuple = (16, 32, 64)
    strides: tuple = (1, 2, 2)
    in_channels: int = 1
    image_size: int = 32
    kernel_size: int = 3
    fpf_after: tuple = (1, 2)
    afrp_after: tuple = (2, 3)
    num_filters: int = 4
    reduction: int = 4
    mask_jitter: float = 0.05
    # pixels in [0, 1] are mapped to (x - shift) * scale before the first conv
    input_shift: float = 0.5
    input_scale: float = 2.0

    @property
    def embed_dim(self) -> int:
        return self.widths[-1]

    def stage_sizes(self) -> list[int]:
        sizes, size = [], self.image_size
        for s in self.strides:
            size = (size + 2 * (self.kernel_size // 2) - self.kernel_size) // s + 1
            sizes.append(size)
        return sizes

    def validate(self) -> None:
        if len(self.widths) != len(self.strides):
            raise ShapeError("widths and strides must have equal length")
        sizes = self.stage_sizes()
        for st in self.fpf_after:
            n = sizes[st - 1]
            if n & (n - 1):
                raise ShapeError(f"FPF after stage {st} needs a power-of-two map, got {n}")
        for st in self.afrp_after:
            if self.widths[st - 1] % self.reduction:
                raise ShapeError(f"stage {st} width {self.widths[st - 1]} not divisible by r={self.reduction}")


def _tensors(arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(np.asarray(v, dtype=np.float64), requires_grad=True) for k, v in arrays.items()}


@dataclass
class DpnetModel:
    config: BackboneConfig
    layers: dict[str, dict[str, Tensor]] = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def layer_names(self) -> list[str]:
        return list(self.layers)

    def parameters(self) -> list[Tensor]:
        return [t for group in self.layers.values() for t in group.values()]

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self) -> None:
        ad.zero_grads(self.parameters())

    def __call__(self, x: Tensor, params: Params | None = None):
        return forward(self, x, params)


def build_model(config: BackboneConfig | None = None, seed: int = 0) -> DpnetModel:
    config = config or BackboneConfig()
    config.validate()
    rng = make_rng(seed, "dpnet-init")
    layers: dict[str, dict[str, Tensor]] = {}
    sizes = config.stage_sizes()
    c_in, k = config.in_channels, config.kernel_size
    for i, (width, size) in enumerate(zip(config.widths, sizes), start=1):
        fan_in = c_in * k * k
        layers[f"stage{i}"] = _tensors({
            "weight": kaiming_uniform(rng, (width, c_in, k, k), fan_in),
            "bias": bias_uniform(rng, (width,), fan_in),
        })
        if i in config.fpf_after:
            p = init_fpf(rng, width, size, config.num_filters, config.mask_jitter)
            for group, keys in FPF_GROUPS.items():
                layers[f"fpf{i}.{group}"] = _tensors({key: p[key] for key in keys})
        if i in config.afrp_after:
            p = init_afrp(rng, width, config.reduction)
            for group, keys in AFRP_GROUPS.items():
                layers[f"afrp{i}.{group}"] = _tensors({key: p[key] for key in keys})
        c_in = width
    layers["classifier"] = _tensors({
        "weight": kaiming_uniform(rng, (1, c_in), c_in),
        "bias": np.zeros(1),
    })
    return DpnetModel(config=config, layers=layers)


def _merge(params: Params, prefix: str, groups: dict) -> dict[str, Tensor]:
    return {key: params[f"{prefix}.{group}"][key] for group, keys in groups.items() for key in keys}


def forward(model: DpnetModel, batch: Tensor, params: Params | None = None) -> tuple[Tensor, Tensor]:
    """Logits (B,) and embeddings (B, D) for a batch [B, C, H, W].

    ``params`` overrides the model's own tensors (same layer/key layout), which
    lets the adaptation loop evaluate unrolled parameter tensors.
    """
    cfg = model.config
    params = model.layers if params is None else params
    expected = (cfg.in_channels, cfg.image_size, cfg.image_size)
    if batch.ndim != 4 or batch.shape[1:] != expected:
        raise ShapeError(f"expected batch [B,{expected[0]},{expected[1]},{expected[2]}], got {batch.shape}")
    x = (batch - cfg.input_shift) * cfg.input_scale
    for i, stride in enumerate(cfg.strides, start=1):
        st = params[f"stage{i}"]
        x = ad.relu(ad.conv2d(x, st["weight"], st["bias"], stride=stride, padding=cfg.kernel_size // 2))
        if i in cfg.fpf_after:
            x = x + fpf_forward(x, *fpf_from_params(_merge(params, f"fpf{i}", FPF_GROUPS)))
        if i in cfg.afrp_after:
            x = afrp_forward(x, afrp_from_params(_merge(params, f"afrp{i}", AFRP_GROUPS)))
    B = x.shape[0]
    emb = ad.reshape(ad.global_avg_pool(x), (B, x.shape[1]))
    head = params["classifier"]
    logits = ad.reshape(ad.linear(emb, head["weight"], head["bias"]), (B,))
    return logits, emb


def enumerate_layers(model: DpnetModel) -> list[tuple[str, list[Tensor]]]:
    return [(name, list(group.values())) for name, group in model.layers.items()]


Snapshot = dict[str, dict[str, np.ndarray]]


def clone_params(model: DpnetModel) -> Snapshot:
    return {name: {k: t.data.copy() for k, t in group.items()} for name, group in model.layers.items()}


def load_params(model: DpnetModel, snapshot: Snapshot) -> DpnetModel:
    """New model with ``model``'s config and the snapshot's values."""
    if list(snapshot) != list(model.layers):
        raise KeyError(f"layer mismatch: {sorted(set(snapshot) ^ set(model.layers))}")
    layers = {}
    for name, group in model.layers.items():
        snap = snapshot[name]
        if list(snap) != list(group):
            raise KeyError(f"parameter mismatch in layer {name!r}")
        for k, t in group.items():
            if snap[k].shape != t.shape:
                raise ShapeError(f"{name}.{k}: shape {snap[k].shape} != {t.shape}")
        layers[name] = _tensors({k: snap[k].copy() for k in group})
    return DpnetModel(config=model.config, layers=layers)


def clone_model(model: DpnetModel) -> DpnetModel:
    return load_params(model, clone_params(model))


def models_equal(a: DpnetModel, b: DpnetModel) -> bool:
    if list(a.layers) != list(b.layers):
        return False
    return all(
        np.array_equal(a.layers[n][k].data, b.layers[n][k].data) for n in a.layers for k in a.layers[n]
    )
