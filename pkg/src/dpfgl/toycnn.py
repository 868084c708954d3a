"""A deliberately small CNN used as a learnability probe for the synthetic corpus.

One 7x7 convolution bank, squared responses averaged over the image, log, then
a linear read-out.  Each image is mean-centred first so that global brightness
does not swamp the band energies the filters have to find.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .losses import bce
from .optim import Adam
from .rng import kaiming_uniform, make_rng
from .synthdata import LABEL_FAKE, ArrayDataset


@dataclass(frozen=True)
class ToyCnnConfig:
    channels: int = 16
    kernel: int = 7
    lr: float = 0.05
    batch_size: int = 32
    epochs: int = 5


class ToyCnn:
    def __init__(self, cfg: ToyCnnConfig = ToyCnnConfig(), seed: int = 0):
        rng = make_rng(seed, "toy-cnn-init")
        k = cfg.kernel
        self.cfg = cfg
        self.kernels = Tensor(kaiming_uniform(rng, (cfg.channels, 1, k, k), k * k), requires_grad=True)
        self.w = Tensor(np.zeros((1, cfg.channels)), requires_grad=True)
        self.b = Tensor(np.zeros(1), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.kernels, self.w, self.b]

    def __call__(self, images: np.ndarray) -> Tensor:
        n = len(images)
        x = (images - images.mean(axis=(2, 3), keepdims=True)) * 4.0
        h = ad.conv2d(Tensor(x), self.kernels, None, stride=1, padding=self.cfg.kernel // 2)
        energy = ad.reshape(ad.global_avg_pool(ad.square(h)), (n, self.cfg.channels))
        return ad.reshape(ad.linear(ad.log(energy + 1e-6), self.w, self.b), (n,))


def train_accuracy_curve(data: ArrayDataset, cfg: ToyCnnConfig = ToyCnnConfig(), seed: int = 0) -> list[float]:
    """Train a fresh probe on ``data``; full-train-set accuracy after every epoch."""
    net = ToyCnn(cfg, seed)
    opt = Adam(net.parameters(), lr=cfg.lr)
    rng = make_rng(seed, "toy-cnn-batches")
    target = data.labels == LABEL_FAKE
    curve = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(data))
        for i in range(0, len(data), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            opt.zero_grad()
            bce(net(data.images[idx]), data.labels[idx]).backward()
            opt.step()
        curve.append(float(np.mean((net(data.images).data > 0) == target)))
    return curve
