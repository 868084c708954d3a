"""2-D FFT over the last two axes, with autodiff support.

Complex values travel as a :class:`ComplexGrid` of two real tensors.  The
transform is linear, so its backward pass is the adjoint: the conjugate
transform, which for the unnormalized forward DFT is ``N * ifft``.

Spatial sizes are restricted to powers of two.  The differentiable path runs
on ``numpy.fft``; :func:`radix2_fft2` is a self-contained iterative
Cooley-Tukey implementation kept as a cross-check.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import DTYPE, ShapeError, Tensor, _make, index, stack


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _bit_reverse_perm(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def radix2_fft(z: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Iterative radix-2 DFT along the last axis of a complex array.

    The inverse includes the 1/n factor.
    """
    n = z.shape[-1]
    if not _is_pow2(n):
        raise ShapeError(f"FFT length must be a power of two, got {n}")
    a = np.array(z[..., _bit_reverse_perm(n)], dtype=np.complex128)
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        a = a.reshape(a.shape[:-1] + (n // size, size))
        even = a[..., :half].copy()
        odd = a[..., half:] * tw
        a[..., :half] = even + odd
        a[..., half:] = even - odd
        a = a.reshape(a.shape[:-2] + (n,))
        size *= 2
    if inverse:
        a /= n
    return a


def radix2_fft2(z: np.ndarray, inverse: bool = False) -> np.ndarray:
    """2-D DFT over the last two axes via :func:`radix2_fft`."""
    out = radix2_fft(z, inverse)
    out = radix2_fft(np.swapaxes(out, -1, -2), inverse)
    return np.swapaxes(out, -1, -2)


def fft2_array(z: np.ndarray, inverse: bool = False) -> np.ndarray:
    """2-D DFT over the last two axes (complex numpy in and out)."""
    H, W = z.shape[-2:]
    if not (_is_pow2(H) and _is_pow2(W)):
        raise ShapeError(f"spatial dims must be powers of two, got {H}x{W}")
    return np.fft.ifft2(z) if inverse else np.fft.fft2(z)


@dataclass
class ComplexGrid:
    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ShapeError(f"ComplexGrid parts differ: {self.real.shape} vs {self.imag.shape}")

    @property
    def shape(self) -> tuple:
        return self.real.shape

    def to_numpy(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data


def _dft2_pair(z: Tensor, inverse: bool) -> Tensor:
    """z stacks (real, imag) on axis 0; returns the transformed pair likewise."""
    H, W = z.shape[-2:]
    if not (_is_pow2(H) and _is_pow2(W)):
        raise ShapeError(f"spatial dims must be powers of two, got {H}x{W}")
    c = fft2_array(z.data[0] + 1j * z.data[1], inverse)
    out = np.stack([c.real, c.imag]).astype(DTYPE)
    n = H * W

    def backward(g):
        gc = g[0] + 1j * g[1]
        # adjoint of F is n * F^{-1}; adjoint of F^{-1} is F / n
        adj = fft2_array(gc, inverse=not inverse) * (n if not inverse else 1.0 / n)
        return (np.stack([adj.real, adj.imag]).astype(DTYPE),)

    return _make(out, (z,), backward, "ifft2" if inverse else "fft2")


def _transform(s: ComplexGrid, inverse: bool) -> ComplexGrid:
    pair = _dft2_pair(stack([s.real, s.imag]), inverse)
    return ComplexGrid(index(pair, 0), index(pair, 1))


def fft2(x: Tensor) -> ComplexGrid:
    """Unnormalized forward 2-D DFT of a real tensor [..., H, W]."""
    zeros = Tensor(np.zeros(x.shape, dtype=DTYPE))
    return _transform(ComplexGrid(x, zeros), inverse=False)


def fft2_complex(s: ComplexGrid) -> ComplexGrid:
    return _transform(s, inverse=False)


def ifft2_complex(s: ComplexGrid) -> ComplexGrid:
    """Inverse 2-D DFT (1/(H*W) normalization), both parts kept."""
    return _transform(s, inverse=True)


def ifft2(s: ComplexGrid) -> Tensor:
    """Inverse 2-D DFT, real part only."""
    return ifft2_complex(s).real
