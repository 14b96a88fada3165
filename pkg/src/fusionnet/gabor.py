"""Trainable Gabor filter banks.

Each filter is ``exp(-(x'^2 + y'^2) / (2 sigma^2)) * cos(omega x' + psi)`` on
an odd, pixel-centred integer grid, with ``(x', y')`` the grid rotated by
``theta``. The four parameters per filter are the only trainable state; the
kernels are re-synthesised on every forward pass.
"""
from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import Module, Parameter
from .tensor import Tensor, as_tensor

SIGMA_FLOOR = 1e-3


class GaborParameterError(ValueError):
    """A Gabor parameter left its valid domain (even kernel size, collapsed sigma)."""


def _grid(k):
    if k < 1 or k % 2 == 0:
        raise GaborParameterError(f"Gabor kernel size must be odd and positive, got {k}")
    r = (k - 1) // 2
    y, x = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    return x, y


def gabor_kernels(omega, theta, psi, sigma, k):
    """Synthesise an ``N x k x k`` stack of kernels from per-filter parameters.

    ``kernel[n, iy, ix]`` is evaluated at ``x = ix - r``, ``y = iy - r``.
    Differentiable with respect to all four parameter tensors.
    """
    omega, theta, psi, sigma = (as_tensor(t) for t in (omega, theta, psi, sigma))
    x, y = _grid(k)
    w = omega.data.reshape(-1, 1, 1)
    th = theta.data.reshape(-1, 1, 1)
    ps = psi.data.reshape(-1, 1, 1)
    sg = sigma.data.reshape(-1, 1, 1)
    if np.any(sg <= SIGMA_FLOOR):
        raise GaborParameterError(
            f"Gabor sigma fell to {float(sg.min()):.3g}, at or below the floor {SIGMA_FLOOR}")
    c, s = np.cos(th), np.sin(th)
    xr = x * c + y * s
    yr = -x * s + y * c
    r2 = x * x + y * y
    env = np.exp(-r2 / (2.0 * sg * sg))
    phase = w * xr + ps
    cosp = np.cos(phase)
    out = env * cosp
    n = out.shape[0]

    def back(g):
        es = g * env * np.sin(phase)
        d_psi = -es.sum(axis=(1, 2))
        d_omega = -(es * xr).sum(axis=(1, 2))
        d_theta = -(es * yr).sum(axis=(1, 2)) * w.reshape(-1)
        d_sigma = (g * out * r2).sum(axis=(1, 2)) / sg.reshape(-1) ** 3
        return (d_omega.reshape(omega.shape), d_theta.reshape(theta.shape),
                d_psi.reshape(psi.shape), d_sigma.reshape(sigma.shape))

    out = np.ascontiguousarray(out.reshape(n, k, k))
    return Tensor._result(out, (omega, theta, psi, sigma), back, "gabor_kernels")


def gabor_kernel(omega, theta, psi, sigma, k):
    """Single ``k x k`` kernel for scalar parameters."""
    omega, theta, psi, sigma = (as_tensor(t).reshape(1) for t in (omega, theta, psi, sigma))
    return gabor_kernels(omega, theta, psi, sigma, k).reshape(k, k)


def bank_frequencies(n_freq):
    """``pi/2 * sqrt(2) ** -(n-1)`` for n = 1..n_freq."""
    n = np.arange(1, n_freq + 1)
    return (np.pi / 2.0) * np.sqrt(2.0) ** (-(n - 1))


def bank_orientations(n_orient):
    """``pi/8 * (m-1)`` for m = 1..n_orient."""
    return (np.pi / 8.0) * np.arange(n_orient)


@dataclass
class GaborBankConfig:
    n_freq: int = 5
    n_orient: int = 8
    kernel_size: int = 7

    @property
    def n_filters(self):
        return self.n_freq * self.n_orient


class GaborBank(Module):
    """``N = n_freq * n_orient`` trainable filters, frequency-major order."""

    def __init__(self, omega, theta, psi, sigma, kernel_size=7):
        super().__init__()
        _grid(kernel_size)
        self.kernel_size = kernel_size
        self.omega = Parameter(omega)
        self.theta = Parameter(theta)
        self.psi = Parameter(psi)
        self.sigma = Parameter(sigma)

    @property
    def n_filters(self):
        return self.omega.shape[0]

    def kernels(self):
        return gabor_kernels(self.omega, self.theta, self.psi, self.sigma, self.kernel_size)

    def forward(self, x):
        return gabor_conv_forward(x, self)


def init_bank(n_freq=5, n_orient=8, kernel_size=7, seed=0):
    """Bank with the log-spaced frequency / linear orientation grid.

    sigma starts at ``pi / omega`` and psi is drawn from ``U(0, pi)``.
    """
    if n_freq < 1 or n_orient < 1:
        raise ValueError("a Gabor bank needs at least one frequency and one orientation")
    freqs = bank_frequencies(n_freq)
    orients = bank_orientations(n_orient)
    omega = np.repeat(freqs, n_orient)
    theta = np.tile(orients, n_freq)
    sigma = np.pi / omega
    rng = np.random.default_rng(seed)
    psi = rng.uniform(0.0, np.pi, size=omega.shape)
    return GaborBank(omega, theta, psi, sigma, kernel_size)


def gabor_conv_forward(x, bank, padding=None):
    """Apply every bank kernel, shared across input channels.

    Output channel ``n`` is the sum over input channels of the response to
    kernel ``n``. Because the kernel is shared, that equals one
    single-channel convolution of the channel sum.
    """
    k = bank.kernel_size
    padding = (k - 1) // 2 if padding is None else padding
    kern = bank.kernels().reshape(bank.n_filters, 1, k, k)
    return ops.conv2d(ops.channel_sum(x), kern, None, 1, padding, 1)
