"""Differentiable reconstruction losses (SSIM + L1) on (N, 1, H, W) images in [0, 1]."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import tensor as T

WINDOW = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03


@lru_cache(maxsize=None)
def gaussian_window(size=WINDOW, sigma=WINDOW_SIGMA):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    w = np.outer(g, g)
    w.flags.writeable = False
    return w


def ssim(x, y, data_range=1.0):
    """Mean SSIM over all valid 11x11 windows and all images in the batch."""
    if x.shape != y.shape:
        raise ValueError(f"ssim inputs differ in shape: {x.shape} vs {y.shape}")
    if x.shape[1] != 1:
        raise ValueError(f"ssim expects single-channel images, got {x.shape}")
    win = T.Tensor(gaussian_window().reshape(1, 1, WINDOW, WINDOW))
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2

    def blur(t):
        return T.conv2d(t, win, None, stride=1, padding=0)

    mu_x, mu_y = blur(x), blur(y)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    var_x = blur(x * x) - mu_xx
    var_y = blur(y * y) - mu_yy
    cov = blur(x * y) - mu_xy
    num = (2.0 * mu_xy + c1) * (2.0 * cov + c2)
    den = (mu_xx + mu_yy + c1) * (var_x + var_y + c2)
    return T.mean(num / den)


def l1(x, y):
    return T.mean(T.absolute(x - y))


def reconstruction_loss(output, target, lambda_ssim=0.8, lambda_l1=0.2):
    """lambda_ssim * (1 - SSIM) + lambda_l1 * L1, averaged over the batch."""
    return lambda_ssim * (1.0 - ssim(output, target)) + lambda_l1 * l1(output, target)


def fusion_loss(output, sources, lambda_ssim=0.8, lambda_l1=0.2):
    """Reconstruction loss of one output against each source, summed over sources."""
    total = None
    for src in sources:
        term = reconstruction_loss(output, src, lambda_ssim, lambda_l1)
        total = term if total is None else total + term
    return total
