"""Fusion quality metrics: PSNR, SSIM, FMI, FSIM and entropy.

All functions take float images in [0, 1] and work on the 0..255 scale
internally. Two-source metrics average the fused-vs-source score over both
sources, so every metric is symmetric in the sources.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import ShapeError
from .losses import K1, K2, WINDOW, gaussian_window
from .phasecong import phase_congruency

PEAK = 255.0
PSNR_CAP = 100.0
FSIM_T1 = 0.85
FSIM_T2 = 160.0
BINS = 256

_SCHARR_X = np.array([[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]]) / 16.0
_SCHARR_Y = _SCHARR_X.T.copy()


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    fmi: float
    fsim: float
    en: float

    def as_dict(self):
        return asdict(self)


def _gray(img):
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"metrics operate on 2-D grayscale images, got shape {arr.shape}")
    return arr


def _same(*imgs):
    arrs = [_gray(i) for i in imgs]
    for a in arrs[1:]:
        if a.shape != arrs[0].shape:
            raise ShapeError(f"image dimensions differ: {arrs[0].shape} vs {a.shape}")
    return arrs


# -- PSNR -------------------------------------------------------------------

def psnr_single(x, y):
    x, y = _same(x, y)
    mse = np.mean((PEAK * x - PEAK * y) ** 2)
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(PEAK ** 2 / mse))


def psnr(fused, src_a, src_b):
    return 0.5 * (psnr_single(fused, src_a) + psnr_single(fused, src_b))


# -- SSIM -------------------------------------------------------------------

def ssim_single(x, y):
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), peak 255."""
    x, y = _same(x, y)
    if min(x.shape) < WINDOW:
        raise ShapeError(f"image {x.shape} is smaller than the {WINDOW}x{WINDOW} SSIM window")
    x, y = PEAK * x, PEAK * y
    g = gaussian_window()[WINDOW // 2]
    g = g / g.sum()
    r = WINDOW // 2

    def blur(img):
        out = ndimage.correlate1d(img, g, axis=0, mode="constant")
        out = ndimage.correlate1d(out, g, axis=1, mode="constant")
        return out[r:-r, r:-r]

    c1, c2 = (K1 * PEAK) ** 2, (K2 * PEAK) ** 2
    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x * mu_x
    var_y = blur(y * y) - mu_y * mu_y
    cov = blur(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(fused, src_a, src_b):
    return 0.5 * (ssim_single(fused, src_a) + ssim_single(fused, src_b))


# -- entropy and mutual information ------------------------------------------

def _entropy_of_counts(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log2(p)))


def intensity_levels(img):
    """Map [0, 1] intensities to integer levels 0..255."""
    return np.clip(np.rint(_gray(img) * PEAK), 0, 255).astype(np.int64)


def entropy(img):
    img = _gray(img)
    if img.size == 0:
        raise ShapeError("entropy of an empty image")
    return _entropy_of_counts(np.bincount(intensity_levels(img).ravel(), minlength=BINS))


def quantize(values, bins=BINS):
    """Equal-width bins spanning the array's own [min, max]; constant -> bin 0."""
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.int64)
    idx = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64)
    return np.minimum(idx, bins - 1)


def mutual_information(x_levels, y_levels, bins=BINS):
    """Return I(X;Y), H(X), H(Y) in bits from integer level maps."""
    joint = np.bincount((x_levels * bins + y_levels).ravel(), minlength=bins * bins)
    joint = joint.reshape(bins, bins).astype(np.float64)
    h_x = _entropy_of_counts(joint.sum(axis=1))
    h_y = _entropy_of_counts(joint.sum(axis=0))
    h_xy = _entropy_of_counts(joint.ravel())
    return h_x + h_y - h_xy, h_x, h_y


def sobel_magnitude(img):
    img = PEAK * _gray(img)
    gx = ndimage.sobel(img, axis=1, mode="reflect")
    gy = ndimage.sobel(img, axis=0, mode="reflect")
    return np.hypot(gx, gy)


def _normalized_mi(f_levels, s_levels):
    mi, h_f, h_s = mutual_information(f_levels, s_levels)
    if h_f + h_s == 0:
        # both feature maps are constant: each fully determines the other
        return 1.0
    return 2.0 * mi / (h_f + h_s)


def fmi(fused, src_a, src_b):
    fused, src_a, src_b = _same(fused, src_a, src_b)
    gf = quantize(sobel_magnitude(fused))
    ga = quantize(sobel_magnitude(src_a))
    gb = quantize(sobel_magnitude(src_b))
    return 0.5 * (_normalized_mi(gf, ga) + _normalized_mi(gf, gb))


# -- FSIM -------------------------------------------------------------------

def _downsample(img):
    factor = max(1, int(round(min(img.shape) / 256)))
    if factor == 1:
        return img
    smoothed = ndimage.uniform_filter(img, size=factor, mode="constant")
    return smoothed[::factor, ::factor]


def _gradient_map(img):
    gx = ndimage.correlate(img, _SCHARR_X[::-1, ::-1], mode="constant")
    gy = ndimage.correlate(img, _SCHARR_Y[::-1, ::-1], mode="constant")
    return np.sqrt(gx ** 2 + gy ** 2)


def fsim_single(x, y):
    """Feature similarity of two grayscale images (phase congruency + gradient)."""
    x, y = _same(x, y)
    if min(x.shape) < 32:
        raise ShapeError(f"FSIM needs images of at least 32x32, got {x.shape}")
    x, y = _downsample(PEAK * x), _downsample(PEAK * y)
    pc_x, pc_y = phase_congruency(x), phase_congruency(y)
    g_x, g_y = _gradient_map(x), _gradient_map(y)
    s_pc = (2 * pc_x * pc_y + FSIM_T1) / (pc_x ** 2 + pc_y ** 2 + FSIM_T1)
    s_g = (2 * g_x * g_y + FSIM_T2) / (g_x ** 2 + g_y ** 2 + FSIM_T2)
    s_l = s_pc * s_g
    pc_m = np.maximum(pc_x, pc_y)
    weight = pc_m.sum()
    if weight == 0:
        # no structure anywhere: fall back to the unweighted similarity
        return float(np.mean(s_l))
    return float(np.sum(s_l * pc_m) / weight)


def fsim(fused, src_a, src_b):
    return 0.5 * (fsim_single(fused, src_a) + fsim_single(fused, src_b))


def evaluate(fused, src_a, src_b):
    """All five metrics for one fused image against its two sources."""
    return MetricReport(
        psnr=float(psnr(fused, src_a, src_b)),
        ssim=float(ssim(fused, src_a, src_b)),
        fmi=float(fmi(fused, src_a, src_b)),
        fsim=float(fsim(fused, src_a, src_b)),
        en=float(entropy(fused)),
    )
