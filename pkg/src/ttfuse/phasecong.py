"""Phase congruency from a frequency-domain log-Gabor filter bank.

Follows Kovesi's formulation as used by the FSIM reference code: energy is
summed over orientations, each orientation's noise threshold is estimated
from the median response of its smallest-scale filter, and the result is
normalized by the total amplitude.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

N_SCALES = 4
N_ORIENT = 4
MIN_WAVELENGTH = 6.0
MULT = 2.0
SIGMA_ONF = 0.55
D_THETA_ON_SIGMA = 1.2
NOISE_K = 2.0
EPS = 1e-4


def _freq_grid(rows, cols):
    def axis(n):
        if n % 2:
            return np.arange(-(n - 1) / 2, (n - 1) / 2 + 1) / (n - 1)
        return np.arange(-n / 2, n / 2) / n

    x, y = np.meshgrid(axis(cols), axis(rows))
    radius = np.fft.ifftshift(np.sqrt(x ** 2 + y ** 2))
    theta = np.fft.ifftshift(np.arctan2(-y, x))
    return radius, theta


@lru_cache(maxsize=16)
def _filter_bank(rows, cols):
    radius, theta = _freq_grid(rows, cols)
    lowpass = 1.0 / (1.0 + (radius / 0.45) ** (2 * 15))
    radius = radius.copy()
    radius[0, 0] = 1.0
    log_gabor = []
    for s in range(N_SCALES):
        fo = 1.0 / (MIN_WAVELENGTH * MULT ** s)
        lg = np.exp(-(np.log(radius / fo)) ** 2 / (2 * np.log(SIGMA_ONF) ** 2)) * lowpass
        lg[0, 0] = 0.0
        log_gabor.append(lg)

    theta_sigma = np.pi / N_ORIENT / D_THETA_ON_SIGMA
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    filters = []
    for o in range(N_ORIENT):
        angle = o * np.pi / N_ORIENT
        ds = sin_t * np.cos(angle) - cos_t * np.sin(angle)
        dc = cos_t * np.cos(angle) + sin_t * np.sin(angle)
        dtheta = np.abs(np.arctan2(ds, dc))
        spread = np.exp(-dtheta ** 2 / (2 * theta_sigma ** 2))
        filters.append([lg * spread for lg in log_gabor])
    return filters


def phase_congruency(image):
    """Phase congruency map of a 2-D float image, values in [0, 1]."""
    im = np.asarray(image, dtype=np.float64)
    rows, cols = im.shape
    spectrum = np.fft.fft2(im)
    bank = _filter_bank(rows, cols)
    energy_all = np.zeros((rows, cols))
    amp_all = np.zeros((rows, cols))
    sqrt_n = np.sqrt(rows * cols)

    for per_scale in bank:
        sum_e = np.zeros((rows, cols))
        sum_o = np.zeros((rows, cols))
        sum_an = np.zeros((rows, cols))
        responses = []
        spatial = []
        for flt in per_scale:
            eo = np.fft.ifft2(spectrum * flt)
            responses.append(eo)
            spatial.append(np.real(np.fft.ifft2(flt)) * sqrt_n)
            sum_an += np.abs(eo)
            sum_e += eo.real
            sum_o += eo.imag

        x_energy = np.sqrt(sum_e ** 2 + sum_o ** 2) + EPS
        mean_e = sum_e / x_energy
        mean_o = sum_o / x_energy
        energy = np.zeros((rows, cols))
        for eo in responses:
            e, o = eo.real, eo.imag
            energy += e * mean_e + o * mean_o - np.abs(e * mean_o - o * mean_e)

        # noise estimate from the smallest scale
        median_e2n = np.median(np.abs(responses[0]) ** 2)
        mean_e2n = -median_e2n / np.log(0.5)
        noise_power = mean_e2n / np.sum(per_scale[0] ** 2)
        est_sum_an2 = sum(f ** 2 for f in spatial)
        est_sum_aiaj = np.zeros((rows, cols))
        for i in range(N_SCALES - 1):
            for j in range(i + 1, N_SCALES):
                est_sum_aiaj += spatial[i] * spatial[j]
        est_noise_energy2 = (2 * noise_power * est_sum_an2.sum()
                             + 4 * noise_power * est_sum_aiaj.sum())
        tau = np.sqrt(est_noise_energy2 / 2)
        est_noise = tau * np.sqrt(np.pi / 2)
        est_noise_sigma = np.sqrt((2 - np.pi / 2) * tau ** 2)
        threshold = (est_noise + NOISE_K * est_noise_sigma) / 1.7

        energy_all += np.maximum(energy - threshold, 0.0)
        amp_all += sum_an

    with np.errstate(invalid="ignore", divide="ignore"):
        pc = np.where(amp_all > 0, energy_all / np.where(amp_all > 0, amp_all, 1.0), 0.0)
    return pc
