"""Convolution kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time from ``TTFUSE_BACKEND``
(``numba`` or ``numpy``). When numba cannot be imported the numpy path is
used regardless. Both paths accept and return C-contiguous float64 arrays.

The numba kernels are single-threaded and reduce in a fixed order, so their
results do not depend on how many worker threads run them side by side.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

_requested = os.environ.get("TTFUSE_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"TTFUSE_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

BACKEND = "numba" if (_requested == "numba" and numba is not None) else "numpy"


# ---------------------------------------------------------------------------
# numpy fallback
# ---------------------------------------------------------------------------

def _windows(xp, k, stride):
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv_forward_numpy(xp, w, b, stride):
    k = w.shape[2]
    win = _windows(xp, k, stride)  # (N, Ci, Ho, Wo, k, k)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, Co)
    out = out.transpose(0, 3, 1, 2) + b[None, :, None, None]
    return np.ascontiguousarray(out)


def conv_backward_weight_numpy(xp, g, k, stride):
    win = _windows(xp, k, stride)
    gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # (Co, Ci, k, k)
    return np.ascontiguousarray(gw)


def conv_backward_input_numpy(g, w, padded_shape, stride):
    n, co, ho, wo = g.shape
    k = w.shape[2]
    gxp = np.zeros(padded_shape)
    for kh in range(k):
        for kw in range(k):
            contrib = np.einsum("nohw,oc->nchw", g, w[:, :, kh, kw])
            gxp[:, :, kh:kh + stride * (ho - 1) + 1:stride,
                kw:kw + stride * (wo - 1) + 1:stride] += contrib
    return gxp


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

_ROW_TILE = 32


def _conv_forward_loops(xp, w, b, stride, ho, wo):
    n_batch, c_in = xp.shape[0], xp.shape[1]
    c_out, k = w.shape[0], w.shape[2]
    out = np.empty((n_batch, c_out, ho, wo))
    for n in range(n_batch):
        for i in range(ho):
            for co in range(c_out):
                dst = out[n, co, i]
                dst[:] = b[co]
                for ci in range(c_in):
                    for kh in range(k):
                        row = xp[n, ci, i * stride + kh]
                        for kw in range(k):
                            wv = w[co, ci, kh, kw]
                            if stride == 1:
                                for j in range(wo):
                                    dst[j] += wv * row[j + kw]
                            else:
                                for j in range(wo):
                                    dst[j] += wv * row[j * stride + kw]
    return out


def _conv_backward_weight_loops(xp, g, k, stride):
    # Row tiles are summed in a fixed order; results never depend on threading.
    n_batch, c_out, ho, wo = g.shape
    c_in = xp.shape[1]
    gw = np.zeros((c_out, c_in, k, k))
    acc = np.empty(wo)
    for n in range(n_batch):
        for i0 in range(0, ho, _ROW_TILE):
            i1 = min(i0 + _ROW_TILE, ho)
            for co in range(c_out):
                for ci in range(c_in):
                    for kh in range(k):
                        for kw in range(k):
                            acc[:] = 0.0
                            for i in range(i0, i1):
                                grow = g[n, co, i]
                                row = xp[n, ci, i * stride + kh]
                                if stride == 1:
                                    for j in range(wo):
                                        acc[j] += grow[j] * row[j + kw]
                                else:
                                    for j in range(wo):
                                        acc[j] += grow[j] * row[j * stride + kw]
                            total = 0.0
                            for j in range(wo):
                                total += acc[j]
                            gw[co, ci, kh, kw] += total
    return gw


def _conv_backward_input_loops(g, w, hp, wp, stride):
    n_batch, c_out, ho, wo = g.shape
    c_in, k = w.shape[1], w.shape[2]
    gxp = np.zeros((n_batch, c_in, hp, wp))
    for n in range(n_batch):
        for i in range(ho):
            for ci in range(c_in):
                for kh in range(k):
                    drow = gxp[n, ci, i * stride + kh]
                    for co in range(c_out):
                        grow = g[n, co, i]
                        for kw in range(k):
                            wv = w[co, ci, kh, kw]
                            if stride == 1:
                                for j in range(wo):
                                    drow[j + kw] += wv * grow[j]
                            else:
                                for j in range(wo):
                                    drow[j * stride + kw] += wv * grow[j]
    return gxp


if numba is not None:
    _jit = numba.njit(cache=True, nogil=True)
    _conv_forward_nb = _jit(_conv_forward_loops)
    _conv_backward_weight_nb = _jit(_conv_backward_weight_loops)
    _conv_backward_input_nb = _jit(_conv_backward_input_loops)


def conv_forward_numba(xp, w, b, stride):
    k = w.shape[2]
    ho = (xp.shape[2] - k) // stride + 1
    wo = (xp.shape[3] - k) // stride + 1
    return _conv_forward_nb(xp, w, b, stride, ho, wo)


def conv_backward_weight_numba(xp, g, k, stride):
    return _conv_backward_weight_nb(xp, g, k, stride)


def conv_backward_input_numba(g, w, padded_shape, stride):
    return _conv_backward_input_nb(g, w, padded_shape[2], padded_shape[3], stride)


_IMPLS = {
    "numpy": (conv_forward_numpy, conv_backward_weight_numpy, conv_backward_input_numpy),
}
if numba is not None:
    _IMPLS["numba"] = (conv_forward_numba, conv_backward_weight_numba,
                       conv_backward_input_numba)


def get_impl(backend: str | None = None):
    """Return ``(forward, backward_weight, backward_input)`` for a backend."""
    name = BACKEND if backend is None else backend
    if name not in _IMPLS:
        raise ValueError(f"backend {name!r} is not available (have {sorted(_IMPLS)})")
    return _IMPLS[name]

