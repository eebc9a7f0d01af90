"""Statistics-driven feature fusion and test-time adaptation.

Features from both modalities are summarized per channel (mean, variance),
z-score normalized, combined with per-channel weights derived from those
statistics, and decoded. ``ttt_adapt`` fine-tunes a private copy of the
network on the test pair itself before decoding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import NumericError, ShapeError
from .losses import fusion_loss
from .network import ConvBlock, FusionNet, Module
from .optim import adam_step

EPSILON = 1e-5
# Logit differences are clipped here so both weights stay strictly inside (0, 1).
MAX_LOGIT_GAP = 30.0
BASELINES = ("mean", "max", "sum")


@dataclass
class ChannelStats:
    mean: T.Tensor       # (N, C, 1, 1)
    variance: T.Tensor   # (N, C, 1, 1), population variance
    epsilon: float = EPSILON

    @property
    def channels(self):
        return self.mean.shape[1]

    @property
    def std(self):
        return T.sqrt(self.variance)


@dataclass
class FusionParams:
    w1: T.Tensor
    w2: T.Tensor
    b1: T.Tensor
    b2: T.Tensor

    @property
    def channels(self):
        return self.w1.shape[1]


def channel_stats(features, epsilon=EPSILON):
    f = T.as_tensor(features)
    if f.shape[2] * f.shape[3] < 1:
        raise ShapeError(f"feature map has an empty spatial extent: {f.shape}")
    mu = T.spatial_mean(f)
    centered = f - mu
    var = T.spatial_mean(centered * centered)
    return ChannelStats(mu, var, epsilon)


def zscore(features, stats):
    f = T.as_tensor(features)
    if f.shape[:2] != stats.mean.shape[:2]:
        raise ShapeError(f"features {f.shape} do not match statistics {stats.mean.shape}")
    return (f - stats.mean) / (stats.std + stats.epsilon)


def _paired_sigmoid(logit_a, logit_b):
    """Softmax over two logits, written so that swapping inputs swaps outputs exactly."""
    gap_a = T.clip(logit_a - logit_b, -MAX_LOGIT_GAP, MAX_LOGIT_GAP)
    gap_b = T.clip(logit_b - logit_a, -MAX_LOGIT_GAP, MAX_LOGIT_GAP)
    return T.sigmoid(gap_a), T.sigmoid(gap_b)


class VarianceSoftmax(Module):
    """Parameter-free mapper: the channel with the larger spread gets more weight."""

    kind = "variance_softmax"

    def __init__(self, temperature=1.0):
        if temperature <= 0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        self.temperature = temperature

    def fresh(self):
        return VarianceSoftmax(self.temperature)

    def __call__(self, stats_a, stats_b):
        inv_t = 1.0 / self.temperature
        w1, w2 = _paired_sigmoid(stats_a.std * inv_t, stats_b.std * inv_t)
        zeros = T.Tensor(np.zeros(w1.shape))
        return FusionParams(w1, w2, zeros, zeros)


class _StatMLP(Module):
    """[mean, std] -> hidden -> [logit, bias], shared across channels."""

    _children = ("fc1", "fc2")

    def __init__(self, hidden):
        self.fc1 = ConvBlock(2, hidden, activation="relu", kernel_size=1)
        self.fc2 = ConvBlock(hidden, 2, activation=None, kernel_size=1)

    def __call__(self, stats):
        # (N, C, 1, 1) -> (N, 1, C, 1) so channels run along H and 1x1 convs act per channel
        mu = T.transpose(stats.mean, (0, 2, 1, 3))
        sd = T.transpose(stats.std, (0, 2, 1, 3))
        out = self.fc2(self.fc1(T.concat([mu, sd], axis=1)))   # (N, 2, C, 1)
        return T.transpose(out, (0, 2, 1, 3))                  # (N, C, 2, 1)


class LearnedAffine(Module):
    """Trainable mapper: one small MLP per modality, weights softmax-normalized."""

    kind = "learned"
    _children = ("a", "b")

    def __init__(self, hidden=8):
        self.hidden = hidden
        self.a = _StatMLP(hidden)
        self.b = _StatMLP(hidden)

    def fresh(self):
        return LearnedAffine(self.hidden)

    def __call__(self, stats_a, stats_b):
        out_a, out_b = self.a(stats_a), self.b(stats_b)
        logit_a, bias_a = T.take(out_a, 2, 0), T.take(out_a, 2, 1)
        logit_b, bias_b = T.take(out_b, 2, 0), T.take(out_b, 2, 1)
        w1, w2 = _paired_sigmoid(logit_a, logit_b)
        return FusionParams(w1, w2, bias_a, bias_b)


def make_mapper(kind="variance_softmax", temperature=1.0, hidden=8):
    if kind == "variance_softmax":
        return VarianceSoftmax(temperature)
    if kind == "learned":
        return LearnedAffine(hidden)
    raise ValueError(f"unknown mapper {kind!r} (expected 'variance_softmax' or 'learned')")


def map_weights(mapper, stats_a, stats_b):
    if stats_a.mean.shape != stats_b.mean.shape:
        raise ShapeError(
            f"statistics disagree: {stats_a.mean.shape} vs {stats_b.mean.shape}")
    return mapper(stats_a, stats_b)


def fuse(f_a_norm, f_b_norm, params):
    fa, fb = T.as_tensor(f_a_norm), T.as_tensor(f_b_norm)
    if fa.shape != fb.shape:
        raise ShapeError(f"feature maps differ: {fa.shape} vs {fb.shape}")
    if params.channels != fa.shape[1]:
        raise ShapeError(f"fusion params have {params.channels} channels, features {fa.shape}")
    return params.w1 * fa + params.w2 * fb + params.b1 + params.b2


def baseline_fuse(f_a_norm, f_b_norm, strategy):
    fa, fb = T.as_tensor(f_a_norm), T.as_tensor(f_b_norm)
    if fa.shape != fb.shape:
        raise ShapeError(f"feature maps differ: {fa.shape} vs {fb.shape}")
    if strategy == "mean":
        return (fa + fb) * 0.5
    if strategy == "max":
        return T.maximum(fa, fb)
    if strategy == "sum":
        return fa + fb
    raise ValueError(f"unknown baseline strategy {strategy!r}")


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

SCOPES = ("fusion-only", "fusion+encoder")


@dataclass
class TTTConfig:
    steps: int = 5
    lr: float = 1e-5
    lambda_ssim: float = 0.8
    lambda_l1: float = 0.2
    adapt_scope: str = "fusion-only"

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.lambda_ssim < 0 or self.lambda_l1 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.adapt_scope not in SCOPES:
            raise ValueError(f"adapt_scope must be one of {SCOPES}, got {self.adapt_scope!r}")


@dataclass
class TTTResult:
    network: FusionNet
    trace: list = field(default_factory=list)
    output: T.Tensor | None = None


def as_batch(image):
    """(H, W) array or (N, 1, H, W) tensor -> (N, 1, H, W) tensor."""
    if isinstance(image, T.Tensor):
        return image
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, None]
    return T.Tensor(arr)


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"image pair sizes differ: {a.shape[2:]} vs {b.shape[2:]}")


def normalized_features(net, a, b):
    fa, fb = net.encode(a, "a"), net.encode(b, "b")
    sa, sb = channel_stats(fa), channel_stats(fb)
    return zscore(fa, sa), zscore(fb, sb), sa, sb


def fused_features(net, a, b):
    na, nb, sa, sb = normalized_features(net, a, b)
    return fuse(na, nb, map_weights(net.mapper, sa, sb))


def _scope_parameters(net, scope):
    if scope == "fusion+encoder":
        return net.parameters()
    params = list(net.decoder.parameters())
    if net.mapper is not None:
        params += net.mapper.parameters()
    return params


def ttt_adapt(net, a, b, config):
    """Adapt a copy of ``net`` to one pair; returns the copy and the loss trace.

    The trace holds ``steps + 1`` losses: before any update and after each one.
    ``steps == 0`` returns an untouched copy and an empty trace.
    """
    a, b = as_batch(a), as_batch(b)
    _check_pair(a, b)
    work = net.clone()
    if config.steps == 0:
        return TTTResult(work, [], None)
    params = _scope_parameters(work, config.adapt_scope)
    for p in params:
        p.reset_moments()

    frozen = None
    if config.adapt_scope == "fusion-only" and not isinstance(work.mapper, LearnedAffine):
        with T.no_grad():
            frozen = fused_features(work, a, b)
    elif config.adapt_scope == "fusion-only":
        with T.no_grad():
            na, nb, sa, sb = normalized_features(work, a, b)
        sa = ChannelStats(sa.mean.detach(), sa.variance.detach(), sa.epsilon)
        sb = ChannelStats(sb.mean.detach(), sb.variance.detach(), sb.epsilon)

    def loss_and_output():
        if frozen is not None:
            fused = frozen
        elif config.adapt_scope == "fusion-only":
            fused = fuse(na, nb, map_weights(work.mapper, sa, sb))
        else:
            fused = fused_features(work, a, b)
        out = work.decode(fused)
        return fusion_loss(out, (a, b), config.lambda_ssim, config.lambda_l1), out

    trace = []
    out = None
    for step in range(config.steps + 1):
        last = step == config.steps
        if last:
            with T.no_grad():
                loss, out = loss_and_output()
        else:
            loss, out = loss_and_output()
        value = float(loss.data.reshape(-1)[0])
        if not math.isfinite(value):
            raise NumericError(f"test-time adaptation loss is {value} at step {step}")
        trace.append(value)
        if last:
            break
        loss.backward()
        for p in params:
            if p.value.grad is None:
                p.value.grad = np.zeros_like(p.value.data)
            adam_step(p, config.lr)
    return TTTResult(work, trace, out)


@dataclass
class FusionResult:
    image: np.ndarray          # (H, W) in (0, 1)
    trace: list = field(default_factory=list)


def fuse_pipeline(net, a, b, ttt=None):
    """Encode both images, fuse their normalized features, decode.

    With ``ttt.steps > 0`` the network is first adapted to the pair (on a copy)
    and the adapted network's reconstruction is returned.
    """
    a, b = as_batch(a), as_batch(b)
    _check_pair(a, b)
    if ttt is not None and ttt.steps > 0:
        result = ttt_adapt(net, a, b, ttt)
        return FusionResult(result.output.data[0, 0].copy(), result.trace)
    with T.no_grad():
        out = net.decode(fused_features(net, a, b))
    return FusionResult(out.data[0, 0].copy(), [])


def fuse_baselines(net, a, b, strategies=BASELINES):
    """Decode the elementwise mean/max/sum of the normalized features."""
    a, b = as_batch(a), as_batch(b)
    _check_pair(a, b)
    results = {}
    with T.no_grad():
        na, nb, _, _ = normalized_features(net, a, b)
        for s in strategies:
            results[s] = net.decode(baseline_fuse(na, nb, s)).data[0, 0].copy()
    return results
