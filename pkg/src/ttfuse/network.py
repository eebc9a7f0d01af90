"""Encoder/decoder with residual channel and spatial attention."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .optim import Parameter
from .rng import SplitMix64

FEATURE_CHANNELS = 32


class Module:
    """Minimal container: subclasses list their children in ``_children``."""

    _children: tuple = ()

    def named_parameters(self, prefix=""):
        for name in self._children:
            child = getattr(self, name)
            if child is None:
                continue
            full = f"{prefix}{name}"
            if isinstance(child, Parameter):
                yield full, child
            else:
                yield from child.named_parameters(full + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]


class ConvBlock(Module):
    _children = ("weight", "bias")

    def __init__(self, c_in, c_out, activation="relu", kernel_size=3):
        self.c_in, self.c_out = c_in, c_out
        self.activation = activation
        self.weight = Parameter(np.zeros((c_out, c_in, kernel_size, kernel_size)))
        self.bias = Parameter(np.zeros((1, c_out, 1, 1)))

    def __call__(self, x):
        y = T.conv2d(x, self.weight.value, self.bias.value, stride=1, padding="same")
        return T.activation(y, self.activation) if self.activation else y


class ChannelAttention(Module):
    """Squeeze-excite gate: GAP -> 1x1 (C -> C/r) -> relu -> 1x1 (C/r -> C) -> sigmoid."""

    _children = ("fc1", "fc2")

    def __init__(self, channels, reduction=4):
        hidden = max(1, channels // reduction)
        self.fc1 = ConvBlock(channels, hidden, activation="relu", kernel_size=1)
        self.fc2 = ConvBlock(hidden, channels, activation="sigmoid", kernel_size=1)

    def gate(self, x):
        return self.fc2(self.fc1(T.reduce(x, "global_avg_per_channel")))

    def __call__(self, x):
        return x * self.gate(x)


class SpatialAttention(Module):
    _children = ("conv",)

    def __init__(self, kernel_size=7):
        self.conv = ConvBlock(2, 1, activation="sigmoid", kernel_size=kernel_size)

    def gate(self, x):
        pooled = T.concat([T.reduce(x, "channelwise_mean_map"),
                           T.reduce(x, "channelwise_max_map")], axis=1)
        return self.conv(pooled)

    def __call__(self, x):
        return x * self.gate(x)


class ResidualAttentionBlock(Module):
    _children = ("conv_in", "channel_att", "spatial_att", "conv_out")

    def __init__(self, channels):
        self.conv_in = ConvBlock(channels, channels)
        self.channel_att = ChannelAttention(channels)
        self.spatial_att = SpatialAttention()
        self.conv_out = ConvBlock(channels, channels)

    def __call__(self, x):
        h = self.conv_in(x)
        h = self.channel_att(h)
        h = self.spatial_att(h)
        return x + self.conv_out(h)


class Encoder(Module):
    _children = ("head", "rab", "tail")

    def __init__(self, features=FEATURE_CHANNELS, width=16):
        self.head = ConvBlock(1, width)
        self.rab = ResidualAttentionBlock(width)
        self.tail = ConvBlock(width, features)

    def __call__(self, x):
        if x.shape[1] != 1:
            raise ShapeError(f"encoder expects single-channel images (N, 1, H, W), got {x.shape}")
        return self.tail(self.rab(self.head(x)))


class Decoder(Module):
    _children = ("block1", "block2", "block3")

    def __init__(self, features=FEATURE_CHANNELS):
        self.features = features
        self.block1 = ConvBlock(features, 16)
        self.block2 = ConvBlock(16, 8)
        self.block3 = ConvBlock(8, 1, activation="sigmoid")

    def __call__(self, f):
        if f.shape[1] != self.features:
            raise ShapeError(f"decoder expects {self.features} feature channels, got {f.shape}")
        return self.block3(self.block2(self.block1(f)))


class FusionNet(Module):
    """Shared (or per-modality) encoder, fusion weight mapper, decoder.

    ``encoder_b`` is only present when ``shared_encoder`` is False. The default
    mapper is the parameter-free variance softmax.
    """

    _children = ("encoder", "encoder_b", "mapper", "decoder")

    def __init__(self, shared_encoder=True, mapper=None, features=FEATURE_CHANNELS):
        if mapper is None:
            from .fusion import VarianceSoftmax
            mapper = VarianceSoftmax()
        self.features = features
        self.shared_encoder = shared_encoder
        self.encoder = Encoder(features)
        self.encoder_b = None if shared_encoder else Encoder(features)
        self.mapper = mapper
        self.decoder = Decoder(features)

    def encode(self, image, modality="a"):
        enc = self.encoder if (modality == "a" or self.encoder_b is None) else self.encoder_b
        return enc(T.as_tensor(image))

    def decode(self, features):
        return self.decoder(T.as_tensor(features))

    def state_dict(self):
        return {name: p.value.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise KeyError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, arr in state.items():
            if params[name].shape != tuple(arr.shape):
                raise ShapeError(f"{name}: expected {params[name].shape}, got {arr.shape}")
        for name, arr in state.items():
            params[name].value.data[...] = arr

    def clone(self):
        twin = FusionNet(self.shared_encoder, self.mapper.fresh(), self.features)
        twin.load_state_dict(self.state_dict())
        return twin


def init_weights(net, seed):
    """Kaiming-uniform kernels (bound sqrt(6 / fan_in)), zero biases.

    Parameters are drawn in ``named_parameters`` order from one SplitMix64
    stream, so the result is a pure function of the seed and architecture.
    """
    rng = SplitMix64(seed)
    for name, p in net.named_parameters():
        data = p.value.data
        if name.endswith("bias"):
            data[...] = 0.0
            continue
        fan_in = int(np.prod(data.shape[1:]))
        bound = math.sqrt(6.0 / fan_in)
        data[...] = rng.uniform(data.size, -bound, bound).reshape(data.shape)
        p.reset_moments()
    return net


def build_network(seed=0, shared_encoder=True, mapper=None):
    return init_weights(FusionNet(shared_encoder=shared_encoder, mapper=mapper), seed)
