"""Autoencoder training and the binary checkpoint format.

Checkpoint layout (all integers little-endian u32):

    b"TTFZ1" | version | tensor count |
    per tensor: name length, UTF-8 name, 4 shape dims, float64 LE payload |
    CRC32 of every preceding byte
"""

from __future__ import annotations

import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import (CheckpointCRCError, CheckpointMagicError, CheckpointTruncatedError,
                     CheckpointVersionError, DatasetError, NumericError)
from .fusion import LearnedAffine, fuse, make_mapper, map_weights, normalized_features
from .losses import fusion_loss, reconstruction_loss
from .network import FusionNet, build_network
from .optim import LrSchedule, adam_step, cosine_lr
from .rng import SplitMix64

log = logging.getLogger(__name__)

MAGIC = b"TTFZ1"
VERSION = 1
_SHUFFLE_SALT = 0x5EED5EED


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 4
    lr_max: float = 1e-4
    lr_min: float = 3e-7
    seed: int = 0
    lambda_ssim: float = 0.8
    lambda_l1: float = 0.2
    mapper: str = "variance_softmax"
    shared_encoder: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    def schedule(self):
        # the last epoch lands exactly on lr_min
        return LrSchedule(self.lr_max, self.lr_min, max(self.epochs - 1, 1))


@dataclass
class TrainResult:
    network: FusionNet
    log: list = field(default_factory=list)             # (epoch, mean loss, lr)
    frozen_losses: list = field(default_factory=list)   # frozen-batch loss before training, then per epoch


def _stack(images):
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise DatasetError(f"a batch mixes image sizes: {sorted(shapes)}")
    return T.Tensor(np.stack(images)[:, None])


def batch_loss(net, pairs, config):
    """Mean over pairs of the per-modality reconstruction losses, summed over modalities.

    Images are reconstructed through the same z-score normalization the fusion
    path applies, so the decoder sees normalized features in training and at
    test time. A learned mapper additionally gets the fused-pair objective.
    """
    a = _stack([p.a for p in pairs])
    b = _stack([p.b for p in pairs])
    na, nb, sa, sb = normalized_features(net, a, b)
    recon = (reconstruction_loss(net.decode(na), a, config.lambda_ssim, config.lambda_l1)
             + reconstruction_loss(net.decode(nb), b, config.lambda_ssim, config.lambda_l1))
    if isinstance(net.mapper, LearnedAffine):
        fused = net.decode(fuse(na, nb, map_weights(net.mapper, sa, sb)))
        recon = recon + fusion_loss(fused, (a, b), config.lambda_ssim, config.lambda_l1)
    return recon


def train(pairs, config=None, on_epoch=None):
    """Train on an in-memory list of pairs (objects with ``.a`` and ``.b`` arrays)."""
    config = config or TrainConfig()
    pairs = list(pairs)
    if not pairs:
        raise DatasetError("cannot train on an empty dataset")
    net = build_network(config.seed, config.shared_encoder, make_mapper(config.mapper))
    params = net.parameters()
    schedule = config.schedule()
    shuffler = SplitMix64(config.seed ^ _SHUFFLE_SALT)
    frozen = pairs[:min(config.batch_size, len(pairs))]

    def frozen_loss():
        with T.no_grad():
            return float(batch_loss(net, frozen, config).data.reshape(-1)[0])

    result = TrainResult(net, [], [frozen_loss()])
    for epoch in range(config.epochs):
        lr = cosine_lr(schedule, min(epoch, schedule.total_epochs))
        order = shuffler.permutation(len(pairs))
        total, seen = 0.0, 0
        for start in range(0, len(pairs), config.batch_size):
            batch = [pairs[i] for i in order[start:start + config.batch_size]]
            loss = batch_loss(net, batch, config)
            value = float(loss.data.reshape(-1)[0])
            if not math.isfinite(value):
                raise NumericError(f"training loss is {value} at epoch {epoch}, batch {start // config.batch_size}")
            loss.backward()
            for p in params:
                if p.value.grad is None:
                    p.value.grad = np.zeros_like(p.value.data)
                adam_step(p, lr)
            total += value * len(batch)
            seen += len(batch)
        row = (epoch, total / seen, lr)
        result.log.append(row)
        result.frozen_losses.append(frozen_loss())
        log.info("epoch %d loss %.6f lr %.3e", *row)
        if on_epoch is not None:
            on_epoch(*row)
    return result


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def checkpoint_bytes(net):
    state = net.state_dict()
    parts = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name, arr in state.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<4I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(net, path):
    path = Path(path)
    path.write_bytes(checkpoint_bytes(net))
    return path


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(
                f"checkpoint ends inside {what} (need {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk


def parse_checkpoint(data):
    """Validate and decode checkpoint bytes into ``{name: array}``."""
    if not data.startswith(MAGIC):
        if len(data) < len(MAGIC) and MAGIC.startswith(data):
            raise CheckpointTruncatedError("checkpoint ends inside the magic bytes")
        raise CheckpointMagicError("not a checkpoint: bad magic bytes")
    r = _Reader(data)
    r.take(len(MAGIC), "magic")
    (version,) = struct.unpack("<I", r.take(4, "version"))
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version} is not supported (expected {VERSION})")
    (count,) = struct.unpack("<I", r.take(4, "tensor count"))
    state = {}
    for i in range(count):
        (name_len,) = struct.unpack("<I", r.take(4, f"tensor {i} name length"))
        name = r.take(name_len, f"tensor {i} name").decode("utf-8", errors="replace")
        shape = struct.unpack("<4I", r.take(16, f"tensor {name!r} shape"))
        size = int(np.prod(shape))
        payload = r.take(8 * size, f"tensor {name!r} payload")
        state[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    (stored_crc,) = struct.unpack("<I", r.take(4, "CRC"))
    actual = zlib.crc32(data[:r.pos - 4]) & 0xFFFFFFFF
    if stored_crc != actual:
        raise CheckpointCRCError(f"checkpoint CRC mismatch (stored {stored_crc:08x}, computed {actual:08x})")
    if r.pos != len(data):
        raise CheckpointCRCError(f"{len(data) - r.pos} unexpected trailing bytes after the CRC")
    return state


def network_from_state(state, temperature=1.0):
    """Rebuild the architecture implied by the tensor names, then load weights."""
    shared = not any(name.startswith("encoder_b.") for name in state)
    if any(name.startswith("mapper.") for name in state):
        hidden = state["mapper.a.fc1.weight"].shape[0]
        mapper = make_mapper("learned", hidden=hidden)
    else:
        mapper = make_mapper("variance_softmax", temperature=temperature)
    net = FusionNet(shared_encoder=shared, mapper=mapper)
    net.load_state_dict(state)
    return net


def load_checkpoint(path, temperature=1.0):
    return network_from_state(parse_checkpoint(Path(path).read_bytes()), temperature)
