"""Synthetic registered head phantoms and the on-disk pair dataset layout.

Modality ``a`` is MRI-like (soft-tissue contrast, dark skull), modality ``b``
is CT-like (bright skull and dense inclusions over flat soft tissue). Both are
rendered from one geometry, so every pair is registered by construction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import imageio
from .errors import DatasetError, ShapeError
from .rng import SplitMix64

MIN_SIZE = 64
IMAGE_EXTS = (".png", ".pgm")


@dataclass(frozen=True)
class PhantomSpec:
    size: int = 128
    seed: int = 0
    lesion_count: int = 2
    noise_sigma_a: float = 0.02
    noise_sigma_b: float = 0.02

    def __post_init__(self):
        if self.size < MIN_SIZE:
            raise ShapeError(f"phantom size must be >= {MIN_SIZE}, got {self.size}")
        if not 0 <= self.lesion_count <= 5:
            raise ValueError(f"lesion_count must be in 0..5, got {self.lesion_count}")
        for s in (self.noise_sigma_a, self.noise_sigma_b):
            if not 0.0 <= s <= 0.1:
                raise ValueError(f"noise sigma must be in [0, 0.1], got {s}")


@dataclass
class PhantomPair:
    a: np.ndarray
    b: np.ndarray
    head: np.ndarray       # boolean masks share the image shape
    rim: np.ndarray
    interior: np.ndarray
    lesions: np.ndarray
    inclusions: np.ndarray


def _disk(u, v, cx, cy, r):
    return (u - cx) ** 2 + (v - cy) ** 2 <= r * r


def generate_phantom(spec: PhantomSpec) -> PhantomPair:
    rng = SplitMix64(spec.seed)
    n = spec.size
    coords = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    u, v = np.meshgrid(coords, coords)  # u: x (columns), v: y (rows)

    cx, cy = rng.uniform(2, -0.05, 0.05)
    ax = rng.uniform(1, 0.70, 0.85)[0]
    ay = rng.uniform(1, 0.80, 0.92)[0]
    angle = rng.uniform(1, -0.2, 0.2)[0]
    thickness = rng.uniform(1, 0.07, 0.11)[0]
    ca, sa = np.cos(angle), np.sin(angle)
    du, dv = u - cx, v - cy
    pu, pv = ca * du + sa * dv, -sa * du + ca * dv
    r_ell = np.sqrt((pu / ax) ** 2 + (pv / ay) ** 2)
    head = r_ell <= 1.0
    interior = r_ell < 1.0 - thickness
    rim = head & ~interior

    def interior_point(margin):
        # rejection-free: sample inside a shrunken ellipse in polar form
        rad = np.sqrt(rng.uniform(1)[0]) * (1.0 - thickness - margin)
        phi = rng.uniform(1, 0.0, 2 * np.pi)[0]
        lu, lv = rad * ax * np.cos(phi), rad * ay * np.sin(phi)
        return cx + ca * lu - sa * lv, cy + sa * lu + ca * lv

    blobs = np.zeros((n, n))
    n_blobs = 4 + int(rng.integers(1, 3)[0])
    for _ in range(n_blobs):
        bx, by = interior_point(0.15)
        width = rng.uniform(1, 0.08, 0.20)[0]
        amp = rng.uniform(1, -0.6, 1.0)[0]
        blobs += amp * np.exp(-((u - bx) ** 2 + (v - by) ** 2) / (2 * width ** 2))

    inclusions = np.zeros((n, n), dtype=bool)
    for _ in range(1 + int(rng.integers(1, 3)[0])):
        ix, iy = interior_point(0.2)
        inclusions |= _disk(u, v, ix, iy, rng.uniform(1, 0.025, 0.05)[0]) & interior

    lesions = np.zeros((n, n), dtype=bool)
    for _ in range(spec.lesion_count):
        lx, ly = interior_point(0.2)
        lesions |= _disk(u, v, lx, ly, rng.uniform(1, 0.04, 0.09)[0]) & interior

    depth = np.clip(1.0 - r_ell / (1.0 - thickness), 0.0, 1.0)

    a = np.zeros((n, n))
    a[rim] = 0.12
    soft = 0.40 + 0.25 * depth + 0.18 * blobs
    a[interior] = soft[interior]
    a[lesions] += 0.30
    a[inclusions] = 0.15

    b = np.zeros((n, n))
    b[rim] = 0.95
    b[interior] = 0.30 + 0.03 * blobs[interior]
    b[lesions] += 0.10
    b[inclusions] = 0.85

    a = a + spec.noise_sigma_a * rng.normal(n * n).reshape(n, n)
    b = b + spec.noise_sigma_b * rng.normal(n * n).reshape(n, n)
    return PhantomPair(np.clip(a, 0.0, 1.0), np.clip(b, 0.0, 1.0),
                       head, rim, interior, lesions, inclusions)


def corpus_specs(count, size=128, seed=0):
    """Per-pair specs for a corpus; lesion count and noise vary with the seed."""
    rng = SplitMix64(seed)
    specs = []
    for _ in range(count):
        pair_seed = int(rng.next_u64(1)[0])
        lesions = int(rng.integers(1, 6)[0])
        sa, sb = rng.uniform(2, 0.005, 0.04)
        specs.append(PhantomSpec(size, pair_seed, lesions, float(sa), float(sb)))
    return specs


def write_corpus(root, count, size=128, seed=0):
    """Render ``count`` pairs into ``root/a`` and ``root/b`` plus ``manifest.json``."""
    if count < 1:
        raise DatasetError("a corpus needs at least one pair")
    root = imageio.writable_dir(root)
    (root / "a").mkdir(exist_ok=True)
    (root / "b").mkdir(exist_ok=True)
    specs = corpus_specs(count, size, seed)
    for i, spec in enumerate(specs):
        pair = generate_phantom(spec)
        imageio.save(root / "a" / f"{i:04d}.png", pair.a)
        imageio.save(root / "b" / f"{i:04d}.png", pair.b)
    manifest = {"count": count, "size": size, "seed": seed,
                "pairs": [dict(name=f"{i:04d}.png", **asdict(s)) for i, s in enumerate(specs)]}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return specs


@dataclass
class Pair:
    name: str
    a: np.ndarray
    b: np.ndarray
    b_chroma: np.ndarray | None = None


class PairDataset:
    """Matched files ``root/a/NAME`` and ``root/b/NAME``, sorted by name."""

    def __init__(self, root):
        self.root = Path(root)
        dir_a, dir_b = self.root / "a", self.root / "b"
        if not dir_a.is_dir() or not dir_b.is_dir():
            raise DatasetError(f"{self.root}: expected subdirectories a/ and b/")
        names_a = {p.name for p in dir_a.iterdir() if p.suffix.lower() in IMAGE_EXTS}
        names_b = {p.name for p in dir_b.iterdir() if p.suffix.lower() in IMAGE_EXTS}
        unmatched = sorted(names_a ^ names_b)
        if unmatched:
            raise DatasetError(f"{self.root}: files without a partner: {unmatched[:5]}")
        self.names = sorted(names_a)
        if not self.names:
            raise DatasetError(f"{self.root}: dataset is empty")

    def __len__(self):
        return len(self.names)

    def load(self, name):
        a, _ = imageio.to_gray(imageio.load(self.root / "a" / name))
        b, chroma = imageio.to_gray(imageio.load(self.root / "b" / name))
        if a.shape != b.shape:
            raise DatasetError(f"{name}: pair sizes differ ({a.shape} vs {b.shape})")
        return Pair(name, a, b, chroma)

    def load_many(self, names):
        return [self.load(n) for n in names]


def split(names, test_count, seed):
    """Seeded shuffle into disjoint (train, test) name lists, each sorted."""
    names = list(names)
    if not 0 < test_count < len(names):
        raise DatasetError(
            f"test_count must be between 1 and {len(names) - 1}, got {test_count}")
    perm = SplitMix64(seed).permutation(len(names))
    test = sorted(names[i] for i in perm[:test_count])
    train = sorted(names[i] for i in perm[test_count:])
    return train, test
