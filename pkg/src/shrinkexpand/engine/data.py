"""Synthetic, seeded data sources. No external datasets.

Each source owns its class structure (drawn once from its seed) and
serves train batches from a caller-provided generator plus one fixed
evaluation batch, so runs are fully reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Batch:
    inputs: np.ndarray  # (n, h, w, c) float32
    labels: np.ndarray  # (n,) int64


class DataSource:
    """Base: subclasses set input_shape/num_classes and implement
    ``sample(rng, n)``."""

    input_shape: tuple[int, int, int]
    num_classes: int
    eval_size: int = 256

    def __init__(self, seed: int):
        self.seed = seed
        self._eval = self.sample(np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(1,))), self.eval_size)

    def structure_rng(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(entropy=self.seed, spawn_key=(0,)))

    def sample(self, rng: np.random.Generator, n: int) -> Batch:
        raise NotImplementedError

    def train_batch(self, rng: np.random.Generator, n: int) -> Batch:
        return self.sample(rng, n)

    def eval_batch(self) -> Batch:
        return self._eval


class GaussianBlobs(DataSource):
    """Isotropic Gaussian clusters, one per class, as 1x1 'images'
    with ``dim`` channels.

    With ``active_dims`` set, the class centers differ only in the
    first ``active_dims`` channels; the rest carry pure noise, so a
    classifier needs only a low-dimensional subspace of the input.
    """

    def __init__(self, num_classes: int = 3, dim: int = 4, spread: float = 0.35,
                 seed: int = 0, eval_size: int = 256, active_dims: int | None = None):
        self.num_classes = num_classes
        self.dim = dim
        self.spread = spread
        self.active_dims = dim if active_dims is None else active_dims
        self.input_shape = (1, 1, dim)
        self.eval_size = eval_size
        self.seed = seed
        self.centers = self.structure_rng().uniform(-1.0, 1.0, size=(num_classes, dim))
        self.centers[:, self.active_dims:] = 0.0
        super().__init__(seed)

    def sample(self, rng, n):
        labels = rng.integers(self.num_classes, size=n)
        points = self.centers[labels] + rng.normal(scale=self.spread, size=(n, self.dim))
        return Batch(points.astype(np.float32).reshape(n, 1, 1, self.dim),
                     labels.astype(np.int64))


class TwoSpirals(DataSource):
    """The classic interleaved two-spiral problem on 2 channels."""

    num_classes = 2
    input_shape = (1, 1, 2)

    def __init__(self, noise: float = 0.05, seed: int = 0, eval_size: int = 256):
        self.noise = noise
        self.eval_size = eval_size
        super().__init__(seed)

    def sample(self, rng, n):
        labels = rng.integers(2, size=n)
        t = rng.uniform(0.25, 1.0, size=n) * 3 * np.pi
        sign = np.where(labels == 0, 1.0, -1.0)
        radius = t / (3 * np.pi)
        x = np.stack([sign * radius * np.cos(t), sign * radius * np.sin(t)], axis=1)
        x += rng.normal(scale=self.noise, size=x.shape)
        return Batch(x.astype(np.float32).reshape(n, 1, 1, 2), labels.astype(np.int64))


def _box_blur(images: np.ndarray) -> np.ndarray:
    """3x3 mean filter with edge padding, applied per channel."""
    padded = np.pad(images, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="edge")
    h, w = images.shape[1], images.shape[2]
    out = np.zeros_like(images)
    for dy in range(3):
        for dx in range(3):
            out += padded[:, dy : dy + h, dx : dx + w, :]
    return out / 9.0


class ProceduralTextures(DataSource):
    """Smoothed-noise images labeled by the best-matching of K fixed
    random templates, so labels depend on the input alone."""

    def __init__(self, num_classes: int = 4, size: int = 16, channels: int = 1,
                 seed: int = 0, eval_size: int = 256):
        self.num_classes = num_classes
        self.input_shape = (size, size, channels)
        self.eval_size = eval_size
        self.seed = seed
        rng = self.structure_rng()
        templates = rng.normal(size=(num_classes, size, size, channels))
        templates = _box_blur(templates.reshape(num_classes, size, size, channels))
        norms = np.sqrt((templates ** 2).sum(axis=(1, 2, 3), keepdims=True))
        self.templates = templates / norms
        super().__init__(seed)

    def sample(self, rng, n):
        size = self.input_shape[0]
        images = rng.normal(size=(n, size, size, self.input_shape[2]))
        images = _box_blur(images)
        images -= images.mean(axis=(1, 2, 3), keepdims=True)
        images /= images.std(axis=(1, 2, 3), keepdims=True) + 1e-8
        scores = np.einsum("nhwc,khwc->nk", images, self.templates)
        labels = scores.argmax(axis=1)
        return Batch(images.astype(np.float32), labels.astype(np.int64))


_KINDS = {
    "blobs": GaussianBlobs,
    "spirals": TwoSpirals,
    "textures": ProceduralTextures,
}


def make_data_source(spec: dict) -> DataSource:
    """Build a source from a config mapping: {"kind": ..., **params}."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in _KINDS:
        raise ValueError(f"unknown data source kind {kind!r}; known: {sorted(_KINDS)}")
    return _KINDS[kind](**spec)
