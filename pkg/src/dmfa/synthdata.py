"""Synthetic datasets for end-to-end runs and tests.

Two generators: a known low-rank Gaussian mixture over small images (ground
truth for conditional-density recovery experiments) and a procedural
seven-segment digit renderer that stands in for real handwriting corpora
when none are on disk.
"""

from __future__ import annotations

import numpy as np
import torch

from .lowrank_gauss import FactorGaussian
from .masking import derive_rng
from .mfa import MfaModel, sample_mixture
from .tensorio import Dataset

# Segment endpoints in the unit square, y growing downward.
_SEGMENTS = {
    "A": (0.22, 0.16, 0.78, 0.16),
    "B": (0.78, 0.16, 0.78, 0.50),
    "C": (0.78, 0.50, 0.78, 0.84),
    "D": (0.22, 0.84, 0.78, 0.84),
    "E": (0.22, 0.50, 0.22, 0.84),
    "F": (0.22, 0.16, 0.22, 0.50),
    "G": (0.22, 0.50, 0.78, 0.50),
}

_DIGIT_SEGMENTS = {
    0: "ABCDEF",
    1: "BC",
    2: "ABGED",
    3: "ABGCD",
    4: "FGBC",
    5: "AFGCD",
    6: "AFGECD",
    7: "ABC",
    8: "ABCDEFG",
    9: "ABCDFG",
}


def make_factor_generator(seed: int = 0, n: int = 16, latent: int = 2, k: int = 2) -> MfaModel:
    """A known mixture of factor Gaussians with well-separated components.

    Means sit in distinct bands of [0, 1] so the observed half of a sample
    identifies its component; float64 so it can serve as an exact oracle.
    """
    rng = derive_rng(seed, 77)
    comps = []
    centers = np.linspace(0.3, 0.7, k)
    for i in range(k):
        mean = centers[i] + 0.06 * rng.uniform(-1.0, 1.0, size=n)
        factors = rng.normal(0.0, 0.06, size=(n, latent))
        noise = rng.uniform(3e-4, 1e-3, size=n)
        comps.append(
            FactorGaussian(
                mean=torch.as_tensor(mean, dtype=torch.float64),
                factors=torch.as_tensor(factors, dtype=torch.float64),
                noise=torch.as_tensor(noise, dtype=torch.float64),
            )
        )
    log_w = torch.full((k,), -float(np.log(k)), dtype=torch.float64)
    return MfaModel(log_weights=log_w, components=comps)


def sample_generator_dataset(
    mix: MfaModel, shape: tuple[int, int, int], count: int, seed: int
) -> Dataset:
    """Draw from the generator and clip into [0, 1] (clipping is rare by
    construction of :func:`make_factor_generator`)."""
    draws = sample_mixture(mix, derive_rng(seed, 78), count)
    return Dataset(np.clip(draws, 0.0, 1.0).astype(np.float32), shape)


def _stroke(canvas_x, canvas_y, seg, thickness, aa):
    x1, y1, x2, y2 = seg
    dx, dy = x2 - x1, y2 - y1
    length_sq = dx * dx + dy * dy
    t = ((canvas_x - x1) * dx + (canvas_y - y1) * dy) / length_sq
    t = np.clip(t, 0.0, 1.0)
    dist = np.hypot(canvas_x - (x1 + t * dx), canvas_y - (y1 + t * dy))
    return np.clip((thickness / 2 + aa - dist) / aa, 0.0, 1.0)


def render_digits(count: int, seed: int, size: int = 28) -> Dataset:
    """Procedural seven-segment digits with random pose and stroke width.

    Structured, multimodal gray-scale data at MNIST-like geometry; useful
    wherever a real handwriting corpus is unavailable.
    """
    rng = derive_rng(seed, 79)
    coords = (np.arange(size) + 0.5) / size
    gx, gy = np.meshgrid(coords, coords)  # gy is the row coordinate
    samples = np.empty((count, size * size), dtype=np.float32)
    aa = 1.5 / size
    for i in range(count):
        digit = int(rng.integers(0, 10))
        scale = rng.uniform(0.75, 1.1)
        ox = 0.5 + rng.uniform(-0.1, 0.1)
        oy = 0.5 + rng.uniform(-0.1, 0.1)
        thickness = rng.uniform(0.06, 0.12)
        brightness = rng.uniform(0.75, 1.0)
        img = np.zeros((size, size), dtype=np.float64)
        for name in _DIGIT_SEGMENTS[digit]:
            x1, y1, x2, y2 = _SEGMENTS[name]
            seg = (
                ox + scale * (x1 - 0.5),
                oy + scale * (y1 - 0.5),
                ox + scale * (x2 - 0.5),
                oy + scale * (y2 - 0.5),
            )
            img = np.maximum(img, _stroke(gx, gy, seg, thickness, aa))
        samples[i] = (brightness * img).reshape(-1).astype(np.float32)
    return Dataset(samples, (1, size, size))
