"""Missingness simulation: rectangular patch masks and zero substitution.

Mask convention: bit 1 = missing, 0 = observed.  Patch masks drop one
contiguous rectangle at a uniformly random location, replicated across all
channels, so color pixels go missing jointly.

Randomness is counter-based: every (seed, purpose, epoch, index) tuple maps
to an independent generator, so masks are reproducible regardless of batch
composition or iteration order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensorio import write_pnm

# Purpose tags keep the derived RNG streams disjoint.
PURPOSE_INIT = 0
PURPOSE_TRAIN_MASK = 1
PURPOSE_EVAL_MASK = 2
PURPOSE_SHUFFLE = 3


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one (seed, *key) counter tuple."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


@dataclass
class Mask:
    """Binary missingness indicator over a flat data vector."""

    bits: np.ndarray  # (n,) uint8, 1 = missing
    shape: tuple[int, int, int]

    def __post_init__(self):
        self.bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        c, h, w = self.shape
        if self.bits.shape != (c * h * w,):
            raise ShapeError(f"mask length {self.bits.shape} != {c}*{h}*{w}")

    @property
    def missing_indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits).astype(np.int64)

    @property
    def observed_indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits == 0).astype(np.int64)

    @property
    def num_missing(self) -> int:
        return int(self.bits.sum())

    def to_pnm(self, path) -> None:
        """Export for visual inspection (missing pixels are white)."""
        c, h, w = self.shape
        write_pnm(path, self.bits.reshape(c, h, w)[0].astype(np.float32))


@dataclass
class MaskedSample:
    """A data vector with missing coordinates zeroed out.

    ``ground_truth`` keeps the full vector for training and evaluation.
    """

    values: np.ndarray
    mask: Mask
    ground_truth: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        self.ground_truth = np.ascontiguousarray(self.ground_truth, dtype=np.float32)
        n = self.mask.bits.shape[0]
        if self.values.shape != (n,) or self.ground_truth.shape != (n,):
            raise ShapeError("values/ground_truth length must match the mask")


@dataclass
class SplitIndex:
    """Partition of {0..n-1} into observed and missing coordinate lists."""

    observed: np.ndarray
    missing: np.ndarray

    def __post_init__(self):
        self.observed = np.asarray(self.observed, dtype=np.int64)
        self.missing = np.asarray(self.missing, dtype=np.int64)
        n = self.observed.size + self.missing.size
        union = np.concatenate([self.observed, self.missing])
        if not np.array_equal(np.sort(union), np.arange(n)):
            raise ShapeError("observed/missing must partition 0..n-1")

    @property
    def dim(self) -> int:
        return self.observed.size + self.missing.size


def random_patch_mask(
    shape: tuple[int, int, int], patch_h: int, patch_w: int, rng: np.random.Generator
) -> Mask:
    """Rectangle of size patch_h x patch_w at a uniform random location."""
    c, h, w = shape
    if patch_h > h or patch_w > w or patch_h < 1 or patch_w < 1:
        raise ConfigError(f"patch {patch_h}x{patch_w} does not fit image {h}x{w}")
    top = int(rng.integers(0, h - patch_h + 1))
    left = int(rng.integers(0, w - patch_w + 1))
    bits = np.zeros((c, h, w), dtype=np.uint8)
    bits[:, top : top + patch_h, left : left + patch_w] = 1
    return Mask(bits.reshape(-1), shape)


def evaluation_mask(
    shape: tuple[int, int, int], patch: tuple[int, int], mask_seed: int, index: int
) -> Mask:
    """The fixed evaluation mask for test image ``index``.

    Every model scored with the same (mask_seed, index) sees the same mask,
    which is what makes metrics comparable across models.
    """
    rng = derive_rng(mask_seed, PURPOSE_EVAL_MASK, index)
    return random_patch_mask(shape, patch[0], patch[1], rng)


def training_mask(
    shape: tuple[int, int, int],
    patch: tuple[int, int],
    seed: int,
    epoch: int,
    index: int,
) -> Mask:
    """Fresh mask for training sample ``index`` in ``epoch``."""
    rng = derive_rng(seed, PURPOSE_TRAIN_MASK, epoch, index)
    return random_patch_mask(shape, patch[0], patch[1], rng)


def apply_mask(x: np.ndarray, mask: Mask) -> MaskedSample:
    """Zero the missing coordinates of ``x``, keeping the original."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.shape != mask.bits.shape:
        raise ShapeError(f"vector length {x.shape} != mask length {mask.bits.shape}")
    values = np.where(mask.bits == 1, np.float32(0.0), x)
    return MaskedSample(values=values, mask=mask, ground_truth=x)


def split(x: np.ndarray, mask: Mask) -> tuple[np.ndarray, np.ndarray, SplitIndex]:
    """Extract (x_o, x_m, SplitIndex) by sorted coordinate index."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.shape != mask.bits.shape:
        raise ShapeError(f"vector length {x.shape} != mask length {mask.bits.shape}")
    idx = SplitIndex(observed=mask.observed_indices, missing=mask.missing_indices)
    return x[idx.observed], x[idx.missing], idx


def scatter(x_o: np.ndarray, x_m: np.ndarray, idx: SplitIndex) -> np.ndarray:
    """Inverse of split: reassemble the full vector."""
    out = np.empty(idx.dim, dtype=np.float32)
    out[idx.observed] = x_o
    out[idx.missing] = x_m
    return out
