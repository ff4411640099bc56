"""Metrics and figure-style exports.

Conventions, recorded in every Metrics object: pixels live in [0, 1]
("unit_interval"), NLL is nats per image over the missing coordinates only,
MSE is the per-image sum of squared errors over missing pixels.  All models
compared under one ``mask_seed`` are scored on identical masks.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .conditional import (
    IMPUTE_TOP_COMPONENT,
    conditional_mixture,
    mixture_imputation,
)
from .errors import ShapeError
from .lowrank_gauss import FactorGaussian
from .masking import Mask, apply_mask, evaluation_mask, scatter, split
from .mfa import MfaModel, mixture_log_density
from .network import DmfaNetwork, forward, mse_missing_batch, restricted_nll_batch
from .tensorio import Dataset, write_pnm


@dataclass
class Metrics:
    """Per-dataset aggregates for one model under one mask stream."""

    mean_nll: float
    mean_mse: float
    count: int
    pixel_scale: str = "unit_interval"
    mask_seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _eval_masks(shape, patch, mask_seed: int, indices) -> list[Mask]:
    return [evaluation_mask(shape, patch, mask_seed, int(i)) for i in indices]


def evaluate_dmfa(
    net: DmfaNetwork,
    test: Dataset,
    patch: tuple[int, int],
    mask_seed: int,
    batch: int = 64,
) -> Metrics:
    """Mean restricted NLL and imputation MSE of the network on ``test``."""
    if net.shape != test.shape:
        raise ShapeError(f"network shape {net.shape} != data shape {test.shape}")
    if test.count == 0:
        raise ShapeError("cannot evaluate on an empty dataset")
    c, h, w = test.shape
    nll_sum = 0.0
    mse_sum = 0.0
    for start in range(0, test.count, batch):
        idx = range(start, min(start + batch, test.count))
        masks = _eval_masks(test.shape, patch, mask_seed, idx)
        b = len(masks)
        values = np.empty((b, c, h, w), dtype=np.float32)
        planes = np.empty((b, 1, h, w), dtype=np.float32)
        missing = np.empty((b, masks[0].num_missing), dtype=np.int64)
        for row, (i, mask) in enumerate(zip(idx, masks)):
            x = test.samples[i]
            values[row] = np.where(mask.bits == 1, np.float32(0.0), x).reshape(c, h, w)
            planes[row, 0] = mask.bits.reshape(c, h, w).max(axis=0)
            missing[row] = mask.missing_indices
        truth = torch.from_numpy(test.samples[np.asarray(list(idx))])
        with torch.no_grad():
            mu, factors, noise = net.raw_forward(
                torch.from_numpy(values), torch.from_numpy(planes)
            )
            miss_t = torch.from_numpy(missing)
            nll = restricted_nll_batch(mu, factors, noise, truth, miss_t)
            mse = mse_missing_batch(mu, truth, miss_t)
        nll_sum += float(nll.double().sum())
        mse_sum += float(mse.double().sum())
    return Metrics(
        mean_nll=nll_sum / test.count,
        mean_mse=mse_sum / test.count,
        count=test.count,
        mask_seed=mask_seed,
    )


def evaluate_mfa(
    mix: MfaModel,
    test: Dataset,
    patch: tuple[int, int],
    mask_seed: int,
    impute_mode: str = IMPUTE_TOP_COMPONENT,
) -> Metrics:
    """Conditional-mixture NLL and imputation MSE on the same masks as
    :func:`evaluate_dmfa` for the same ``mask_seed``."""
    if mix.dim != test.dim:
        raise ShapeError(f"mixture dim {mix.dim} != data dim {test.dim}")
    if test.count == 0:
        raise ShapeError("cannot evaluate on an empty dataset")
    nll_sum = 0.0
    mse_sum = 0.0
    for i in range(test.count):
        mask = evaluation_mask(test.shape, patch, mask_seed, i)
        x_o, x_m, idx = split(test.samples[i], mask)
        cond = conditional_mixture(mix, x_o, idx)
        x_m_t = torch.as_tensor(x_m, dtype=cond.components[0].dtype)
        nll_sum += -float(mixture_log_density(cond, x_m_t).double())
        imputed = mixture_imputation(cond, impute_mode).numpy()
        mse_sum += float(((imputed - x_m.astype(np.float64)) ** 2).sum())
    return Metrics(
        mean_nll=nll_sum / test.count,
        mean_mse=mse_sum / test.count,
        count=test.count,
        mask_seed=mask_seed,
    )


def impute_sample(model, sample, impute_mode: str = IMPUTE_TOP_COMPONENT) -> np.ndarray:
    """Full vector with missing coordinates replaced by the model's estimate.

    Observed coordinates are passed through untouched.
    """
    x_o, _, idx = split(sample.ground_truth, sample.mask)
    if isinstance(model, MfaModel):
        cond = conditional_mixture(model, x_o, idx)
        est = mixture_imputation(cond, impute_mode).numpy().astype(np.float32)
    elif isinstance(model, DmfaNetwork):
        g = forward(model, sample)
        est = g.mean.numpy()[idx.missing]
    else:
        raise ShapeError(f"cannot impute with object of type {type(model).__name__}")
    return scatter(x_o, est, idx)


def export_imputation_grid(
    models: Sequence[tuple[str, object]],
    test: Dataset,
    patch: tuple[int, int],
    mask_seed: int,
    path,
    impute_mode: str = IMPUTE_TOP_COMPONENT,
) -> Path:
    """Tile test images into columns: original, masked, one per model.

    Gray data is written as P5, color as P6; values are clamped to [0, 1].
    Returns the written path.
    """
    c, h, w = test.shape
    rows = test.count
    cols = 2 + len(models)
    grid = np.zeros((c, rows * h, cols * w), dtype=np.float32)
    for i in range(rows):
        mask = evaluation_mask(test.shape, patch, mask_seed, i)
        sample = apply_mask(test.samples[i], mask)
        tiles = [sample.ground_truth, sample.values]
        tiles += [impute_sample(model, sample, impute_mode) for _, model in models]
        for j, tile in enumerate(tiles):
            grid[:, i * h : (i + 1) * h, j * w : (j + 1) * w] = tile.reshape(c, h, w)
    path = Path(path)
    write_pnm(path, grid[0] if c == 1 else grid)
    return path


def export_parameter_images(
    g: FactorGaussian, shape: tuple[int, int, int], out_dir, prefix: str = "params"
) -> list[Path]:
    """Write mean, factor and noise images for one predicted Gaussian.

    The mean is exported unnormalized (clamped to [0, 1]); each factor
    image is min-max normalized; the noise image is min-max normalized on a
    log scale.  Display transforms are recorded in a sidecar JSON so the
    images stay interpretable.  Returns the l+2 image paths.
    """
    c, h, w = shape
    if g.dim != c * h * w:
        raise ShapeError(f"Gaussian dim {g.dim} != {c}*{h}*{w}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = ".pgm" if c == 1 else ".ppm"

    def _img(vec: np.ndarray):
        arr = vec.reshape(c, h, w)
        return arr[0] if c == 1 else arr

    written: list[Path] = []
    scales: dict[str, dict] = {}

    mean_path = out / f"{prefix}-mean{ext}"
    write_pnm(mean_path, _img(g.mean.detach().numpy()))
    scales[mean_path.name] = {"transform": "identity-clamped"}
    written.append(mean_path)

    factors = g.factors.detach().numpy()
    for j in range(g.rank):
        fac = factors[:, j].astype(np.float64)
        lo, hi = float(fac.min()), float(fac.max())
        degenerate = hi - lo < 1e-12
        img = np.full_like(fac, 0.5) if degenerate else (fac - lo) / (hi - lo)
        p = out / f"{prefix}-factor{j}{ext}"
        write_pnm(p, _img(img.astype(np.float32)))
        scales[p.name] = {
            "transform": "minmax",
            "min": lo,
            "max": hi,
            "degenerate": degenerate,
        }
        written.append(p)

    log_noise = np.log(g.noise.detach().numpy().astype(np.float64))
    lo, hi = float(log_noise.min()), float(log_noise.max())
    degenerate = hi - lo < 1e-12
    img = np.full_like(log_noise, 0.5) if degenerate else (log_noise - lo) / (hi - lo)
    noise_path = out / f"{prefix}-noise{ext}"
    write_pnm(noise_path, _img(img.astype(np.float32)))
    scales[noise_path.name] = {
        "transform": "log-minmax",
        "log_min": lo,
        "log_max": hi,
        "degenerate": degenerate,
    }
    written.append(noise_path)

    with open(out / f"{prefix}-scales.json", "w") as f:
        json.dump(scales, f, indent=2)
    return written
