"""Density algebra for Gaussians with covariance A A^T + diag(d).

Everything runs in O(n l^2) through the Woodbury identity and the matrix
determinant lemma; the n x n covariance is never materialized.  Operations
accept arbitrary leading batch dimensions and work in whichever float dtype
the tensors carry: float64 is the reference precision for the math tests,
float32 is the training precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from .errors import InvalidValueError, NumericalError, ShapeError
from .tensorio import load_container, save_container

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class FactorGaussian:
    """Gaussian with mean ``mean`` and covariance ``factors @ factors.T + diag(noise)``.

    ``mean``: (..., n), ``factors``: (..., n, l), ``noise``: (..., n) with
    strictly positive entries (so the covariance is positive definite).
    l = 0 degenerates to an independent diagonal Gaussian.  Treat instances
    as immutable; no operation mutates them.
    """

    mean: Tensor
    factors: Tensor
    noise: Tensor

    def __post_init__(self):
        m, a, d = self.mean, self.factors, self.noise
        if a.ndim != m.ndim + 1 or d.shape != m.shape:
            raise ShapeError(
                f"inconsistent shapes: mean {tuple(m.shape)}, "
                f"factors {tuple(a.shape)}, noise {tuple(d.shape)}"
            )
        if a.shape[:-1] != m.shape:
            raise ShapeError(
                f"factors {tuple(a.shape)} do not match mean {tuple(m.shape)}"
            )
        if not (torch.isfinite(m).all() and torch.isfinite(a).all() and torch.isfinite(d).all()):
            raise InvalidValueError("parameters must be finite")
        if d.numel() and not bool((d > 0).all()):
            raise InvalidValueError("noise variances must be strictly positive")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def rank(self) -> int:
        return self.factors.shape[-1]

    @property
    def dtype(self) -> torch.dtype:
        return self.mean.dtype


def _inner_cholesky(g: FactorGaussian) -> Tensor:
    """Cholesky factor of M = I + A^T D^{-1} A (the l x l inner matrix)."""
    scaled = g.factors / g.noise.unsqueeze(-1)
    m = torch.einsum("...nl,...nk->...lk", g.factors, scaled)
    eye = torch.eye(g.rank, dtype=g.dtype, device=g.mean.device)
    try:
        return torch.linalg.cholesky(m + eye)
    except torch.linalg.LinAlgError as exc:
        raise NumericalError(f"inner Cholesky failed: {exc}") from exc


def log_det_sigma(g: FactorGaussian) -> Tensor:
    """log det(Sigma) = sum(log d) + log det(I + A^T D^{-1} A)."""
    out = g.noise.log().sum(-1)
    if g.rank > 0:
        chol = _inner_cholesky(g)
        out = out + 2.0 * torch.log(torch.diagonal(chol, dim1=-2, dim2=-1)).sum(-1)
    return out


def log_density(g: FactorGaussian, x) -> Tensor:
    """Gaussian log-density at ``x`` (nats).

    The quadratic form uses the Woodbury identity
    Sigma^{-1} = D^{-1} - D^{-1} A (I + A^T D^{-1} A)^{-1} A^T D^{-1},
    so only an l x l system is solved.  ``x`` may add leading batch
    dimensions that broadcast against the Gaussian's own.
    """
    x = torch.as_tensor(x, dtype=g.dtype)
    if x.shape[-1] != g.dim:
        raise ShapeError(f"x has dim {x.shape[-1]}, Gaussian has dim {g.dim}")
    u = x - g.mean
    w = u / g.noise
    quad = (u * w).sum(-1)
    logdet = g.noise.log().sum(-1)
    if g.rank > 0:
        chol = _inner_cholesky(g)
        t = torch.einsum("...n,...nl->...l", w, g.factors)
        s = torch.cholesky_solve(t.unsqueeze(-1), chol).squeeze(-1)
        quad = quad - (t * s).sum(-1)
        logdet = logdet + 2.0 * torch.log(
            torch.diagonal(chol, dim1=-2, dim2=-1)
        ).sum(-1)
    return -0.5 * (g.dim * LOG_2PI + logdet + quad)


def sample(g: FactorGaussian, generator: torch.Generator, count: int) -> Tensor:
    """Draw ``count`` vectors: x = mean + A z + sqrt(d) * eps.

    Deterministic for a given generator state.  Batched Gaussians are not
    supported here; sample each component separately.
    """
    if g.mean.ndim != 1:
        raise ShapeError("sample expects an unbatched Gaussian")
    z = torch.randn((count, g.rank), generator=generator, dtype=g.dtype)
    eps = torch.randn((count, g.dim), generator=generator, dtype=g.dtype)
    return g.mean + z @ g.factors.T + torch.sqrt(g.noise) * eps


def _as_index(idx, n: int) -> Tensor:
    idx = torch.as_tensor(np.asarray(idx), dtype=torch.int64)
    if idx.ndim != 1:
        raise IndexError("index list must be 1-D")
    if idx.numel():
        if int(idx.min()) < 0 or int(idx.max()) >= n:
            raise IndexError(f"index out of range for dimension {n}")
        if not bool((idx[1:] > idx[:-1]).all()):
            raise IndexError("indices must be sorted and unique")
    return idx


def restrict(g: FactorGaussian, idx) -> FactorGaussian:
    """Marginal of ``g`` on coordinates ``idx`` (sorted, unique).

    Gaussian marginals are plain row selections of (mean, A, d); no Schur
    step is involved.
    """
    index = _as_index(idx, g.dim)
    return FactorGaussian(
        mean=g.mean.index_select(-1, index),
        factors=g.factors.index_select(-2, index),
        noise=g.noise.index_select(-1, index),
    )


def save_gaussian(g: FactorGaussian, path, meta: dict | None = None) -> None:
    tensors = {
        "mean": g.mean.detach().cpu().numpy(),
        "factors": g.factors.detach().cpu().numpy(),
        "noise": g.noise.detach().cpu().numpy(),
    }
    save_container(path, tensors, meta={"kind": "factor-gaussian", **(meta or {})})


def load_gaussian(path, dtype: torch.dtype = torch.float32) -> FactorGaussian:
    tensors, _ = load_container(path)
    return FactorGaussian(
        mean=torch.as_tensor(tensors["mean"], dtype=dtype),
        factors=torch.as_tensor(tensors["factors"], dtype=dtype),
        noise=torch.as_tensor(tensors["noise"], dtype=dtype),
    )
