"""Classical mixture of factor analyzers, trained by SGD on the full-data NLL.

The mixture is the baseline against which the conditional network is
compared.  Training follows the same recipe as the network: Adam on the
negative log-likelihood, with noise kept positive through a softplus
reparameterization and weights through unconstrained logits, so the model
invariants hold after every step by construction.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor
import torch.nn.functional as F

from .errors import ConfigError, DivergedError, FormatError, ShapeError
from .lowrank_gauss import FactorGaussian, log_density, sample
from .masking import PURPOSE_INIT, PURPOSE_SHUFFLE, derive_rng
from .tensorio import Dataset, load_container, save_container
from .trainer import TrainConfig, make_adam

NOISE_FLOOR = 1e-6
INIT_NOISE_MIN = 1e-4


@dataclass
class MfaModel:
    """k-component mixture of factor Gaussians with log-domain weights."""

    log_weights: Tensor  # (k,), log-sum-exp == 0
    components: list[FactorGaussian]

    def __post_init__(self):
        if len(self.components) < 1:
            raise ShapeError("mixture needs at least one component")
        if self.log_weights.shape != (len(self.components),):
            raise ShapeError("one log-weight per component required")
        dims = {(c.dim, c.rank) for c in self.components}
        if len(dims) != 1:
            raise ShapeError(f"components disagree on (n, l): {dims}")
        lse = float(torch.logsumexp(self.log_weights.detach(), dim=0))
        tol = 1e-9 if self.log_weights.dtype == torch.float64 else 1e-5
        if abs(lse) > tol:
            raise ShapeError(f"log-weights are not normalized (lse={lse:.3e})")

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def rank(self) -> int:
        return self.components[0].rank


def mixture_log_density(mix: MfaModel, x) -> Tensor:
    """log p(x) = logsumexp_i(log p_i + log N_i(x)); x may be batched."""
    per_comp = torch.stack(
        [lw + log_density(c, x) for lw, c in zip(mix.log_weights, mix.components)]
    )
    return torch.logsumexp(per_comp, dim=0)


def sample_mixture(mix: MfaModel, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw ``count`` vectors from the mixture (component choice via ``rng``)."""
    weights = torch.softmax(mix.log_weights, dim=0).numpy().astype(np.float64)
    weights = weights / weights.sum()
    choices = rng.choice(mix.k, size=count, p=weights)
    gen = torch.Generator().manual_seed(int(rng.integers(0, 2**63 - 1)))
    out = np.empty((count, mix.dim), dtype=np.float64)
    for i in range(mix.k):
        idx = np.flatnonzero(choices == i)
        if idx.size:
            draws = sample(mix.components[i], gen, idx.size)
            out[idx] = draws.to(torch.float64).numpy()
    return out


def init_mfa(
    data: Dataset,
    k: int,
    latent: int,
    rng: np.random.Generator,
    dtype: torch.dtype = torch.float32,
) -> MfaModel:
    """Data-driven initialization: means are k distinct training samples,
    factors are small random, noise is the per-dimension variance / l."""
    if latent < 1:
        raise ConfigError("mixture initialization requires latent >= 1")
    if k > data.count:
        raise ConfigError(f"k={k} exceeds dataset size {data.count}")
    n = data.dim
    means = data.samples[rng.choice(data.count, size=k, replace=False)]
    factors = rng.normal(0.0, 0.1, size=(k, n, latent))
    noise = np.maximum(data.samples.var(axis=0, dtype=np.float64) / latent, INIT_NOISE_MIN)
    comps = [
        FactorGaussian(
            mean=torch.as_tensor(means[i], dtype=dtype),
            factors=torch.as_tensor(factors[i], dtype=dtype),
            noise=torch.as_tensor(noise, dtype=dtype),
        )
        for i in range(k)
    ]
    log_w = torch.full((k,), -float(np.log(k)), dtype=dtype)
    return MfaModel(log_weights=log_w, components=comps)


def _softplus_inv(y: Tensor) -> Tensor:
    # softplus^{-1}(y) = y + log(1 - exp(-y)), stable for all y > 0
    return y + torch.log(-torch.expm1(-y))


def _model_from_params(logits, means, factors, rho) -> MfaModel:
    comps = [
        FactorGaussian(
            mean=means[i],
            factors=factors[i],
            noise=F.softplus(rho[i]) + NOISE_FLOOR,
        )
        for i in range(means.shape[0])
    ]
    return MfaModel(log_weights=F.log_softmax(logits, dim=0), components=comps)


def train_mfa(data: Dataset, config: TrainConfig) -> tuple[MfaModel, list[dict]]:
    """Minimize the mean NLL over complete data with Adam.

    Returns the trained mixture and a per-epoch log:
    {"epoch", "mean_nll", "seconds"}.  Deterministic for a fixed seed and a
    single thread.
    """
    k, latent = config.components, config.latent
    init = init_mfa(data, k, latent, derive_rng(config.seed, PURPOSE_INIT))

    logits = torch.zeros(k, requires_grad=True)
    means = torch.stack([c.mean for c in init.components]).requires_grad_(True)
    factors = torch.stack([c.factors for c in init.components]).requires_grad_(True)
    rho = _softplus_inv(
        torch.stack([c.noise for c in init.components]) - NOISE_FLOOR
    ).requires_grad_(True)
    params = [logits, means, factors, rho]
    opt = make_adam(params, config.lr)

    log: list[dict] = []
    for epoch in range(config.epochs):
        t0 = time.monotonic()
        order = derive_rng(config.seed, PURPOSE_SHUFFLE, epoch).permutation(data.count)
        nll_sum = 0.0  # accumulated in f64
        for start in range(0, data.count, config.batch):
            batch = torch.from_numpy(data.samples[order[start : start + config.batch]])
            model = _model_from_params(logits, means, factors, rho)
            nll = -mixture_log_density(model, batch)
            loss = nll.mean()
            if not torch.isfinite(loss):
                raise DivergedError(f"non-finite loss at epoch {epoch}", epoch=epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            nll_sum += float(nll.detach().sum())
        log.append(
            {
                "epoch": epoch,
                "mean_nll": nll_sum / data.count,
                "seconds": time.monotonic() - t0,
            }
        )
    with torch.no_grad():
        final = _model_from_params(
            logits.detach().clone(),
            means.detach().clone(),
            factors.detach().clone(),
            rho.detach().clone(),
        )
    return final, log


def save_mfa(mix: MfaModel, path, meta: dict | None = None) -> None:
    tensors = {
        "log_weights": mix.log_weights.detach().numpy(),
        "means": torch.stack([c.mean for c in mix.components]).detach().numpy(),
        "factors": torch.stack([c.factors for c in mix.components]).detach().numpy(),
        "noise": torch.stack([c.noise for c in mix.components]).detach().numpy(),
    }
    header = {"kind": "mfa", "components": mix.k, "latent": mix.rank}
    header.update(meta or {})
    save_container(path, tensors, meta=header)


def load_mfa(path, dtype: torch.dtype = torch.float32) -> tuple[MfaModel, dict]:
    tensors, meta = load_container(path)
    if meta.get("kind") != "mfa":
        raise FormatError(f"{path}: not a mixture model file (kind={meta.get('kind')!r})")
    lw = torch.as_tensor(tensors["log_weights"], dtype=dtype)
    lw = lw - torch.logsumexp(lw, dim=0)  # re-normalize after f32 round trip
    comps = [
        FactorGaussian(
            mean=torch.as_tensor(tensors["means"][i], dtype=dtype),
            factors=torch.as_tensor(tensors["factors"][i], dtype=dtype),
            noise=torch.as_tensor(tensors["noise"][i], dtype=dtype),
        )
        for i in range(tensors["means"].shape[0])
    ]
    return MfaModel(log_weights=lw, components=comps), meta
