"""Neural map from (masked values, mask) to a full-space factor Gaussian.

The network sees the data with missing coordinates zeroed plus the mask as
an extra input channel, and emits mean, factor loading matrix and noise
vector for an n-dimensional Gaussian.  The training loss evaluates that
Gaussian only on the missing coordinates, so outputs at observed
coordinates are free to be arbitrary.

Three architectures:

* ``dense``       -- small MLP, for toy and synthetic problems.
* ``conv-dense``  -- 4 conv layers (3x3, stride 2 on layers 2 and 4,
                     widths 32-64-64-128, leaky ReLU 0.2) followed by one
                     dense layer; the gray-scale default.
* ``full-conv``   -- encoder/decoder with strided 4x4 convolutions down and
                     transposed convolutions up (widths 64-128-256-512,
                     mirrored), head emitting l+2 channel groups per pixel;
                     no dense layer, suited to larger color images.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import (
    ConfigError,
    DivergedError,
    EmptyMaskError,
    FormatError,
    ShapeError,
)
from .lowrank_gauss import FactorGaussian, log_density, restrict
from .masking import MaskedSample
from .tensorio import load_container, save_container

NOISE_FLOOR = 1e-6
LEAKY_SLOPE = 0.2

ARCH_DENSE = "dense"
ARCH_CONV_DENSE = "conv-dense"
ARCH_FULL_CONV = "full-conv"
ARCHITECTURES = (ARCH_DENSE, ARCH_CONV_DENSE, ARCH_FULL_CONV)

_CONV_DENSE_WIDTHS = (32, 64, 64, 128)
_FULL_CONV_WIDTHS = (64, 128, 256, 512)
_DENSE_HIDDEN = 256


def _down_size(s: int) -> int:
    # Conv2d(kernel 4, stride 2, pad 1)
    return (s - 2) // 2 + 1


class DmfaNetwork(nn.Module):
    """Parameterized map (masked input, mask) -> (mu, A, d) over R^n."""

    def __init__(self, shape: tuple[int, int, int], arch: str = ARCH_CONV_DENSE,
                 latent: int = 4):
        super().__init__()
        if arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {arch!r}")
        c, h, w = shape
        self.shape = (int(c), int(h), int(w))
        self.arch = arch
        self.latent = int(latent)
        self.n = c * h * w
        in_ch = c + 1  # mask enters as one extra channel
        out_dim = (self.latent + 2) * self.n

        if arch == ARCH_DENSE:
            self.body = nn.Sequential(
                nn.Flatten(),
                nn.Linear(in_ch * h * w, _DENSE_HIDDEN),
                nn.LeakyReLU(LEAKY_SLOPE),
                nn.Linear(_DENSE_HIDDEN, _DENSE_HIDDEN),
                nn.LeakyReLU(LEAKY_SLOPE),
                nn.Linear(_DENSE_HIDDEN, out_dim),
            )
        elif arch == ARCH_CONV_DENSE:
            widths = _CONV_DENSE_WIDTHS
            strides = (1, 2, 1, 2)
            layers: list[nn.Module] = []
            prev = in_ch
            for width, stride in zip(widths, strides):
                layers += [nn.Conv2d(prev, width, 3, stride, 1), nn.LeakyReLU(LEAKY_SLOPE)]
                prev = width
            # each stride-2 layer (3x3, pad 1) takes s -> ceil(s / 2)
            hh = ((h + 1) // 2 + 1) // 2
            ww = ((w + 1) // 2 + 1) // 2
            layers += [nn.Flatten(), nn.Linear(widths[-1] * hh * ww, out_dim)]
            self.body = nn.Sequential(*layers)
        else:
            # Encoder sizes are recorded so the decoder can mirror them
            # exactly (output_padding fixes odd sizes).
            sizes = [(h, w)]
            while len(sizes) <= 4 and min(sizes[-1]) >= 2:
                sizes.append((_down_size(sizes[-1][0]), _down_size(sizes[-1][1])))
            stages = len(sizes) - 1
            if stages == 0:
                raise ConfigError(f"image {h}x{w} too small for {arch}")
            widths = _FULL_CONV_WIDTHS[:stages]
            downs: list[nn.Module] = []
            prev = in_ch
            for width in widths:
                downs += [nn.Conv2d(prev, width, 4, 2, 1), nn.LeakyReLU(LEAKY_SLOPE)]
                prev = width
            ups: list[nn.Module] = []
            for i in range(stages - 1, -1, -1):
                target, src = sizes[i], sizes[i + 1]
                opad = (target[0] - 2 * src[0], target[1] - 2 * src[1])
                out_ch = widths[i - 1] if i > 0 else widths[0]
                ups += [
                    nn.ConvTranspose2d(prev, out_ch, 4, 2, 1, output_padding=opad),
                    nn.LeakyReLU(LEAKY_SLOPE),
                ]
                prev = out_ch
            head = nn.Conv2d(prev, (self.latent + 2) * c, 3, 1, 1)
            self.body = nn.Sequential(*downs, *ups, head)

    def raw_forward(self, values: Tensor, mask: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Batched forward pass.

        ``values``: (B, c, h, w) with missing pixels zeroed; ``mask``:
        (B, 1, h, w) with 1 = missing.  Returns mu (B, n), factors
        (B, n, l) and noise (B, n) with noise >= NOISE_FLOOR by
        construction.
        """
        c, h, w = self.shape
        if values.shape[1:] != (c, h, w) or mask.shape[1:] != (1, h, w):
            raise ShapeError(
                f"input {tuple(values.shape)} / mask {tuple(mask.shape)} do not "
                f"match network shape {self.shape}"
            )
        out = self.body(torch.cat([values, mask], dim=1))
        b = values.shape[0]
        n, l = self.n, self.latent
        if self.arch == ARCH_FULL_CONV:
            # channel groups: c for mu, l*c for the factors, c for rho
            mu = out[:, :c].reshape(b, n)
            factors = out[:, c : c * (1 + l)].reshape(b, l, n).permute(0, 2, 1)
            rho = out[:, c * (1 + l) :].reshape(b, n)
        else:
            # flat layout: [mu (n) | A row-major (n*l) | rho (n)]
            mu = out[:, :n]
            factors = out[:, n : n * (1 + l)].reshape(b, n, l)
            rho = out[:, n * (1 + l) :]
        return mu, factors, F.softplus(rho) + NOISE_FLOOR


def sample_to_tensors(sample: MaskedSample) -> tuple[Tensor, Tensor]:
    """(values (1,c,h,w), mask plane (1,1,h,w)) for a single sample."""
    c, h, w = sample.mask.shape
    values = torch.from_numpy(sample.values.reshape(1, c, h, w))
    plane = sample.mask.bits.reshape(c, h, w).max(axis=0).astype(np.float32)
    return values, torch.from_numpy(plane.reshape(1, 1, h, w))


def forward(net: DmfaNetwork, sample: MaskedSample) -> FactorGaussian:
    """Full-space Gaussian for one masked sample (inference mode)."""
    if sample.mask.shape != net.shape:
        raise ShapeError(f"sample shape {sample.mask.shape} != net shape {net.shape}")
    values, mask = sample_to_tensors(sample)
    with torch.no_grad():
        mu, factors, noise = net.raw_forward(values, mask)
    return FactorGaussian(mean=mu[0], factors=factors[0], noise=noise[0])


def restricted_nll(g: FactorGaussian, sample: MaskedSample) -> Tensor:
    """-log N(mu_m, A_m A_m^T + D_mm)(x_m): the loss on missing coordinates.

    Only rows of (mu, A, d) at missing coordinates enter; anything the
    model emits at observed coordinates is ignored.
    """
    missing = sample.mask.missing_indices
    if missing.size == 0:
        raise EmptyMaskError("sample has no missing coordinates")
    x_m = torch.as_tensor(sample.ground_truth[missing], dtype=g.dtype)
    return -log_density(restrict(g, missing), x_m)


def mse_missing(g: FactorGaussian, sample: MaskedSample) -> Tensor:
    """Sum of squared mean errors over the missing coordinates."""
    missing = sample.mask.missing_indices
    if missing.size == 0:
        raise EmptyMaskError("sample has no missing coordinates")
    x_m = torch.as_tensor(sample.ground_truth[missing], dtype=g.dtype)
    mu_m = g.mean.index_select(-1, torch.as_tensor(missing))
    return ((mu_m - x_m) ** 2).sum()


def _gather_missing(t: Tensor, missing: Tensor) -> Tensor:
    if t.ndim == 2:
        return torch.gather(t, 1, missing)
    return torch.gather(t, 1, missing.unsqueeze(-1).expand(-1, -1, t.shape[-1]))


def restricted_nll_batch(
    mu: Tensor, factors: Tensor, noise: Tensor, x_true: Tensor, missing: Tensor
) -> Tensor:
    """Vectorized restricted NLL for a batch sharing one mask size.

    ``missing`` is (B, m) int64; returns (B,).  Routed through the same
    low-rank density code as the scalar path.
    """
    g = FactorGaussian(
        mean=_gather_missing(mu, missing),
        factors=_gather_missing(factors, missing),
        noise=_gather_missing(noise, missing),
    )
    return -log_density(g, _gather_missing(x_true, missing))


def mse_missing_batch(mu: Tensor, x_true: Tensor, missing: Tensor) -> Tensor:
    diff = _gather_missing(mu, missing) - _gather_missing(x_true, missing)
    return (diff**2).sum(-1)


LOSS_NLL = "nll"
LOSS_NLL_PLUS_MSE = "nll_plus_mse"


def loss_gradients(
    net: DmfaNetwork, sample: MaskedSample, loss_mode: str = LOSS_NLL
) -> dict[str, Tensor]:
    """Reverse-mode gradients of the selected loss w.r.t. all parameters."""
    if loss_mode not in (LOSS_NLL, LOSS_NLL_PLUS_MSE):
        raise ConfigError(f"unknown loss mode {loss_mode!r}")
    values, mask = sample_to_tensors(sample)
    mu, factors, noise = net.raw_forward(values, mask)
    g = FactorGaussian(mean=mu[0], factors=factors[0], noise=noise[0])
    loss = restricted_nll(g, sample)
    if loss_mode == LOSS_NLL_PLUS_MSE:
        loss = loss + mse_missing(g, sample)
    names, params = zip(*net.named_parameters())
    grads = torch.autograd.grad(loss, params)
    for name, grad in zip(names, grads):
        if not torch.isfinite(grad).all():
            raise DivergedError(f"non-finite gradient in {name}")
    return dict(zip(names, grads))


def save_network(net: DmfaNetwork, path, meta: dict | None = None) -> None:
    tensors = {k: v.detach().cpu().numpy() for k, v in net.state_dict().items()}
    header = {
        "kind": "dmfa-network",
        "arch": net.arch,
        "shape": list(net.shape),
        "latent": net.latent,
    }
    header.update(meta or {})
    save_container(path, tensors, meta=header)


def load_network(path) -> tuple[DmfaNetwork, dict]:
    tensors, meta = load_container(path)
    if meta.get("kind") != "dmfa-network":
        raise FormatError(f"{path}: not a network file (kind={meta.get('kind')!r})")
    net = DmfaNetwork(tuple(meta["shape"]), arch=meta["arch"], latent=meta["latent"])
    state = {k: torch.from_numpy(v) for k, v in tensors.items()}
    net.load_state_dict(state)
    return net, meta
