"""Closed-form conditional densities p(x_m | x_o) in low-rank form.

For a factor Gaussian, the Schur-complement conditional
    mu_hat = mu_m + S_mo S_oo^{-1} (x_o - mu_o)
    S_hat  = S_mm - S_mo S_oo^{-1} S_om
collapses back to factor form: with B = A_o^T D_o^{-1} A_o and M = I + B,
    S_hat = A_m M^{-1} A_m^T + D_mm,
    mu_hat = mu_m + A_m M^{-1} A_o^T D_o^{-1} (x_o - mu_o),
so conditioning costs O(n l^2) like everything else.  The conditional of a
mixture conditions every component and reweights by the observed-marginal
likelihood.
"""

from __future__ import annotations

import logging

import torch
from torch import Tensor

from .errors import EmptyObservedError, NumericalError
from .lowrank_gauss import FactorGaussian, log_density, restrict
from .masking import SplitIndex
from .mfa import MfaModel

logger = logging.getLogger(__name__)

IMPUTE_TOP_COMPONENT = "top-component"
IMPUTE_MIXTURE_MEAN = "mixture-mean"


def conditional_gaussian(
    g: FactorGaussian, x_o, index: SplitIndex
) -> FactorGaussian:
    """Distribution of the missing coordinates given observed values.

    Returns a FactorGaussian over the missing coordinates with factors
    A_m L^{-T} (L the Cholesky factor of M = I + A_o^T D_o^{-1} A_o) and
    noise d_m, which reproduces the Schur complement exactly.
    """
    if index.observed.size == 0:
        raise EmptyObservedError("no observed coordinates; use restrict() instead")
    x_o = torch.as_tensor(x_o, dtype=g.dtype)

    obs = torch.as_tensor(index.observed)
    mis = torch.as_tensor(index.missing)
    a_o = g.factors.index_select(-2, obs)
    a_m = g.factors.index_select(-2, mis)
    d_o = g.noise.index_select(-1, obs)
    mu_o = g.mean.index_select(-1, obs)
    mu_m = g.mean.index_select(-1, mis)
    d_m = g.noise.index_select(-1, mis)

    if g.rank == 0:
        return FactorGaussian(mean=mu_m.clone(), factors=a_m.clone(), noise=d_m.clone())

    w = (x_o - mu_o) / d_o
    t = torch.einsum("...n,...nl->...l", w, a_o)
    m = torch.eye(g.rank, dtype=g.dtype) + torch.einsum(
        "...nl,...nk->...lk", a_o / d_o.unsqueeze(-1), a_o
    )
    try:
        chol = torch.linalg.cholesky(m)
    except torch.linalg.LinAlgError as exc:
        raise NumericalError(f"conditioning Cholesky failed: {exc}") from exc

    gain = torch.cholesky_solve(t.unsqueeze(-1), chol).squeeze(-1)
    mean = mu_m + torch.einsum("...ml,...l->...m", a_m, gain)
    # C C^T = M^{-1} with C = L^{-T}
    eye = torch.eye(g.rank, dtype=g.dtype)
    c = torch.linalg.solve_triangular(chol, eye, upper=False).transpose(-2, -1)
    return FactorGaussian(mean=mean, factors=a_m @ c, noise=d_m.clone())


def conditional_mixture(mix: MfaModel, x_o, index: SplitIndex) -> MfaModel:
    """Condition every component and reweight by observed likelihood.

    New log-weights are log p_i + log N(mu_{i,o}, S_{i,oo})(x_o), normalized
    with log-sum-exp.  In high dimension the result usually concentrates on
    one component; the max weight is logged for diagnostics.
    """
    if index.observed.size == 0:
        raise EmptyObservedError("no observed coordinates; use restrict() instead")
    raw = []
    comps = []
    for lw, comp in zip(mix.log_weights, mix.components):
        marginal = restrict(comp, index.observed)
        raw.append(lw + log_density(marginal, torch.as_tensor(x_o, dtype=comp.dtype)))
        comps.append(conditional_gaussian(comp, x_o, index))
    # normalize in f64: with many components and large observed
    # log-likelihoods, f32 residue can exceed the model's weight invariant
    raw_t = torch.stack(raw).to(torch.float64)
    log_w = raw_t - torch.logsumexp(raw_t, dim=0)
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug("conditional mixture max weight %.4f", float(log_w.max().exp()))
    return MfaModel(log_weights=log_w, components=comps)


def mixture_imputation(mix_cond: MfaModel, mode: str = IMPUTE_TOP_COMPONENT) -> Tensor:
    """Point estimate for the missing coordinates from a conditional mixture.

    top-component: mean of the highest-weight component (ties resolved to
    the lowest index).  mixture-mean: weight-averaged mean.
    """
    if mode == IMPUTE_TOP_COMPONENT:
        lw = mix_cond.log_weights
        best = int(torch.nonzero(lw == lw.max())[0])
        return mix_cond.components[best].mean.clone()
    if mode == IMPUTE_MIXTURE_MEAN:
        weights = torch.softmax(mix_cond.log_weights, dim=0)
        means = torch.stack([c.mean for c in mix_cond.components])
        return torch.einsum("k,k...->...", weights.to(means.dtype), means)
    raise ValueError(f"unknown imputation mode {mode!r}")
