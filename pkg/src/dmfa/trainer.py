"""Training loop and checkpointing for the conditional network.

Every epoch draws fresh masks for every sample; mask and shuffle streams
are keyed by (seed, epoch, sample index), so a resumed run sees exactly the
same data as an uninterrupted one.  Optimizer moments are serialized with
the parameters, which makes checkpoint/resume reproduce the original run.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, DivergedError, FormatError, InvalidValueError
from .masking import PURPOSE_SHUFFLE, derive_rng, training_mask
from .network import (
    LOSS_NLL,
    LOSS_NLL_PLUS_MSE,
    DmfaNetwork,
    mse_missing_batch,
    restricted_nll_batch,
)
from .tensorio import Dataset, load_container, save_container

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
CHECKPOINT_EVERY = 10


@dataclass
class TrainConfig:
    """Hyperparameters shared by both trainers.

    Defaults follow the reference experimental setup: learning rate 4e-5,
    50 epochs, latent dimension 4, half-image patches.  ``warmup_epochs``
    adds an MSE term to the loss for the first epochs (used with the
    fully-convolutional architecture); ``components`` only matters for the
    mixture baseline.
    """

    lr: float = 4e-5
    epochs: int = 50
    batch: int = 64
    seed: int = 0
    warmup_epochs: int = 0
    patch: tuple[int, int] = (14, 14)
    arch: str = "conv-dense"
    latent: int = 4
    components: int = 50

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.epochs < 1 or self.batch < 1:
            raise ConfigError("epochs and batch must be >= 1")
        if not (0 <= self.warmup_epochs <= self.epochs):
            raise ConfigError("warmup_epochs must lie in [0, epochs]")
        if self.latent < 0 or self.components < 1:
            raise ConfigError("latent must be >= 0 and components >= 1")
        if min(self.patch) < 1:
            raise ConfigError("patch dimensions must be positive")


def make_adam(params, lr: float) -> torch.optim.Adam:
    """The one optimizer used everywhere (beta 0.9/0.999, eps 1e-8)."""
    return torch.optim.Adam(params, lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS)


def _assemble_batch(
    data: Dataset, indices: np.ndarray, epoch: int, config: TrainConfig
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """values (B,c,h,w) zeroed at missing, mask planes, missing idx, truth."""
    c, h, w = data.shape
    b = len(indices)
    values = np.empty((b, c, h, w), dtype=np.float32)
    planes = np.empty((b, 1, h, w), dtype=np.float32)
    m_count = c * config.patch[0] * config.patch[1]
    missing = np.empty((b, m_count), dtype=np.int64)
    for row, idx in enumerate(indices):
        mask = training_mask(data.shape, config.patch, config.seed, epoch, int(idx))
        x = data.samples[idx]
        values[row] = np.where(mask.bits == 1, np.float32(0.0), x).reshape(c, h, w)
        planes[row, 0] = mask.bits.reshape(c, h, w).max(axis=0)
        missing[row] = mask.missing_indices
    truth = torch.from_numpy(data.samples[indices])
    return (
        torch.from_numpy(values),
        torch.from_numpy(planes),
        torch.from_numpy(missing),
        truth,
    )


def train_dmfa(
    data: Dataset,
    config: TrainConfig,
    out_dir=None,
    resume_from=None,
) -> tuple[DmfaNetwork, list[dict]]:
    """Train the conditional network; returns (network, per-epoch log).

    Log entries: {"epoch", "loss_mode", "mean_loss", "mean_nll", "seconds"}.
    With ``out_dir`` set, the log is appended to train-log.jsonl and
    checkpoints are written every 10 epochs plus at the end.  On a
    non-finite loss the last completed epoch's checkpoint is kept and
    DivergedError is raised.
    """
    if data.count == 0:
        raise ConfigError("cannot train on an empty dataset")
    c, h, w = data.shape
    if config.patch[0] > h or config.patch[1] > w:
        raise ConfigError(f"patch {config.patch} does not fit image {h}x{w}")

    start_epoch = 0
    opt_state = None
    if resume_from is not None:
        net, aux = resume(resume_from)
        if aux.get("epoch") is None:
            raise FormatError(f"{resume_from}: checkpoint lacks an epoch marker")
        start_epoch = int(aux["epoch"]) + 1
        opt_state = aux
    else:
        torch.manual_seed(config.seed)
        net = DmfaNetwork(data.shape, arch=config.arch, latent=config.latent)

    opt = make_adam(net.parameters(), config.lr)
    if opt_state is not None:
        _apply_adam_state(opt, net, opt_state)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    log: list[dict] = []
    for epoch in range(start_epoch, config.epochs):
        t0 = time.monotonic()
        mode = LOSS_NLL_PLUS_MSE if epoch < config.warmup_epochs else LOSS_NLL
        order = derive_rng(config.seed, PURPOSE_SHUFFLE, epoch).permutation(data.count)
        loss_sum = 0.0
        nll_sum = 0.0
        for start in range(0, data.count, config.batch):
            idx = order[start : start + config.batch]
            values, planes, missing, truth = _assemble_batch(data, idx, epoch, config)
            mu, factors, noise = net.raw_forward(values, planes)
            nll = restricted_nll_batch(mu, factors, noise, truth, missing)
            per_sample = nll
            if mode == LOSS_NLL_PLUS_MSE:
                per_sample = nll + mse_missing_batch(mu, truth, missing)
            loss = per_sample.mean()
            if not torch.isfinite(loss):
                if out is not None:
                    try:  # parameters precede the bad step and may be saved
                        checkpoint(net, out / "checkpoint-diverged.dmfa",
                                   optimizer=opt, epoch=epoch - 1, config=config)
                    except InvalidValueError:
                        pass  # already poisoned; periodic checkpoint stands
                raise DivergedError(f"non-finite loss at epoch {epoch}", epoch=epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += float(per_sample.detach().sum())
            nll_sum += float(nll.detach().sum())
        entry = {
            "epoch": epoch,
            "loss_mode": mode,
            "mean_loss": loss_sum / data.count,
            "mean_nll": nll_sum / data.count,
            "seconds": time.monotonic() - t0,
        }
        log.append(entry)
        if out is not None:
            with open(out / "train-log.jsonl", "a") as f:
                f.write(json.dumps(entry) + "\n")
            last = epoch == config.epochs - 1
            if (epoch + 1) % CHECKPOINT_EVERY == 0 or last:
                checkpoint(net, out / "checkpoint.dmfa", optimizer=opt, epoch=epoch,
                           config=config)
    return net, log


def checkpoint(model, path, optimizer=None, epoch=None, config=None) -> None:
    """Persist a network or mixture, optionally with optimizer moments."""
    from .mfa import MfaModel, save_mfa  # local import avoids a cycle

    meta: dict = {}
    if epoch is not None:
        meta["epoch"] = int(epoch)
    if config is not None:
        meta["config"] = {**asdict(config), "patch": list(config.patch)}

    if isinstance(model, MfaModel):
        save_mfa(model, path, meta=meta)
        return
    if not isinstance(model, DmfaNetwork):
        raise ConfigError(f"cannot checkpoint object of type {type(model).__name__}")

    tensors = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    if optimizer is not None:
        step = 0
        for name, param in model.named_parameters():
            state = optimizer.state.get(param)
            if not state:
                continue
            tensors[f"adam/{name}/exp_avg"] = state["exp_avg"].numpy()
            tensors[f"adam/{name}/exp_avg_sq"] = state["exp_avg_sq"].numpy()
            step = int(state["step"])
        meta["adam_step"] = step
    header = {
        "kind": "dmfa-checkpoint",
        "arch": model.arch,
        "shape": list(model.shape),
        "latent": model.latent,
    }
    header.update(meta)
    save_container(path, tensors, meta=header)


def resume(path):
    """Load a checkpoint written by :func:`checkpoint`.

    Returns (model, aux) where aux carries "epoch", "config" and, for
    networks saved with their optimizer, "adam" moment arrays.
    """
    tensors, meta = load_container(path)
    kind = meta.get("kind")
    if kind == "mfa":
        from .mfa import load_mfa

        mix, meta = load_mfa(path)
        return mix, {"epoch": meta.get("epoch"), "config": meta.get("config")}
    if kind not in ("dmfa-checkpoint", "dmfa-network"):
        raise FormatError(f"{path}: unknown checkpoint kind {kind!r}")

    net = DmfaNetwork(tuple(meta["shape"]), arch=meta["arch"], latent=meta["latent"])
    state = {
        k: torch.from_numpy(v) for k, v in tensors.items() if not k.startswith("adam/")
    }
    net.load_state_dict(state)
    adam = {}
    for name, _ in net.named_parameters():
        key = f"adam/{name}/exp_avg"
        if key in tensors:
            adam[name] = {
                "exp_avg": torch.from_numpy(tensors[key]),
                "exp_avg_sq": torch.from_numpy(tensors[f"adam/{name}/exp_avg_sq"]),
            }
    aux = {
        "epoch": meta.get("epoch"),
        "config": meta.get("config"),
        "adam": adam if adam else None,
        "adam_step": meta.get("adam_step", 0),
    }
    return net, aux


def _apply_adam_state(opt: torch.optim.Adam, net: DmfaNetwork, adam_state: dict) -> None:
    """Install serialized moments so a resumed run continues the original."""
    # aux dict from resume(): {"adam": {...}, "adam_step": int} or the inner
    # mapping itself when called directly.
    moments = adam_state.get("adam", adam_state)
    step = adam_state.get("adam_step", 0)
    if moments is None:
        return
    for name, param in net.named_parameters():
        if name not in moments:
            continue
        opt.state[param] = {
            "step": torch.tensor(float(step)),
            "exp_avg": moments[name]["exp_avg"].clone(),
            "exp_avg_sq": moments[name]["exp_avg_sq"].clone(),
        }
