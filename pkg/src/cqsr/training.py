"""Losses, the random-budget training protocol and gradient verification."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, asdict, fields
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .datapipe import derive_rng, make_training_sample
from .fourier_core import alignment_loss
from .model import CQSR, ModelConfig, build_model

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("step", "T_used", "l_image", "l_align", "total", "lr")


@dataclass
class TrainConfig:
    # objective
    w_f: float = 1e-3
    abs_alignment: bool = False
    # budget
    K: int = 2
    T_max: int = 16
    fixed_T: bool = False
    # architecture
    D: int = 64
    n_resblocks: int = 4
    width: int = 256
    cell: str = "gru"
    # optimisation
    batch_size: int = 16
    n_queries: int = 256
    lr: float = 1e-4
    epochs: int = 10
    e_half: int | None = None
    repeat: int = 16
    grad_clip: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.w_f < 0:
            raise ValueError(f"w_f must be >= 0, got {self.w_f}")
        if not 1 <= self.K <= self.T_max:
            raise ValueError(f"need 1 <= K <= T_max, got K={self.K}, T_max={self.T_max}")
        for name in ("batch_size", "n_queries", "repeat"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    @property
    def half_epoch(self) -> int:
        return self.epochs // 2 if self.e_half is None else self.e_half

    def model_config(self) -> ModelConfig:
        return ModelConfig(D=self.D, n_resblocks=self.n_resblocks, width=self.width, K=self.K, T_max=self.T_max, cell=self.cell)

    def lr_at(self, epoch: int) -> float:
        return self.lr / 2 if epoch >= self.half_epoch else self.lr

    def to_dict(self):
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class LossBreakdown:
    l_image: torch.Tensor
    l_align: torch.Tensor
    total: torch.Tensor
    T_used: int
    w_f: float = 0.0
    skipped: bool = False

    def as_row(self, step: int, lr: float) -> dict:
        # the logged total is recomposed in double so the identity is exact
        l_image, l_align = float(self.l_image), float(self.l_align)
        return {
            "step": step,
            "T_used": self.T_used,
            "l_image": l_image,
            "l_align": l_align,
            "total": l_image + self.w_f * l_align,
            "lr": lr,
        }


def l1_loss(pred, target) -> torch.Tensor:
    pred, target = torch.as_tensor(pred), torch.as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.numel() == 0:
        raise ValueError("empty prediction")
    return (pred - target).abs().mean()


def total_loss(pred, target, groups, w_f: float, absolute: bool = False, T_used: int = 0) -> LossBreakdown:
    l_image = l1_loss(pred, target)
    l_align = alignment_loss(groups, absolute=absolute).to(l_image.dtype)
    return LossBreakdown(l_image, l_align, l_image + w_f * l_align, T_used, w_f)


def sample_T(rng: np.random.Generator, T_max: int) -> int:
    if T_max < 1:
        raise ValueError(f"T_max must be >= 1, got {T_max}")
    return int(rng.integers(1, T_max + 1))


def collate(batch):
    """List of ``(PatchPair, QuerySet)`` into LR, coordinate and target tensors."""
    lr = torch.from_numpy(np.stack([p.lr_patch for p, _ in batch])).permute(0, 3, 1, 2)
    coords = torch.from_numpy(np.stack([q.coords for _, q in batch]))
    rgb = torch.from_numpy(np.stack([q.rgb for _, q in batch]))
    return lr, coords, rgb


def forward_loss(model: CQSR, batch, T: int, w_f: float, absolute: bool = False) -> LossBreakdown:
    dtype = next(model.parameters()).dtype
    lr, coords, rgb = (t.to(dtype) for t in collate(batch))
    grid = model.encode(lr)
    pred, prediction = model.query(grid, coords, T)
    return total_loss(pred, rgb, prediction.groups, w_f, absolute, T)


def train_step(model: CQSR, optimizer: torch.optim.Optimizer, batch, config: TrainConfig, rng: np.random.Generator) -> LossBreakdown:
    T = config.T_max if config.fixed_T else sample_T(rng, config.T_max)
    optimizer.zero_grad(set_to_none=True)
    loss = forward_loss(model, batch, T, config.w_f, config.abs_alignment)
    if not torch.isfinite(loss.total):
        log.warning(
            "non-finite loss at T=%d (l_image=%s, l_align=%s); step skipped", T, loss.l_image.item(), loss.l_align.item()
        )
        loss.skipped = True
        return loss
    loss.total.backward()
    if config.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
    optimizer.step()
    loss.l_image, loss.l_align, loss.total = (t.detach() for t in (loss.l_image, loss.l_align, loss.total))
    return loss


def make_optimizer(model: CQSR, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=config.lr, betas=(0.9, 0.999))


def epoch_batches(config: TrainConfig, n_images: int, epoch: int) -> list[list[int]]:
    order = np.tile(np.arange(n_images), config.repeat)
    derive_rng(config.seed, 3, epoch).shuffle(order)
    return [order[i : i + config.batch_size].tolist() for i in range(0, len(order), config.batch_size)]


def make_batch(dataset, indices, config: TrainConfig, step: int):
    batch = []
    for slot, i in enumerate(indices):
        rng = derive_rng(config.seed, 2, step, slot)
        batch.append(make_training_sample(dataset[i], rng, config.n_queries))
    return batch


def write_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in history:
            writer.writerow({k: _fmt(row[k]) for k in HISTORY_FIELDS})


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    casts = {"step": int, "T_used": int}
    return [{k: casts.get(k, float)(v) for k, v in row.items()} for row in rows]


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


class _CachedDataset:
    """Decode each image once; training revisits the same few images constantly."""

    def __init__(self, dataset):
        self._ds = dataset
        self._cache = {}

    def __len__(self):
        return len(self._ds)

    def __getitem__(self, i):
        if i not in self._cache:
            self._cache[i] = self._ds[i]
        return self._cache[i]


def fit(
    config: TrainConfig,
    dataset,
    checkpoint_path=None,
    resume: bool = True,
    should_stop: Callable[[], bool] | None = None,
    progress: Callable[[dict], None] | None = None,
):
    """Epoch loop with the halved-rate schedule.

    Returns ``(model, history)``. When ``checkpoint_path`` is given, a
    checkpoint and ``<stem>.loss.csv`` are written at the end (and every
    ``checkpoint_every`` epochs, and when ``should_stop`` fires). An existing
    checkpoint for the same config is resumed.
    """
    from . import checkpoint as ckpt

    if len(dataset) == 0:
        raise ValueError("empty dataset")
    dataset = _CachedDataset(dataset)
    model = build_model(config.model_config(), seed=config.seed)
    optimizer = make_optimizer(model, config)
    history: list[dict] = []
    start_epoch, step = 0, 0

    path = Path(checkpoint_path) if checkpoint_path is not None else None
    if path is not None and resume and path.exists():
        state = ckpt.load(path)
        if state.manifest.get("train_config") == config.to_dict():
            state.restore(model, optimizer)
            start_epoch = state.manifest["epoch"]
            history = read_history(ckpt.history_path(path)) if ckpt.history_path(path).exists() else []
            step = len(history)
            log.info("resuming from %s at epoch %d", path, start_epoch)
        else:
            log.warning("checkpoint %s has a different config; starting fresh", path)

    def save(epoch):
        if path is not None:
            ckpt.save_training(path, model, optimizer, config, epoch, history)

    epoch = start_epoch
    for epoch in range(start_epoch, config.epochs):
        lr = config.lr_at(epoch)
        for g in optimizer.param_groups:
            g["lr"] = lr
        for indices in epoch_batches(config, len(dataset), epoch):
            batch = make_batch(dataset, indices, config, step)
            loss = train_step(model, optimizer, batch, config, derive_rng(config.seed, 1, step))
            row = loss.as_row(step, lr)
            history.append(row)
            if progress is not None:
                progress(row)
            step += 1
        if should_stop is not None and should_stop():
            save(epoch + 1)
            return model, history
        if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            save(epoch + 1)
    save(max(config.epochs, start_epoch))
    return model, history


# gradient verification


def grad_check(
    model: torch.nn.Module,
    loss_fn: Callable[[], torch.Tensor],
    n_samples: int = 200,
    h: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Max relative error between autograd and central differences.

    Checks ``n_samples`` randomly chosen scalar parameters. The model should
    be in float64. Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    params = [p for p in model.parameters() if p.requires_grad]
    sizes = np.array([p.numel() for p in params])
    total = int(sizes.sum())
    if total > 50_000:
        raise ValueError(f"model has {total} parameters; finite differences need <= 5e4")
    model.zero_grad(set_to_none=True)
    loss_fn().backward()
    grads = [p.grad.detach().clone().reshape(-1) for p in params]

    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_samples, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    with torch.no_grad():
        for flat in picks:
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            j = int(flat - offsets[k])
            view = params[k].view(-1)
            orig = view[j].item()
            view[j] = orig + h
            up = loss_fn().item()
            view[j] = orig - h
            down = loss_fn().item()
            view[j] = orig
            numeric = (up - down) / (2 * h)
            analytic = grads[k][j].item()
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            worst = max(worst, err)
    return worst


def model_grad_check(model: CQSR, batch, T: int, w_f: float = 1e-3, **kw) -> float:
    model = model.double()
    return grad_check(model, lambda: forward_loss(model, batch, T, w_f).total, **kw)


def parameter_gradients(model: CQSR, batch, T: int, w_f: float) -> dict[str, torch.Tensor]:
    model.zero_grad(set_to_none=True)
    forward_loss(model, batch, T, w_f).total.backward()
    return {n: p.grad.detach().clone() for n, p in model.named_parameters()}

