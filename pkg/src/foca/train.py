"""Training loop, early stopping and k-fold cross-validation."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import Dataset, make_folds, validation_split
from .metrics import EvalReport
from .model import ModelConfig, build_model
from .poincare import DTYPE

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    lr: float = 1e-5
    batch_size: int = 32
    epochs: int = 50
    dropout: float = 0.3
    patience: int = 5
    seed: int = 0
    k_folds: int = 5
    val_fraction: float = 0.1
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, epochs and patience must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d


def _tensors(data: Dataset, idx) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    return (
        torch.as_tensor(data.audio[idx], dtype=DTYPE),
        torch.as_tensor(data.visual[idx], dtype=DTYPE),
        torch.as_tensor(data.labels[idx]),
    )


def cross_entropy(logits: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean categorical cross-entropy from logits (log-sum-exp form)."""
    return F.cross_entropy(logits, y)


def loss_and_grads(model: nn.Module, x_audio, x_visual, y) -> tuple[float, dict[str, torch.Tensor]]:
    """Batch loss and the gradient of every trainable parameter, by name."""
    model.zero_grad(set_to_none=True)
    logits, _ = model(x_audio, x_visual)
    loss = cross_entropy(logits, torch.as_tensor(y))
    loss.backward()
    grads = {
        name: (p.grad.clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
        if p.requires_grad
    }
    return float(loss.detach()), grads


@torch.no_grad()
def evaluate(model: nn.Module, data: Dataset, idx, batch_size: int = 256) -> tuple[float, np.ndarray]:
    """Mean loss and predicted class per sample, in eval mode."""
    model.eval()
    total, preds = 0.0, []
    for start in range(0, len(idx), batch_size):
        xa, xv, y = _tensors(data, idx[start : start + batch_size])
        logits, _ = model(xa, xv)
        total += float(F.cross_entropy(logits, y, reduction="sum"))
        preds.append(logits.argmax(dim=-1).numpy())
    return total / len(idx), np.concatenate(preds)


@dataclass
class FitResult:
    best_epoch: int
    best_val_loss: float
    history: list[tuple[float, float]]  # (train loss, val loss) per epoch


def fit(model: nn.Module, data: Dataset, train_idx, val_idx, cfg: TrainConfig, seed: int) -> FitResult:
    """Adam on mini-batches with early stopping on validation loss.

    On return ``model`` holds the parameters of the best validation epoch.
    """
    train_idx = np.asarray(train_idx)
    val_idx = np.asarray(val_idx)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=cfg.adam_betas, eps=cfg.adam_eps)
    best_loss, _ = evaluate(model, data, val_idx)
    best_state = copy.deepcopy(model.state_dict())
    best_epoch, stale = 0, 0
    history = []
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = np.random.default_rng([seed, epoch]).permutation(train_idx)
        running = 0.0
        for start in range(0, len(order), cfg.batch_size):
            xa, xv, y = _tensors(data, order[start : start + cfg.batch_size])
            opt.zero_grad(set_to_none=True)
            logits, _ = model(xa, xv)
            loss = cross_entropy(logits, y)
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            loss.backward()
            opt.step()
            running += float(loss.detach()) * len(y)
        val_loss, _ = evaluate(model, data, val_idx)
        history.append((running / len(order), val_loss))
        log.debug("epoch %d train %.4f val %.4f", epoch, history[-1][0], val_loss)
        if val_loss < best_loss:
            best_loss, best_epoch, stale = val_loss, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    return FitResult(best_epoch, best_loss, history)


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def model_config(data: Dataset, mode: str, cfg: TrainConfig, **overrides) -> ModelConfig:
    return ModelConfig(
        mode=mode,
        d_audio=data.audio.shape[1],
        d_visual=data.visual.shape[1],
        n_classes=data.n_classes,
        dropout=cfg.dropout,
        **overrides,
    )


def train_one(data: Dataset, train_idx, mcfg: ModelConfig, cfg: TrainConfig, seed: int) -> tuple[nn.Module, FitResult]:
    """Build and fit one model, holding out a seeded validation slice of ``train_idx``."""
    missing = set(range(data.n_classes)) - set(data.labels[train_idx].tolist())
    if missing:
        names = ", ".join(data.classes[i] for i in sorted(missing))
        raise ValueError(f"training split has no samples of: {names}")
    fit_idx, val_idx = validation_split(train_idx, cfg.val_fraction, seed)
    model = build_model(mcfg, seed)
    return model, fit(model, data, fit_idx, val_idx, cfg, seed)


def cross_validate(data: Dataset, mode: str, cfg: TrainConfig, **model_overrides):
    """k-fold cross-validation. Returns ``(models, fit_results, report)``."""
    mcfg = model_config(data, mode, cfg, **model_overrides)
    folds = make_folds(data.labels, cfg.k_folds, cfg.seed, data.classes)
    report = EvalReport(mode, list(data.classes))
    models, fits = [], []
    for i, test_idx in enumerate(folds):
        train_idx = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        model, fr = train_one(data, train_idx, mcfg, cfg, fold_seed(cfg.seed, i))
        _, pred = evaluate(model, data, test_idx)
        res = report.add_fold(i, data.labels[test_idx], pred, fr.best_epoch)
        log.info("%s fold %d: accuracy %.4f macro-F1 %.4f (best epoch %d)", mode, i, res.accuracy, res.macro_f1, fr.best_epoch)
        models.append(model)
        fits.append(fr)
    return models, fits, report
