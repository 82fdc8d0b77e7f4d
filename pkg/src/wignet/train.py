"""Momentum SGD training on the synthetic dataset."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import functional as F
from .data import SyntheticDataset
from .io import save_checkpoint
from .model import ModelConfig, WiGNetModel
from .tensor import Tensor, no_grad

METRICS_HEADER = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    metrics: list[dict] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    best_val_acc: float = 0.0
    best_epoch: int = 0
    checkpoint: Path | None = None


class SGD:
    """Heavy-ball momentum; ``v <- mu v + g``, ``p <- p - lr v``."""

    def __init__(self, params, lr: float = 0.01, momentum: float = 0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def cosine_lr(base: float, step: int, total: int) -> float:
    return 0.5 * base * (1.0 + math.cos(math.pi * step / max(total, 1)))


def evaluate(model: WiGNetModel, images: np.ndarray, labels: np.ndarray, batch_size: int = 100) -> tuple[float, float]:
    model.eval()
    total_loss, correct = 0.0, 0
    with no_grad():
        for i in range(0, len(labels), batch_size):
            xb, yb = images[i:i + batch_size], labels[i:i + batch_size]
            logits = model(Tensor(xb))
            total_loss += F.softmax_cross_entropy(logits, yb).item() * len(yb)
            correct += int((logits.data.argmax(axis=1) == yb).sum())
    return total_loss / len(labels), correct / len(labels)


def predict(model: WiGNetModel, images: np.ndarray, top: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Top-``top`` class ids and softmax scores per image (eval mode)."""
    model.eval()
    with no_grad():
        probs = F.softmax(model(Tensor(images)).data.astype(np.float64))
    top = min(top, probs.shape[1])
    ids = np.argsort(-probs, axis=1, kind="stable")[:, :top]
    return ids, np.take_along_axis(probs, ids, axis=1)


def train(
    model: WiGNetModel,
    data: SyntheticDataset,
    epochs: int = 20,
    batch_size: int = 32,
    lr: float = 0.01,
    momentum: float = 0.9,
    seed: int = 7,
    out_dir=None,
    log=print,
    halt_after: int | None = None,
) -> TrainResult:
    """Train ``model`` in place; writes ``metrics.csv`` and ``checkpoint/`` under ``out_dir``.

    ``halt_after`` stops after that many epochs without changing the
    learning-rate schedule, so the run is a bit-exact prefix of the full one.
    """
    rng = np.random.default_rng(seed)
    xtr, ytr = data.split("train")
    xva, yva = data.split("val")
    opt = SGD(model.parameters(), lr, momentum)
    steps_per_epoch = math.ceil(len(ytr) / batch_size)
    total = epochs * steps_per_epoch
    result = TrainResult()
    out_dir = Path(out_dir) if out_dir is not None else None
    writer = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / "metrics.csv", "w", newline="\n", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
    step = 0
    try:
        for epoch in range(1, epochs + 1):
            if halt_after is not None and epoch > halt_after:
                break
            model.train()
            order = rng.permutation(len(ytr))
            loss_sum, correct = 0.0, 0
            for i in range(0, len(order), batch_size):
                idx = order[i:i + batch_size]
                opt.lr = cosine_lr(lr, step, total)
                opt.zero_grad()
                logits = model(Tensor(xtr[idx]))
                loss = F.softmax_cross_entropy(logits, ytr[idx])
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}, step {step}")
                loss.backward()
                opt.step()
                step += 1
                result.step_losses.append(value)
                loss_sum += value * len(idx)
                correct += int((logits.data.argmax(axis=1) == ytr[idx]).sum())
            val_loss, val_acc = evaluate(model, xva, yva)
            row = {
                "epoch": epoch,
                "train_loss": loss_sum / len(ytr),
                "train_acc": correct / len(ytr),
                "val_loss": val_loss,
                "val_acc": val_acc,
            }
            result.metrics.append(row)
            log(
                f"epoch {epoch:3d}  train_loss {row['train_loss']:.4f}  train_acc {row['train_acc']:.4f}"
                f"  val_loss {val_loss:.4f}  val_acc {val_acc:.4f}"
            )
            if writer is not None:
                writer.writerow([epoch] + [repr(float(row[k])) for k in METRICS_HEADER[1:]])
                fh.flush()
            if epoch == 1 or val_acc > result.best_val_acc:
                result.best_val_acc, result.best_epoch = val_acc, epoch
                if out_dir is not None:
                    result.checkpoint = save_checkpoint(
                        out_dir / "checkpoint", model.state(), model.config.to_dict()
                    )
    finally:
        if writer is not None:
            fh.close()
    model.eval()
    return result


def load_model(checkpoint_dir) -> WiGNetModel:
    from .io import load_checkpoint

    state, cfg = load_checkpoint(checkpoint_dir)
    model = WiGNetModel(ModelConfig.from_dict(cfg))
    model.load_state(state)
    return model.eval()
