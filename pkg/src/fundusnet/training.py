"""Adam, the mini-batch training loop, and test-set evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fundusnet.data.manifest import Manifest, Record
from fundusnet.data.netpbm import FormatError, Image, read_ppm
from fundusnet.data.transforms import AugmentPolicy, augment, resize_bilinear, to_tensor
from fundusnet.metrics import ConfusionMatrix
from fundusnet.models import Model
from fundusnet.neuralnet.ops import softmax_cross_entropy
from fundusnet.rng import Rng, derive_seed

log = logging.getLogger(__name__)


class DataError(RuntimeError):
    """An image listed in a manifest could not be loaded."""


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched.

    Parameters without a gradient entry are passed through unchanged.
    """
    if state.lr <= 0:
        raise ValueError(f"learning rate must be > 0, got {state.lr}")
    t = state.step + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_params, m, v = dict(params), dict(state.m), dict(state.v)
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m_prev = state.m.get(name, np.zeros_like(p))
        v_prev = state.v.get(name, np.zeros_like(p))
        m[name] = state.beta1 * m_prev + (1 - state.beta1) * g
        v[name] = state.beta2 * v_prev + (1 - state.beta2) * (g * g)
        new_params[name] = p - state.lr * (m[name] / bc1) / (np.sqrt(v[name] / bc2) + state.eps)
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps, t, m, v)
    return new_params, new_state


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    lr: float = 1e-3
    augment: AugmentPolicy | None = field(default_factory=AugmentPolicy)
    train_ratio: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")


def load_image(root, record: Record, size: tuple[int, int] | None = None) -> Image:
    """Read one manifest entry; ``size`` is (width, height) to resize to when it differs."""
    path = Path(root) / record.path
    try:
        image = read_ppm(path.read_bytes())
    except (OSError, FormatError) as exc:
        raise DataError(f"cannot load {path}: {exc}") from exc
    if size is not None and (image.width, image.height) != size:
        image = resize_bilinear(image, *size)
    return image


def _input_size(model: Model) -> tuple[int, int]:
    _, h, w = model.config.input_shape
    return w, h


def train_step(model: Model, batch: np.ndarray, labels: np.ndarray, state: AdamState):
    """Forward, loss, full backward and one Adam update. Returns ``(loss, predictions, state)``."""
    logits, tape, _ = model.forward(batch, train=True)
    loss, grad = softmax_cross_entropy(logits, labels)
    if not math.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")
    _, grads = model.backward(tape, grad)
    trainable = {k: model.params[k] for k in grads}
    updated, state = adam_step(trainable, grads, state)
    model.params.update(updated)
    return loss, logits.argmax(axis=1), state


def train(model: Model, manifest: Manifest, cfg: TrainConfig, root=".",
          state: AdamState | None = None):
    """Train in place. Returns ``(model, epoch_log)``.

    Each epoch reshuffles with one shared stream seeded by ``cfg.seed``;
    image ``i`` in epoch ``e`` is augmented with its own stream derived
    from ``(seed, e, i)`` so results do not depend on batch composition.
    """
    if len(manifest) == 0:
        raise ValueError("training manifest is empty")
    size = _input_size(model)
    images = [load_image(root, r, size) for r in manifest.records]
    labels = np.array([r.class_index for r in manifest.records])
    if state is None:
        state = AdamState(lr=cfg.lr)
    order_rng = Rng(cfg.seed)
    history = []
    model.training = True
    for epoch in range(1, cfg.epochs + 1):
        order = order_rng.shuffle(list(range(len(images))))
        epoch_seed = derive_seed(cfg.seed, epoch)
        loss_sum, correct = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            tensors = []
            for i in idx:
                img = images[i]
                if cfg.augment is not None:
                    img = augment(img, Rng(derive_seed(epoch_seed, i)), cfg.augment)
                tensors.append(to_tensor(img))
            loss, pred, state = train_step(model, np.stack(tensors), labels[idx], state)
            loss_sum += loss * len(idx)
            correct += int((pred == labels[idx]).sum())
        entry = {"epoch": epoch, "loss": loss_sum / len(order), "accuracy": correct / len(order)}
        log.info("epoch %d loss %.4f acc %.3f", epoch, entry["loss"], entry["accuracy"])
        history.append(entry)
    model.training = False
    return model, history


def predict_manifest(model: Model, manifest: Manifest, root=".", batch_size: int = 16):
    size = _input_size(model)
    preds = []
    records = manifest.records
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        batch = np.stack([to_tensor(load_image(root, r, size)) for r in chunk])
        preds.extend(int(p) for p in model.predict(batch))
    return preds


def evaluate(model: Model, manifest: Manifest, root=".", batch_size: int = 16) -> ConfusionMatrix:
    """Confusion matrix over un-augmented images; argmax ties go to class 0."""
    preds = predict_manifest(model, manifest, root, batch_size)
    return ConfusionMatrix.from_predictions([r.class_index for r in manifest.records], preds)
