"""Gradient-weighted class activation maps and their colorized overlays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fundusnet.data.netpbm import Image
from fundusnet.data.transforms import quantize, resize_array
from fundusnet.models import Model
from fundusnet.neuralnet.ops import ShapeError

OVERLAY_IMAGE_WEIGHT = 0.6
OVERLAY_HEAT_WEIGHT = 0.4


@dataclass(frozen=True, eq=False)
class Heatmap:
    values: np.ndarray  # (h, w) in [0, 1]
    layer: str | None = None
    target_class: int | None = None
    logits: np.ndarray | None = None

    def to_gray(self) -> np.ndarray:
        return quantize(self.values * 255.0)


def _as_single(t: np.ndarray, what: str) -> np.ndarray:
    if t.ndim == 4:
        if t.shape[0] != 1:
            raise ShapeError(f"{what} must hold a single example, got shape {t.shape}")
        return t[0]
    if t.ndim != 3:
        raise ShapeError(f"{what} must be (1, K, h, w) or (K, h, w), got shape {t.shape}")
    return t


def gradcam_weights(activation: np.ndarray, grad_activation: np.ndarray) -> np.ndarray:
    """Per-channel importance: the spatial mean of the gradient."""
    if activation.shape != grad_activation.shape:
        raise ShapeError(
            f"activation shape {activation.shape} does not match gradient shape "
            f"{grad_activation.shape}"
        )
    return _as_single(grad_activation, "gradient").mean(axis=(1, 2))


def _normalize(raw: np.ndarray) -> np.ndarray:
    peak = raw.max()
    return raw / peak if peak > 0 else np.zeros_like(raw)


def gradcam_raw(activation: np.ndarray, weights: np.ndarray) -> np.ndarray:
    a = _as_single(activation, "activation")
    if weights.shape != (a.shape[0],):
        raise ShapeError(f"{weights.shape[0]} weights for {a.shape[0]} activation channels")
    return np.maximum(np.tensordot(weights, a, axes=1), 0.0)


def gradcam_map(activation: np.ndarray, weights: np.ndarray, layer=None, target_class=None) -> Heatmap:
    """Rectified weighted sum of activation channels, scaled so the peak is 1."""
    return Heatmap(_normalize(gradcam_raw(activation, weights)), layer, target_class)


def gradcam_for_image(model: Model, image: np.ndarray, class_index: int | None = None,
                      layer: str | None = None) -> Heatmap:
    """Grad-CAM for one (3, H, W) tensor, upsampled to the input resolution.

    The explained score is the pre-softmax logit of ``class_index``, or of
    the predicted class when it is None.
    """
    layer = layer or model.config.tap
    if layer is None:
        raise ValueError(f"model {model.config.name} has no tap layer")
    if layer not in model.config.feature_map_layers():
        raise KeyError(
            f"unknown tap layer {layer!r}; available: {model.config.feature_map_layers()}"
        )
    batch = image[None] if image.ndim == 3 else image
    logits, tape, activation = model.forward(batch, capture=layer, record=True)
    n_classes = logits.shape[1]
    if class_index is None:
        class_index = int(logits[0].argmax())
    if not 0 <= class_index < n_classes:
        raise ValueError(f"class index {class_index} out of range for {n_classes} classes")
    seed = np.zeros_like(logits)
    seed[0, class_index] = 1.0
    grad, _ = model.backward(tape, seed, stop_at=layer)
    coarse = gradcam_map(activation, gradcam_weights(activation, grad)).values
    h, w = batch.shape[2:]
    values = _normalize(np.maximum(resize_array(coarse, h, w), 0.0))
    return Heatmap(values, layer, class_index, logits[0])


def colormap_jet(t):
    """Piecewise-linear jet colormap; accepts a scalar or an array, returns (..., 3)."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    r = np.minimum(4 * t - 1.5, -4 * t + 4.5)
    g = np.minimum(4 * t - 0.5, -4 * t + 3.5)
    b = np.minimum(4 * t + 0.5, -4 * t + 2.5)
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)


def superimpose(image: Image, heatmap: Heatmap) -> Image:
    """Blend ``0.6 * image + 0.4 * jet(heat)`` in [0, 1] space and quantize."""
    if heatmap.values.shape != (image.height, image.width):
        raise ShapeError(
            f"heatmap shape {heatmap.values.shape} does not match image "
            f"{image.height}x{image.width}"
        )
    blend = (OVERLAY_IMAGE_WEIGHT * (image.pixels / 255.0)
             + OVERLAY_HEAT_WEIGHT * colormap_jet(heatmap.values))
    return Image(quantize(np.clip(blend, 0.0, 1.0) * 255.0))
