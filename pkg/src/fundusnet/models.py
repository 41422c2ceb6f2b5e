"""Architecture configs for the plain CNN and the ResNet + CNN hybrids.

Configs are validated on construction: the shape chain from the input to
the last layer is computed eagerly, so a config that exists is a config
that runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from fundusnet.neuralnet import layers as L
from fundusnet.neuralnet.layers import LayerSpec, TapeEntry
from fundusnet.neuralnet.ops import ShapeError
from fundusnet.rng import Rng

CONFIG_SCHEMA_VERSION = 1
NUM_CLASSES = 2

CNN6_FILTERS = (32, 64, 64, 64, 128, 128)
BLOCK_COUNTS = {50: (3, 4, 6, 3), 101: (3, 4, 23, 3), 152: (3, 8, 36, 3)}
STAGE_WIDTHS = (64, 128, 256, 512)
BOTTLENECK_EXPANSION = 4
STEM_WIDTH = 64

DEFAULT_HEAD_CONV = (256, 128)
DEFAULT_HEAD_DENSE = (64, 2)


@dataclass(frozen=True)
class ArchitectureConfig:
    name: str
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    tap: str | None = None
    num_classes: int | None = None
    shapes: tuple[tuple, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        names = [spec.name for spec in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"{self.name}: duplicate layer names")
        if any(d < 1 for d in self.input_shape) or len(self.input_shape) != 3:
            raise ShapeError(f"{self.name}: bad input shape {self.input_shape}")
        shape = self.input_shape
        trace = []
        for spec in self.layers:
            shape = L.output_shape(spec, shape)
            trace.append(shape)
        object.__setattr__(self, "shapes", tuple(trace))
        if self.num_classes is not None and shape != (self.num_classes,):
            raise ShapeError(
                f"{self.name}: network ends in shape {shape}, expected ({self.num_classes},) logits"
            )
        if self.tap is not None:
            if self.tap not in names:
                raise ValueError(f"{self.name}: tap layer {self.tap!r} not in config")
            if len(self.shape_of(self.tap)) != 3:
                raise ShapeError(f"{self.name}: tap layer {self.tap!r} is not a feature map")

    def index_of(self, name: str) -> int:
        for i, spec in enumerate(self.layers):
            if spec.name == name:
                return i
        raise KeyError(name)

    def shape_of(self, name: str) -> tuple:
        return self.shapes[self.index_of(name)]

    def feature_map_layers(self) -> list[str]:
        """Names of layers whose output is a 4-D map (valid Grad-CAM taps)."""
        return [s.name for s, shape in zip(self.layers, self.shapes) if len(shape) == 3]

    def to_json(self) -> dict:
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "name": self.name,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "tap": self.tap,
            "layers": [spec.to_json() for spec in self.layers],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ArchitectureConfig":
        version = obj.get("schema_version")
        if version != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported architecture schema version {version!r}")
        return cls(
            name=obj["name"],
            input_shape=tuple(obj["input_shape"]),
            layers=tuple(LayerSpec.from_json(x) for x in obj["layers"]),
            tap=obj.get("tap"),
            num_classes=obj.get("num_classes"),
        )


def build_cnn6(input_size: int = 299, filters=CNN6_FILTERS, name: str = "cnn6") -> ArchitectureConfig:
    """Six conv + ReLU + 2x2 max-pool stages, global average pool, dense to two logits."""
    if input_size < 2 ** len(filters):
        raise ShapeError(
            f"input size {input_size} too small for {len(filters)} 2x2 pooling stages "
            f"(need >= {2 ** len(filters)})"
        )
    specs = []
    channels = 3
    for i, f in enumerate(filters, start=1):
        specs += [
            L.conv(f"conv{i}", channels, f, 3),
            L.relu(f"conv{i}_relu"),
            L.maxpool(f"pool{i}", 2),
        ]
        channels = f
    specs += [L.gap("gap"), L.dense("logits", channels, NUM_CLASSES)]
    return ArchitectureConfig(name, (3, input_size, input_size), tuple(specs),
                              tap=f"conv{len(filters)}_relu", num_classes=NUM_CLASSES)


def _scale(width: int, multiplier: Fraction) -> int:
    scaled = width * multiplier
    if scaled.denominator != 1 or scaled < 1:
        raise ValueError(f"width {width} x {multiplier} is not a positive integer")
    return int(scaled)


def build_resnet_backbone(depth: int = 50, version: str = "v1", width_multiplier=1,
                          input_size: int = 299) -> ArchitectureConfig:
    """Bottleneck ResNet feature extractor ending in its last 4-D feature map.

    ``v1`` uses post-activation blocks, ``v2`` pre-activation blocks followed
    by a final batchnorm + ReLU. Downsampling happens in the 3x3 conv of the
    first block of stages 2-4.
    """
    if depth not in BLOCK_COUNTS:
        raise ValueError(f"depth must be one of {sorted(BLOCK_COUNTS)}, got {depth}")
    if version not in ("v1", "v2"):
        raise ValueError(f"version must be 'v1' or 'v2', got {version!r}")
    mult = Fraction(width_multiplier).limit_denominator(1 << 20)
    if not 0 < mult <= 1:
        raise ValueError(f"width multiplier must lie in (0, 1], got {width_multiplier}")
    stem = _scale(STEM_WIDTH, mult)
    widths = [_scale(w, mult) for w in STAGE_WIDTHS]

    if version == "v1":
        specs = [L.conv("stem_conv", 3, stem, 7, 2, bias=False),
                 L.batchnorm("stem_bn", stem), L.relu("stem_relu")]
    else:
        specs = [L.conv("stem_conv", 3, stem, 7, 2, bias=True)]
    specs.append(L.maxpool("stem_pool", 3, 2))

    channels = stem
    for stage, (mid, blocks) in enumerate(zip(widths, BLOCK_COUNTS[depth]), start=1):
        out = mid * BOTTLENECK_EXPANSION
        for b in range(1, blocks + 1):
            stride = 2 if (b == 1 and stage > 1) else 1
            specs.append(L.residual_block(f"stage{stage}_block{b}", channels, mid, out,
                                          stride, version))
            channels = out
    if version == "v2":
        specs += [L.batchnorm("post_bn", channels), L.relu("post_relu")]
    suffix = "" if version == "v1" else "v2"
    name = f"resnet{depth}{suffix}"
    if mult != 1:
        name += f"-x{mult}"
    return ArchitectureConfig(name, (3, input_size, input_size), tuple(specs),
                              tap=specs[-1].name)


def attach_hybrid_head(backbone: ArchitectureConfig, conv_filters=DEFAULT_HEAD_CONV,
                       dense_widths=DEFAULT_HEAD_DENSE) -> ArchitectureConfig:
    """Append conv/ReLU/pool twice, global average pool, dense + ReLU and a logits layer."""
    shape = backbone.shapes[-1]
    if len(shape) != 3:
        raise ShapeError(f"backbone {backbone.name} does not end in a feature map: {shape}")
    if min(shape[1:]) < 4:
        raise ShapeError(
            f"backbone {backbone.name} output {shape} too small for two 2x2 pools (need >= 4)"
        )
    if len(conv_filters) != 2 or min(conv_filters) < 1:
        raise ValueError(f"head conv filters must be two positive ints, got {conv_filters}")
    if len(dense_widths) != 2 or min(dense_widths) < 1:
        raise ValueError(f"head dense widths must be two positive ints, got {dense_widths}")
    c = shape[0]
    f1, f2 = conv_filters
    d1, n_out = dense_widths
    head = [
        L.conv("head_conv1", c, f1, 3), L.relu("head_conv1_relu"), L.maxpool("head_pool1", 2),
        L.conv("head_conv2", f1, f2, 3), L.relu("head_conv2_relu"), L.maxpool("head_pool2", 2),
        L.gap("head_gap"),
        L.dense("head_dense1", f2, d1), L.relu("head_dense1_relu"),
        L.dense("logits", d1, n_out),
    ]
    return ArchitectureConfig(f"{backbone.name}+cnn", backbone.input_shape,
                              backbone.layers + tuple(head), tap="head_conv2_relu",
                              num_classes=n_out)


def build_hybrid(depth=50, version="v1", width_multiplier=1, input_size=299,
                 conv_filters=DEFAULT_HEAD_CONV, dense_widths=DEFAULT_HEAD_DENSE):
    backbone = build_resnet_backbone(depth, version, width_multiplier, input_size)
    return attach_hybrid_head(backbone, conv_filters, dense_widths)


def _presets():
    out = {
        "cnn6": lambda: build_cnn6(299),
        "cnn6-tiny": lambda: build_cnn6(64, (8, 16, 16, 16, 32, 32), name="cnn6-tiny"),
        "resnet50-w8": lambda: _rename(
            build_hybrid(50, "v1", Fraction(1, 8), 128, (32, 16), (8, 2)), "resnet50-w8"),
    }
    for depth in BLOCK_COUNTS:
        for version in ("v1", "v2"):
            suffix = "" if version == "v1" else "v2"
            out[f"resnet{depth}{suffix}+cnn"] = (
                lambda d=depth, v=version: build_hybrid(d, v))
    return out


def _rename(config: ArchitectureConfig, name: str) -> ArchitectureConfig:
    return ArchitectureConfig(name, config.input_shape, config.layers, config.tap,
                              config.num_classes)


PRESETS = _presets()


def preset(name: str) -> ArchitectureConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def count_parameters(config: ArchitectureConfig) -> int:
    """Trainable element count; batchnorm running statistics are excluded."""
    total = 0
    for spec in config.layers:
        for name, shape in L.param_shapes(spec).items():
            if not L.is_buffer(name):
                total += math.prod(shape)
    return total


class Model:
    """A config plus its parameter store.

    Parameters are keyed ``"<layer>.<param>"``; running statistics live in the
    same store but are never handed to the optimizer.
    """

    def __init__(self, config: ArchitectureConfig, params: dict | None = None, seed: int = 0):
        self.config = config
        self.training = False
        if params is None:
            rng = Rng(seed)
            params = {}
            for spec in config.layers:
                for pname, value in L.he_init(spec, rng).items():
                    params[f"{spec.name}.{pname}"] = value
        self.params = self._checked(params)

    def _checked(self, params: dict) -> dict:
        ordered = {}
        for spec in self.config.layers:
            for pname, shape in L.param_shapes(spec).items():
                key = f"{spec.name}.{pname}"
                if key not in params:
                    raise KeyError(f"missing parameter {key!r}")
                value = np.asarray(params[key], dtype=np.float64)
                if value.shape != tuple(shape):
                    raise ShapeError(f"parameter {key!r} has shape {value.shape}, expected {shape}")
                ordered[key] = value
        extra = set(params) - set(ordered)
        if extra:
            raise KeyError(f"unexpected parameters {sorted(extra)}")
        return ordered

    def layer_params(self, spec: LayerSpec) -> dict:
        prefix = spec.name + "."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def trainable_names(self) -> list[str]:
        return [k for k in self.params if not L.is_buffer(k)]

    def forward(self, batch: np.ndarray, train: bool = False, capture: str | None = None,
                record: bool | None = None, start: int = 0):
        """Run the network. Returns ``(logits, tape, captured_activation)``.

        The tape is recorded in train mode, or whenever ``record`` is true.
        ``start`` skips the first layers so a captured activation can be
        fed back in.
        """
        if record is None:
            record = train
        if capture is not None and capture not in {s.name for s in self.config.layers}:
            raise KeyError(
                f"unknown tap layer {capture!r}; available: {self.config.feature_map_layers()}"
            )
        expected = self.config.input_shape if start == 0 else self.config.shapes[start - 1]
        if tuple(batch.shape[1:]) != tuple(expected):
            raise ShapeError(f"batch shape {batch.shape} does not match expected (N, *{expected})")
        x = np.asarray(batch, dtype=np.float64)
        tape: list[TapeEntry] = []
        captured = None
        for spec in self.config.layers[start:]:
            x, entry, updates = L.layer_forward(spec, self.layer_params(spec), x, train)
            if train:
                for pname, value in updates.items():
                    self.params[f"{spec.name}.{pname}"] = value
            if record:
                tape.append(entry)
            if spec.name == capture:
                captured = x
        return x, tape, captured

    def backward(self, tape: list[TapeEntry], upstream: np.ndarray, stop_at: str | None = None):
        """Backpropagate through ``tape``.

        Returns ``(grad, param_grads)``. With ``stop_at`` the walk ends once the
        gradient with respect to that layer's output is known, and ``grad`` is
        that gradient; otherwise ``grad`` is with respect to the network input.
        """
        grads: dict[str, np.ndarray] = {}
        g = upstream
        for entry in reversed(tape):
            if entry.spec.name == stop_at:
                return g, grads
            g, pg = L.layer_vjp(entry.spec, entry, g)
            for pname, value in pg.items():
                grads[f"{entry.spec.name}.{pname}"] = value
        if stop_at is not None:
            raise KeyError(f"layer {stop_at!r} not found on tape")
        ordered = {k: grads[k] for k in self.params if k in grads}
        return g, ordered

    def predict(self, batch: np.ndarray) -> np.ndarray:
        """Class indices by argmax of the logits; ties resolve to the lower index."""
        logits, _, _ = self.forward(batch)
        return logits.argmax(axis=1)


def model_forward(model: Model, batch: np.ndarray, train: bool = False, capture: str | None = None):
    return model.forward(batch, train=train, capture=capture)
