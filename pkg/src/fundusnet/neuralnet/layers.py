"""Declarative layers on top of the raw kernels.

A ``LayerSpec`` names a layer kind plus its hyperparameters. Hyperparameters
carry the input channel count, so parameter shapes follow from the layer spec
alone. Parameters live outside the layer spec in flat ``{name: array}`` dicts.
Residual blocks are composite: they expand into sub-specs and their
parameters are stored under dotted prefixes such as ``conv1.weight``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from fundusnet.neuralnet import ops
from fundusnet.neuralnet.ops import ShapeError
from fundusnet.rng import Rng

KINDS = (
    "conv2d",
    "maxpool2d",
    "global_avg_pool",
    "dense",
    "relu",
    "batchnorm",
    "residual_block_v1",
    "residual_block_v2",
)
BUFFER_NAMES = ("running_mean", "running_var")

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    hyper: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def to_json(self) -> dict:
        return {"name": self.name, "kind": self.kind, "hyper": dict(self.hyper)}

    @classmethod
    def from_json(cls, obj: dict) -> "LayerSpec":
        return cls(obj["name"], obj["kind"], dict(obj.get("hyper", {})))


@dataclass
class TapeEntry:
    """Everything the backward pass of one forward call needs."""

    spec: LayerSpec
    input_shape: tuple
    output_shape: tuple
    cache: dict


def conv(name, in_channels, filters, kernel=3, stride=1, padding="same", bias=True):
    return LayerSpec(name, "conv2d", {"in_channels": in_channels, "filters": filters,
                                      "kernel": kernel, "stride": stride,
                                      "padding": padding, "bias": bias})


def batchnorm(name, channels, eps=BN_EPS, momentum=BN_MOMENTUM):
    return LayerSpec(name, "batchnorm", {"channels": channels, "eps": eps, "momentum": momentum})


def relu(name):
    return LayerSpec(name, "relu")


def maxpool(name, pool=2, stride=None):
    return LayerSpec(name, "maxpool2d", {"pool": pool, "stride": stride or pool})


def dense(name, in_features, units):
    return LayerSpec(name, "dense", {"in_features": in_features, "units": units})


def gap(name):
    return LayerSpec(name, "global_avg_pool")


def residual_block(name, in_channels, mid, out, stride=1, version="v1"):
    return LayerSpec(name, f"residual_block_{version}",
                     {"in_channels": in_channels, "mid": mid, "out": out, "stride": stride})


def has_projection(spec: LayerSpec) -> bool:
    h = spec.hyper
    return h["stride"] != 1 or h["in_channels"] != h["out"]


def block_sublayers(spec: LayerSpec) -> dict[str, LayerSpec]:
    """Sub-layers of a bottleneck residual block, keyed by parameter prefix."""
    h = spec.hyper
    cin, mid, out, s = h["in_channels"], h["mid"], h["out"], h["stride"]
    subs = {}
    if spec.kind == "residual_block_v1":
        subs["conv1"] = conv("conv1", cin, mid, 1, bias=False)
        subs["bn1"] = batchnorm("bn1", mid)
        subs["conv2"] = conv("conv2", mid, mid, 3, s, bias=False)
        subs["bn2"] = batchnorm("bn2", mid)
        subs["conv3"] = conv("conv3", mid, out, 1, bias=False)
        subs["bn3"] = batchnorm("bn3", out)
        if has_projection(spec):
            subs["proj_conv"] = conv("proj_conv", cin, out, 1, s, bias=False)
            subs["proj_bn"] = batchnorm("proj_bn", out)
    else:
        subs["bn1"] = batchnorm("bn1", cin)
        subs["conv1"] = conv("conv1", cin, mid, 1, bias=False)
        subs["bn2"] = batchnorm("bn2", mid)
        subs["conv2"] = conv("conv2", mid, mid, 3, s, bias=False)
        subs["bn3"] = batchnorm("bn3", mid)
        subs["conv3"] = conv("conv3", mid, out, 1, bias=False)
        if has_projection(spec):
            subs["proj_conv"] = conv("proj_conv", cin, out, 1, s, bias=False)
    return subs


def param_shapes(spec: LayerSpec) -> dict[str, tuple]:
    """Shapes of every parameter and buffer, in a fixed order."""
    h, k = spec.hyper, spec.kind
    if k == "conv2d":
        shapes = {"weight": (h["filters"], h["in_channels"], h["kernel"], h["kernel"])}
        if h.get("bias", True):
            shapes["bias"] = (h["filters"],)
        return shapes
    if k == "dense":
        return {"weight": (h["in_features"], h["units"]), "bias": (h["units"],)}
    if k == "batchnorm":
        c = (h["channels"],)
        return {"gamma": c, "beta": c, "running_mean": c, "running_var": c}
    if k.startswith("residual_block"):
        return {f"{prefix}.{p}": s
                for prefix, sub in block_sublayers(spec).items()
                for p, s in param_shapes(sub).items()}
    return {}


def is_buffer(param_name: str) -> bool:
    return param_name.rsplit(".", 1)[-1] in BUFFER_NAMES


def output_shape(spec: LayerSpec, in_shape: tuple) -> tuple:
    """Output shape (without batch) for an input of shape ``in_shape``; raises on mismatch."""
    h, k = spec.hyper, spec.kind
    where = f"layer {spec.name!r} ({k})"
    if k in ("conv2d", "maxpool2d", "global_avg_pool", "batchnorm") or k.startswith("residual"):
        if len(in_shape) != 3:
            raise ShapeError(f"{where} needs a (C, H, W) input, got {in_shape}")
    if k == "conv2d":
        c, hh, ww = in_shape
        if c != h["in_channels"]:
            raise ShapeError(f"{where} expects {h['in_channels']} channels, got input {in_shape}")
        if h["filters"] < 1:
            raise ShapeError(f"{where} needs at least one filter, got {h['filters']}")
        if h["padding"] == "valid" and (hh < h["kernel"] or ww < h["kernel"]):
            raise ShapeError(f"{where} kernel {h['kernel']} larger than input {in_shape}")
        return (h["filters"],
                ops.conv_output_size(hh, h["kernel"], h["stride"], h["padding"]),
                ops.conv_output_size(ww, h["kernel"], h["stride"], h["padding"]))
    if k == "maxpool2d":
        c, hh, ww = in_shape
        if hh < h["pool"] or ww < h["pool"]:
            raise ShapeError(f"{where} pool {h['pool']} larger than input {in_shape}")
        return (c, (hh - h["pool"]) // h["stride"] + 1, (ww - h["pool"]) // h["stride"] + 1)
    if k == "global_avg_pool":
        return (in_shape[0],)
    if k == "dense":
        if in_shape != (h["in_features"],):
            raise ShapeError(f"{where} expects ({h['in_features']},) input, got {in_shape}")
        if h["units"] < 1:
            raise ShapeError(f"{where} needs at least one unit, got {h['units']}")
        return (h["units"],)
    if k == "relu":
        return tuple(in_shape)
    if k == "batchnorm":
        if in_shape[0] != h["channels"]:
            raise ShapeError(f"{where} expects {h['channels']} channels, got input {in_shape}")
        return tuple(in_shape)
    # residual blocks
    if in_shape[0] != h["in_channels"]:
        raise ShapeError(f"{where} expects {h['in_channels']} channels, got input {in_shape}")
    if min(h["mid"], h["out"]) < 1:
        raise ShapeError(f"{where} has a non-positive width")
    s = h["stride"]
    return (h["out"], ops.conv_output_size(in_shape[1], 1, s, "same"),
            ops.conv_output_size(in_shape[2], 1, s, "same"))


def he_init(spec: LayerSpec, rng: Rng) -> dict[str, np.ndarray]:
    """He-normal weights, zero biases, identity batchnorm.

    Draws happen in ``param_shapes`` order so a seed fixes every tensor.
    """
    params = {}
    for name, shape in param_shapes(spec).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "weight":
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            size = int(np.prod(shape))
            params[name] = rng.normals(size).reshape(shape) * np.sqrt(2.0 / fan_in)
        elif leaf in ("gamma", "running_var"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def _sub(params: dict, prefix: str) -> dict:
    p = prefix + "."
    return {k[len(p):]: v for k, v in params.items() if k.startswith(p)}


def layer_forward(spec: LayerSpec, params: dict, x: np.ndarray, train: bool = False):
    """Run one layer. Returns ``(out, tape_entry, buffer_updates)``."""
    h, k = spec.hyper, spec.kind
    updates: dict[str, np.ndarray] = {}
    if k == "conv2d":
        out, cache = ops.conv2d_forward(x, params["weight"], params.get("bias"),
                                        h["stride"], h["padding"])
    elif k == "maxpool2d":
        out, argmax = ops.maxpool2d_forward(x, h["pool"], h["stride"])
        cache = {"argmax": argmax}
    elif k == "global_avg_pool":
        out, cache = ops.global_avg_pool_forward(x), {}
    elif k == "dense":
        out = ops.dense_forward(x, params["weight"], params["bias"])
        cache = {"x": x, "weight": params["weight"]}
    elif k == "relu":
        out, cache = ops.relu_forward(x), {"x": x}
    elif k == "batchnorm":
        out, cache, (rm, rv) = ops.batchnorm_forward(
            x, params["gamma"], params["beta"], params["running_mean"],
            params["running_var"], train, h.get("eps", BN_EPS), h.get("momentum", BN_MOMENTUM))
        if train:
            updates = {"running_mean": rm, "running_var": rv}
    else:
        out, cache, updates = _block_forward(spec, params, x, train)
    return out, TapeEntry(spec, x.shape, out.shape, cache), updates


def _run_sub(sub, params, prefix, x, train, tapes, updates):
    y, tape, upd = layer_forward(sub, _sub(params, prefix), x, train)
    tapes[prefix] = tape
    updates.update({f"{prefix}.{n}": v for n, v in upd.items()})
    return y


def _block_forward(spec, params, x, train):
    subs = block_sublayers(spec)
    tapes: dict[str, TapeEntry] = {}
    updates: dict[str, np.ndarray] = {}
    cache: dict[str, Any] = {"tapes": tapes}

    def run(prefix, inp):
        return _run_sub(subs[prefix], params, prefix, inp, train, tapes, updates)

    if spec.kind == "residual_block_v1":
        z = run("bn1", run("conv1", x))
        cache["pre1"] = z
        z = run("bn2", run("conv2", np.maximum(z, 0)))
        cache["pre2"] = z
        z = run("bn3", run("conv3", np.maximum(z, 0)))
        shortcut = run("proj_bn", run("proj_conv", x)) if "proj_conv" in subs else x
        total = z + shortcut
        cache["pre_out"] = total
        out = np.maximum(total, 0)
    else:
        z = run("bn1", x)
        cache["pre1"] = z
        a = np.maximum(z, 0)
        shortcut = run("proj_conv", a) if "proj_conv" in subs else x
        z = run("bn2", run("conv1", a))
        cache["pre2"] = z
        z = run("bn3", run("conv2", np.maximum(z, 0)))
        cache["pre3"] = z
        out = run("conv3", np.maximum(z, 0)) + shortcut
    return out, cache, updates


def relu_preactivations(tape: TapeEntry) -> list[np.ndarray]:
    """Values fed into every rectifier of a layer; used to keep gradient checks off kinks."""
    k = tape.spec.kind
    if k == "relu":
        return [tape.cache["x"]]
    if k.startswith("residual_block"):
        return [v for key, v in tape.cache.items() if key.startswith("pre")]
    return []


def layer_vjp(spec: LayerSpec, tape: TapeEntry, upstream: np.ndarray):
    """Vector-Jacobian product. Returns ``(grad_input, grad_params)``.

    ``grad_params`` covers trainable parameters only (no running statistics).
    """
    if tape.spec is not spec and tape.spec != spec:
        raise ValueError(f"tape entry belongs to layer {tape.spec.name!r}, not {spec.name!r}")
    if upstream.shape != tape.output_shape:
        raise ShapeError(
            f"layer {spec.name!r}: upstream shape {upstream.shape} does not match "
            f"forward output shape {tape.output_shape}"
        )
    k, c = spec.kind, tape.cache
    if k == "conv2d":
        dx, dw, db = ops.conv2d_backward(upstream, c)
        grads = {"weight": dw}
        if db is not None:
            grads["bias"] = db
        return dx, grads
    if k == "maxpool2d":
        return ops.maxpool2d_backward(upstream, c["argmax"], tape.input_shape), {}
    if k == "global_avg_pool":
        return ops.global_avg_pool_backward(upstream, tape.input_shape), {}
    if k == "dense":
        dx, dw, db = ops.dense_backward(upstream, c["x"], c["weight"])
        return dx, {"weight": dw, "bias": db}
    if k == "relu":
        return ops.relu_backward(upstream, c["x"]), {}
    if k == "batchnorm":
        dx, dg, db = ops.batchnorm_backward(upstream, c)
        return dx, {"gamma": dg, "beta": db}
    return _block_vjp(spec, tape, upstream)


def _block_vjp(spec, tape, upstream):
    c = tape.cache
    tapes = c["tapes"]
    subs = block_sublayers(spec)
    grads: dict[str, np.ndarray] = {}

    def back(prefix, g):
        dx, gp = layer_vjp(subs[prefix], tapes[prefix], g)
        grads.update({f"{prefix}.{n}": v for n, v in gp.items()})
        return dx

    if spec.kind == "residual_block_v1":
        g = upstream * (c["pre_out"] > 0)
        if "proj_conv" in subs:
            dx = back("proj_conv", back("proj_bn", g))
        else:
            dx = g.copy()
        g = back("conv3", back("bn3", g)) * (c["pre2"] > 0)
        g = back("conv2", back("bn2", g)) * (c["pre1"] > 0)
        dx = dx + back("conv1", back("bn1", g))
    else:
        g = back("conv3", upstream) * (c["pre3"] > 0)
        g = back("conv2", back("bn3", g)) * (c["pre2"] > 0)
        da = back("conv1", back("bn2", g))
        if "proj_conv" in subs:
            da = da + back("proj_conv", upstream)
            dx = np.zeros(tape.input_shape)
        else:
            dx = upstream.copy()
        dx = dx + back("bn1", da * (c["pre1"] > 0))
    ordered = {name: grads[name] for name in param_shapes(spec) if name in grads}
    return dx, ordered
