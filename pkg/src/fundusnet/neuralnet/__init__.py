"""Float64 numpy kernels and declarative layers with hand-written backward passes."""

from fundusnet.neuralnet.layers import (
    LayerSpec,
    TapeEntry,
    he_init,
    layer_forward,
    layer_vjp,
    output_shape,
    param_shapes,
)
from fundusnet.neuralnet.ops import (
    ShapeError,
    batchnorm_forward,
    conv2d_forward,
    dense_forward,
    global_avg_pool_forward,
    maxpool2d_forward,
    relu_forward,
    softmax,
    softmax_cross_entropy,
)

__all__ = [
    "LayerSpec",
    "ShapeError",
    "TapeEntry",
    "batchnorm_forward",
    "conv2d_forward",
    "dense_forward",
    "global_avg_pool_forward",
    "he_init",
    "layer_forward",
    "layer_vjp",
    "maxpool2d_forward",
    "output_shape",
    "param_shapes",
    "relu_forward",
    "softmax",
    "softmax_cross_entropy",
]
