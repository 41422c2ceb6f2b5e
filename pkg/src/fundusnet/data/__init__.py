"""Image I/O, preprocessing, augmentation and dataset splitting."""

from fundusnet.data.manifest import (
    HEALTHY,
    LABELS,
    MD,
    Manifest,
    ManifestError,
    Record,
    SplitSpec,
    balance_downsample,
    load_manifest,
    stratified_split,
)
from fundusnet.data.netpbm import FormatError, Image, read_pgm, read_ppm, write_pgm, write_ppm
from fundusnet.data.transforms import (
    AugmentPolicy,
    augment,
    crop_black_border,
    from_tensor,
    hflip,
    resize_bilinear,
    rotate,
    to_tensor,
    vflip,
)

__all__ = [
    "HEALTHY", "LABELS", "MD", "AugmentPolicy", "FormatError", "Image", "Manifest",
    "ManifestError", "Record", "SplitSpec", "augment", "balance_downsample",
    "crop_black_border", "from_tensor", "hflip", "load_manifest", "read_pgm", "read_ppm",
    "resize_bilinear", "rotate", "stratified_split", "to_tensor", "vflip", "write_pgm",
    "write_ppm",
]
