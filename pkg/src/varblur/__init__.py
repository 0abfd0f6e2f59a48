"""Spatially varying blur: synthesis, non-blind deblurring and evaluation."""

from .blur import BlurOperator, SaturationParams, adjoint, apply, degrade
from .core import (Image, KernelBasis, MixingField, SegmentMap, kernel_norm_map,
                   synth_kernel_field, synth_pixel_kernel, validate)
from .errors import (DimensionError, FormatError, InvariantError, TruncatedFileError,
                     VarblurError, VersionMismatchError)

__version__ = "0.1.0"

__all__ = [
    "BlurOperator", "SaturationParams", "adjoint", "apply", "degrade",
    "Image", "KernelBasis", "MixingField", "SegmentMap", "kernel_norm_map",
    "synth_kernel_field", "synth_pixel_kernel", "validate",
    "DimensionError", "FormatError", "InvariantError", "TruncatedFileError",
    "VarblurError", "VersionMismatchError",
]
