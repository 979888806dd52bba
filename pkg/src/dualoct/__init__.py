"""Dual-Octave convolution and a multi-coil MRI reconstruction network, in numpy."""

from dualoct.kernels import BACKEND, available_backends, set_backend
from dualoct.tensor import (ComplexTensor, ConvSpec, ShapeError, avg_pool2, complex_conv2d,
                            conv2d_real, crelu, upsample2_nearest)
from dualoct.octave import (DualOctKernel, OctFeature, OctLayerShape, dual_octconv, entry_layer,
                            exit_layer, init_dual_oct_kernel, octave_conv_real, split_channels)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "available_backends", "set_backend",
    "ComplexTensor", "ConvSpec", "ShapeError", "avg_pool2", "complex_conv2d", "conv2d_real",
    "crelu", "upsample2_nearest",
    "DualOctKernel", "OctFeature", "OctLayerShape", "dual_octconv", "entry_layer", "exit_layer",
    "init_dual_oct_kernel", "octave_conv_real", "split_channels",
]
