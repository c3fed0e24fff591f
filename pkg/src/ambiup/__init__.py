"""FOA to third-order ambisonics upscaling with a convolutional time-domain network."""

__version__ = "0.1.0"

from .ambi import (AmbisonicSignal, DecoderMatrix, acn_index, decode, encode_point_source,
                   pseudoinverse_decoder, quadrature_error, real_sh, sampling_decoder,
                   sh_matrix)
from .grids import Direction, GridLayout, fibonacci_grid, icosahedral_design
from .model import Model, ModelConfig, build_model, parameter_count, upscale

__all__ = [
    "AmbisonicSignal", "DecoderMatrix", "Direction", "GridLayout", "Model", "ModelConfig",
    "acn_index", "build_model", "decode", "encode_point_source", "fibonacci_grid",
    "icosahedral_design", "parameter_count", "pseudoinverse_decoder", "quadrature_error",
    "real_sh", "sampling_decoder", "sh_matrix", "upscale",
]
