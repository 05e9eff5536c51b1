"""Memory-efficient high-resolution attribute editing with cooperating global and local generators."""

from .cooperation import assemble, decompose, downsample, edit_full_image, make_local_inputs, upsample
from .core import (
    ATTRIBUTES,
    AttributeVector,
    ConfigError,
    CooganError,
    DataError,
    DiffVector,
    DimensionError,
    ImageTensor,
    PatchCoord,
    RunConfig,
    TilingError,
    diff_vector,
)
from .losses import LossWeights
from .networks import Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, build_model
from .units import LSTU, STU

__all__ = [
    "ATTRIBUTES", "AttributeVector", "ConfigError", "CooganError", "DataError", "DiffVector", "DimensionError",
    "Discriminator", "DiscriminatorSpec", "Generator", "GeneratorSpec", "ImageTensor", "LSTU", "LossWeights",
    "PatchCoord", "RunConfig", "STU", "TilingError", "assemble", "build_model", "decompose", "diff_vector",
    "downsample", "edit_full_image", "make_local_inputs", "upsample",
]
