"""MAP-MRF channel phase filtering for susceptibility weighted coil combination."""

from mrfswi.image_model import (
    ComplexImage,
    Histogram,
    MultiChannelImage,
    RealField,
    build_histogram,
    load_mcf,
    magnitude_phase,
    save_mcf,
)

__version__ = "0.1.0"

__all__ = [
    "ComplexImage",
    "Histogram",
    "MultiChannelImage",
    "RealField",
    "build_histogram",
    "load_mcf",
    "magnitude_phase",
    "save_mcf",
]
