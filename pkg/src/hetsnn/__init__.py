"""Leaky integrate-and-fire networks trained through neuron properties."""

from .neuron import (
    PROPERTIES,
    NetworkSpec,
    NeuronParams,
    build_network,
    forward,
    genome_length,
    genome_pack,
    genome_unpack,
    lif_step,
)
from .surrogate import SurrogateSpec

__version__ = "0.1.0"

__all__ = [
    "PROPERTIES",
    "NetworkSpec",
    "NeuronParams",
    "SurrogateSpec",
    "build_network",
    "forward",
    "genome_length",
    "genome_pack",
    "genome_unpack",
    "lif_step",
]
