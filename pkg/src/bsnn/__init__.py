"""Desk-scale training and analysis kernel for binary spiking networks.

Subpackages and modules:

* ops / kernels     dense primitives with forward/backward pairs (numba or numpy)
* neuron            leaky integrate-and-fire dynamics and surrogate window
* binary            channel-scaled sign weights with straight-through backward
* agmm              per-timestep sigmoid gating of feature sequences
* flipstats         sign-flip telemetry and the analytic flip-probability model
* network / train   layer graphs, SGD training loop, telemetry, checkpoints
* energy            exact spike-driven operation counts, energy, model size
* data              IDX files, synthetic blobs, spike encoders
* gradcheck         finite-difference and scalar-tape gradient verification
* config / cli      experiment configs and the command-line interface
"""

__version__ = "0.1.0"

from .errors import (
    BsnnError,
    CheckpointError,
    ConfigError,
    DataFormatError,
    NumericsError,
    ShapeError,
    StateError,
)

__all__ = [
    "BsnnError",
    "CheckpointError",
    "ConfigError",
    "DataFormatError",
    "NumericsError",
    "ShapeError",
    "StateError",
    "__version__",
]
