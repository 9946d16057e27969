"""beamlink: simulation toolkit for a steered-laser power-and-data link.

Subsystems:

- :mod:`beamlink.geometry`     stereo triangulation, surfaces, rotations
- :mod:`beamlink.optics`       steering device, beam radiometry, renderer
- :mod:`beamlink.tracking`     thresholding and blob tracking
- :mod:`beamlink.calibration`  scan protocol, pose and mapping recovery
- :mod:`beamlink.fsk`          modulator, channel, decoder, BER harness
- :mod:`beamlink.robot`        energy-harvesting robot model
- :mod:`beamlink.runtime`      closed-loop engine, scenarios, service
- :mod:`beamlink.cli`          command-line entry point
"""

from .config import DEFAULT_SEED, SimConfig, load_config
from .errors import BeamlinkError

__version__ = "0.1.0"

__all__ = ["BeamlinkError", "DEFAULT_SEED", "SimConfig", "load_config",
           "__version__"]
