"""Online baseline-RSS calibration for RF sensing networks.

Estimates each link's unobstructed (background) received signal strength
from measurements taken while obstructions may be present, by classifying
links as foreground/background per frame and averaging only background
measurements.  Includes a packet-trace simulator and a particle-filter
tracker for end-to-end evaluation.
"""

from rfcal.topology import (
    NetworkTopology,
    NeighbourhoodIndex,
    RectanglePartition,
    Region,
    build_neighbourhoods,
    build_topology,
    chi,
    link_cells,
)

__version__ = "0.1.0"
