"""dmlab: composite random ensembles exposing almost-Euclidean sections.

A library plus experiment CLI that draws the two-stage random map (a
heavy-tailed rotation-invariant row matrix followed by an iid-entry
subgaussian column matrix), measures every structural quantity the
construction depends on, and certifies empirically that the composite
image of the sphere is nearly round in a given normed space.
"""

__version__ = "0.1.0"

from .randsrc import DistributionSpec, RngStream  # noqa: F401
from .normspace import NormSpace  # noqa: F401
