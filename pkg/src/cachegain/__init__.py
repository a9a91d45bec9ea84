"""Distributed adaptive cache allocation through a caching-gain potential game.

Submodules:

- :mod:`cachegain.model` network, demand and feasibility primitives
- :mod:`cachegain.objective` caching gain, its concave relaxation and smooth surrogate
- :mod:`cachegain.central` greedy, relaxation solver, pipage rounding, equal-capacity bound
- :mod:`cachegain.game` node-local gradient play with budget error transfers
- :mod:`cachegain.protocol` probe messages and average consensus
- :mod:`cachegain.cachesim` period-driven simulator
- :mod:`cachegain.topo` topology generators and Zipf demand synthesis
- :mod:`cachegain.cli` command-line front end
"""

from .model import Demand, Network, Request
from .objective import SurrogateParams, caching_gain, relaxed_gain, smooth_gain

__all__ = [
    "Demand",
    "Network",
    "Request",
    "SurrogateParams",
    "caching_gain",
    "relaxed_gain",
    "smooth_gain",
]
__version__ = "0.1.0"
