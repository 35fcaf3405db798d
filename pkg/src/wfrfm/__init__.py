"""Learning continuous dynamics with growth from population snapshots.

Submodules: geometry (closed-form path quantities), oet (entropy-transport
solver and semi-couplings), nn (numpy multilayer perceptrons), train
(flow-matching training loop), infer (integration and action), metrics
(evaluation), datagen (synthetic benchmarks), cli (command line).
"""

__version__ = "0.1.0"

from . import datagen, geometry, infer, metrics, nn, oet, train  # noqa: F401
