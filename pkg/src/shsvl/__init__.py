"""Self-healing distributed gradient method with packet-loss robustness and rate certificates."""

from .graph import (WeightedDigraph, build_complete, build_directed_cycle, build_ring_lattice,
                    check_assumptions, laplacian_from_graph, sigma)
from .objectives import SectorBound, make_logistic, make_quadratic
from .dynamics import ShSvlParams, SvlParams, simulate, shsvl_to_svl, svl_to_shsvl
from .loss import LossModel

__version__ = "0.1.0"
