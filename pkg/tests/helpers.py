"""Frozen parameters and small builders shared by the tests."""

import numpy as np

from shsvl import ShSvlParams
from shsvl.objectives import SectorBound, random_quadratic
from shsvl.tune import SEED_TABLE

KAPPA = 10.0
NORMALIZED = SectorBound.normalized(KAPPA)

# frozen tuned tuples (normalized step), re-certified by the tests that use them
LOSSLESS_03 = ShSvlParams(*SEED_TABLE[("lossless", 0.3, 0.0)])
LOSSLESS_05 = ShSvlParams(*SEED_TABLE[("lossless", 0.5, 0.0)])
SYNC_05 = ShSvlParams(*SEED_TABLE[("sync", 0.5, 0.5)])
ABSORBED_C3 = ShSvlParams(*SEED_TABLE[("absorbed", 0.854, 0.0)])
EDGEWISE_C3 = ShSvlParams(*SEED_TABLE[("edgewise", 0.854, 0.1)])
# certified on the 3-node cycle (rho about 0.818); used where a stable tuple is needed
SAFE = ABSORBED_C3


def quad_on(n, d=2, kappa=KAPPA, seed=0, big_l=1.0):
    """Random quadratics filling the sector (big_l/kappa, big_l)."""
    return random_quadratic(n, d, big_l / kappa, big_l, np.random.default_rng(seed))


def physical(params, big_l=1.0):
    """Normalized step tuple to a physical one for Lipschitz constant ``big_l``."""
    return ShSvlParams(params.alpha / big_l, params.delta, params.zeta, params.eta)
