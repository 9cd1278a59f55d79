"""Empirical convergence-rate extraction from error curves."""

from __future__ import annotations

import numpy as np

FLOOR = 1e-13
STOP = 1e-11


def rate_fit(errors, window: int = 300, floor: float = FLOOR, stop: float = STOP,
             min_points: int = 20) -> float:
    """Fit ``e_k ~ C r^k`` over the trailing ``window`` steps before ``e`` drops below ``stop``.

    Uses a least-squares line through ``log e_k``; returns ``exp(slope)``.
    When fewer than ``window`` usable points exist but at least
    ``min_points`` do, all usable points are used.  A curve that never
    decays gives a rate of 1 or more rather than an error.
    """
    e = np.asarray(errors, dtype=float).ravel()
    below = np.nonzero(e < stop)[0]
    end = int(below[0]) if below.size else len(e)
    k = np.arange(end)
    seg = e[:end]
    ok = seg > floor
    k, seg = k[ok], seg[ok]
    if len(seg) < min(window, min_points) or len(seg) < 2:
        raise ValueError(f"only {len(seg)} usable error samples for rate fitting")
    k, seg = k[-window:], seg[-window:]
    slope = np.polyfit(k.astype(float), np.log(seg), 1)[0]
    return float(np.exp(slope))
