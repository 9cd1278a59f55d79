import numpy as np
import pytest

from helpers import KAPPA, LOSSLESS_05
from shsvl.certify import BISECT_TOL, RateCertificate
from shsvl.dynamics import ShSvlParams
from shsvl.tune import (LOG_HEADER, TuneConfig, TuneError, initial_simplex, nelder_mead, seed_params, tune,
                        tune_from_grid, warm_start)

HAND = ShSvlParams(0.05, 0.5, 0.05, 0.3)   # certifies about 0.995 at sigma 0.854


def test_nelder_mead_quadratic_bowl():
    target = np.array([1.0, -2.0, 0.5, 3.0])
    H = np.diag([1.0, 4.0, 0.5, 2.0])
    res = nelder_mead(lambda x: (x - target) @ H @ (x - target), np.zeros(4), max_evals=5000,
                      xtol=1e-9, ftol=1e-16)
    assert res.converged
    np.testing.assert_allclose(res.x, target, atol=1e-6)
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))


def test_nelder_mead_budget():
    res = nelder_mead(lambda x: float(x @ x), np.ones(3), max_evals=10, ftol=0)
    assert not res.converged and res.nfev <= 10 + 4


def test_nelder_mead_diameter_argument():
    seen = []
    nelder_mead(lambda x, d: seen.append(d) or float(x @ x), np.ones(2), max_evals=20, with_diameter=True)
    assert all(d > 0 for d in seen)


def test_initial_simplex():
    S = initial_simplex([1.0, 0.0, -2.0])
    np.testing.assert_allclose(S, [[1, 0, -2], [1.1, 0, -2], [1, 1e-3, -2], [1, 0, -1.8]])


def test_tune_improves_from_hand_start():
    cfg = TuneConfig(HAND, mode="lossless", kappa=KAPPA, sigma=0.854, max_evals=60)
    start = cfg.certify(HAND).rho
    res = tune(cfg)
    assert res.rho <= start
    assert res.rho >= 0.854 - BISECT_TOL
    assert res.log[0][1:5] == HAND.as_tuple()
    cert = cfg.certify(res.params)
    assert isinstance(cert, RateCertificate) and cert.rho == pytest.approx(res.rho)


def test_tune_deterministic_log():
    cfg = TuneConfig(HAND, mode="lossless", kappa=KAPPA, sigma=0.854, max_evals=25)
    assert tune(cfg).log == tune(cfg).log


def test_tune_log_csv():
    cfg = TuneConfig(HAND, mode="lossless", kappa=KAPPA, sigma=0.854, max_evals=8, restarts=0)
    res = tune(cfg)
    lines = res.log_csv().splitlines()
    assert lines[0] == ",".join(LOG_HEADER)
    assert len(lines) == len(res.log) + 1
    assert res.budget_exhausted


def test_tune_rejects_uncertifiable_start():
    with pytest.raises(TuneError):
        tune(TuneConfig(ShSvlParams(3.0, 0.5, 0.5, 1.0), mode="lossless", kappa=KAPPA, sigma=0.5))


def test_config_validation():
    with pytest.raises(ValueError):
        TuneConfig(HAND, max_evals=0)


def test_warm_start_lossless():
    cfg = TuneConfig(HAND, mode="lossless", kappa=KAPPA, sigma=0.5)
    p, rho = warm_start(cfg)
    assert p.delta == 0.5 and p.eta == 1.0 and rho < 1


def test_sync_half_loss_tuning_certifies():
    cfg = TuneConfig(HAND, mode="sync", kappa=KAPPA, sigma=0.5, p_loss=0.5, max_evals=40)
    res = tune_from_grid(cfg)
    assert res.rho < 1
    assert res.rho >= rate_floor(0.5)


def rate_floor(sigma):
    return max(9 / 11, sigma) - BISECT_TOL


def test_seed_table_lookup():
    assert seed_params("lossless", 0.8) == seed_params("lossless", 0.854)
    assert seed_params("sync", 0.5, 0.3) is not None
    assert seed_params("kappa", 0.5) is None
    assert seed_params("lossless", 0.5) == LOSSLESS_05


def test_warm_start_table_competes():
    cfg = TuneConfig(HAND, mode="lossless", kappa=KAPPA, sigma=0.5)
    p, rho = warm_start(cfg, table=True)
    assert p == LOSSLESS_05 and rho < 0.824
