import json

import numpy as np
import pytest

from helpers import ABSORBED_C3, EDGEWISE_C3, KAPPA, LOSSLESS_03, LOSSLESS_05, NORMALIZED, SYNC_05
from shsvl.certify import (BISECT_TOL, CertifyError, IqcMatrices, NotCertifiable, RateCertificate,
                           build_absorbed_lossless_lmis, build_edgewise_lmis, build_kappa_normalized_lmis,
                           build_lossless_lmis, build_sync_loss_lmis, certify_mode, certify_rate,
                           edgewise_system, enumerate_scenarios, kappa_sector_matrix, rate_lower_bound,
                           verify_certificate)
from shsvl.dynamics import ShSvlParams
from shsvl.graph import WeightedDigraph, build_complete, build_directed_cycle
from shsvl.objectives import SectorBound
from shsvl.sdp import sdp_feasible, verify_witness

LB = 9 / 11


def test_iqc_matrices():
    iqc = IqcMatrices.from_bounds(SectorBound(1.0, 10.0), 0.5)
    np.testing.assert_array_equal(iqc.m0, [[-20, 11], [11, -2]])
    np.testing.assert_array_equal(iqc.m1, [[-0.75, 1], [1, -1]])
    assert iqc.m1[1, 1] == -1
    for m in (iqc.m0, iqc.m1):
        np.testing.assert_array_equal(m, m.T)


def test_kappa_sector_matrix():
    np.testing.assert_array_equal(kappa_sector_matrix(1.0), [[-2, 2], [2, -2]])
    # scaling the physical multiplier by kappa on the unit-Lipschitz sector gives the same matrix
    s = SectorBound.normalized(7.0)
    np.testing.assert_allclose(7.0 * IqcMatrices.from_bounds(s, 0).m0, kappa_sector_matrix(7.0))


def test_rate_lower_bound():
    assert rate_lower_bound(10.0) == pytest.approx(0.8182, abs=1e-4)
    assert rate_lower_bound(10.0, 0.9) == 0.9


def test_lossless_certificate_and_bound():
    cert = certify_mode("lossless", LOSSLESS_05, kappa=KAPPA, sigma=0.5, interval=(0.0, 1.0))
    assert isinstance(cert, RateCertificate)
    assert LB - BISECT_TOL <= cert.rho <= 0.824
    prob = build_lossless_lmis(LOSSLESS_05, NORMALIZED, 0.5, cert.rho)
    assert verify_certificate(prob, cert)


def test_sector_scaling_invariance():
    a_norm = LOSSLESS_03.alpha
    rhos = []
    for mu, big_l in ((1.0, 10.0), (2.0, 20.0)):
        p = ShSvlParams(a_norm / big_l, *LOSSLESS_03.as_tuple()[1:])
        rhos.append(certify_mode("lossless", p, sector=SectorBound(mu, big_l), sigma=0.3).rho)
    assert abs(rhos[0] - rhos[1]) <= BISECT_TOL


def test_kappa_mode_matches_physical():
    big_l = 4.0
    p = ShSvlParams(LOSSLESS_05.alpha / big_l, *LOSSLESS_05.as_tuple()[1:])
    phys = certify_mode("lossless", p, sector=SectorBound(big_l / KAPPA, big_l), sigma=0.5).rho
    norm = certify_mode("kappa", LOSSLESS_05, kappa=KAPPA, sigma=0.5).rho
    assert abs(phys - norm) <= BISECT_TOL


def test_physical_witness_maps_to_normalized():
    mu, big_l = 0.5, 5.0
    p = ShSvlParams(LOSSLESS_05.alpha / big_l, *LOSSLESS_05.as_tuple()[1:])
    res = sdp_feasible(build_lossless_lmis(p, SectorBound(mu, big_l), 0.5, 0.9))
    assert res.feasible
    w = res.values
    s = mu * big_l
    mapped = {"P": w["P"] / s, "Q": w["Q"] / s, "lam0": w["lam0"], "lam1": w["lam1"] / s}
    ok, resid, _ = verify_witness(build_kappa_normalized_lmis(LOSSLESS_05, big_l / mu, 0.5, 0.9), mapped)
    assert ok


def test_sync_zero_loss_matches_lossless():
    for p, sig in ((LOSSLESS_03, 0.3), (LOSSLESS_05, 0.5)):
        a = certify_mode("lossless", p, kappa=KAPPA, sigma=sig, interval=(0, 1)).rho
        b = certify_mode("sync", p, kappa=KAPPA, sigma=sig, p_loss=0.0, interval=(0, 1)).rho
        assert abs(a - b) <= 2 * BISECT_TOL


def test_sync_total_loss_infeasible():
    for rho in (0.9, 0.999):
        assert not sdp_feasible(build_sync_loss_lmis(SYNC_05, NORMALIZED, 0.5, 1.0, rho)).feasible


def test_sync_half_loss_certifiable():
    cert = certify_mode("sync", SYNC_05, kappa=KAPPA, sigma=0.5, p_loss=0.5)
    assert isinstance(cert, RateCertificate) and cert.rho < 1
    assert cert.rho >= 0.5 - BISECT_TOL


def test_sync_state_matrices_success_reduces_to_lossless():
    # with success, r = delta w1 + eta w2 after the update; check one row by hand
    from shsvl.certify import sync_state_matrices
    a, d, z, e = SYNC_05.as_tuple()
    A, Bu, Bv = sync_state_matrices(SYNC_05)["sq"]
    w = np.array([0.3, -0.7, 0.2])
    u, v = 0.4, -0.1
    w1 = w[0] - a * u - z * v
    w2 = w[0] + w[1] - v
    nxt = A @ w + Bu * u + Bv * v
    assert nxt == pytest.approx([w1, w2, d * w1 + e * w2])


def test_enumerate_scenarios():
    g1 = WeightedDigraph(2, ((0, 1, 0.5),))
    sc = enumerate_scenarios(g1, 0.3)
    assert sorted((len(s), p) for s, p in sc) == [(0, pytest.approx(0.3)), (1, pytest.approx(0.7))]
    sc3 = enumerate_scenarios(build_directed_cycle(3, 0.9), 0.37)
    assert len(sc3) == 8 and abs(sum(p for _, p in sc3) - 1) <= 1e-15
    sc5 = enumerate_scenarios(build_directed_cycle(5, 0.9), 0.5)
    assert all(p == 1 / 32 for _, p in sc5)
    with pytest.raises(CertifyError):
        enumerate_scenarios(build_complete(5), 0.1)


def test_edgewise_branch_weights_sum_to_one(cycle3):
    prob = build_edgewise_lmis(cycle3, EDGEWISE_C3, NORMALIZED, 0.2, 0.9)
    assert sum(p for p, _ in prob.lmis[0].branches) == pytest.approx(1.0, abs=1e-15)
    assert prob.lmis[0].nstate == 2 * 3 + 3


def test_edgewise_zero_loss_matches_absorbed(cycle3):
    a = certify_mode("absorbed", ABSORBED_C3, kappa=KAPPA, graph=cycle3, interval=(0, 1)).rho
    b = certify_mode("edgewise", ABSORBED_C3, kappa=KAPPA, graph=cycle3, p_loss=0.0, interval=(0, 1)).rho
    assert abs(a - b) <= 2 * BISECT_TOL


def test_edgewise_light_loss_certifiable(cycle3):
    cert = certify_mode("edgewise", EDGEWISE_C3, kappa=KAPPA, graph=cycle3, p_loss=0.1)
    assert isinstance(cert, RateCertificate) and cert.rho < 1
    prob = build_edgewise_lmis(cycle3, EDGEWISE_C3, NORMALIZED, 0.1, cert.rho)
    assert verify_certificate(prob, cert)


def test_edgewise_system_all_delivered_matches_absorbed(cycle3):
    """With every edge delivered, phi is a copy of y, so x matches the absorbed model."""
    p = EDGEWISE_C3
    sys = edgewise_system(cycle3, p)
    A, B = sys.matrices(np.ones(3, bool))
    rng = np.random.default_rng(0)
    w1, w2 = rng.standard_normal(3), rng.standard_normal(3)
    w2 -= w2.mean()
    y = p.delta * w1 + p.eta * w2
    phi = np.array([y[j] for _, j in cycle3.edge_pairs])
    state = np.concatenate([w1, w2, phi])
    from shsvl.graph import laplacian_from_graph
    L = laplacian_from_graph(cycle3)
    np.testing.assert_allclose(sys.C @ state, w1 - L @ y, atol=1e-14)
    u = rng.standard_normal(3)
    nxt = A @ state + B @ u
    v = L @ y
    w1n = w1 - p.zeta * v - p.alpha * u
    w2n = w1 + w2 - v
    w2n -= w2n.mean()
    yn = p.delta * w1n + p.eta * w2n
    np.testing.assert_allclose(nxt, np.concatenate([w1n, w2n, [yn[j] for _, j in cycle3.edge_pairs]]),
                               atol=1e-14)


def test_edgewise_rejects_bad_graph():
    g = WeightedDigraph(3, ((1, 0, 1.0), (2, 1, 1.0)))
    with pytest.raises(CertifyError):
        build_edgewise_lmis(g, EDGEWISE_C3, NORMALIZED, 0.1, 0.9)


def test_edgewise_requires_nonzero_zeta_eta(cycle3):
    with pytest.raises(CertifyError):
        build_edgewise_lmis(cycle3, ShSvlParams(0.1, 0.5, 0.0, 1.0), NORMALIZED, 0.1, 0.9)


def test_absorbed_beats_parameterized_on_cycle(cycle3):
    absorbed = certify_mode("absorbed", ABSORBED_C3, kappa=KAPPA, graph=cycle3).rho
    param = certify_mode("lossless", ABSORBED_C3, kappa=KAPPA, graph=cycle3).rho
    assert absorbed < 0.82 < param


def test_absorbed_witness_verifies(cycle3):
    cert = certify_mode("absorbed", ABSORBED_C3, kappa=KAPPA, graph=cycle3)
    prob = build_absorbed_lossless_lmis(cycle3, ABSORBED_C3, NORMALIZED, cert.rho)
    assert verify_certificate(prob, cert)
    assert cert.rho >= LB - BISECT_TOL


def test_not_certifiable():
    res = certify_mode("lossless", ShSvlParams(3.0, 0.5, 0.5, 1.0), kappa=KAPPA, sigma=0.5)
    assert isinstance(res, NotCertifiable)
    assert res.rho == 1.0


def test_certify_rate_interval_checks():
    with pytest.raises(CertifyError):
        certify_rate(lambda r: None, (0.9, 0.5))
    res = certify_rate(lambda r: None, (0.99995, 1.0))
    assert isinstance(res, NotCertifiable)


def test_certify_mode_errors(cycle3):
    with pytest.raises(CertifyError):
        certify_mode("bogus", LOSSLESS_05, kappa=KAPPA, sigma=0.5)
    with pytest.raises(CertifyError):
        certify_mode("lossless", LOSSLESS_05, sigma=0.5)
    with pytest.raises(CertifyError):
        certify_mode("edgewise", LOSSLESS_05, kappa=KAPPA)
    with pytest.raises(CertifyError):
        certify_mode("lossless", LOSSLESS_05, kappa=KAPPA)
    with pytest.raises(CertifyError):
        build_lossless_lmis(LOSSLESS_05, NORMALIZED, 0.5, 1.5)


def test_sigma_taken_from_graph(cycle3):
    a = certify_mode("lossless", ABSORBED_C3, kappa=KAPPA, graph=cycle3)
    b = certify_mode("lossless", ABSORBED_C3, kappa=KAPPA, sigma=0.8544003745317531)
    assert a.rho == b.rho


def test_certificate_json_round_trip():
    cert = certify_mode("lossless", LOSSLESS_05, kappa=KAPPA, sigma=0.5)
    doc = json.loads(cert.to_json())
    assert doc["rho"] == cert.rho and doc["mode"] == "lossless"
    wit = {k: (np.array(v) if isinstance(v, list) else v) for k, v in doc["witness"].items()}
    prob = build_lossless_lmis(LOSSLESS_05, NORMALIZED, 0.5, doc["rho"])
    assert verify_witness(prob, wit)[0]


def linear_instance_radius(p, h, lam):
    """Spectral radius of the disagreement loop for gradient gain h and Laplacian eigenvalue lam."""
    a, d, z, e = p.as_tuple()
    y = np.array([d, e], complex)
    v = lam * y
    x = np.array([1, 0], complex) - v
    u = h * x
    A = np.array([np.array([1, 0]) - a * u - z * v, np.array([1, 1]) - v])
    return max(abs(np.linalg.eigvals(A)))


@pytest.mark.parametrize("key", [("lossless", 0.3, 0.0), ("lossless", 0.5, 0.0), ("lossless", 0.7, 0.0),
                                 ("lossless", 0.854, 0.0)])
def test_certificate_dominates_linear_instances(key):
    """Identical quadratics and normal Laplacians inside the sigma class never beat the certificate."""
    from shsvl.tune import SEED_TABLE
    p, sig = ShSvlParams(*SEED_TABLE[key]), key[1]
    rho = certify_mode("lossless", p, kappa=KAPPA, sigma=sig).rho
    worst = 0.0
    for h in np.linspace(1 / KAPPA, 1.0, 19):
        worst = max(worst, abs(1 - p.alpha * h))
        for r in (sig / 2, sig):
            for th in np.linspace(0, 2 * np.pi, 73):
                worst = max(worst, linear_instance_radius(p, h, 1 - r * np.exp(1j * th)))
    assert worst <= rho + BISECT_TOL
    # the certificate is nearly tight on these instances
    assert rho - worst < 0.02
