import numpy as np
import pytest

from helpers import LOSSLESS_05, NORMALIZED
from shsvl.certify import build_lossless_lmis
from shsvl.dynamics import ShSvlParams
from shsvl.sdp import (LmiProblem, StabilityLmi, Variable, sdp_feasible, solve_with_cvxpy, verify_witness)


def scalar_problem(a, rho):
    """Constraint a^2 p - rho^2 p <= 0 with p > 0."""
    lmi = StabilityLmi("toy", "p", [(1.0, np.array([[a]]))], np.array([[1.0]]), [])
    return LmiProblem([Variable("p", "pd", 1)], [lmi], rho)


def test_toy_literal_form_is_infeasible():
    # p - rho^2 p = 0.19 p > 0 for every positive p
    assert not sdp_feasible(scalar_problem(1.0, 0.9)).feasible


@pytest.mark.parametrize("a, rho, expected", [(0.5, 0.9, True), (0.5, 0.45, False), (0.89, 0.9, True),
                                              (0.91, 0.9, False)])
def test_toy_scalar_contraction(a, rho, expected):
    res = sdp_feasible(scalar_problem(a, rho))
    assert res.feasible is expected
    if expected:
        ok, resid, mpd = verify_witness(scalar_problem(a, rho), res.values)
        assert ok and resid <= 1e-7 and mpd >= 1e-8


def test_pack_unpack_round_trip():
    prob = build_lossless_lmis(LOSSLESS_05, NORMALIZED, 0.5, 0.95)
    vals = {"P": np.array([[2.0, 0.3], [0.3, 1.0]]), "Q": np.array([[1.0, -0.2], [-0.2, 3.0]]),
            "lam0": 0.7, "lam1": 1.1}
    back = prob.unpack(prob.pack(vals))
    for k, v in vals.items():
        np.testing.assert_array_equal(back[k], v)


def test_coefficients_match_direct_evaluation():
    prob = build_lossless_lmis(LOSSLESS_05, NORMALIZED, 0.5, 0.9)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(prob.nvar)
    direct = prob.evaluate(prob.unpack(x))
    for C, F in zip(prob.coefficients(), direct):
        np.testing.assert_allclose(np.tensordot(x, C, axes=1), F, atol=1e-12)


def test_feasible_with_verified_witness():
    prob = build_lossless_lmis(LOSSLESS_05, NORMALIZED, 0.5, 0.99)
    res = sdp_feasible(prob)
    assert res.feasible
    ok, resid, mpd = verify_witness(prob, res.values)
    assert ok
    assert res.residual == pytest.approx(resid)


def test_below_lower_bound_infeasible():
    for rho in (0.5, 0.8, 9 / 11 - 1e-3):
        assert not sdp_feasible(build_lossless_lmis(LOSSLESS_05, NORMALIZED, 0.5, rho)).feasible


def test_no_gradient_step_not_certifiable():
    p = ShSvlParams(0.0, 0.5, 0.5, 0.5)
    for rho in (0.9, 0.99, 0.999):
        assert not sdp_feasible(build_lossless_lmis(p, NORMALIZED, 0.5, rho)).feasible


def test_feasibility_monotone_in_rho():
    verdicts = [sdp_feasible(build_lossless_lmis(LOSSLESS_05, NORMALIZED, 0.5, r)).feasible
                for r in np.linspace(0.80, 0.99, 20)]
    first = verdicts.index(True)
    assert all(verdicts[first:]) and not any(verdicts[:first])


def test_cvxpy_cross_check():
    pytest.importorskip("cvxpy")
    for rho in (0.80, 0.823, 0.83, 0.99):
        prob = build_lossless_lmis(LOSSLESS_05, NORMALIZED, 0.5, rho)
        t_ref, _ = solve_with_cvxpy(prob)
        ours = sdp_feasible(prob)
        if abs(t_ref) > 1e-6:
            assert ours.feasible == (t_ref < 0)
