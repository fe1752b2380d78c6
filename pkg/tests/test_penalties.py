import math

import numpy as np
import pytest

from cals.penalties import PenaltyDomainError, PenaltyKind, penalty_derivative, penalty_value

KINDS = list(PenaltyKind)


def test_phr_value_examples():
    assert penalty_value("phr", 0.0, 1.0, 1.0) == 0.0
    assert penalty_value("phr", -2.0, 1.0, 1.0) == -0.5


def test_p2_p3_value_examples():
    assert penalty_value("p2", 1.0, 2.0, 1.0) == pytest.approx(11.0 / 3.0, abs=1e-14)
    assert penalty_value("p3", -1.0, 1.0, 2.0) == pytest.approx(-1.0, abs=1e-14)


@pytest.mark.parametrize("kind", KINDS)
def test_derivative_at_zero_is_lambda(kind):
    assert penalty_derivative(kind, 0.0, 7.3, 0.4) == pytest.approx(0.4, rel=1e-12)


def test_phr_derivative_examples():
    assert penalty_derivative("phr", 1.0, 2.0, 1.0) == 3.0
    assert penalty_derivative("phr", -2.0, 1.0, 1.0) == 0.0


def test_kind_parsing():
    assert PenaltyKind.parse("PHR") is PenaltyKind.PHR
    assert PenaltyKind.parse(PenaltyKind.P3) is PenaltyKind.P3
    with pytest.raises(ValueError):
        PenaltyKind.parse("exp")


@pytest.mark.parametrize("args", [(np.nan, 1.0, 1.0), (0.0, np.inf, 1.0), (0.0, 0.0, 1.0),
                                  (0.0, 1.0, -1.0), (0.0, -2.0, 1.0)])
def test_domain_errors(args):
    with pytest.raises(PenaltyDomainError):
        penalty_value("phr", *args)
    with pytest.raises(PenaltyDomainError):
        penalty_derivative("p2", *args)


def _sample(n, seed):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-10, 10, n)
    rho = 10 ** rng.uniform(-3, 3, n)
    lam = 10 ** rng.uniform(-6, 6, n)
    return z, rho, lam


@pytest.mark.parametrize("kind", KINDS)
def test_axiom1_nonnegative_derivative(kind):
    z, rho, lam = _sample(10_000, 1)
    assert np.all(penalty_derivative(kind, z, rho, lam) >= 0)


@pytest.mark.parametrize("kind", KINDS)
def test_axiom2_derivative_equals_lambda_at_zero(kind):
    _, rho, lam = _sample(10_000, 2)
    d = penalty_derivative(kind, np.zeros_like(rho), rho, lam)
    assert np.max(np.abs(d - lam) / lam) <= 1e-12


@pytest.mark.parametrize("kind", KINDS)
def test_axiom3_derivative_grows_with_rho(kind):
    d = [penalty_derivative(kind, 0.5, rho, 1.0) for rho in (1.0, 10.0, 100.0, 1000.0)]
    assert all(a < b for a, b in zip(d, d[1:]))


def test_axiom3_phr_large_rho():
    assert penalty_derivative("phr", 0.5, 1e4, 1.0) > 1e3


@pytest.mark.parametrize("kind", KINDS)
def test_axiom4_derivative_vanishes_for_large_rho(kind):
    assert penalty_derivative(kind, -0.5, 1e6, 1.0) < 1e-3


@pytest.mark.parametrize("kind", KINDS)
def test_derivative_matches_central_difference(kind):
    rng = np.random.default_rng(3)
    z = rng.uniform(-3, 3, 1000)
    rho = 10 ** rng.uniform(-1, 1, 1000)
    lam = 10 ** rng.uniform(-2, 1, 1000)
    # stay away from the branch switch points
    boundary = -lam / rho if kind is PenaltyKind.PHR else np.zeros_like(z)
    keep = np.abs(z - boundary) > 1e-3
    if kind is not PenaltyKind.PHR:
        keep &= rho * z < 0.9  # z <= 0 branch stays far from the pole at rho z = 1
    z, rho, lam = z[keep], rho[keep], lam[keep]
    h = 1e-6
    fd = (penalty_value(kind, z + h, rho, lam) - penalty_value(kind, z - h, rho, lam)) / (2 * h)
    d = penalty_derivative(kind, z, rho, lam)
    assert np.all(np.abs(d - fd) <= 1e-6 * (1 + np.abs(d)))


def test_phr_branches_agree_at_switch():
    rng = np.random.default_rng(4)
    for _ in range(200):
        rho, lam = 10 ** rng.uniform(-2, 2, 2)
        z0 = -lam / rho
        first = lam * z0 + 0.5 * rho * z0 ** 2
        second = -lam ** 2 / (2 * rho)
        assert abs(first - second) <= 1e-12 * max(1.0, abs(second))
        assert abs(penalty_value("phr", z0, rho, lam) - second) <= 1e-12 * max(1.0, abs(second))
        assert abs(penalty_derivative("phr", z0, rho, lam)) <= 1e-12 * max(1.0, lam)


@pytest.mark.parametrize("kind", [PenaltyKind.P2, PenaltyKind.P3])
def test_p2_p3_branches_agree_at_zero(kind):
    eps = 1e-9
    for lam, rho in [(0.3, 2.0), (5.0, 0.1)]:
        assert penalty_value(kind, eps, rho, lam) == pytest.approx(penalty_value(kind, -eps, rho, lam), abs=1e-8)


def test_scalar_in_scalar_out_and_broadcasting():
    v = penalty_value("phr", 0.5, 1.0, 1.0)
    assert isinstance(v, float) and math.isclose(v, 0.625)
    arr = penalty_value("p3", np.array([[0.1, -0.1]]), np.array([1.0, 2.0]), 1.0)
    assert arr.shape == (1, 2)
