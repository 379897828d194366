import numpy as np
import pytest

from nullgenus.errors import InvalidModulus, LoopConstructionFailed, NearPole
from nullgenus.surface import (EllipticKernel, EndData, elliptic_eval, gap_series, homology_loops, make_surface,
                               winding_number)

# Oracle values from mpmath theta functions at 30 digits:
#   g2 = (2/3) pi^4 (t2^8 + t3^8 + t4^8),
#   g3 = (4/27) pi^6 (t2^4 + t3^4)(t3^4 + t4^4)(t4^4 - t2^4),
#   wp = (pi t2 t3 t4(pi z) / t1(pi z))^2 - pi^2/3 (t2^4 + t3^4),
#   eta1 = -pi^2 t1'''(0) / (6 t1'(0)).
# The same g2, g3 agree with truncated lattice sums (|m|, |n| <= 800) to 2e-7 and 1e-14.
TAU_SKEW = 0.3 + 1.1j
ORACLE_G = {
    1j: (189.07272012923386 + 0j, 0j),
    TAU_SKEW: (120.05792111801983 + 29.37020740734357j, 332.8310509248966 - 133.2457048945383j),
}
ORACLE_WP = {
    1j: [(0.2 + 0.1j, 12.280122621195385 - 15.620557272602744j),
         (0.37 + 0.41j, -0.4221418784910125 - 1.1093654132936215j),
         (-0.15 + 0.3j, -5.931706112084889 + 6.246128786742653j)],
    TAU_SKEW: [(0.2 + 0.1j, 12.122743876236397 - 15.684221793249247j),
               (0.37 + 0.451j, -2.3439433643907814 - 1.0561790307927448j),
               (-0.15 + 0.3j, -5.575738450687603 + 6.634048299999702j)],
}
ORACLE_ETA1 = {1j: np.pi / 2 + 0j, TAU_SKEW: 1.6571828979154102 - 0.037336539552961096j}


@pytest.fixture(scope="module", params=[1j, TAU_SKEW], ids=["square", "skew"])
def kernel(request):
    return EllipticKernel(request.param)


def test_invariants_match_theta_oracle(kernel):
    g2, g3 = ORACLE_G[kernel.tau]
    assert abs(kernel.g2 - g2) < 1e-10 * abs(g2)
    assert abs(kernel.g3 - g3) < 1e-10 * max(abs(g3), abs(g2))


def test_wp_matches_theta_oracle(kernel):
    for z, w in ORACLE_WP[kernel.tau]:
        assert abs(kernel.wp(np.array([z]))[0] - w) < 1e-12 * abs(w)


def test_quasi_period_and_legendre(kernel):
    assert abs(kernel.eta1 - ORACLE_ETA1[kernel.tau]) < 1e-12
    assert abs(kernel.eta1 * kernel.tau - kernel.eta3 - 1j * np.pi) < 1e-12


def test_self_test_is_tight(kernel):
    assert max(kernel.self_test().values()) < 1e-10


def test_differential_equation_random_points(kernel, rng):
    z = rng.uniform(-0.45, 0.45, 100) + rng.uniform(-0.45, 0.45, 100) * kernel.tau
    w, dw = kernel.wp(z), kernel.wp_prime(z)
    lhs = dw ** 2
    rhs = 4 * w ** 3 - kernel.g2 * w - kernel.g3
    assert np.max(np.abs(lhs - rhs) / (np.abs(lhs) + np.abs(4 * w ** 3))) < 1e-10


def test_parity_and_periodicity(kernel, rng):
    z = rng.uniform(-0.4, 0.4, 50) + rng.uniform(-0.4, 0.4, 50) * kernel.tau
    assert np.allclose(kernel.wp(-z), kernel.wp(z), rtol=1e-12)
    assert np.allclose(kernel.wp_prime(-z), -kernel.wp_prime(z), rtol=1e-11)
    assert np.allclose(kernel.zeta(-z), -kernel.zeta(z), rtol=1e-12)
    for shift in (1, kernel.tau, 2 - 3 * kernel.tau):
        assert np.allclose(kernel.wp(z + shift), kernel.wp(z), rtol=1e-11)
    assert np.allclose(kernel.zeta(z + 1), kernel.zeta(z) + 2 * kernel.eta1, rtol=1e-11)
    assert np.allclose(kernel.zeta(z + kernel.tau), kernel.zeta(z) + 2 * kernel.eta3, rtol=1e-11)


def test_zeta_derivative_is_minus_wp(kernel):
    z = np.array([0.21 + 0.13j, -0.3 + 0.2j])
    h = 1e-5
    fd = (kernel.zeta(z + h) - kernel.zeta(z - h)) / (2 * h)
    assert np.allclose(fd, -kernel.wp(z), rtol=1e-8)


def test_wp_prime_vanishes_at_half_periods(kernel):
    half = np.array([0.5, kernel.tau / 2, (1 + kernel.tau) / 2])
    scale = np.abs(kernel.wp_prime(np.array([0.1 + 0.1j])))[0]
    assert np.all(np.abs(kernel.wp_prime(half)) < 1e-10 * scale)
    assert np.allclose(kernel.wp(half), [kernel.e1, kernel.e2, kernel.e3], rtol=1e-12)
    assert abs(kernel.e1 + kernel.e2 + kernel.e3) < 1e-10 * abs(kernel.e1)


def test_triple_matches_individual_evaluators(kernel, rng):
    z = rng.uniform(-2, 2, 40) + rng.uniform(-2, 2, 40) * kernel.tau
    wp, wpp, zeta = kernel.triple(z)
    assert np.allclose(wp, kernel.wp(z), rtol=1e-13)
    assert np.allclose(wpp, kernel.wp_prime(z), rtol=1e-13)
    assert np.allclose(zeta, kernel.zeta(z), rtol=1e-13)


@pytest.mark.parametrize("k", [2, 3, 4, 5])
def test_higher_derivatives_by_finite_differences(kernel, k):
    z = np.array([0.23 + 0.17j, 0.31 - 0.12j])
    h = 1e-5
    fd = (kernel.wp_derivative(k - 1, z + h) - kernel.wp_derivative(k - 1, z - h)) / (2 * h)
    assert np.allclose(kernel.wp_derivative(k, z), fd, rtol=1e-7)


def test_pole_guard():
    kern = EllipticKernel(1j)
    with pytest.raises(NearPole):
        elliptic_eval(kern, "wp", 1 + 1e-5)
    assert np.isfinite(elliptic_eval(kern, "zeta", 0.3 + 0.2j))


@pytest.mark.parametrize("tau", [0.5 + 0j, 1 - 0.2j])
def test_invalid_modulus(tau):
    with pytest.raises(InvalidModulus):
        make_surface("torus", tau=tau)


def test_gap_series():
    assert gap_series(make_surface("sphere")) == []
    assert gap_series(make_surface("torus")) == [1]


def test_unknown_surface_kind():
    with pytest.raises(ValueError):
        make_surface("klein")


def test_torus_loops_wind_once_around_their_end(torus):
    ends = EndData((0j, 0.5 + 0j, 0.5j, 0.5 + 0.5j), 2, (1, 1, 1))
    loops = homology_loops(torus, ends)
    assert [lp.tag for lp in loops] == ["handle-1", "handle-2", "end-1", "end-2", "end-3"]
    for lp in loops[2:]:
        w = [winding_number(lp, q) for q in ends.points]
        assert np.allclose(w, np.eye(4)[lp.index], atol=1e-9)
    a, b = loops[0], loops[1]
    assert np.isclose(a.point(1.0) - a.point(0.0), 1)
    assert np.isclose(b.point(1.0) - b.point(0.0), torus.tau)


def test_loop_radius_too_large(torus):
    ends = EndData((0j, 0.5 + 0j, 0.5j, 0.5 + 0.5j), 2, (1, 1, 1))
    with pytest.raises(LoopConstructionFailed):
        homology_loops(torus, ends, radius=0.45)


def test_sphere_loops(sphere):
    ends = EndData((complex("inf"), 0j), 2, (1,))
    loops = homology_loops(sphere, ends)
    assert len(loops) == 1 and loops[0].radius == 1.0
    assert winding_number(loops[0], 0j) == pytest.approx(1.0)
