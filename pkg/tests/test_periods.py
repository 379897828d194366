import numpy as np
import pytest

from nullgenus.deform import DeformationParams
from nullgenus.errors import DegeneratePeriodMatrix, NoConvergence
from nullgenus.periods import (continuation, fd_jacobian, jacobian, kill_periods, loop_integral, period_map,
                               period_matrix, select)
from nullgenus.surface import Loop

PI = np.pi
# Periods of (dz, wp dz, eta_1, eta_2, eta_3) on the square torus, computed with
# mpmath theta functions at 20 digits by direct quadrature over the same loops
# (segments from 0.25 + 0.25i along 1 and i, circles of radius 0.2 about the
# half periods).
TORUS_P = np.array([
    [1, -PI, -PI / 2, 1.5j * PI, -PI / 2 + 1.5j * PI],
    [1j, 1j * PI, -1.5j * PI, -PI / 2, -PI / 2 - 1.5j * PI],
    [0, 0, 2j * PI, 0, 0],
    [0, 0, 0, 2j * PI, 0],
    [0, 0, 0, 0, 2j * PI],
])


def unit_circle():
    return Loop("end", 1, center=0j, radius=1.0)


def test_residue_theorem_on_unit_circle():
    assert loop_integral(lambda z: 1 / z, unit_circle()) == pytest.approx(2j * PI, abs=1e-13)
    assert abs(loop_integral(lambda z: z, unit_circle())) < 1e-13


def test_sphere_period_matrix(sphere_engine):
    assert sphere_engine.P.P.shape == (1, 1)
    assert abs(sphere_engine.P.P[0, 0] - 2j * PI) < 1e-9


def test_torus_period_matrix(torus_engine, torus_ctx):
    P = torus_engine.P.P
    assert [lp.tag for lp in torus_ctx.loops] == ["handle-1", "handle-2", "end-1", "end-2", "end-3"]
    assert np.max(np.abs(P - TORUS_P)) < 1e-9
    assert torus_engine.P.condition < 1e3


def test_degenerate_period_matrix(torus_ctx):
    loops = list(torus_ctx.loops)
    loops[1] = loops[0]
    with pytest.raises(DegeneratePeriodMatrix):
        period_matrix(torus_ctx.basis, loops, surface=torus_ctx.surface)


@pytest.mark.parametrize("which", ["sphere_engine", "torus_engine"])
def test_periods_vanish_at_base_point(which, request):
    engine = request.getfixturevalue(which)
    per = engine.periods(DeformationParams.zero(engine.n))
    assert np.max(np.abs(per)) < 1e-10


def test_variant_selection():
    per = np.arange(6).reshape(3, 2) * (1 + 2j)
    assert np.allclose(select("Per1", per), [0, 1 + 2j, 2 + 4j, 3 + 6j])
    assert np.allclose(select("Per2", per), [0, 1, 2, 3, 4, 5])
    assert np.allclose(select("Per3", per), [0, 2, 2, 3, 4, 5])
    with pytest.raises(ValueError):
        select("Per4", per)


@pytest.mark.parametrize("which", ["sphere_engine", "torus_engine"])
def test_j1_matches_finite_differences(which, request, disk):
    engine = request.getfixturevalue(which)
    n = engine.n
    rep = jacobian("J1", disk, engine.P, engine)
    assert rep.analytic.shape == (2 * n, 2 * n)
    assert rep.discrepancy < 1e-6
    assert np.all(rep.analytic[n:, n:] == 0)
    assert rep.rank == 2 * n
    assert abs(np.linalg.det(rep.finite_difference)) > 0


def test_j1_lambda_column_is_scaled_period_matrix(torus_engine, disk):
    # d Per1(Psi1, gamma_k) / d lambda_j = phi1'(0) p_kj at the base point
    fd = fd_jacobian("J1", torus_engine)
    n = torus_engine.n
    dphi1 = disk.at0()["dphi"][0]
    assert np.allclose(fd[:n, :n], dphi1 * torus_engine.P.P, rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("variant", ["J2", "J3"])
@pytest.mark.parametrize("which", ["sphere_engine", "torus_engine"])
def test_real_jacobians_have_rank_3n(variant, which, request, disk):
    engine = request.getfixturevalue(which)
    n = engine.n
    rep = jacobian(variant, disk, engine.P, engine)
    assert rep.analytic.shape == (3 * n, 4 * n)
    assert rep.discrepancy < 1e-6
    assert rep.rank == 3 * n
    s = rep.singular_values
    assert s[3 * n - 1] / s[0] > 1e-8


def test_third_block_is_independent_of_delta(torus_engine):
    fd = fd_jacobian("J2", torus_engine)
    n = torus_engine.n
    # rows of Re oint Psi3; delta columns are s_{n+1..2n} and t_{n+1..2n}
    assert np.max(np.abs(fd[2 * n:, n:2 * n])) < 1e-8
    assert np.max(np.abs(fd[2 * n:, 3 * n:])) < 1e-8


def test_zero_c_returns_base_point(torus_engine):
    sol = kill_periods("C2", 0, torus_engine)
    assert sol.residual == 0 and sol.params.norm == 0


def test_sphere_solution_has_trivial_correction(sphere_engine):
    # With lam = (c, 0) and delta = 0, G = 2c(z^4 + z^-2) and Psi_1, Psi_2 are
    # power series in G times 2z dz; every monomial has odd degree, so no
    # residue at 0 and both periods vanish identically.
    sol = kill_periods("C2", 0.01, sphere_engine)
    assert sol.residual < 1e-10
    assert np.max(np.abs(sol.params.lam[1:])) < 1e-12
    assert np.max(np.abs(sol.params.delta)) < 1e-12
    assert sol.params.lam[0] == 0.01


@pytest.mark.parametrize("target,var", [("C2", "Per1"), ("R3", "Per2"), ("L3", "Per3")])
def test_torus_period_killing(target, var, torus_engine):
    sols = continuation(target, [0.0005, 0.001], torus_engine)
    for sol in sols:
        assert sol.residual < 1e-10
        assert np.linalg.norm(period_map(var, sol.params, torus_engine)) < 1e-10
        assert sol.iterations <= 10


def test_lambda_over_c_stays_bounded(torus_engine):
    sols = continuation("C2", [0.00025, 0.0005, 0.001], torus_engine)
    ratios = [np.linalg.norm(s.params.lam) / abs(s.c) for s in sols]
    assert max(ratios) < 2 * min(ratios)


def test_newton_solution_is_locally_unique(torus_engine, rng):
    base = kill_periods("C2", 0.0005, torus_engine).params
    start = DeformationParams(base.lam * 2, base.delta * 2)
    sols = []
    for _ in range(2):
        kick = 0.05 * base.norm * (rng.normal(size=2 * torus_engine.n) + 1j * rng.normal(size=2 * torus_engine.n))
        u = start.unknowns() + kick
        sols.append(kill_periods("C2", 0.001, torus_engine, start=DeformationParams.from_unknowns(0.001, u)))
    assert np.max(np.abs(sols[0].params.unknowns() - sols[1].params.unknowns())) < 1e-8


def test_minimum_norm_solution_is_reproducible(torus_engine):
    a = kill_periods("R3", 0.0005, torus_engine)
    b = kill_periods("R3", 0.0005, torus_engine)
    assert np.array_equal(a.params.real(), b.params.real())


def test_cold_start_too_far_out_fails(torus_engine):
    with pytest.raises(NoConvergence):
        kill_periods("C2", 0.002, torus_engine)


def test_solve_trace_is_serializable(torus_engine):
    d = kill_periods("C2", 0.0005, torus_engine).to_dict()
    assert d["residual"] < 1e-10 and d["trace"][-1] == d["residual"]
    assert d["lam_over_c"] > 1
