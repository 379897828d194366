import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from nullgenus.deform import realize
from nullgenus.domain import (annulus_components, appendix_bound, build_mesh, certify_bounded, cheb_nodes,
                              choose_r, lift_segment, trace_boundary)
from nullgenus.errors import MeshFailure, NoValidAnnulus, NumericalInconsistency, WrongTopology

from conftest import Solved


def scaled_G(solved, s):
    lam = s * solved.params.lam
    return (lambda z: solved.ctx.values(z).G(lam)), (lambda z: solved.ctx.values(z).dG(lam))


@pytest.mark.parametrize("which,components", [("sphere_c2", 2), ("torus_c2", 4)])
def test_topology_matches_ends(which, components, request):
    s = request.getfixturevalue(which)
    rep = trace_boundary(s.G, s.dG, s.ctx.surface, s.ctx.ends, 64)
    assert rep.components == components == s.ctx.ends.e + 1
    assert sorted(rep.ends) == list(range(components))
    # each component winds once around its own end and not around the others
    W = np.array(rep.winding)
    order = np.argsort(rep.ends)
    assert np.allclose(W[order], np.eye(components), atol=1e-6)
    assert rep.min_dG > 0


def test_mesh_invariants(torus_c2):
    mesh = torus_c2.mesh
    bv = mesh.boundary_vertices()
    interior = np.setdiff1d(np.arange(mesh.nv), bv)
    assert np.all(mesh.G_abs[interior] < 1)
    assert np.max(np.abs(mesh.G_abs[bv] - 1)) < 1e-9
    assert mesh.min_dG_boundary > 0
    assert np.degrees(mesh.min_angle) > 0.5
    # spanning tree: every vertex but the root has a parent edge
    assert np.sum(mesh.parent_edge < 0) == 1 and mesh.parent_edge[mesh.root] < 0
    assert len(mesh.nontree) == len(mesh.edges) - (mesh.nv - 1)


def test_refinement_keeps_topology_and_quadruples_vertices(torus_c2):
    coarse = build_mesh(torus_c2.G, torus_c2.dG, torus_c2.ctx.surface, torus_c2.ctx.ends, 48)
    fine = build_mesh(torus_c2.G, torus_c2.dG, torus_c2.ctx.surface, torus_c2.ctx.ends, 96)
    assert coarse.components == fine.components == 4
    assert 3.5 < fine.nv / coarse.nv < 4.5


@pytest.mark.parametrize("scale,error", [(10, WrongTopology), (100, MeshFailure)])
def test_topology_breaks_for_large_parameters(torus_c2, scale, error):
    G, dG = scaled_G(torus_c2, scale)
    with pytest.raises(error):
        trace_boundary(G, dG, torus_c2.ctx.surface, torus_c2.ctx.ends, 96)


def test_choose_r_returns_largest_passing_value(torus_c2):
    mesh = torus_c2.mesh
    info = choose_r(mesh, torus_c2.dG, scan=(0.6, 0.7, 0.8, 0.9))
    passing = [row["r"] for row in info["scan"] if row["passed"]]
    assert info["r"] == max(passing)
    lab, end_of = annulus_components(mesh, info["r"])
    assert len(end_of) == torus_c2.ctx.ends.e + 1
    assert sorted(next(iter(v)) for v in end_of.values()) == [0, 1, 2, 3]
    # dense sampling oracle for min |dG| on the chosen annuli
    row = next(r for r in info["scan"] if r["r"] == info["r"])
    ring = mesh.vertices[mesh.G_abs >= info["r"]]
    assert 0 < row["min_abs_dG"] <= np.min(np.abs(torus_c2.dG(ring))) + 1e-12


def test_choose_r_rejects_impossible_floor(torus_c2):
    with pytest.raises(NoValidAnnulus):
        choose_r(torus_c2.mesh, torus_c2.dG, floor=1e12)


def test_path_lifting(torus_c2):
    mesh = torus_c2.mesh
    v = int(np.flatnonzero((mesh.G_abs > 0.9) & (mesh.G_abs < 0.99))[0])
    q = mesh.vertices[v]
    w0 = torus_c2.G(np.array([q]))[0]
    sigma = w0 + cheb_nodes(65) * (0.8 * w0 / abs(w0) - w0)
    lift, resid = lift_segment(torus_c2.G, torus_c2.dG, q, sigma)
    assert resid < 1e-9
    assert np.max(np.abs(torus_c2.G(lift) - sigma)) < 1e-9
    assert lift[0] == q


def test_closed_form_bound_examples():
    # a = e^{it}, b = 1 on [0, 2 pi]: C1 = max |e^{is} - 1| = 2, C3 = 0
    res = appendix_bound(lambda t: np.exp(1j * t), lambda t: np.ones_like(t), 2 * np.pi)
    assert res.C1 == pytest.approx(2, rel=1e-6)
    assert res.C3 == pytest.approx(0, abs=1e-10)
    assert res.C == pytest.approx(2, rel=1e-6)
    assert res.integral < 1e-12
    # a = e^{it}, b = t on [0, 1]: C1 = 2 sin(1/2), C2 = C3 = 1
    res = appendix_bound(lambda t: np.exp(1j * t), lambda t: t + 0j, 1.0)
    assert res.C1 == pytest.approx(2 * np.sin(0.5), rel=1e-6)
    assert res.C2 == pytest.approx(1) and res.C3 == pytest.approx(1)
    assert res.C == pytest.approx(4 * np.sin(0.5), rel=1e-6)
    exact = abs((1 - 1j) * np.exp(1j) - 1)  # |int_0^1 t e^{it} dt|
    assert res.integral == pytest.approx(exact, rel=1e-12)
    assert res.integral <= res.C


def test_shared_constants_raise_the_bound():
    a, b = (lambda t: np.exp(1j * t)), (lambda t: t + 0j)
    res = appendix_bound(a, b, 1.0, C2=3.0, C3=5.0)
    assert res.C2 == 3.0 and res.C3 == 5.0


def test_violated_inequality_is_reported():
    # negative slack makes even the exact bound fail
    with pytest.raises(NumericalInconsistency):
        appendix_bound(lambda t: np.ones_like(t) + 0j, lambda t: np.ones_like(t) + 0j, 1.0, slack=-10)


coef = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(a0=coef, a1=coef, w=st.floats(0.1, 6), b0=coef, b1=coef, b2=coef, L=st.floats(0.2, 4))
def test_integration_by_parts_inequality_property(a0, a1, w, b0, b1, b2, L):
    a = lambda t: (a0 + 1j * a1) * np.exp(1j * w * t) + a1 * t
    b = lambda t: b0 + b1 * np.cos(t) + 1j * b2 * t ** 2
    res = appendix_bound(a, b, L)
    re = quad(lambda t: (a(t) * b(t)).real, 0, L, epsabs=1e-13, limit=200)[0]
    im = quad(lambda t: (a(t) * b(t)).imag, 0, L, epsabs=1e-13, limit=200)[0]
    oracle = abs(re + 1j * im)
    assert res.integral == pytest.approx(oracle, rel=1e-8, abs=1e-10)
    assert oracle <= res.C + 1e-8


@pytest.fixture(scope="module")
def certificate(torus_c2):
    real = realize("C2", torus_c2.data, torus_c2.mesh, origin=torus_c2.origin)
    X = real.potential[:, :2]
    info = choose_r(torus_c2.mesh, torus_c2.dG)
    return real, certify_bounded(torus_c2.data, torus_c2.mesh, X, info, segments=8, seed=3)


def test_boundedness_certificate_segments(certificate):
    _, cert = certificate
    assert len(cert.segments) == 8 * 4
    for seg in cert.segments:
        assert seg["direct"] <= seg["C"] + 1e-8
        assert seg["lift_residual"] < 1e-9
        assert seg["split_error"] < 1e-8
    assert cert.mesh_max <= cert.global_bound
    assert cert.min_abs_dG_annuli > 0


def test_segments_on_one_end_share_sup_constants(certificate):
    _, cert = certificate
    for end, d in cert.per_end.items():
        rows = [s for s in cert.segments if s["end"] == end]
        assert {s["I1"]["C2"] for s in rows} == {d["C2_1"]}
        assert {s["I2"]["C3"] for s in rows} == {d["C3_2"]}


def test_certificate_is_seeded(torus_c2, certificate):
    real, cert = certificate
    again = certify_bounded(torus_c2.data, torus_c2.mesh, real.potential[:, :2],
                            choose_r(torus_c2.mesh, torus_c2.dG), segments=8, seed=3)
    assert again.to_dict() == cert.to_dict()


def test_refinement_stability_of_max_modulus(torus_ctx, disk, torus_engine):
    # at the default c and resolution of a torus run; for much smaller c the
    # holes are only a few grid cells wide and the maximum moves by a few percent
    s = Solved(torus_ctx, disk, torus_engine, "C2", [0.0005, 0.001, 0.002], 128)
    fine = build_mesh(s.G, s.dG, torus_ctx.surface, torus_ctx.ends, 256)
    m1 = np.max(np.linalg.norm(realize("C2", s.data, s.mesh, origin=s.origin).values, axis=1))
    m2 = np.max(np.linalg.norm(realize("C2", s.data, fine, origin=s.origin).values, axis=1))
    assert abs(m2 - m1) / m1 < 0.01
