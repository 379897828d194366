import numpy as np
import pytest

from nullgenus.errors import InconsistentData, NormalizationFailed, PlanarData
from nullgenus.nulldisk import BUNDLED, bundled_disk, load_disk, load_triple, normalize_disk

# Hand computation for the disk g = z, omega = dz recentred at z0 = 1/2:
# phi(1/2) = (3/4, 5i/4, 1), so c = phi2/phi1 = 5i/3, s = 1/sqrt(1 + c^2) = -3i/4,
# and after the sign flip on the second row
T_HALF = np.array([[-1.25, -0.75j, 0], [-0.75j, 1.25, 0], [0, 0, 1]])


@pytest.mark.parametrize("name", sorted(BUNDLED))
def test_bundled_disks_are_null(name, rng):
    disk = bundled_disk(name)
    z = np.sqrt(rng.uniform(0, 1, 200)) * np.exp(2j * np.pi * rng.uniform(0, 1, 200))
    assert disk.null_residual(z) < 1e-11


@pytest.mark.parametrize("name", sorted(BUNDLED))
def test_normal_form_conditions(name):
    disk, rec = normalize_disk(bundled_disk(name))
    cond = disk.conditions()
    assert cond["phi1"] < 1e-12
    assert cond["phi2_minus_i_phi3"] < 1e-12
    assert cond["dphi2_minus_i_dphi3"] < 1e-12
    assert cond["phi3_nonzero"] > 1e-6 and cond["dphi3_nonzero"] > 1e-6
    assert rec.orthogonality_error() < 1e-12


def test_explicit_rotation_at_one_half():
    disk, rec = normalize_disk(bundled_disk("z-1"), z0=0.5)
    assert rec.c == pytest.approx(5j / 3)
    assert np.allclose(rec.T, T_HALF, atol=1e-14)
    assert disk.is_normal()


def test_normalized_disk_is_a_reparametrized_rotation(rng):
    raw = bundled_disk("z-1")
    disk, rec = normalize_disk(raw, z0=0.5)
    z = 0.5 * rng.uniform(-1, 1, 5) + 0.5j * rng.uniform(-1, 1, 5)
    mu = (z + 0.5) / (1 + 0.5 * z)
    dmu = 0.75 / (1 + 0.5 * z) ** 2
    expect = rec.T @ (raw.phi(mu) * dmu)
    assert np.allclose(disk.phi(z), expect, rtol=1e-13)
    # the primitive vanishes at the new base point and differentiates to phi
    assert np.allclose(disk.primitive(np.zeros(1)), 0, atol=1e-15)
    h = 1e-6
    fd = (disk.primitive(z + h) - disk.primitive(z - h)) / (2 * h)
    assert np.allclose(fd, disk.phi(z), rtol=1e-7)


def test_derivative_of_phi_by_finite_differences(disk):
    z = np.array([0.1 + 0.2j, -0.3 + 0.1j])
    h = 1e-6
    fd = (disk.phi(z + h) - disk.phi(z - h)) / (2 * h)
    assert np.allclose(disk.dphi(z), fd, rtol=1e-7)


def test_weierstrass_pair_round_trip(disk):
    z = np.array([0.2 - 0.1j, 0.4j])
    g, w = disk.g(z), disk.omega(z)
    phi = np.array([(1 - g ** 2) * w, 1j * (1 + g ** 2) * w, 2 * g * w])
    assert np.allclose(phi, disk.phi(z), rtol=1e-12)
    A, B, p3, _, _, _ = disk.AB(z)
    assert np.allclose(B, g ** 2 * w, rtol=1e-12)


def test_already_normal_data_is_left_alone(disk):
    again, rec = normalize_disk(disk)
    assert rec.trivial
    assert np.allclose(again.phi(np.array([0.3j])), disk.phi(np.array([0.3j])))


def test_inconsistent_data_rejected():
    with pytest.raises(InconsistentData):
        load_triple([[1], [0], [1]])
    with pytest.raises(InconsistentData):
        load_disk([0, 1], [0])


def test_planar_data_rejected():
    # a null line: phi constant, image in a line
    with pytest.raises(PlanarData):
        load_triple([[1], [1j], [0]])


def test_normalization_failure_for_bad_hint():
    with pytest.raises(NormalizationFailed):
        normalize_disk(bundled_disk("z-1"), z0=2.0)


def test_boundary_radius():
    disk = bundled_disk("z-1")
    # |X0| on the unit circle for g = z, omega = dz: |(z - z^3/3, i(z + z^3/3), z^2)|
    t = np.exp(2j * np.pi * np.linspace(0, 1, 20001))
    X = np.array([t - t ** 3 / 3, 1j * (t + t ** 3 / 3), t ** 2])
    assert disk.R == pytest.approx(np.max(np.linalg.norm(X, axis=0)), rel=1e-6)
