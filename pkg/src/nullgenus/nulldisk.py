"""The initial null holomorphic disk and its normalisation.

A disk is stored through its triple ``phi = (phi1, phi2, phi3)`` with
``X0(z) = int_0^z phi``; the Weierstrass pair is recovered as
``omega0 = (phi1 - i phi2) / 2`` and ``g = phi3 / (phi1 - i phi2)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import Polynomial

from .errors import InconsistentData, NormalizationFailed, PlanarData

NULL_TOL = 1e-11
CONDITION_TOL = 1e-12

BUNDLED = {
    "z-1": ([0, 1], [1]),
    "z2-affine": ([0, 0, 1], [1, 0.5]),
}


def _poly(coef) -> Polynomial:
    coef = [complex(*c) if isinstance(c, (list, tuple)) else complex(c) for c in coef]
    return Polynomial(np.asarray(coef, dtype=complex))


@dataclass(frozen=True)
class NormalizationRecord:
    z0: complex
    c: Optional[complex]
    T: np.ndarray = field(repr=False)
    branch: str = "principal square root of 1 + c^2"
    permutation: tuple = (0, 1, 2)
    flipped: bool = False

    @property
    def trivial(self) -> bool:
        return self.z0 == 0 and np.array_equal(self.T, np.eye(3))

    def orthogonality_error(self) -> float:
        return float(np.max(np.abs(self.T.T @ self.T - np.eye(3))))

    def to_dict(self) -> dict:
        cpx = lambda w: [float(np.real(w)), float(np.imag(w))]
        return {
            "z0": cpx(self.z0),
            "c": None if self.c is None else cpx(self.c),
            "T": [[cpx(x) for x in row] for row in self.T],
            "branch": self.branch,
            "permutation": list(self.permutation),
            "flipped": self.flipped,
            "orthogonality_error": self.orthogonality_error(),
        }


class NullDiskData:
    """Null disk given by vectorised callables for ``phi``, ``phi'`` and the
    primitive ``X0``; each returns an array of shape ``(3,) + z.shape``."""

    def __init__(self, phi: Callable, dphi: Callable, primitive: Callable, label: str = "custom",
                 normalized: bool = False, record: Optional[NormalizationRecord] = None,
                 boundary_nodes: int = 4096):
        self._phi, self._dphi, self._prim = phi, dphi, primitive
        self.label = label
        self.normalized = normalized
        self.record = record
        t = np.exp(2j * np.pi * np.arange(boundary_nodes) / boundary_nodes)
        self.R = float(np.max(np.linalg.norm(self.primitive(t), axis=0)))

    def phi(self, z):
        return self._phi(np.asarray(z, dtype=complex))

    def dphi(self, z):
        return self._dphi(np.asarray(z, dtype=complex))

    def primitive(self, z):
        return self._prim(np.asarray(z, dtype=complex))

    def omega(self, z):
        p = self.phi(z)
        return (p[0] - 1j * p[1]) / 2

    def g(self, z):
        p = self.phi(z)
        return p[2] / (p[0] - 1j * p[1])

    def AB(self, z):
        """``A = omega0``, ``B = g^2 omega0`` and ``phi3`` with derivatives."""
        p, dp = self.phi(z), self.dphi(z)
        A, B = (p[0] - 1j * p[1]) / 2, -(p[0] + 1j * p[1]) / 2
        dA, dB = (dp[0] - 1j * dp[1]) / 2, -(dp[0] + 1j * dp[1]) / 2
        return A, B, p[2], dA, dB, dp[2]

    def at0(self) -> dict:
        z = np.zeros(1, dtype=complex)
        p, dp = self.phi(z)[:, 0], self.dphi(z)[:, 0]
        return {"phi": p, "dphi": dp}

    def null_residual(self, z) -> float:
        p = self.phi(z)
        return float(np.max(np.abs(np.sum(p ** 2, axis=0))) / max(np.max(np.abs(p)) ** 2, 1e-300))

    def conditions(self) -> dict:
        """Residuals of the normal form at 0 (zero residual / nonzero margin)."""
        v = self.at0()
        p, dp = v["phi"], v["dphi"]
        return {
            "phi1": abs(p[0]),
            "phi3_nonzero": abs(p[2]),
            "dphi3_nonzero": abs(dp[2]),
            "phi2_minus_i_phi3": abs(p[1] - 1j * p[2]),
            "dphi2_minus_i_dphi3": abs(dp[1] - 1j * dp[2]),
        }

    def is_normal(self, tol: float = CONDITION_TOL) -> bool:
        c = self.conditions()
        return (c["phi1"] < tol and c["phi2_minus_i_phi3"] < tol and c["dphi2_minus_i_dphi3"] < tol
                and c["phi3_nonzero"] > 1e-8 and c["dphi3_nonzero"] > 1e-8)


def _check(disk: NullDiskData, samples: int = 200, seed: int = 0):
    rng = np.random.default_rng(seed)
    z = np.sqrt(rng.uniform(0, 1, samples)) * np.exp(2j * np.pi * rng.uniform(0, 1, samples))
    res = disk.null_residual(z)
    if res > NULL_TOL:
        raise InconsistentData(f"null identity violated: {res:.3e}", residual=res)
    s = np.linalg.svd(disk.phi(z), compute_uv=False)
    if not s[0] > 0:
        raise InconsistentData("the disk is constant (phi vanishes identically)")
    if s[-1] < 1e-10 * s[0]:
        raise PlanarData("the image of the disk lies in a plane", singular_values=s.tolist())
    return disk


def load_disk(g, omega, label: str = "custom") -> NullDiskData:
    """Disk from polynomial Weierstrass data (coefficient lists, constant term first)."""
    g, w = _poly(g), _poly(omega)
    dg, dw = g.deriv(), w.deriv()
    p1, p2, p3 = (1 - g ** 2) * w, 1j * (1 + g ** 2) * w, 2 * g * w
    polys = [p1, p2, p3]
    ders = [q.deriv() for q in polys]
    prims = [q.integ() for q in polys]
    return _check(NullDiskData(
        lambda z: np.array([q(z) for q in polys]),
        lambda z: np.array([q(z) for q in ders]),
        lambda z: np.array([q(z) for q in prims]),
        label=label,
    ))


def load_triple(phi, label: str = "triple") -> NullDiskData:
    """Disk from three polynomial coefficient lists ``phi1, phi2, phi3``."""
    polys = [_poly(c) for c in phi]
    ders = [q.deriv() for q in polys]
    prims = [q.integ() for q in polys]
    return _check(NullDiskData(
        lambda z: np.array([q(z) for q in polys]),
        lambda z: np.array([q(z) for q in ders]),
        lambda z: np.array([q(z) for q in prims]),
        label=label,
    ))


def bundled_disk(name: str = "z-1") -> NullDiskData:
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled disk {name!r}; choose from {sorted(BUNDLED)}")
    g, w = BUNDLED[name]
    return load_disk(g, w, label=name)


def _rotation(p, z0, perm):
    """Orthogonal matrix bringing ``p = phi(z0)`` to ``(0, i p3, p3)``."""
    P = np.eye(3)[list(perm)]
    q = P @ p
    c = None
    T = np.eye(3, dtype=complex)
    if abs(q[0]) > 1e-14 * max(np.abs(q).max(), 1.0):
        c = complex(q[1] / q[0])
        s = 1.0 / np.sqrt(1 + c * c + 0j)
        T = np.array([[-c * s, s, 0], [-s, -c * s, 0], [0, 0, 1]], dtype=complex)
    q = T @ q
    flip = bool(abs(q[1] + 1j * q[2]) < abs(q[1] - 1j * q[2]))
    if flip:
        T = np.diag([1, -1, 1]).astype(complex) @ T
    return T @ P, c, flip


def _recentered(disk: NullDiskData, z0: complex, T: np.ndarray, label: str, record=None, normalized=False):
    a = np.conj(z0)
    k = 1 - abs(z0) ** 2
    x0 = disk.primitive(np.array([z0]))[:, 0]

    def mu(z):
        return (z + z0) / (1 + a * z)

    def dmu(z):
        return k / (1 + a * z) ** 2

    def ddmu(z):
        return -2 * a * k / (1 + a * z) ** 3

    def phi(z):
        return np.tensordot(T, disk.phi(mu(z)) * dmu(z), axes=1)

    def dphi(z):
        m, d1 = mu(z), dmu(z)
        return np.tensordot(T, disk.dphi(m) * d1 ** 2 + disk.phi(m) * ddmu(z), axes=1)

    def prim(z):
        return np.tensordot(T, disk.primitive(mu(z)) - x0.reshape((3,) + (1,) * np.ndim(z)), axes=1)

    return NullDiskData(phi, dphi, prim, label=label, normalized=normalized, record=record)


def normalize_disk(disk: NullDiskData, z0: Optional[complex] = None, grid: int = 64,
                   radius: float = 0.7):
    """Return ``(normalized disk, record)``.

    Candidates are the hint ``z0`` (if given) or a grid on the circle of the
    given radius; each candidate is scored on the recentered data by
    ``min(|phi3(0)|, |phi3'(0)|, |phi1(z0) -/+ i phi2(z0)|)`` and the best one
    kept.  Data already in normal form is returned unchanged with ``T = I``.
    """
    if disk.is_normal():
        rec = NormalizationRecord(0j, None, np.eye(3, dtype=complex))
        out = NullDiskData(disk._phi, disk._dphi, disk._prim, disk.label, True, rec)
        return out, rec
    if z0 is not None:
        cands = [complex(z0)]
    else:
        cands = list(radius * np.exp(2j * np.pi * np.arange(grid) / grid))
    perms = [(0, 1, 2), (1, 2, 0), (2, 0, 1)]
    best = None
    for perm in perms:
        for w in cands:
            if not abs(w) < 1:
                continue
            p = disk.phi(np.array([w]))[:, 0]
            q = np.eye(3)[list(perm)] @ p
            margin = min(abs(q[0] - 1j * q[1]), abs(q[0] + 1j * q[1]))
            T, c, flip = _rotation(p, w, perm)
            if not np.all(np.isfinite(T)):
                continue
            cand = _recentered(disk, w, T, disk.label)
            v = cand.at0()
            score = min(abs(v["phi"][2]), abs(v["dphi"][2]), margin)
            if best is None or score > best[0] * (1 + 1e-9):
                best = (score, w, T, c, flip, perm)
        if best is not None and best[0] > 1e-6:
            break
    if best is None or best[0] <= 1e-6:
        raise NormalizationFailed("no admissible base point found for the normal form")
    _, w, T, c, flip, perm = best
    rec = NormalizationRecord(complex(w), c, T, permutation=perm, flipped=flip)
    out = _recentered(disk, w, T, disk.label, record=rec, normalized=True)
    if not out.is_normal():
        raise NormalizationFailed("normal form conditions not met after rotation", conditions=out.conditions())
    return out, rec
