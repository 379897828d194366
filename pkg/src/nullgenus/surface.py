"""Compact Riemann surface backends: the Riemann sphere and flat tori.

The torus ``C / (Z + tau Z)`` is served by :class:`EllipticKernel`, which
evaluates the Weierstrass functions through Jacobi theta series in the nome
``q = exp(i pi tau)``.  Everything here is immutable and vectorised over numpy
arrays of chart coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from .errors import InvalidModulus, LoopConstructionFailed, NearPole, PrecisionUnachievable

POLE_EXCLUSION = 1e-3
SELF_TEST_TOL = 1e-10


def _theta_terms(tau: complex, tail: float) -> int:
    # reduced arguments have |Im u| <= pi Im(tau) / 2, so the k-th term of
    # theta_1..theta_4 is bounded by exp(-pi Im(tau) (k^2 - k))
    budget = -math.log(tail) / (math.pi * tau.imag)
    k = 1
    while k * (k - 1) <= budget:
        k += 1
    return k + 1


class EllipticKernel:
    """Weierstrass functions for the lattice ``Z + tau Z``.

    Attributes ``g2``, ``g3`` are the lattice invariants, ``eta1``/``eta3`` the
    quasi-periods (``zeta(z + 1) = zeta(z) + 2 eta1``, ``zeta(z + tau) =
    zeta(z) + 2 eta3``) and ``e1, e2, e3`` the values of ``wp`` at ``1/2``,
    ``tau/2`` and ``(1 + tau)/2``.
    """

    def __init__(self, tau: complex, tail: float = 1e-17, pole_radius: float = POLE_EXCLUSION):
        tau = complex(tau)
        if not tau.imag > 0:
            raise InvalidModulus(f"modulus {tau} is not in the upper half plane")
        self.tau = tau
        self.tail = tail
        self.pole_radius = pole_radius
        self.nterms = _theta_terms(tau, tail)
        k = np.arange(self.nterms)
        self._qodd = np.exp(1j * np.pi * tau * (k + 0.5) ** 2)
        self._sign = (-1.0) ** k
        kk = np.arange(1, self.nterms + 1)
        self._qeven = np.exp(1j * np.pi * tau * kk.astype(float) ** 2)

        t1p0 = 2 * np.sum(self._sign * self._qodd * (2 * k + 1))
        t1ppp0 = -2 * np.sum(self._sign * self._qodd * (2 * k + 1) ** 3)
        t2 = 2 * np.sum(self._qodd)
        t3 = 1 + 2 * np.sum(self._qeven)
        t4 = 1 + 2 * np.sum((-1.0) ** kk * self._qeven)
        self.theta_constants = (complex(t2), complex(t3), complex(t4))
        self.theta1_prime0 = complex(t1p0)
        pi2 = np.pi ** 2
        self.e1 = complex(pi2 / 3 * (t3 ** 4 + t4 ** 4))
        self.e2 = complex(-pi2 / 3 * (t2 ** 4 + t3 ** 4))
        self.e3 = complex(pi2 / 3 * (t2 ** 4 - t4 ** 4))
        self.g2 = 2 * (self.e1 ** 2 + self.e2 ** 2 + self.e3 ** 2)
        self.g3 = 4 * self.e1 * self.e2 * self.e3
        self.eta1 = complex(-pi2 * t1ppp0 / (6 * t1p0))
        # zeta(tau/2) = eta3; evaluated straight from the series so that the
        # Legendre relation stays a genuine check
        self.eta3 = complex(self._series_zeta(np.array([tau / 2]), extra=4)[0])
        self._wp_c = complex(np.pi * t3 * t4) ** 2
        self._wpp_c = -2 * np.pi ** 3 * self.theta1_prime0 ** 2
        self._deriv_cache = {0: (Polynomial([0, 1]), Polynomial([0]))}

    # -- lattice bookkeeping ---------------------------------------------
    def lattice_coords(self, z):
        z = np.asarray(z, dtype=complex)
        y = z.imag / self.tau.imag
        x = z.real - y * self.tau.real
        return x, y

    def reduce(self, z):
        """Return ``(z_red, m, n)`` with ``z = z_red + m + n tau`` and ``z_red``
        in the centred period cell."""
        z = np.asarray(z, dtype=complex)
        x, y = self.lattice_coords(z)
        m = np.rint(x)
        n = np.rint(y)
        return z - m - n * self.tau, m, n

    def distance_to_lattice(self, z):
        zr, _, _ = self.reduce(z)
        best = np.abs(zr)
        for dm in (-1, 0, 1):
            for dn in (-1, 0, 1):
                if dm or dn:
                    best = np.minimum(best, np.abs(zr - dm - dn * self.tau))
        return best

    # -- theta series ------------------------------------------------------
    def _thetas(self, u, extra=0):
        u = np.asarray(u, dtype=complex)[..., None]
        n = self.nterms + extra
        k = np.arange(n)
        kk = np.arange(1, n + 1)
        if extra:
            qodd = np.exp(1j * np.pi * self.tau * (k + 0.5) ** 2)
            qeven = np.exp(1j * np.pi * self.tau * kk.astype(float) ** 2)
            sign = (-1.0) ** k
        else:
            qodd, qeven, sign = self._qodd, self._qeven, self._sign
        odd = (2 * k + 1) * u
        s, c = np.sin(odd), np.cos(odd)
        t1 = 2 * np.sum(sign * qodd * s, axis=-1)
        t1p = 2 * np.sum(sign * qodd * (2 * k + 1) * c, axis=-1)
        t2 = 2 * np.sum(qodd * c, axis=-1)
        ce = np.cos(2 * kk * u)
        t3 = 1 + 2 * np.sum(qeven * ce, axis=-1)
        t4 = 1 + 2 * np.sum((-1.0) ** kk * qeven * ce, axis=-1)
        return t1, t1p, t2, t3, t4

    def _series_zeta(self, z, extra=0):
        z = np.asarray(z, dtype=complex)
        t1, t1p, _, _, _ = self._thetas(np.pi * z, extra)
        return np.pi * t1p / t1 + 2 * self.eta1 * z

    def _series_wp(self, z, extra=0):
        t1, _, t2, _, _ = self._thetas(np.pi * np.asarray(z, dtype=complex), extra)
        return self.e1 + self._wp_c * (t2 / t1) ** 2

    # -- public evaluators (no pole guard; poles give inf/nan) -------------
    def wp(self, z):
        zr, _, _ = self.reduce(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self._series_wp(zr)

    def wp_prime(self, z):
        zr, _, _ = self.reduce(z)
        t1, _, t2, t3, t4 = self._thetas(np.pi * zr)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self._wpp_c * t2 * t3 * t4 / t1 ** 3

    def zeta(self, z):
        zr, m, n = self.reduce(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self._series_zeta(zr) + 2 * m * self.eta1 + 2 * n * self.eta3

    def triple(self, z):
        """``(wp, wp', zeta)`` from a single theta evaluation."""
        zr, m, n = self.reduce(z)
        t1, t1p, t2, t3, t4 = self._thetas(np.pi * zr)
        with np.errstate(divide="ignore", invalid="ignore"):
            wp = self.e1 + self._wp_c * (t2 / t1) ** 2
            wpp = self._wpp_c * t2 * t3 * t4 / t1 ** 3
            zeta = np.pi * t1p / t1 + 2 * self.eta1 * zr + 2 * m * self.eta1 + 2 * n * self.eta3
        return wp, wpp, zeta

    def derivative_from(self, k: int, wp, wpp):
        """``wp^(k)`` from known values of ``wp`` and ``wp'``."""
        if k == 0:
            return wp
        if k == 1:
            return wpp
        p, q = self._deriv_polys(k)
        with np.errstate(invalid="ignore"):
            return p(wp) + wpp * q(wp)

    def _deriv_polys(self, k):
        # wp^(k) = P(wp) + wp' Q(wp); differentiate using
        # wp'' = 6 wp^2 - g2/2 and wp'^2 = 4 wp^3 - g2 wp - g3
        if k not in self._deriv_cache:
            p, q = self._deriv_polys(k - 1)
            second = Polynomial([-self.g2 / 2, 0, 6])
            square = Polynomial([-self.g3, -self.g2, 0, 4])
            self._deriv_cache[k] = (second * q + square * q.deriv(), p.deriv())
        return self._deriv_cache[k]

    def wp_derivative(self, k: int, z):
        """``k``-th derivative of ``wp`` (``k = 0`` gives ``wp`` itself)."""
        if k == 0:
            return self.wp(z)
        if k == 1:
            return self.wp_prime(z)
        p, q = self._deriv_polys(k)
        w = self.wp(z)
        with np.errstate(invalid="ignore"):
            return p(w) + self.wp_prime(z) * q(w)

    def self_test(self, npoints: int = 100, seed: int = 0) -> dict:
        """Relative residuals of the defining identities at random points."""
        rng = np.random.default_rng(seed)
        x = rng.uniform(-0.45, 0.45, npoints)
        y = rng.uniform(-0.45, 0.45, npoints)
        z = x + y * self.tau
        z = z[self.distance_to_lattice(z) > 0.05]
        w, wp1 = self.wp(z), self.wp_prime(z)
        scale = np.abs(wp1) ** 2 + 4 * np.abs(w) ** 3 + abs(self.g2) * np.abs(w) + abs(self.g3)
        diffeq = np.max(np.abs(wp1 ** 2 - 4 * w ** 3 + self.g2 * w + self.g3) / scale)

        raw = self._series_wp(z, extra=6)
        per1 = np.max(np.abs(self._series_wp(z + 1, extra=6) - raw) / np.abs(raw))
        pertau = np.max(np.abs(self._series_wp(z + self.tau, extra=6) - raw) / np.abs(raw))
        zr = self._series_zeta(z, extra=6)
        zscale = np.abs(zr) + abs(self.eta1) + abs(self.eta3)
        quasi1 = np.max(np.abs(self._series_zeta(z + 1, extra=6) - zr - 2 * self.eta1) / zscale)
        quasitau = np.max(np.abs(self._series_zeta(z + self.tau, extra=6) - zr - 2 * self.eta3) / zscale)
        odd = np.max(np.abs(self._series_zeta(-z, extra=6) + zr) / np.abs(zr))
        legendre = abs(self.eta1 * self.tau - self.eta3 - 1j * np.pi) / np.pi
        jacobi = abs(self.theta1_prime0 - np.prod(self.theta_constants)) / abs(self.theta1_prime0)
        return {
            "differential_identity": float(diffeq),
            "periodicity_1": float(per1),
            "periodicity_tau": float(pertau),
            "quasi_period_1": float(quasi1),
            "quasi_period_tau": float(quasitau),
            "zeta_oddness": float(odd),
            "legendre": float(legendre),
            "jacobi_derivative": float(jacobi),
        }


def elliptic_eval(kernel: EllipticKernel, which: str, z):
    """Evaluate ``wp``, ``wp'`` or ``zeta`` at ``z``; refuses points within the
    pole-exclusion radius of the lattice."""
    if np.any(kernel.distance_to_lattice(z) < kernel.pole_radius):
        raise NearPole(f"{z} lies within {kernel.pole_radius} of a lattice point")
    funcs = {"wp": kernel.wp, "wp'": kernel.wp_prime, "wp_prime": kernel.wp_prime, "zeta": kernel.zeta}
    try:
        fn = funcs[which]
    except KeyError:
        raise ValueError(f"unknown elliptic function {which!r}") from None
    out = fn(z)
    return complex(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Chart:
    name: str
    transition: str


@dataclass(frozen=True)
class SurfaceModel:
    kind: str
    genus: int
    gap_series: tuple
    charts: tuple
    tau: Optional[complex] = None
    kernel: Optional[EllipticKernel] = field(default=None, compare=False, repr=False)

    @property
    def is_torus(self) -> bool:
        return self.kind == "torus"

    def lattice_shift(self, z, near):
        """Lattice image of ``z`` closest to ``near`` (identity on the sphere)."""
        if not self.is_torus:
            return np.asarray(z, dtype=complex)
        d = np.asarray(z, dtype=complex) - near
        dr, _, _ = self.kernel.reduce(d)
        return near + dr

    def distance(self, a, b):
        if not self.is_torus:
            return np.abs(np.asarray(a) - np.asarray(b))
        return self.kernel.distance_to_lattice(np.asarray(a) - np.asarray(b))

    def describe(self) -> dict:
        out = {"kind": self.kind, "genus": self.genus, "gap_series": list(self.gap_series)}
        if self.is_torus:
            out["tau"] = [self.tau.real, self.tau.imag]
            out["g2"] = [self.kernel.g2.real, self.kernel.g2.imag]
            out["g3"] = [self.kernel.g3.real, self.kernel.g3.imag]
        return out


def make_surface(kind: str = "sphere", tau: complex = 1j, tail: float = 1e-17,
                 pole_radius: float = POLE_EXCLUSION) -> SurfaceModel:
    if kind == "sphere":
        charts = (Chart("z", "identity"), Chart("w", "w = 1/z"))
        return SurfaceModel("sphere", 0, (), charts)
    if kind != "torus":
        raise ValueError(f"unsupported surface kind {kind!r}")
    tau = complex(tau)
    if not tau.imag > 0:
        raise InvalidModulus(f"modulus {tau} is not in the upper half plane")
    kernel = EllipticKernel(tau, tail=tail, pole_radius=pole_radius)
    report = kernel.self_test()
    bad = {k: v for k, v in report.items() if not v < SELF_TEST_TOL}
    if bad:
        raise PrecisionUnachievable(f"elliptic kernel self-test failed: {bad}")
    charts = (Chart("z", "z ~ z + m + n tau"),)
    return SurfaceModel("torus", 1, (1,), charts, tau=tau, kernel=kernel)


def gap_series(surface: SurfaceModel) -> list:
    return list(surface.gap_series)


@dataclass(frozen=True)
class EndData:
    """Ends ``Q_0..Q_e``: ``points[0]`` is the pole of ``f`` (``inf`` on the
    sphere), ``orders[l]`` the zero order of ``df`` at ``Q_l``."""

    points: tuple
    m0: int
    orders: tuple

    @property
    def e(self) -> int:
        return len(self.orders)

    def n(self, genus: int) -> int:
        return 2 * genus + self.e

    @property
    def finite(self) -> tuple:
        return tuple(p for p in self.points if np.isfinite(p))

    def to_rows(self) -> list:
        rows = [("Q0", self.points[0], -(self.m0 + 1))]
        rows += [(f"Q{l}", p, m) for l, p in enumerate(self.points[1:], start=1) for m in [self.orders[l - 1]]]
        return rows


@dataclass(frozen=True)
class Loop:
    """Closed curve on the surface parametrised by ``t`` in ``[0, 1)``.

    End loops are circles ``center + radius exp(2 pi i t)``; handle cycles are
    segments ``start + t * direction`` whose endpoints differ by a lattice
    vector.
    """

    kind: str
    index: int
    center: complex = 0j
    radius: float = 0.0
    start: complex = 0j
    direction: complex = 0j
    orientation: int = 1

    @property
    def tag(self) -> str:
        return f"{self.kind}-{self.index}"

    def point(self, t):
        t = np.asarray(t, dtype=float) * self.orientation
        if self.kind == "end":
            return self.center + self.radius * np.exp(2j * np.pi * t)
        return self.start + t * self.direction

    def tangent(self, t):
        s = self.orientation
        t = np.asarray(t, dtype=float) * s
        if self.kind == "end":
            return s * 2j * np.pi * self.radius * np.exp(2j * np.pi * t)
        return s * self.direction * np.ones_like(t, dtype=complex)


def winding_number(loop: Loop, point: complex, nodes: int = 4096) -> float:
    t = np.arange(nodes) / nodes
    z = loop.point(t)
    return float(np.real(np.sum(loop.tangent(t) / (z - point)) / nodes / (2j * np.pi)))


def _largest_gap_mid(coords: Sequence[float]) -> tuple:
    c = np.sort(np.mod(coords, 1.0))
    gaps = np.diff(np.concatenate([c, [c[0] + 1.0]]))
    i = int(np.argmax(gaps))
    return float(np.mod(c[i] + gaps[i] / 2, 1.0)), float(gaps[i] / 2)


def homology_loops(surface: SurfaceModel, ends: EndData, radius: Optional[float] = None) -> list:
    """Handle cycles (torus only) followed by one counter-clockwise circle
    around each finite end ``Q_1..Q_e``."""
    centers = list(ends.points[1:])
    allpts = [p for p in ends.points if np.isfinite(p)]
    sep = np.inf
    for i in range(len(allpts)):
        for j in range(i + 1, len(allpts)):
            sep = min(sep, float(surface.distance(allpts[i], allpts[j])))
    if sep < 1e-8:
        raise LoopConstructionFailed("ends are not pairwise distinct")
    loops = []
    limit = 0.4 * sep
    if surface.is_torus:
        kern = surface.kernel
        x, y = kern.lattice_coords(np.array(allpts))
        u0, gx = _largest_gap_mid(x)
        v0, gy = _largest_gap_mid(y)
        base = u0 + v0 * surface.tau
        loops.append(Loop("handle", 1, start=base, direction=1.0 + 0j))
        loops.append(Loop("handle", 2, start=base, direction=surface.tau))
        handle_dist = min(gy * surface.tau.imag, gx * surface.tau.imag / abs(surface.tau))
        limit = min(limit, 0.8 * handle_dist)
    rho = min(1.0, limit) if radius is None else float(radius)
    if radius is not None and radius > limit:
        raise LoopConstructionFailed(f"loop radius {radius} exceeds the admissible {limit:.3g}")
    if rho < 10 * POLE_EXCLUSION:
        raise LoopConstructionFailed(f"ends too close for disjoint loops (radius {rho:.3g})")
    for l, q in enumerate(centers, start=1):
        loops.append(Loop("end", l, center=complex(q), radius=rho))
    return loops
