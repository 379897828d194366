"""Meromorphic data on a surface backend.

``f`` is always a polynomial in a base function (``z`` on the sphere, ``wp`` on
the torus), which keeps end multiplication ``f -> (f - c)^2`` closed.  One-forms
are stored by their coefficient in the chart coordinate ``z``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import Polynomial

from .errors import DegenerateShift, GapViolation, RootFindingFailure
from .surface import EndData, Loop, SurfaceModel

INF = complex(np.inf, 0.0)


@dataclass(frozen=True)
class MeroFunction:
    name: str
    value: Callable
    deriv: Callable
    divisor: tuple = ()
    second: Optional[Callable] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __call__(self, z):
        return self.value(z)


@dataclass(frozen=True)
class MeroOneForm:
    """Form ``coef(z) dz``; ``divisor`` lists ``(point, order)`` pairs."""

    name: str
    coef: Callable
    coef_deriv: Callable
    divisor: tuple = ()
    residues: tuple = ()

    def __call__(self, z):
        return self.coef(z)


@dataclass(frozen=True)
class CohomologyBasis:
    forms: tuple
    tags: tuple

    def __len__(self):
        return len(self.forms)


# -- f and its ends ----------------------------------------------------------

def _base(surface: SurfaceModel, k: int):
    if surface.is_torus:
        kern = surface.kernel
        return lambda z: kern.wp_derivative(k, z)
    if k == 0:
        return lambda z: np.asarray(z, dtype=complex)
    if k == 1:
        return lambda z: np.ones_like(np.asarray(z, dtype=complex))
    return lambda z: np.zeros_like(np.asarray(z, dtype=complex))


def polynomial_function(surface: SurfaceModel, poly: Polynomial, name: str = "f") -> MeroFunction:
    """``poly(b)`` with ``b = z`` (sphere) or ``b = wp`` (torus)."""
    poly = Polynomial(np.asarray(poly.coef, dtype=complex))
    d1, d2 = poly.deriv(1), poly.deriv(2)
    b0, b1, b2 = _base(surface, 0), _base(surface, 1), _base(surface, 2)

    def value(z):
        return poly(b0(z))

    def deriv(z):
        return d1(b0(z)) * b1(z)

    def second(z):
        w = b0(z)
        return d2(w) * b1(z) ** 2 + d1(w) * b2(z)

    m0 = poly.degree() * (2 if surface.is_torus else 1)
    pole = 0j if surface.is_torus else INF
    return MeroFunction(name, value, deriv, ((pole, -m0),), second, {"poly": poly})


def build_f(surface: SurfaceModel, m0: int = 2):
    """``f = z^m0`` on the sphere, ``f = wp`` on the torus; returns ``(f, ends)``."""
    if surface.is_torus:
        if m0 != 2:
            raise GapViolation("the torus backend uses f = wp with pole order 2")
        poly = Polynomial([0, 1])
    else:
        if m0 < 1:
            raise GapViolation("pole order must be positive")
        poly = Polynomial([0] * m0 + [1])
    gaps = surface.gap_series
    if gaps and not m0 > max(gaps):
        raise GapViolation(f"pole order {m0} does not exceed the last gap {max(gaps)}")
    f = polynomial_function(surface, poly)
    return f, find_ends(surface, f)


def _cluster(roots, tol):
    roots = list(roots)
    groups = []
    for r in roots:
        for g in groups:
            if abs(g[0] - r) < tol:
                g.append(r)
                break
        else:
            groups.append([r])
    return [(complex(np.mean(g)), len(g)) for g in groups]


def _order_sort_key(surface, p):
    if surface.is_torus:
        x, y = surface.kernel.lattice_coords(p)
        return (round(float(y), 9), round(float(x), 9))
    return (round(abs(p), 9), round(float(np.angle(p)), 9))


def _canonical(surface, p):
    if not surface.is_torus:
        return complex(p)
    kern = surface.kernel
    x, y = kern.lattice_coords(p)
    x = float(np.mod(x, 1.0))
    y = float(np.mod(y, 1.0))
    x = 0.0 if abs(x - 1) < 1e-12 or abs(x) < 1e-12 else x
    y = 0.0 if abs(y - 1) < 1e-12 or abs(y) < 1e-12 else y
    return complex(x + y * kern.tau)


def argument_count(fn, dfn, center, radius, nodes=512):
    """``(1/2 pi i) \\oint fn'/fn`` over the circle ``|z - center| = radius``."""
    t = np.arange(nodes) / nodes
    e = np.exp(2j * np.pi * t)
    z = center + radius * e
    return complex(np.sum(dfn(z) / fn(z) * 2j * np.pi * radius * e) / nodes / (2j * np.pi))


def find_ends(surface: SurfaceModel, f: MeroFunction, seeds: int = 12) -> EndData:
    """Branch points of ``f`` with the zero orders of ``df``."""
    poly = f.meta["poly"]
    if not surface.is_torus:
        m0 = poly.degree()
        if m0 < 2:
            return EndData((INF,), m0, ())
        roots = poly.deriv().roots()
        found = _cluster(roots, 1e-6)
        found.sort(key=lambda pm: _order_sort_key(surface, pm[0]))
        pts = [p for p, _ in found]
        orders = []
        for p, m in found:
            sep = min([abs(p - o) for o in pts if o != p] + [1.0])
            cnt = argument_count(f.deriv, f.second, p, 0.3 * sep)
            if abs(cnt - m) > 1e-6:
                raise RootFindingFailure(f"multiplicity mismatch at {p}: {cnt} vs {m}")
            orders.append(m)
        if sum(orders) != m0 - 1:
            raise RootFindingFailure("branch point orders do not add up to deg f - 1")
        return EndData((INF,) + tuple(pts), m0, tuple(orders))

    kern = surface.kernel
    m0 = 2 * poly.degree()
    g = (np.arange(seeds) + 0.5) / seeds
    X, Y = np.meshgrid(g, g)
    z = (X + Y * kern.tau).ravel()
    for _ in range(60):
        with np.errstate(all="ignore"):
            step = f.deriv(z) / f.second(z)
        step = np.where(np.isfinite(step), step, 0.0)
        z = z - np.clip(np.abs(step), 0, 0.1) * np.exp(1j * np.angle(step))
    with np.errstate(all="ignore"):
        res = np.abs(f.deriv(z))
        scale = np.abs(f.second(z))
    good = np.isfinite(res) & (res < 1e-9 * np.maximum(scale, 1.0)) & (kern.distance_to_lattice(z) > 1e-3)
    roots = []
    for r in z[good]:
        r = _canonical(surface, r)
        if all(surface.distance(r, o) > 1e-8 for o in roots):
            roots.append(r)
    roots.sort(key=lambda p: _order_sort_key(surface, p))
    orders = []
    for p in roots:
        sep = min([float(surface.distance(p, o)) for o in roots if o != p] + [float(kern.distance_to_lattice(p)), 0.5])
        cnt = argument_count(f.deriv, f.second, p, 0.3 * sep)
        m = int(round(cnt.real))
        if m < 1 or abs(cnt - m) > 1e-6:
            raise RootFindingFailure(f"bad multiplicity {cnt} at {p}")
        orders.append(m)
    if sum(orders) != m0 + 1:
        raise RootFindingFailure(f"found branch orders {orders}; expected total {m0 + 1}")
    return EndData((0j,) + tuple(roots), m0, tuple(orders))


def multiply_ends(surface: SurfaceModel, f: MeroFunction, c: complex, strict: bool = True,
                  tol: float = 1e-8) -> MeroFunction:
    """Return ``(f - c)^2``.  With ``strict`` a shift equal to a critical
    value of ``f`` is refused."""
    ends = find_ends(surface, f)
    crit = [complex(f.value(np.array([p]))[0]) for p in ends.points[1:]]
    if strict and any(abs(v - c) <= tol * (1 + abs(c)) for v in crit):
        raise DegenerateShift(f"c = {c} is a critical value of {f.name}")
    poly = (f.meta["poly"] - c) ** 2
    return polynomial_function(surface, poly, name=f"({f.name} - {c})^2")


# -- forms, v, G, F ------------------------------------------------------------

def cohomology_basis(surface: SurfaceModel, ends: EndData) -> CohomologyBasis:
    forms, tags = [], []
    q0 = ends.points[0]
    if surface.is_torus:
        kern = surface.kernel
        forms.append(MeroOneForm("dz", lambda z: np.ones_like(np.asarray(z, dtype=complex)),
                                 lambda z: np.zeros_like(np.asarray(z, dtype=complex))))
        tags.append("holomorphic")
        forms.append(MeroOneForm("wp dz", kern.wp, kern.wp_prime, ((0j, -2),), ((0j, 0j),)))
        tags.append("xi")
        for l, q in enumerate(ends.points[1:], start=1):
            def coef(z, q=q):
                return kern.zeta(np.asarray(z) - q) - kern.zeta(z)

            def dcoef(z, q=q):
                return kern.wp(z) - kern.wp(np.asarray(z) - q)

            forms.append(MeroOneForm(f"eta{l}", coef, dcoef, ((q, -1), (q0, -1)), ((q, 1 + 0j), (q0, -1 + 0j))))
            tags.append("eta")
    else:
        for l, q in enumerate(ends.points[1:], start=1):
            forms.append(MeroOneForm(f"eta{l}", lambda z, q=q: 1.0 / (np.asarray(z) - q),
                                     lambda z, q=q: -1.0 / (np.asarray(z) - q) ** 2,
                                     ((q, -1), (q0, -1)), ((q, 1 + 0j), (q0, -1 + 0j))))
            tags.append("eta")
    return CohomologyBasis(tuple(forms), tuple(tags))


def build_v(surface: SurfaceModel, ends: EndData) -> MeroFunction:
    """Function with poles of order ``m0 + 1`` at ``Q_0`` and ``m_l + 2`` at
    ``Q_l``, holomorphic elsewhere."""
    q0, pts, orders = ends.points[0], ends.points[1:], ends.orders
    divisor = ((q0, -(ends.m0 + 1)),) + tuple((q, -(m + 2)) for q, m in zip(pts, orders))
    if surface.is_torus:
        kern = surface.kernel
        terms = [(0j, ends.m0 - 1)] + [(q, m) for q, m in zip(pts, orders)]

        def value(z):
            z = np.asarray(z, dtype=complex)
            return sum(kern.wp_derivative(k, z - q) for q, k in terms)

        def deriv(z):
            z = np.asarray(z, dtype=complex)
            return sum(kern.wp_derivative(k + 1, z - q) for q, k in terms)

        return MeroFunction("v", value, deriv, divisor)

    top = ends.m0 + 1
    terms = [(q, m + 2) for q, m in zip(pts, orders)]

    def value(z):
        z = np.asarray(z, dtype=complex)
        return z ** top + sum((z - q) ** (-k) for q, k in terms)

    def deriv(z):
        z = np.asarray(z, dtype=complex)
        return top * z ** (top - 1) + sum(-k * (z - q) ** (-k - 1) for q, k in terms)

    return MeroFunction("v", value, deriv, divisor)


def _quotients(f, basis):
    def q(j):
        form = basis.forms[j]

        def value(z):
            return form.coef(z) / f.deriv(z)

        def deriv(z):
            fp = f.deriv(z)
            return (form.coef_deriv(z) * fp - form.coef(z) * f.second(z)) / fp ** 2

        return value, deriv

    return [q(j) for j in range(len(basis))]


def assemble_G(lam, f: MeroFunction, v: MeroFunction, basis: CohomologyBasis) -> MeroFunction:
    """``lam[0] v + (1/df) sum_j lam[j] zeta_j``."""
    lam = np.asarray(lam, dtype=complex)
    if lam.shape != (len(basis) + 1,):
        raise ValueError(f"expected {len(basis) + 1} coefficients, got {lam.shape}")
    quots = _quotients(f, basis)
    if not np.any(lam):
        zero = lambda z: np.zeros_like(np.asarray(z, dtype=complex))
        return MeroFunction("G", zero, zero, (), meta={"degenerate": True})

    def value(z):
        out = lam[0] * v.value(z)
        for lj, (qv, _) in zip(lam[1:], quots):
            if lj:
                out = out + lj * qv(z)
        return out

    def deriv(z):
        out = lam[0] * v.deriv(z)
        for lj, (_, qd) in zip(lam[1:], quots):
            if lj:
                out = out + lj * qd(z)
        return out

    divisor = tuple((p, k) for p, k in v.divisor) if lam[0] != 0 else ()
    return MeroFunction("G", value, deriv, divisor, meta={"degenerate": False, "lam": lam})


def assemble_F(delta, f: MeroFunction, basis: CohomologyBasis):
    """Return ``(F, h)`` with ``F = (1/df) sum_j delta_j zeta_j`` and ``h = exp F``."""
    delta = np.asarray(delta, dtype=complex)
    if delta.shape != (len(basis),):
        raise ValueError(f"expected {len(basis)} coefficients, got {delta.shape}")
    quots = _quotients(f, basis)

    def value(z):
        out = np.zeros_like(np.asarray(z, dtype=complex))
        for dj, (qv, _) in zip(delta, quots):
            if dj:
                out = out + dj * qv(z)
        return out

    def deriv(z):
        out = np.zeros_like(np.asarray(z, dtype=complex))
        for dj, (_, qd) in zip(delta, quots):
            if dj:
                out = out + dj * qd(z)
        return out

    F = MeroFunction("F", value, deriv, ())
    h = MeroFunction("h", lambda z: np.exp(value(z)), lambda z: np.exp(value(z)) * deriv(z), ())
    return F, h


def numerical_order(fn: Callable, point: complex, form: bool = False, r0: float = 0.05,
                    levels: int = 6, nodes: int = 64) -> float:
    """Order of ``fn`` at ``point`` from the slope of the circle mean of
    ``log|fn|`` against ``log r`` (exact for a zero/pole-free punctured disc).
    ``point = inf`` uses the chart ``w = 1/z``; ``form`` marks ``fn`` as a
    one-form coefficient, which picks up the factor ``-1/w^2`` there."""
    radii = r0 * 0.5 ** np.arange(levels)
    e = np.exp(2j * np.pi * np.arange(nodes) / nodes)
    means = []
    for r in radii:
        if np.isfinite(point):
            vals = fn(point + r * e)
        else:
            w = r * e
            vals = fn(1.0 / w) * (-1.0 / w ** 2 if form else 1.0)
        means.append(np.mean(np.log(np.abs(vals))))
    slope = np.polyfit(np.log(radii), means, 1)[0]
    return float(slope)


# -- cached evaluation ----------------------------------------------------------

class BasisValues:
    """Parameter-independent data at a batch of chart points, computed on
    first access: ``fp = f'``, ``fpp = f''``, ``v``, ``dv``, and the basis
    coefficients ``coef`` / ``dcoef`` with shape ``(n,) + z.shape``."""

    _KEYS = ("fp", "fpp", "v", "dv", "coef", "dcoef")

    def __init__(self, z, ctx: "FormsContext"):
        self.z = np.asarray(z, dtype=complex)
        self._ctx = ctx
        self._cache = {}

    def _get(self, key):
        if key not in self._cache:
            with np.errstate(all="ignore"):
                self._ctx._compute(key, self)
        return self._cache[key]

    fp = property(lambda self: self._get("fp"))
    fpp = property(lambda self: self._get("fpp"))
    v = property(lambda self: self._get("v"))
    dv = property(lambda self: self._get("dv"))
    coef = property(lambda self: self._get("coef"))
    dcoef = property(lambda self: self._get("dcoef"))

    @property
    def q(self):
        return self.coef / self.fp

    @property
    def dq(self):
        return (self.dcoef * self.fp - self.coef * self.fpp) / self.fp ** 2

    def G(self, lam):
        lam = np.asarray(lam, dtype=complex)
        out = lam[0] * self.v if lam[0] != 0 else np.zeros_like(self.z)
        if np.any(lam[1:]):
            out = out + np.tensordot(lam[1:], self.q, axes=1)
        return out

    def dG(self, lam):
        lam = np.asarray(lam, dtype=complex)
        out = lam[0] * self.dv if lam[0] != 0 else np.zeros_like(self.z)
        if np.any(lam[1:]):
            out = out + np.tensordot(lam[1:], self.dq, axes=1)
        return out

    def F(self, delta):
        delta = np.asarray(delta, dtype=complex)
        if not np.any(delta):
            return np.zeros_like(self.z)
        return np.tensordot(delta, self.q, axes=1)

    def dF(self, delta):
        delta = np.asarray(delta, dtype=complex)
        if not np.any(delta):
            return np.zeros_like(self.z)
        return np.tensordot(delta, self.dq, axes=1)


@dataclass
class FormsContext:
    """Surface, ``f``, ends, cohomology basis, ``v`` and homology loops."""

    surface: SurfaceModel
    f: MeroFunction
    ends: EndData
    basis: CohomologyBasis
    v: MeroFunction
    loops: list
    fast: bool = True

    @property
    def n(self) -> int:
        return len(self.basis)

    def values(self, z) -> BasisValues:
        return BasisValues(z, self)

    def G(self, lam) -> MeroFunction:
        return assemble_G(lam, self.f, self.v, self.basis)

    def _fast_torus(self) -> bool:
        return self.fast and self.surface.is_torus and self.basis.tags[:2] == ("holomorphic", "xi")

    def _compute(self, key, bv: BasisValues):
        z, c = bv.z, bv._cache
        if not self._fast_torus():
            if key == "coef":
                c[key] = np.array([form.coef(z) for form in self.basis.forms]).reshape((self.n,) + z.shape)
            elif key == "dcoef":
                c[key] = np.array([form.coef_deriv(z) for form in self.basis.forms]).reshape((self.n,) + z.shape)
            else:
                fn = {"fp": self.f.deriv, "fpp": self.f.second, "v": self.v.value, "dv": self.v.deriv}[key]
                c[key] = fn(z)
            return
        kern = self.surface.kernel
        if "T0" not in c:
            c["T0"] = kern.triple(z)
            c["Tl"] = [kern.triple(z - q) for q in self.ends.points[1:]]
        wp, wpp, zeta = c["T0"]
        poly = self.f.meta["poly"]
        if key == "fp":
            c[key] = poly.deriv(1)(wp) * wpp
        elif key == "fpp":
            c[key] = poly.deriv(2)(wp) * wpp ** 2 + poly.deriv(1)(wp) * (6 * wp ** 2 - kern.g2 / 2)
        elif key in ("v", "dv"):
            s = 1 if key == "dv" else 0
            out = kern.derivative_from(self.ends.m0 - 1 + s, wp, wpp)
            for (w, wq, _), m in zip(c["Tl"], self.ends.orders):
                out = out + kern.derivative_from(m + s, w, wq)
            c[key] = out
        elif key == "coef":
            rows = [np.ones_like(z), wp] + [zl - zeta for (_, _, zl) in c["Tl"]]
            c[key] = np.array(rows).reshape((self.n,) + z.shape)
        elif key == "dcoef":
            rows = [np.zeros_like(z), wpp] + [wp - wl for (wl, _, _) in c["Tl"]]
            c[key] = np.array(rows).reshape((self.n,) + z.shape)


def build_context(surface: SurfaceModel, f: Optional[MeroFunction] = None, loop_radius=None) -> FormsContext:
    from .surface import homology_loops

    if f is None:
        f, ends = build_f(surface)
    else:
        ends = find_ends(surface, f)
    if surface.gap_series and not ends.m0 > max(surface.gap_series):
        raise GapViolation(f"pole order {ends.m0} does not exceed the last gap")
    basis = cohomology_basis(surface, ends)
    v = build_v(surface, ends)
    loops = homology_loops(surface, ends, radius=loop_radius)
    return FormsContext(surface, f, ends, basis, v, loops)


def residue_table(form: MeroOneForm, radius: float = 0.05, nodes: int = 1024) -> list:
    """Declared against numerically integrated residues of ``form``.

    The residue at ``inf`` is minus the counter-clockwise integral over the
    circle ``|z| = 1/radius``."""
    e = np.exp(2j * np.pi * np.arange(nodes) / nodes)
    rows = []
    for p, declared in form.residues:
        if np.isfinite(p):
            z = p + radius * e
            val = np.mean(form.coef(z) * radius * e)
        else:
            R = 1.0 / radius
            val = -np.mean(form.coef(R * e) * R * e)
        rows.append((complex(p), complex(declared), complex(val)))
    return rows


def residue_check(basis: CohomologyBasis, radius: float = 0.05) -> dict:
    """Worst residue mismatch and worst residue sum over the basis."""
    mismatch, total = 0.0, 0.0
    for form in basis.forms:
        rows = residue_table(form, radius)
        if rows:
            mismatch = max(mismatch, max(abs(d - v) for _, d, v in rows))
            total = max(total, abs(sum(v for _, _, v in rows)))
    return {"max_mismatch": float(mismatch), "max_sum": float(total)}


def divisor_check(ctx: FormsContext) -> list:
    """Declared orders of ``df`` and ``v`` against numerically observed ones."""
    rows = []
    q0 = ctx.ends.points[0]
    rows.append(("df", q0, -(ctx.ends.m0 + 1), numerical_order(ctx.f.deriv, q0, form=True)))
    for q, m in zip(ctx.ends.points[1:], ctx.ends.orders):
        rows.append(("df", q, m, numerical_order(ctx.f.deriv, q, form=True)))
    for p, k in ctx.v.divisor:
        rows.append(("v", p, k, numerical_order(ctx.v.value, p)))
    return rows
