"""Deformed Weierstrass data, the metric certificate and the three realizations.

With ``A = omega0`` and ``B = g^2 omega0`` (functions on the unit disk), the
deformed forms ``Psi_k = psi_k dz`` have coefficients

    psi1 = (A(G)/h - h B(G)) f',   psi2 = i (A(G)/h + h B(G)) f',
    psi3 = phi3(G) f',

where ``G`` is the parametric function and ``h = exp F``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CertificateFailed, DomainViolation, MultivaluedRealization
from .forms import BasisValues, FormsContext
from .nulldisk import NullDiskData


@dataclass(frozen=True)
class DeformationParams:
    """``lam = (lam_0, ..., lam_n)``, ``delta = (delta_1, ..., delta_n)``."""

    lam: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lam", np.asarray(self.lam, dtype=complex).copy())
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=complex).copy())
        if self.lam.shape != (self.delta.size + 1,):
            raise ValueError("lam must have one more entry than delta")

    @property
    def n(self) -> int:
        return self.delta.size

    @classmethod
    def zero(cls, n: int) -> "DeformationParams":
        return cls(np.zeros(n + 1), np.zeros(n))

    @classmethod
    def from_unknowns(cls, c: complex, u) -> "DeformationParams":
        """From ``lam_0 = c`` and the complex unknowns ``(lam_1..lam_n, delta_1..delta_n)``."""
        u = np.asarray(u, dtype=complex)
        n = u.size // 2
        return cls(np.concatenate([[c], u[:n]]), u[n:])

    def unknowns(self) -> np.ndarray:
        return np.concatenate([self.lam[1:], self.delta])

    def real(self) -> np.ndarray:
        """``(s_0..s_2n, t_0..t_2n)`` with ``lam_j = s_j + i t_j`` and
        ``delta_j = s_{n+j} + i t_{n+j}``."""
        z = np.concatenate([self.lam, self.delta])
        return np.concatenate([z.real, z.imag])

    @classmethod
    def from_real(cls, x) -> "DeformationParams":
        x = np.asarray(x, dtype=float)
        m = x.size // 2
        z = x[:m] + 1j * x[m:]
        n = (m - 1) // 2
        return cls(z[: n + 1], z[n + 1:])

    def real_unknowns(self) -> np.ndarray:
        """``(s_1..s_2n, t_1..t_2n)``: the real view without ``lam_0``."""
        u = self.unknowns()
        return np.concatenate([u.real, u.imag])

    @classmethod
    def from_real_unknowns(cls, c: complex, x) -> "DeformationParams":
        x = np.asarray(x, dtype=float)
        m = x.size // 2
        return cls.from_unknowns(c, x[:m] + 1j * x[m:])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.lam))

    def direction(self) -> np.ndarray:
        return self.lam / self.norm

    def to_dict(self) -> dict:
        pair = lambda v: [[float(x.real), float(x.imag)] for x in v]
        return {"lam": pair(self.lam), "delta": pair(self.delta)}


def psi_from_values(bv: BasisValues, disk: NullDiskData, lam, delta):
    """``(psi, G, h)`` at the points of ``bv``; ``psi`` has shape ``(3, ...)``."""
    G = bv.G(lam)
    h = np.exp(bv.F(delta))
    A, B, p3, _, _, _ = disk.AB(G)
    fp = bv.fp
    psi = np.array([(A / h - h * B) * fp, 1j * (A / h + h * B) * fp, p3 * fp])
    return psi, G, h


def psi_parameter_derivatives(bv: BasisValues, disk: NullDiskData, lam, delta):
    """Holomorphic derivatives of ``psi`` in ``(lam_0..lam_n, delta_1..delta_n)``.

    Returns an array of shape ``(3, 2n + 1, ...)``.
    """
    G = bv.G(lam)
    h = np.exp(bv.F(delta))
    A, B, _, dA, dB, dp3 = disk.AB(G)
    coefs = np.concatenate([(bv.v * bv.fp)[None], bv.coef], axis=0)
    lam_fac = np.array([dA / h - h * dB, 1j * (dA / h + h * dB), dp3])
    del_fac = np.array([-(A / h + h * B), 1j * (-A / h + h * B), np.zeros_like(A)])
    dl = lam_fac[:, None] * coefs[None]
    dd = del_fac[:, None] * bv.coef[None]
    return np.concatenate([dl, dd], axis=1)


class DeformedData:
    """Evaluators for the deformed data on the chart of ``ctx``."""

    def __init__(self, params: DeformationParams, disk: NullDiskData, ctx: FormsContext):
        self.params, self.disk, self.ctx = params, disk, ctx

    def values(self, z):
        return self.ctx.values(z)

    def _check(self, G, check):
        if check and np.any(~(np.abs(G) < 1)):
            raise DomainViolation("evaluation point outside the domain |G| < 1",
                                  worst=float(np.nanmax(np.abs(G))))

    def G(self, z):
        return self.values(z).G(self.params.lam)

    def dG(self, z):
        return self.values(z).dG(self.params.lam)

    def h(self, z):
        return np.exp(self.values(z).F(self.params.delta))

    def ghat(self, z, check: bool = True):
        bv = self.values(z)
        G = bv.G(self.params.lam)
        self._check(G, check)
        return np.exp(bv.F(self.params.delta)) * self.disk.g(G)

    def omegahat(self, z, check: bool = True):
        """Coefficient of ``omegahat`` with respect to ``dz``."""
        bv = self.values(z)
        G = bv.G(self.params.lam)
        self._check(G, check)
        return self.disk.omega(G) * bv.fp / np.exp(bv.F(self.params.delta))

    def psi(self, z, check: bool = True):
        bv = self.values(z)
        psi, G, _ = psi_from_values(bv, self.disk, self.params.lam, self.params.delta)
        self._check(G, check)
        return psi

    def nullity(self, z) -> float:
        p = self.psi(z, check=False)
        return float(np.max(np.abs(np.sum(p ** 2, axis=0)) / np.max(np.abs(p) ** 2, axis=0)))


def deformed_weierstrass(params: DeformationParams, disk: NullDiskData, ctx: FormsContext) -> DeformedData:
    return DeformedData(params, disk, ctx)


# -- metric certificate ---------------------------------------------------------

@dataclass
class MetricCertificate:
    a: float
    worst_ratio: float
    samples: int
    min_abs_h: float
    max_abs_h: float
    min_df_dG: float
    margin: float
    ratios: np.ndarray = field(repr=False, default=None)

    @property
    def passed(self) -> bool:
        return self.worst_ratio >= 1 - 1e-9

    def to_dict(self) -> dict:
        return {"a": self.a, "worst_ratio": self.worst_ratio, "samples": self.samples,
                "min_abs_h": self.min_abs_h, "max_abs_h": self.max_abs_h,
                "min_df_dG": self.min_df_dG, "margin": self.margin, "passed": self.passed}


def metric_certificate(data: DeformedData, z, margin: float = 1e-3, a_floor: float = 1e-6) -> MetricCertificate:
    """Check ``(1+|ghat|^2)|omegahat| >= a^4 (1+|g(G)|^2)|omega0(G)||dG|`` at ``z``.

    ``a`` is the minimum of ``|h|``, ``1/|h|`` and ``|df/dG|`` over the
    samples, shrunk by ``margin``.  ``a`` below ``a_floor`` means the
    parameters left the perturbative regime and raises ``CertificateFailed``.
    """
    z = np.asarray(z, dtype=complex).ravel()
    bv = data.values(z)
    lam, delta = data.params.lam, data.params.delta
    G, dG = bv.G(lam), bv.dG(lam)
    h = np.exp(bv.F(delta))
    g, w = data.disk.g(G), data.disk.omega(G)
    ah = np.abs(h)
    dfdG = np.abs(bv.fp / dG)
    a = float(min(ah.min(), (1 / ah).min(), dfdG.min())) * (1 - margin)
    if not (a > a_floor and a < 1):
        raise CertificateFailed(f"metric constant a = {a:.3e} outside ({a_floor:g}, 1)", a=a)
    lhs = (1 + np.abs(h * g) ** 2) * np.abs(w * bv.fp / h)
    rhs = a ** 4 * (1 + np.abs(g) ** 2) * np.abs(w) * np.abs(dG)
    ratio = lhs / rhs
    cert = MetricCertificate(a, float(ratio.min()), int(z.size), float(ah.min()), float(ah.max()),
                             float(dfdG.min()), margin, ratio)
    if not cert.passed:
        raise CertificateFailed(f"metric inequality ratio {cert.worst_ratio:.3e} < 1", ratio=cert.worst_ratio)
    return cert


def certificate_threshold_scan(data: DeformedData, z, factors=(1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024),
                               **kw) -> dict:
    """Scale ``delta`` by growing factors until the certificate fails.

    The scan is ``vacuous`` when ``delta = 0`` (scaling changes nothing)."""
    rows = []
    for s in factors:
        p = DeformationParams(data.params.lam, s * data.params.delta)
        try:
            cert = metric_certificate(DeformedData(p, data.disk, data.ctx), z, **kw)
            rows.append({"factor": s, "a": cert.a, "passed": True})
        except CertificateFailed as exc:
            rows.append({"factor": s, "a": exc.details.get("a"), "passed": False})
            break
    first_fail = next((r["factor"] for r in rows if not r["passed"]), None)
    return {"rows": rows, "first_failing_factor": first_fail, "vacuous": not np.any(data.params.delta)}


# -- realizations ---------------------------------------------------------------

TARGETS = ("C2", "R3", "L3")


@dataclass
class Realization:
    target: str
    values: np.ndarray = field(repr=False)
    potential: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False)
    max_residual: float
    required: tuple
    third_residual: Optional[float] = None
    ghat_abs: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def bbox(self):
        v = self.values
        if np.iscomplexobj(v):
            v = np.concatenate([v.real, v.imag], axis=1)
        return v.min(axis=0), v.max(axis=0)

    @property
    def diameter(self) -> float:
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))

    def to_dict(self) -> dict:
        lo, hi = self.bbox
        out = {"target": self.target, "vertices": int(self.values.shape[0]),
               "max_residual": self.max_residual, "required_components": list(self.required),
               "bbox_min": [float(x) for x in lo], "bbox_max": [float(x) for x in hi],
               "diameter": self.diameter}
        if self.third_residual is not None:
            out["third_coordinate_residual"] = self.third_residual
        return out


def realize(target: str, data: DeformedData, mesh, tol: float = 1e-8, check: bool = True,
            origin: Optional[complex] = None) -> Realization:
    """Integrate ``Psi`` over the mesh spanning tree and select the target's
    coordinates.  Closed-cycle residuals of the required components must stay
    below ``tol``.  With ``origin`` the potential is shifted to vanish there
    (otherwise it vanishes at the tree root)."""
    from .domain import edge_integrals, tree_potential, value_at

    target = target.upper()
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}")
    psi = lambda z: data.psi(z, check=False)
    ints = edge_integrals(mesh, psi)
    X, res = tree_potential(mesh, ints)
    if origin is not None:
        X = X - value_at(mesh, X, psi, origin)[0]
    if target == "C2":
        values = X[:, :2]
        req_res = np.abs(res[:, :2])
        required = ("Psi1", "Psi2")
        third = float(np.max(np.abs(res[:, 2]))) if res.size else 0.0
    elif target == "R3":
        values = X.real
        req_res = np.abs(res.real)
        required = ("Re Psi1", "Re Psi2", "Re Psi3")
        third = None
    else:
        values = np.stack([-X[:, 0].imag, X[:, 1].real, X[:, 2].real], axis=1)
        req_res = np.abs(np.stack([res[:, 0].imag, res[:, 1].real, res[:, 2].real], axis=1))
        required = ("Im Psi1", "Re Psi2", "Re Psi3")
        third = None
    maxres = float(req_res.max()) if req_res.size else 0.0
    ghat = np.abs(data.ghat(mesh.vertices, check=False)) if target == "L3" else None
    real = Realization(target, values, X, req_res, maxres, required, third, ghat)
    if check and maxres > tol:
        raise MultivaluedRealization(f"{target} residual period {maxres:.3e} exceeds {tol:g}", residual=maxres)
    return real


def singularity_scan(real: Realization, tol: float) -> list:
    """Vertices where ``||ghat| - 1| < tol`` (candidate singular set of a
    maxface; the criterion comes from the maxface literature)."""
    if real.target != "L3":
        raise ValueError("singularity scan needs an L3 realization")
    return [int(i) for i in np.flatnonzero(np.abs(real.ghat_abs - 1) < tol)]


def local_geometry(data: DeformedData, mesh, target: str = "R3", count: int = 200, nodes: int = 32,
                   seed: int = 0) -> dict:
    """Conformality and harmonicity of the realization near interior vertices.

    Around each chosen vertex ``p`` the real coordinates ``y`` are sampled on
    a small circle by integrating ``psi`` radially from ``p``.  The mean of
    ``y`` gives the harmonicity defect and its first Fourier coefficient gives
    ``dy/dz`` at ``p``, whose squares must sum to zero in the ambient metric
    (Euclidean for ``R3``, Lorentzian for ``L3``)."""
    from .domain import interior_vertices

    rng = np.random.default_rng(seed)
    idx, rad = interior_vertices(mesh)
    if idx.size > count:
        pick = rng.choice(idx.size, count, replace=False)
        idx, rad = idx[pick], rad[pick]
    e = np.exp(2j * np.pi * np.arange(nodes) / nodes)
    xg, wg = np.polynomial.legendre.leggauss(12)
    s, ws = (xg + 1) / 2, wg / 2
    harm, conf, scale = [], [], []
    for p, r in zip(mesh.vertices[idx], rad):
        ends = p + r * e
        pts = p + np.outer(s, ends - p)
        psi = data.psi(pts, check=False)
        radial = np.einsum("k,ikj->ij", ws, psi) * (ends - p)
        if target == "L3":
            y = np.stack([-radial[0].imag, radial[1].real, radial[2].real])
            sig = np.array([-1.0, 1.0, 1.0])
        else:
            y = radial.real
            sig = np.ones(3)
        dy = np.mean(y * np.conj(e)[None], axis=1) / r
        harm.append(np.max(np.abs(np.mean(y, axis=1))))
        conf.append(abs(np.sum(sig * dy ** 2)) / max(np.sum(np.abs(dy) ** 2), 1e-300))
        scale.append(np.sum(np.abs(dy)) * r)
    harm_rel = np.array(harm) / np.maximum(np.array(scale), 1e-300)
    return {"vertices": int(len(idx)), "harmonicity": float(harm_rel.max()),
            "conformality": float(np.max(conf))}
