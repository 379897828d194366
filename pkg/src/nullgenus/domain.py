"""The domain ``{|G| < 1}``: meshing, topology, and the boundedness certificate.

The domain is cut out of a structured periodic grid (log-polar around a
finite end on the sphere, the fundamental parallelogram on the torus) by
clipping triangles against ``log|G| = 0``.  Crossings are found by bisection
and shared between neighbouring triangles, so the result is conforming.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import (BoundaryBranchPoint, CertificateInconsistent, LiftFailure, MeshFailure,
                     NoValidAnnulus, NumericalInconsistency, WrongTopology)

log = logging.getLogger(__name__)

GL_X, GL_W = np.polynomial.legendre.leggauss(16)


# -- charts -------------------------------------------------------------------

class _TorusChart:
    def __init__(self, tau: complex, origin: complex):
        self.tau, self.origin = tau, origin
        self.periodic = (True, True)
        self.extent = ((0.0, 1.0), (0.0, 1.0))

    def to_z(self, u, v):
        return self.origin + u + v * self.tau

    def from_z(self, z):
        w = np.asarray(z) - self.origin
        v = w.imag / self.tau.imag
        return w.real - v * self.tau.real, v

    def dz(self, du, dv):
        return du + dv * self.tau


class _LogPolarChart:
    def __init__(self, center: complex, rho: tuple):
        self.center = center
        self.periodic = (False, True)
        self.extent = (rho, (0.0, 2 * np.pi))

    def to_z(self, u, v):
        return self.center + np.exp(u + 1j * v)

    def from_z(self, z):
        w = np.log(np.asarray(z) - self.center)
        return w.real, np.mod(w.imag, 2 * np.pi)

    def dz(self, du, dv):
        return None


def _wrap(d, period):
    return d - period * np.round(d / period)


# -- mesh ------------------------------------------------------------------------

@dataclass
class DomainMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_dz: np.ndarray
    boundary: list
    boundary_ends: list
    G_abs: np.ndarray
    min_dG_boundary: float
    min_angle: float
    resolution: int
    root: int = 0
    order: np.ndarray = field(default=None, repr=False)
    parent: np.ndarray = field(default=None, repr=False)
    parent_edge: np.ndarray = field(default=None, repr=False)
    parent_sign: np.ndarray = field(default=None, repr=False)
    nontree: np.ndarray = field(default=None, repr=False)
    polylines: list = field(default_factory=list, repr=False)
    winding: list = field(default_factory=list, repr=False)

    @property
    def nv(self) -> int:
        return self.vertices.size

    @property
    def components(self) -> int:
        return len(self.boundary)

    def boundary_vertices(self) -> np.ndarray:
        return np.unique(np.concatenate(self.boundary)) if self.boundary else np.zeros(0, int)

    def to_dict(self) -> dict:
        return {"vertices": int(self.nv), "triangles": int(len(self.triangles)), "edges": int(len(self.edges)),
                "boundary_components": self.components, "boundary_ends": list(self.boundary_ends),
                "boundary_vertex_counts": [int(len(b)) for b in self.boundary],
                "min_abs_dG_boundary": self.min_dG_boundary, "min_angle_deg": float(np.degrees(self.min_angle)),
                "max_boundary_defect": float(np.max(np.abs(self.G_abs[self.boundary_vertices()] - 1)))
                if self.boundary else 0.0,
                "resolution": self.resolution}


@dataclass
class BoundaryReport:
    polylines: list
    ends: list
    winding: list
    min_dG: float
    mesh: DomainMesh = field(repr=False)

    @property
    def components(self) -> int:
        return len(self.polylines)

    def to_dict(self) -> dict:
        return {"components": self.components, "ends": list(self.ends),
                "winding": [[float(w) for w in row] for row in self.winding], "min_abs_dG": self.min_dG}


def _phi(G, z):
    with np.errstate(all="ignore"):
        val = np.log(np.abs(G(z)))
    return np.where(np.isfinite(val), val, np.inf)


def _sphere_range(G, center, lo=-12.0, hi=12.0, nodes=256):
    """``rho`` bounds with circles ``|z - center| = e^rho`` entirely outside the domain."""
    e = np.exp(2j * np.pi * (np.arange(nodes) + 0.5) / nodes)
    rhos = np.linspace(lo, hi, 481)
    inside = np.array([np.any(_phi(G, center + np.exp(r) * e) < 0) for r in rhos])
    if not inside.any():
        raise WrongTopology("the domain |G| < 1 is empty on the scanned annuli")
    idx = np.flatnonzero(inside)
    if idx[0] == 0 or idx[-1] == len(rhos) - 1:
        raise WrongTopology("the domain |G| < 1 is not bounded away from the end at the chart centre or infinity")
    return rhos[idx[0] - 1], rhos[idx[-1] + 1]


def _winding(poly, point):
    d = np.angle(np.roll(poly, -1) - point) - np.angle(poly - point)
    d = _wrap(d, 2 * np.pi)
    return float(np.sum(d) / (2 * np.pi))


def _bisect(G, chart, uv_a, duv, inside_a, iters=60):
    lo = np.zeros(len(uv_a))
    hi = np.ones(len(uv_a))
    for _ in range(iters):
        mid = (lo + hi) / 2
        z = chart.to_z(uv_a[:, 0] + mid * duv[:, 0], uv_a[:, 1] + mid * duv[:, 1])
        ins = _phi(G, z) < 0
        same = ins == inside_a
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    s = (lo + hi) / 2
    return uv_a + s[:, None] * duv


def trace_boundary(G, dG, surface, ends, resolution: int = 128, snap: bool = True,
                   min_dG: float = 1e-8, min_angle_deg: float = 0.5) -> BoundaryReport:
    """Triangulate ``{|G| < 1}`` and match its boundary components to the ends.

    ``G`` and ``dG`` are vectorised callables in the chart coordinate.
    """
    if surface.is_torus:
        kern = surface.kernel
        # shift the parallelogram so that the ends sit well inside grid cells
        h = 1.0 / resolution
        origin = complex(-0.5 * h * (1 + kern.tau) + 0.137 * h + 0.291 * h * kern.tau)
        chart = _TorusChart(kern.tau, origin)
        nu = nv = resolution
        us = np.arange(nu) / nu
        vs = np.arange(nv) / nv
        period = (1.0, 1.0)
    else:
        center = ends.points[1] if len(ends.points) > 1 else 0j
        rho = _sphere_range(G, center)
        chart = _LogPolarChart(center, rho)
        nv = resolution
        dth = 2 * np.pi / nv
        nu = int(np.ceil((rho[1] - rho[0]) / dth)) + 1
        us = rho[0] + np.arange(nu) * ((rho[1] - rho[0]) / (nu - 1))
        vs = (np.arange(nv) + 0.5) * dth
        period = (None, 2 * np.pi)

    U, V = np.meshgrid(us, vs, indexing="ij")
    uv = np.stack([U.ravel(), V.ravel()], axis=1)
    z = chart.to_z(uv[:, 0], uv[:, 1])
    gid = np.arange(nu * nv).reshape(nu, nv)
    pu, pv = chart.periodic
    iu = np.arange(nu if pu else nu - 1)
    iv = np.arange(nv if pv else nv - 1)
    I, J = np.meshgrid(iu, iv, indexing="ij")
    a = gid[I, J]
    b = gid[(I + 1) % nu, J]
    c = gid[(I + 1) % nu, (J + 1) % nv]
    d = gid[I, (J + 1) % nv]
    tris = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3), np.stack([a, c, d], -1).reshape(-1, 3)])

    def duv_of(i, j):
        du = uv[j, 0] - uv[i, 0]
        dv = uv[j, 1] - uv[i, 1]
        if period[0]:
            du = _wrap(du, period[0])
        if period[1]:
            dv = _wrap(dv, period[1])
        return np.stack([du, dv], axis=-1)

    phi = _phi(G, z)
    # local grid spacing in z
    if surface.is_torus:
        hloc = np.full(z.shape, min(1.0 / nu, abs(chart.tau) / nv))
    else:
        hloc = np.abs(z - chart.center) * (2 * np.pi / nv)

    if snap:
        with np.errstate(all="ignore"):
            g = G(z)
            lg = dG(z) / g
            step = -phi * np.conj(lg) / np.abs(lg) ** 2
        cand = np.isfinite(step) & (np.abs(step) < 0.3 * hloc)
        idx = np.flatnonzero(cand)
        zs = z[idx].copy()
        for _ in range(8):
            with np.errstate(all="ignore"):
                p = _phi(G, zs)
                lg = dG(zs) / G(zs)
                zs = zs - p * np.conj(lg) / np.abs(lg) ** 2
        ok = np.isfinite(zs) & (np.abs(zs - z[idx]) < 0.3 * hloc[idx]) & (np.abs(_phi(G, zs)) < 1e-12)
        idx, zs = idx[ok], zs[ok]
        z[idx] = zs
        u2, v2 = chart.from_z(zs)
        if not surface.is_torus:
            v2 = uv[idx, 1] + _wrap(v2 - uv[idx, 1], 2 * np.pi)
        else:
            u2 = uv[idx, 0] + _wrap(u2 - uv[idx, 0], 1.0)
            v2 = uv[idx, 1] + _wrap(v2 - uv[idx, 1], 1.0)
        uv[idx, 0], uv[idx, 1] = u2, v2
        phi[idx] = 0.0
    cls = np.where(phi == 0.0, 0, np.where(phi < 0, -1, 1))

    tc = cls[tris]
    keep_all = np.all(tc < 0, axis=1) | (np.all(tc <= 0, axis=1) & np.any(tc < 0, axis=1))
    all_b = np.all(tc == 0, axis=1)
    if all_b.any():
        cz = (z[tris[all_b, 0]] + z[tris[all_b, 1]] + z[tris[all_b, 2]]) / 3
        sub = np.flatnonzero(all_b)
        keep_all[sub[_phi(G, cz) < 0]] = True
    mixed = np.any(tc < 0, axis=1) & np.any(tc > 0, axis=1)

    # crossings on inside/outside edges of mixed triangles
    mt = tris[mixed]
    pairs = np.concatenate([mt[:, [0, 1]], mt[:, [1, 2]], mt[:, [2, 0]]])
    cp = cls[pairs]
    cross = (cp[:, 0] * cp[:, 1]) < 0
    pairs = np.unique(np.sort(pairs[cross], axis=1), axis=0)
    nbase = len(z)
    cross_id = {}
    new_uv = np.zeros((0, 2))
    if len(pairs):
        ins_a = cls[pairs[:, 0]] < 0
        duv = duv_of(pairs[:, 0], pairs[:, 1])
        new_uv = _bisect(G, chart, uv[pairs[:, 0]], duv, ins_a)
        for k, (p, q) in enumerate(pairs):
            cross_id[(int(p), int(q))] = nbase + k
    allz = np.concatenate([z, chart.to_z(new_uv[:, 0], new_uv[:, 1])]) if len(new_uv) else z
    alluv = np.concatenate([uv, new_uv]) if len(new_uv) else uv

    out_tris = [tris[keep_all]]
    extra = []
    for tri in mt:
        poly = []
        for k in range(3):
            p, q = int(tri[k]), int(tri[(k + 1) % 3])
            if cls[p] <= 0:
                poly.append(p)
            if cls[p] * cls[q] < 0:
                poly.append(cross_id[(min(p, q), max(p, q))])
        for k in range(1, len(poly) - 1):
            extra.append((poly[0], poly[k], poly[k + 1]))
    if extra:
        out_tris.append(np.array(extra, dtype=int))
    T = np.concatenate(out_tris)

    # drop degenerate triangles (zero area in the chart)
    def edge_vec(i, j):
        if surface.is_torus:
            du = _wrap(alluv[j, 0] - alluv[i, 0], 1.0)
            dv = _wrap(alluv[j, 1] - alluv[i, 1], 1.0)
            return chart.dz(du, dv)
        return allz[j] - allz[i]

    e1 = edge_vec(T[:, 0], T[:, 1])
    e2 = edge_vec(T[:, 0], T[:, 2])
    area = (np.conj(e1) * e2).imag / 2
    scale = np.maximum(np.abs(e1), np.abs(e2)) ** 2
    T = T[area > 1e-14 * scale]
    if len(T) == 0:
        raise MeshFailure("no triangles inside the domain; raise the resolution")

    used = np.unique(T)
    remap = -np.ones(len(allz), dtype=int)
    remap[used] = np.arange(len(used))
    T = remap[T]
    Z = allz[used]
    UV = alluv[used]
    # edges
    E = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    Es = np.sort(E, axis=1)
    uniq, inv, counts = np.unique(Es, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()

    def vec(i, j):
        if surface.is_torus:
            du = _wrap(UV[j, 0] - UV[i, 0], 1.0)
            dv = _wrap(UV[j, 1] - UV[i, 1], 1.0)
            return chart.dz(du, dv)
        return Z[j] - Z[i]

    edge_dz = vec(uniq[:, 0], uniq[:, 1])

    # angles
    a1 = vec(T[:, 0], T[:, 1])
    a2 = vec(T[:, 1], T[:, 2])
    a3 = vec(T[:, 2], T[:, 0])
    ang = np.stack([np.abs(np.angle(-a3 / a1)), np.abs(np.angle(-a1 / a2)), np.abs(np.angle(-a2 / a3))])
    min_angle = float(ang.min())
    if np.degrees(min_angle) < min_angle_deg:
        raise MeshFailure(f"minimum angle {np.degrees(min_angle):.3g} deg below floor; raise the resolution")

    # boundary loops (directed edges of single triangles, domain on the left)
    bmask = counts[inv] == 1
    bd = E[bmask]
    nxt = {}
    for p, q in bd:
        if int(p) in nxt:
            raise MeshFailure("pinched boundary vertex; raise the resolution")
        nxt[int(p)] = int(q)
    loops, seen = [], set()
    for s in sorted(nxt):
        if s in seen:
            continue
        loop, v = [], s
        while v not in seen:
            seen.add(v)
            loop.append(v)
            if v not in nxt:
                raise MeshFailure("open boundary chain")
            v = nxt[v]
        if v != s:
            raise MeshFailure("boundary chain does not close")
        loops.append(np.array(loop))

    # unwrapped polylines and matching to ends
    polylines, matched, wind = [], [], []
    for loop in loops:
        steps = vec(loop, np.roll(loop, -1))
        pts = Z[loop[0]] + np.concatenate([[0], np.cumsum(steps)[:-1]])
        drift = np.sum(steps)
        if abs(drift) > 1e-9:
            raise WrongTopology("boundary component is not null-homotopic on the torus")
        polylines.append(pts)
        row = []
        for l, q in enumerate(ends.points):
            if not np.isfinite(q):
                row.append(np.nan)
                continue
            if surface.is_torus:
                tot = 0.0
                base = surface.lattice_shift(np.array([q]), complex(np.mean(pts)))[0]
                for m in range(-2, 3):
                    for n in range(-2, 3):
                        tot += _winding(pts, base + m + n * surface.tau)
                row.append(tot)
            else:
                row.append(_winding(pts, q))
        row = np.array(row)
        finite = ~np.isnan(row)
        if not surface.is_torus and np.all(np.abs(row[finite] - 1) < 1e-6):
            # on the sphere this loop bounds the disc about infinity; relative
            # to the domain side it encloses no finite end
            row[~finite] = 1.0
            row[finite] -= 1.0
            matched.append(0)
        else:
            row[~finite] = 0.0
            hit = np.flatnonzero(np.abs(row + 1) < 1e-6)
            others = np.abs(np.delete(row, hit)) < 1e-6
            if len(hit) != 1 or not np.all(others):
                raise WrongTopology(f"boundary component with winding numbers {np.round(row, 3).tolist()}")
            matched.append(int(hit[0]))
            row = -row
        wind.append(row.tolist())
    ne = len(ends.points)
    if len(loops) != ne or sorted(matched) != list(range(ne)):
        raise WrongTopology(f"{len(loops)} boundary components matched to ends {sorted(matched)}; expected {ne}")

    bverts = np.unique(np.concatenate(loops))
    dGb = np.abs(dG(Z[bverts]))
    mind = float(dGb.min())
    if not mind > min_dG:
        raise BoundaryBranchPoint(f"|dG| = {mind:.3e} on the boundary")

    order = np.argsort(matched)
    loops = [loops[i] for i in order]
    polylines = [polylines[i] for i in order]
    wind = [wind[i] for i in order]
    matched = [matched[i] for i in order]

    G_abs = np.abs(G(Z))
    mesh = DomainMesh(Z, T, uniq, edge_dz, loops, matched, G_abs, mind, min_angle, resolution,
                      polylines=polylines, winding=wind)
    return BoundaryReport(polylines, matched, wind, mind, mesh)


def mesh_domain(report: BoundaryReport) -> DomainMesh:
    """Attach a breadth-first spanning tree to the traced mesh."""
    mesh = report.mesh
    nv = mesh.nv
    E = mesh.edges
    A = coo_matrix((np.arange(1, len(E) + 1), (E[:, 0], E[:, 1])), shape=(nv, nv)).tocsr()
    sym = A + A.T
    ncomp, _ = connected_components(sym, directed=False)
    if ncomp != 1:
        raise WrongTopology(f"domain mesh has {ncomp} connected components")
    order, pred = breadth_first_order(sym, mesh.root, directed=False, return_predecessors=True)
    parent_edge = -np.ones(nv, dtype=int)
    parent_sign = np.zeros(nv)
    child = order[1:]
    par = pred[child]
    eid = np.asarray(A[par, child]).ravel()
    fwd = eid > 0
    rid = np.asarray(A[child, par]).ravel()
    eid = np.where(fwd, eid, rid) - 1
    parent_edge[child] = eid
    parent_sign[child] = np.where(fwd, 1.0, -1.0)
    intree = np.zeros(len(E), dtype=bool)
    intree[eid] = True
    mesh.order, mesh.parent = order, pred
    mesh.parent_edge, mesh.parent_sign = parent_edge, parent_sign
    mesh.nontree = np.flatnonzero(~intree)
    return mesh


def build_mesh(G, dG, surface, ends, resolution: int = 128, **kw) -> DomainMesh:
    return mesh_domain(trace_boundary(G, dG, surface, ends, resolution, **kw))


# -- integration on the mesh -------------------------------------------------------

def edge_integrals(mesh: DomainMesh, integrand: Callable) -> np.ndarray:
    """Gauss-Legendre integrals of a ``(k, ...)``-valued coefficient along
    every edge; returns ``(E, k)``."""
    s = (GL_X + 1) / 2
    w = GL_W / 2
    za = mesh.vertices[mesh.edges[:, 0]]
    pts = za[None, :] + s[:, None] * mesh.edge_dz[None, :]
    vals = integrand(pts)
    return (np.tensordot(w, vals, axes=([0], [1])) * mesh.edge_dz[None, :]).T


def tree_potential(mesh: DomainMesh, ints: np.ndarray):
    """Potential along the spanning tree and the residuals on non-tree edges."""
    X = np.zeros((mesh.nv, ints.shape[1]), dtype=ints.dtype)
    for v in mesh.order[1:]:
        X[v] = X[mesh.parent[v]] + mesh.parent_sign[v] * ints[mesh.parent_edge[v]]
    e = mesh.edges[mesh.nontree]
    res = X[e[:, 1]] - X[e[:, 0]] - ints[mesh.nontree]
    return X, res


def segment_integral(integrand: Callable, a, b, nodes: int = 16):
    """Gauss-Legendre integral of a ``(k, ...)``-valued coefficient along the
    straight segments ``a -> b``; returns ``(k, len(a))``."""
    x, wt = np.polynomial.legendre.leggauss(nodes)
    s, wt = (x + 1) / 2, wt / 2
    a, b = np.atleast_1d(a), np.atleast_1d(b)
    pts = a[None, :] + s[:, None] * (b - a)[None, :]
    vals = integrand(pts)
    return np.tensordot(wt, vals, axes=([0], [1])) * (b - a)[None, :]


def value_at(mesh: DomainMesh, X: np.ndarray, integrand: Callable, z) -> np.ndarray:
    """Potential at arbitrary points by integrating from the nearest vertex."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    idx = np.array([int(np.argmin(np.abs(mesh.vertices - p))) for p in z])
    return X[idx] + segment_integral(integrand, mesh.vertices[idx], z).T


def interior_vertices(mesh: DomainMesh):
    """Vertices whose 1-ring avoids the boundary, with a safe sampling radius."""
    bv = np.zeros(mesh.nv, dtype=bool)
    bv[mesh.boundary_vertices()] = True
    E = mesh.edges
    touch = bv.copy()
    touch[E[bv[E[:, 1]], 0]] = True
    touch[E[bv[E[:, 0]], 1]] = True
    L = np.abs(mesh.edge_dz)
    rad = np.full(mesh.nv, np.inf)
    np.minimum.at(rad, E[:, 0], L)
    np.minimum.at(rad, E[:, 1], L)
    idx = np.flatnonzero(~touch)
    return idx, 0.25 * rad[idx]


# -- annuli and the integration-by-parts bound ---------------------------------------

def annulus_components(mesh: DomainMesh, r: float):
    """Label the vertices with ``|G| >= r`` by connected component and the
    boundary component (end) each touches; returns ``(labels, end_of_label)``."""
    sel = mesh.G_abs >= r
    E = mesh.edges
    m = sel[E[:, 0]] & sel[E[:, 1]]
    A = coo_matrix((np.ones(int(m.sum())), (E[m, 0], E[m, 1])), shape=(mesh.nv, mesh.nv))
    _, lab = connected_components(A, directed=False)
    lab = np.where(sel, lab, -1)
    end_of = {}
    for loop, end in zip(mesh.boundary, mesh.boundary_ends):
        for L in np.unique(lab[loop]):
            if L < 0:
                continue
            end_of.setdefault(int(L), set()).add(end)
    return lab, end_of


def choose_r(mesh: DomainMesh, dG: Callable, scan=(0.6, 0.7, 0.8, 0.9), floor: float = 1e-6,
             dense: int = 3) -> dict:
    """Largest ``r`` in the scan whose annuli ``r <= |G| <= 1`` form ``e + 1``
    rings, one per end, each with interior vertices and with ``min |dG|``
    above the floor.  ``|dG|`` is
    sampled on a barycentric lattice in every triangle touching an annulus,
    a superset of the annuli."""
    T = mesh.triangles
    ne = len(mesh.boundary)
    rows = []
    best = None
    bary = [(i / dense, j / dense, 1 - (i + j) / dense) for i in range(dense + 1) for j in range(dense + 1 - i)]
    for r in sorted(scan, reverse=True):
        if not 0 < r < 1:
            continue
        lab, end_of = annulus_components(mesh, r)
        comps = sorted(set(lab[lab >= 0].tolist()))
        ok_topo = len(comps) == ne and all(len(end_of.get(L, ())) == 1 for L in comps) \
            and sorted(next(iter(end_of[L])) for L in comps) == sorted(mesh.boundary_ends)
        interior = mesh.G_abs < 1 - 1e-9
        ok_topo = ok_topo and all(np.any((lab == L) & interior) for L in comps)
        tri = T[np.any(mesh.G_abs[T] >= r, axis=1)]
        if len(tri):
            za, zb, zc = (mesh.vertices[tri[:, k]] for k in range(3))
            e1, e2 = _wrapped(mesh, tri[:, 0], tri[:, 1]), _wrapped(mesh, tri[:, 0], tri[:, 2])
            pts = np.concatenate([za + b1 * e1 + b2 * e2 for (_, b1, b2) in bary])
            md = float(np.min(np.abs(dG(pts))))
        else:
            md = 0.0
        passed = bool(ok_topo and md > floor)
        rows.append({"r": r, "rings": len(comps), "min_abs_dG": md, "passed": passed})
        if passed and best is None:
            best = r
    if best is None:
        raise NoValidAnnulus("no r in the scan gives e + 1 unbranched annuli", scan=rows)
    return {"r": best, "scan": rows}


def _wrapped(mesh, i, j):
    """Chart displacement between vertices ``i`` and ``j`` of one triangle."""
    lookup = {}
    E = mesh.edges
    key = np.minimum(i, j) * mesh.nv + np.maximum(i, j)
    ekey = E[:, 0] * mesh.nv + E[:, 1]
    srt = np.argsort(ekey)
    pos = srt[np.searchsorted(ekey[srt], key)]
    sign = np.where(i < j, 1.0, -1.0)
    return sign * mesh.edge_dz[pos]


def cheb_nodes(m: int, L: float = 1.0) -> np.ndarray:
    """Chebyshev-Lobatto points on ``[0, L]`` in increasing order."""
    return L * (1 - np.cos(np.pi * np.arange(m) / (m - 1))) / 2


@dataclass
class AppendixBound:
    C1: float
    C2: float
    C3: float
    L: float
    integral: float
    verified: bool

    @property
    def C(self) -> float:
        return self.C1 * self.C2 + self.L * self.C1 * self.C3

    def to_dict(self) -> dict:
        return {"C1": self.C1, "C2": self.C2, "C3": self.C3, "L": self.L, "C": self.C,
                "integral": self.integral, "verified": self.verified}


def _cheb_fit(vals, L):
    m = len(vals)
    x = 2 * cheb_nodes(m, L) / L - 1
    return C.chebfit(x, vals, m - 1)


def appendix_bound(a, b, L: float, m: int = 129, dense: int = 4097, slack: float = 1e-8,
                   C2: Optional[float] = None, C3: Optional[float] = None) -> AppendixBound:
    """Constants of the integration-by-parts bound
    ``|int_0^L a b| <= C1 C2 + L C1 C3`` with ``C1 = max_s |int_0^s a|``,
    ``C2 = max |b|`` and ``C3 = max |b'|``.

    ``a`` and ``b`` are vectorised callables on ``[0, L]`` or arrays of values
    at ``cheb_nodes(len, L)``.  ``C2``/``C3`` may be supplied (shared sups).
    """
    if callable(a):
        t = cheb_nodes(m, L)
        av, bv = np.asarray(a(t), dtype=complex), np.asarray(b(t), dtype=complex)
    else:
        av, bv = np.asarray(a, dtype=complex), np.asarray(b, dtype=complex)
    ca, cb = _cheb_fit(av, L), _cheb_fit(bv, L)
    x = np.linspace(-1, 1, dense)
    scale = L / 2
    prim = C.chebint(ca, lbnd=-1) * scale
    c1 = float(np.max(np.abs(C.chebval(x, prim))))
    c2 = float(np.max(np.abs(np.concatenate([C.chebval(x, cb), bv]))))
    c3 = float(np.max(np.abs(C.chebval(x, C.chebder(cb) / scale))))
    prod = C.chebint(C.chebmul(ca, cb), lbnd=-1) * scale
    integral = float(abs(C.chebval(1.0, prod)))
    c2 = max(c2, C2) if C2 is not None else c2
    c3 = max(c3, C3) if C3 is not None else c3
    res = AppendixBound(c1, c2, c3, float(L), integral, True)
    if not integral <= res.C + slack:
        raise NumericalInconsistency(f"|int ab| = {integral:.6e} exceeds the bound {res.C:.6e}")
    return res


# -- path lifting and the boundedness certificate --------------------------------------

def lift_segments(G: Callable, dG: Callable, q, sigma, tol: float = 1e-9, maxsub: int = 12):
    """Lift sampled paths ``sigma[s]`` (with ``sigma[s, 0] = G(q[s])``)
    through ``G`` by predictor-corrector continuation started at ``q[s]``.

    All paths advance together; a step whose corrector fails to converge or
    jumps further than the local inverse predicts is retried with halved
    substeps.  Returns the lifted points and the worst residual
    ``|G(lift) - sigma|``.
    """
    q = np.atleast_1d(np.asarray(q, dtype=complex))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=complex))
    S, M = sigma.shape
    out = np.empty((S, M), dtype=complex)
    out[:, 0] = q
    z = q.copy()
    for k in range(1, M):
        w0, w1 = sigma[:, k - 1], sigma[:, k]
        todo = np.arange(S)
        sub = 1
        znew = z.copy()
        while todo.size:
            zz = z[todo].copy()
            ok = np.ones(todo.size, dtype=bool)
            d0 = np.abs(dG(zz))
            for j in range(1, sub + 1):
                target = w0[todo] + (w1[todo] - w0[todo]) * j / sub
                zprev = zz
                zz = zz + (target - G(zz)) / dG(zz)
                for _ in range(30):
                    r = G(zz) - target
                    if np.all(np.abs(r[ok]) < tol * 1e-3):
                        break
                    zz = zz - r / dG(zz)
                jump = np.abs(w1[todo] - w0[todo]) / sub / np.maximum(d0, 1e-300)
                good = (np.abs(G(zz) - target) < tol) & (np.abs(zz - zprev) <= 4 * jump + 1e-12)
                ok &= good
                zz = np.where(ok, zz, zprev)
            znew[todo[ok]] = zz[ok]
            todo = todo[~ok]
            sub *= 2
            if todo.size and sub > 2 ** maxsub:
                raise LiftFailure(f"path lifting failed at sample {k} for {todo.size} segment(s)")
        z = znew
        out[:, k] = z
    resid = float(np.max(np.abs(G(out) - sigma)))
    if not resid < tol:
        raise LiftFailure(f"lift residual {resid:.3e}")
    return out, resid


def lift_segment(G: Callable, dG: Callable, q: complex, sigma, tol: float = 1e-9):
    """Single-path version of :func:`lift_segments`."""
    out, resid = lift_segments(G, dG, [q], [sigma], tol)
    return out[0], resid


@dataclass
class BoundednessCertificate:
    r: float
    K0: float
    segments: list
    per_end: dict
    global_bound: float
    mesh_max: float
    min_abs_dG_annuli: float
    uniform_C1: float

    def to_dict(self) -> dict:
        return {"r": self.r, "K0": self.K0, "global_bound": self.global_bound, "mesh_max": self.mesh_max,
                "min_abs_dG_annuli": self.min_abs_dG_annuli, "uniform_C1": self.uniform_C1,
                "per_end": {str(k): v for k, v in self.per_end.items()},
                "max_segment_C": max((s["C"] for s in self.segments), default=0.0),
                "segments": self.segments}


def certify_bounded(data, mesh: DomainMesh, X: np.ndarray, r_info: dict, segments: int = 16,
                    seed: int = 0, nodes: int = 65, slack: float = 1e-8) -> BoundednessCertificate:
    """Bound ``|X_c|`` on the domain by ``K0`` on the core ``|G| <= r`` plus the
    integration-by-parts constant along lifted radial segments in each annulus.

    ``data`` is a ``DeformedData``; ``X`` the ``(V, 2)`` C2 potential on ``mesh``.
    """
    r = r_info["r"]
    rng = np.random.default_rng(seed)
    G = lambda z: data.values(z).G(data.params.lam)
    dG = lambda z: data.values(z).dG(data.params.lam)
    psi12 = lambda z: data.psi(z, check=False)[:2]
    disk = data.disk

    core = mesh.G_abs <= r
    normX = np.linalg.norm(X, axis=1)
    K0 = float(normX[core].max()) if core.any() else 0.0
    # level-set samples |G| = r on the edges of the mesh
    E = mesh.edges
    ga, gb = mesh.G_abs[E[:, 0]], mesh.G_abs[E[:, 1]]
    cr = (ga - r) * (gb - r) < 0
    if cr.any():
        za, dz = mesh.vertices[E[cr, 0]], mesh.edge_dz[cr]
        lo, hi = np.zeros(cr.sum()), np.ones(cr.sum())
        ina = ga[cr] < r
        for _ in range(50):
            mid = (lo + hi) / 2
            same = (np.abs(G(za + mid * dz)) < r) == ina
            lo, hi = np.where(same, mid, lo), np.where(same, hi, mid)
        pts = za + (lo + hi) / 2 * dz
        Xl = X[E[cr, 0]] + segment_integral(psi12, za, pts).T
        K0 = max(K0, float(np.max(np.linalg.norm(Xl, axis=1))))

    lab, end_of = annulus_components(mesh, r)
    t = cheb_nodes(nodes)
    chosen = []
    for L_, ends_ in sorted(end_of.items()):
        end = next(iter(ends_))
        cand = np.flatnonzero((lab == L_) & (mesh.G_abs > r) & (mesh.G_abs < 1 - 1e-9))
        if cand.size:
            chosen += [(end, int(v)) for v in np.sort(rng.choice(cand, min(segments, cand.size), replace=False))]
    segs, raw = [], []
    mind = np.inf
    if chosen:
        vs = np.array([v for _, v in chosen])
        q = mesh.vertices[vs]
        w0 = G(q)
        w1 = r * w0 / np.abs(w0)
        dsig = w1 - w0
        sigma = w0[:, None] + t[None, :] * dsig[:, None]
        lifts, _ = lift_segments(G, dG, q, sigma)
        bv = data.values(lifts)
        h = np.exp(bv.F(data.params.delta))
        dGl = bv.dG(data.params.lam)
        mind = float(np.min(np.abs(dGl)))
        ph = disk.phi(sigma)
        a1 = (ph[0] - 1j * ph[1]) * dsig[:, None]
        a2 = (ph[0] + 1j * ph[1]) * dsig[:, None]
        b1 = bv.fp / (h * dGl)
        b2 = h * bv.fp / dGl
        psi = data.psi(lifts, check=False)[:2] * (dsig[:, None] / dGl)[None]
        for i, (end, v) in enumerate(chosen):
            resid = float(np.max(np.abs(G(lifts[i]) - sigma[i])))
            direct = np.array([C.chebval(1.0, C.chebint(_cheb_fit(p[i], 1.0), lbnd=-1) / 2) for p in psi])
            I1 = C.chebval(1.0, C.chebint(_cheb_fit(a1[i] * b1[i], 1.0), lbnd=-1) / 2) / 2
            I2 = C.chebval(1.0, C.chebint(_cheb_fit(a2[i] * b2[i], 1.0), lbnd=-1) / 2) / 2
            split_err = float(np.max(np.abs(direct - np.array([I1 + I2, 1j * (I1 - I2)]))))
            raw.append((end, v, q[i], lifts[i], a1[i], b1[i], a2[i], b2[i], direct, resid, split_err))
    if not raw:
        raise NoValidAnnulus("no annulus vertices to sample")

    # shared sup of b and b' per end
    per_end = {}
    for row in raw:
        end = row[0]
        d = per_end.setdefault(end, {"C2_1": 0.0, "C3_1": 0.0, "C2_2": 0.0, "C3_2": 0.0, "segments": 0})
        A1 = appendix_bound(row[4], row[5], 1.0, slack=np.inf)
        A2 = appendix_bound(row[6], row[7], 1.0, slack=np.inf)
        d["C2_1"], d["C3_1"] = max(d["C2_1"], A1.C2), max(d["C3_1"], A1.C3)
        d["C2_2"], d["C3_2"] = max(d["C2_2"], A2.C2), max(d["C3_2"], A2.C3)
        d["segments"] += 1
    uniformC1 = 2 * np.sqrt(2) * disk.R
    for end, d in per_end.items():
        d["C_uniform"] = float(np.sqrt(2) / 2 * uniformC1 * (d["C2_1"] + d["C3_1"] + d["C2_2"] + d["C3_2"]))

    for end, v, q, lift, a1, b1, a2, b2, direct, resid, split_err in raw:
        d = per_end[end]
        A1 = appendix_bound(a1, b1, 1.0, C2=d["C2_1"], C3=d["C3_1"], slack=slack)
        A2 = appendix_bound(a2, b2, 1.0, C2=d["C2_2"], C3=d["C3_2"], slack=slack)
        Cseg = float(np.sqrt(2) * (A1.C + A2.C) / 2)
        dnorm = float(np.linalg.norm(direct))
        if not dnorm <= Cseg + slack:
            raise CertificateInconsistent(f"segment from vertex {v}: |X(q1) - X(q)| = {dnorm:.6e} > {Cseg:.6e}")
        q1val = X[v] - direct
        K0 = max(K0, float(np.linalg.norm(q1val)))
        segs.append({"end": int(end), "vertex": int(v), "q": [float(q.real), float(q.imag)],
                     "abs_G_q": float(mesh.G_abs[v]), "lift_residual": resid, "split_error": split_err,
                     "direct": dnorm, "C": Cseg, "I1": A1.to_dict(), "I2": A2.to_dict()})

    gbound = K0 + max(d["C_uniform"] for d in per_end.values())
    mesh_max = float(normX.max())
    cert = BoundednessCertificate(r, K0, segs, per_end, float(gbound), mesh_max, float(mind), float(uniformC1))
    if not mesh_max <= gbound + 1e-6:
        raise CertificateInconsistent(f"mesh maximum {mesh_max:.6e} exceeds the bound {gbound:.6e}")
    return cert
