"""Loop quadrature, the period matrix, period maps, Jacobians and Newton solvers.

All loops are closed curves parametrised over ``[0, 1)`` with analytic
integrands, so the periodic trapezoid rule converges geometrically.  A fixed
node count per loop is chosen once when the engine is built; this keeps
finite-difference Jacobians free of adaptive-quadrature noise.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .deform import DeformationParams, psi_from_values, psi_parameter_derivatives
from .errors import (ContourTooClose, DegeneratePeriodMatrix, DomainShrunk, ModelMismatch,
                     NoConvergence, NondegeneracyFailed, QuadratureFailure, SingularIterate)
from .forms import FormsContext, MeroOneForm
from .nulldisk import NullDiskData
from .surface import POLE_EXCLUSION, Loop

log = logging.getLogger(__name__)

QUAD_TOL = 1e-12
RESIDUAL_TOL = 1e-10
FD_STEP = 1e-5
VARIANTS = ("Per1", "Per2", "Per3")


def _trapezoid(fn, loop: Loop, n: int):
    t = np.arange(n) / n
    z = loop.point(t)
    return np.sum(fn(z) * loop.tangent(t), axis=-1) / n


def loop_integral(form, loop: Loop, tol: float = QUAD_TOL, nmin: int = 16, nmax: int = 1 << 17,
                  surface=None, return_error: bool = False):
    """``oint_loop form`` by the periodic trapezoid rule with node doubling.

    ``form`` is a ``MeroOneForm`` (whose declared poles are checked against
    the path) or any vectorised coefficient callable.
    """
    fn = form.coef if isinstance(form, MeroOneForm) else form
    if isinstance(form, MeroOneForm):
        t = np.linspace(0, 1, 2048, endpoint=False)
        z = loop.point(t)
        for p, k in form.divisor:
            if k < 0 and np.isfinite(p):
                d = surface.distance(z, p) if surface is not None else np.abs(z - p)
                if np.min(d) < POLE_EXCLUSION:
                    raise ContourTooClose(f"{form.name} has a pole within {POLE_EXCLUSION} of {loop.tag}")
    n = nmin
    prev = _trapezoid(fn, loop, n)
    while n < nmax:
        n *= 2
        cur = _trapezoid(fn, loop, n)
        err = np.max(np.abs(cur - prev))
        if not np.all(np.isfinite(cur)):
            raise QuadratureFailure(f"non-finite integrand on {loop.tag}")
        if err < tol * max(1.0, float(np.max(np.abs(cur)))):
            return (cur, float(err)) if return_error else cur
        prev = cur
    raise QuadratureFailure(f"trapezoid rule did not converge on {loop.tag} (error {err:.3e})")


def nodes_for(fn, loop: Loop, tol: float = QUAD_TOL, nmin: int = 16, nmax: int = 1 << 15) -> int:
    n = nmin
    prev = _trapezoid(fn, loop, n)
    while n < nmax:
        n *= 2
        cur = _trapezoid(fn, loop, n)
        if np.max(np.abs(cur - prev)) < tol * max(1.0, float(np.max(np.abs(cur)))):
            return n
        prev = cur
    raise QuadratureFailure(f"no node count reaches {tol:g} on {loop.tag}")


@dataclass
class PeriodMatrix:
    P: np.ndarray
    singular_values: np.ndarray

    @property
    def condition(self) -> float:
        return float(self.singular_values[0] / self.singular_values[-1])

    def to_dict(self) -> dict:
        return {"P": [[[float(x.real), float(x.imag)] for x in row] for row in self.P],
                "singular_values": [float(s) for s in self.singular_values],
                "condition": self.condition}


def period_matrix(basis, loops, tol: float = QUAD_TOL, surface=None) -> PeriodMatrix:
    """``p_kj = oint_{gamma_k} zeta_j``."""
    n = len(basis)
    if len(loops) != n:
        raise DegeneratePeriodMatrix(f"{len(loops)} loops for {n} forms")
    P = np.array([[loop_integral(form, loop, tol, surface=surface) for form in basis.forms] for loop in loops])
    s = np.linalg.svd(P, compute_uv=False)
    if not s[-1] > 1e-10 * s[0]:
        raise DegeneratePeriodMatrix("period matrix is singular", singular_values=s.tolist())
    return PeriodMatrix(P, s)


class PeriodEngine:
    """Fixed-node quadrature of the deformed forms over the homology loops."""

    def __init__(self, ctx: FormsContext, disk: NullDiskData, tol: float = QUAD_TOL):
        self.ctx, self.disk, self.tol = ctx, disk, tol
        self.n = ctx.n
        self.nodes, self.values, self.weights = [], [], []
        for loop in ctx.loops:
            def probe(z):
                bv = ctx.values(z)
                return np.concatenate([bv.coef, (bv.v * bv.fp)[None], bv.fp[None]], axis=0)

            N = 2 * nodes_for(probe, loop, tol)
            t = np.arange(N) / N
            self.nodes.append(N)
            self.values.append(ctx.values(loop.point(t)))
            self.weights.append(loop.tangent(t) / N)
        self.P = period_matrix(ctx.basis, ctx.loops, tol, surface=ctx.surface)

    def periods(self, params: DeformationParams, check: bool = True) -> np.ndarray:
        """Complex ``(3, n)`` array of ``oint_{gamma_k} Psi_i``."""
        out = np.empty((3, self.n), dtype=complex)
        for k, (bv, w) in enumerate(zip(self.values, self.weights)):
            psi, G, _ = psi_from_values(bv, self.disk, params.lam, params.delta)
            if check and not np.all(np.abs(G) < 1):
                raise DomainShrunk(f"loop {self.ctx.loops[k].tag} leaves |G| < 1 "
                                   f"(max |G| = {np.max(np.abs(G)):.3g})", loop=k)
            out[:, k] = psi @ w
        return out

    def derivatives(self, params: DeformationParams) -> np.ndarray:
        """Complex ``(3, n, 2n + 1)`` array of parameter derivatives of the periods."""
        out = np.empty((3, self.n, 2 * self.n + 1), dtype=complex)
        for k, (bv, w) in enumerate(zip(self.values, self.weights)):
            d = psi_parameter_derivatives(bv, self.disk, params.lam, params.delta)
            out[:, k, :] = d @ w
        return out


# -- period maps ----------------------------------------------------------------

def select(variant: str, per: np.ndarray) -> np.ndarray:
    """Period vector of the given variant from the ``(3, n)`` period array."""
    if variant == "Per1":
        return np.concatenate([per[0], per[1]])
    if variant == "Per2":
        return np.concatenate([per[0].real, per[1].real, per[2].real])
    if variant == "Per3":
        return np.concatenate([per[0].imag, per[1].real, per[2].real])
    raise ValueError(f"unknown variant {variant!r}")


def period_map(variant: str, params: DeformationParams, engine: PeriodEngine) -> np.ndarray:
    return select(variant, engine.periods(params))


def _real_jacobian(variant: str, C: np.ndarray) -> np.ndarray:
    """Real Jacobian in ``(s_1..s_2n, t_1..t_2n)`` from holomorphic derivatives
    ``C`` of shape ``(3, n, 2n)``."""
    R, I = C.real, C.imag
    if variant == "Per2":
        rows = [np.hstack([R[i], -I[i]]) for i in range(3)]
    elif variant == "Per3":
        rows = [np.hstack([I[0], R[0]])] + [np.hstack([R[i], -I[i]]) for i in (1, 2)]
    else:
        raise ValueError(variant)
    return np.vstack(rows)


def model_jacobian(variant: str, engine: PeriodEngine, params: DeformationParams) -> np.ndarray:
    """Jacobian of the period map in the unknowns (``lam_0`` held fixed)."""
    C = engine.derivatives(params)[:, :, 1:]
    if variant == "Per1":
        return np.vstack([C[0], C[1]])
    return _real_jacobian(variant, C)


# -- Jacobian reports -------------------------------------------------------------

JACOBIANS = {"J1": "Per1", "J2": "Per2", "J3": "Per3"}


@dataclass
class JacobianReport:
    variant: str
    analytic: np.ndarray = field(repr=False)
    finite_difference: np.ndarray = field(repr=False)
    discrepancy: float
    singular_values: np.ndarray = field(repr=False)
    rank: int
    expected_rank: int

    @property
    def passed(self) -> bool:
        return self.discrepancy < 1e-6 and self.rank == self.expected_rank

    def to_dict(self) -> dict:
        s = self.singular_values
        return {"variant": self.variant, "shape": list(self.analytic.shape),
                "discrepancy": self.discrepancy, "rank": self.rank, "expected_rank": self.expected_rank,
                "singular_values": [float(x) for x in s],
                "ratio_min_max": float(s[-1] / s[0]) if s.size else 0.0}


def base_scalars(disk: NullDiskData) -> dict:
    v = disk.at0()
    return {"phi": v["phi"], "dphi": v["dphi"]}


def analytic_jacobian(variant: str, disk: NullDiskData, P) -> np.ndarray:
    """Block Jacobian at the base point from ``P`` and the values of ``phi`` at 0."""
    P = P.P if isinstance(P, PeriodMatrix) else np.asarray(P)
    v = base_scalars(disk)
    p, dp = v["phi"], v["dphi"]
    Z = np.zeros_like(P)
    # holomorphic derivative blocks: rows Psi1, Psi2, Psi3; columns lam, delta
    C = np.array([
        [dp[0] * P, 1j * p[1] * P],
        [dp[1] * P, -1j * p[0] * P],
        [dp[2] * P, Z],
    ])
    if variant == "J1":
        return np.block([[C[0, 0], C[0, 1]], [C[1, 0], C[1, 1]]])
    full = np.stack([np.hstack([C[i, 0], C[i, 1]]) for i in range(3)])
    return _real_jacobian(JACOBIANS[variant], full)


def fd_jacobian(variant: str, engine: PeriodEngine, step: float = FD_STEP,
                params: Optional[DeformationParams] = None) -> np.ndarray:
    """Central differences of the period map (complex steps for J1, real
    coordinate steps for J2 and J3)."""
    n = engine.n
    base = params if params is not None else DeformationParams.zero(n)
    var = JACOBIANS[variant]
    if variant == "J1":
        u0 = base.unknowns()
        cols = []
        for j in range(2 * n):
            hj = step * max(1.0, abs(u0[j]))
            up, um = u0.copy(), u0.copy()
            up[j] += hj
            um[j] -= hj
            fp = period_map(var, DeformationParams.from_unknowns(base.lam[0], up), engine)
            fm = period_map(var, DeformationParams.from_unknowns(base.lam[0], um), engine)
            cols.append((fp - fm) / (2 * hj))
        return np.array(cols).T
    x0 = base.real_unknowns()
    cols = []
    for j in range(4 * n):
        hj = step * max(1.0, abs(x0[j]))
        xp, xm = x0.copy(), x0.copy()
        xp[j] += hj
        xm[j] -= hj
        fp = period_map(var, DeformationParams.from_real_unknowns(base.lam[0], xp), engine)
        fm = period_map(var, DeformationParams.from_real_unknowns(base.lam[0], xm), engine)
        cols.append((fp - fm) / (2 * hj))
    return np.array(cols).T


def numerical_rank(A: np.ndarray, rel: float = 1e-8) -> tuple:
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > rel * s[0])), s


def jacobian(variant: str, disk: NullDiskData, P, engine: Optional[PeriodEngine] = None,
             step: float = FD_STEP, tol: float = 1e-6, strict: bool = True) -> JacobianReport:
    """Analytic block Jacobian, its finite-difference counterpart and rank."""
    if variant not in JACOBIANS:
        raise ValueError(f"unknown Jacobian {variant!r}")
    A = analytic_jacobian(variant, disk, P)
    n = A.shape[1] // (2 if variant == "J1" else 4)
    expected = 2 * n if variant == "J1" else 3 * n
    if engine is not None:
        F = fd_jacobian(variant, engine, step)
        disc = float(np.linalg.norm(A - F) / np.linalg.norm(A))
    else:
        F, disc = np.full_like(A, np.nan), float("nan")
    rank, s = numerical_rank(A)
    rep = JacobianReport(variant, A, F, disc, s, rank, expected)
    if strict:
        if engine is not None and not disc < tol:
            raise ModelMismatch(f"{variant}: analytic and finite-difference Jacobians differ by {disc:.3e}")
        if rank != expected:
            raise NondegeneracyFailed(f"{variant} has rank {rank}, expected {expected}")
    return rep


# -- Newton solvers -----------------------------------------------------------------

SOLVE_VARIANT = {"C2": "Per1", "R3": "Per2", "L3": "Per3"}


@dataclass
class SolveResult:
    target: str
    c: complex
    params: DeformationParams
    residual: float
    iterations: int
    trace: list

    def to_dict(self) -> dict:
        return {"target": self.target, "c": [float(np.real(self.c)), float(np.imag(self.c))],
                "residual": self.residual, "iterations": self.iterations,
                "trace": [float(r) for r in self.trace], "params": self.params.to_dict(),
                "lam_over_c": float(np.linalg.norm(self.params.lam) / abs(self.c)) if self.c else 0.0}


def kill_periods(target: str, c, engine: PeriodEngine, start: Optional[DeformationParams] = None,
                 tol: float = RESIDUAL_TOL, maxit: int = 50) -> SolveResult:
    """Newton iteration on the period map with ``lam_0 = c`` fixed.

    ``C2`` solves the square complex system; ``R3`` and ``L3`` use
    minimum-norm (pseudo-inverse) steps on the underdetermined real system.
    """
    target = target.upper()
    var = SOLVE_VARIANT[target]
    c = complex(c[0], c[1]) if isinstance(c, (tuple, list)) else complex(c)
    n = engine.n
    if c == 0:
        return SolveResult(target, c, DeformationParams.zero(n), 0.0, 0, [0.0])
    params = DeformationParams(np.concatenate([[c], start.lam[1:]]), start.delta) if start is not None \
        else DeformationParams(np.concatenate([[c], np.zeros(n)]), np.zeros(n))
    F = period_map(var, params, engine)
    trace = [float(np.linalg.norm(F))]
    growth = 0
    for it in range(1, maxit + 1):
        if trace[-1] < tol:
            return SolveResult(target, c, params, trace[-1], it - 1, trace)
        J = model_jacobian(var, engine, params)
        s = np.linalg.svd(J, compute_uv=False)
        if not s[-1] > 1e-14 * s[0]:
            raise SingularIterate(f"singular Jacobian at iteration {it}", singular_values=s.tolist())
        if target == "C2":
            step = np.linalg.solve(J, F)
            params = DeformationParams.from_unknowns(c, params.unknowns() - step)
        else:
            step = np.linalg.lstsq(J, F, rcond=None)[0]
            params = DeformationParams.from_real_unknowns(c, params.real_unknowns() - step)
        try:
            F = period_map(var, params, engine)
        except DomainShrunk as exc:
            raise NoConvergence(f"Newton iterate left the domain at c = {c}: {exc}", c=c) from exc
        r = float(np.linalg.norm(F))
        if not np.isfinite(r):
            raise NoConvergence(f"non-finite residual at c = {c}", c=c)
        growth = growth + 1 if r > trace[-1] else 0
        trace.append(r)
        log.debug("%s c=%s it=%d residual=%.3e", target, c, it, r)
        if growth >= 3:
            raise NoConvergence(f"residual grew for 3 consecutive steps at c = {c}", c=c, trace=trace)
    if trace[-1] < tol:
        return SolveResult(target, c, params, trace[-1], maxit, trace)
    raise NoConvergence(f"no convergence within {maxit} steps at c = {c} (residual {trace[-1]:.3e})",
                        c=c, trace=trace)


def continuation(target: str, ramp, engine: PeriodEngine, tol: float = RESIDUAL_TOL,
                 maxit: int = 50) -> list:
    """Solve along an increasing ramp of ``c``, warm-starting each step from
    the previous solution rescaled by the ratio of the ``c`` values."""
    results, prev = [], None
    for c in ramp:
        start = None
        if prev is not None:
            ratio = complex(c) / prev.c
            start = DeformationParams(prev.params.lam * ratio, prev.params.delta * ratio)
        prev = kill_periods(target, c, engine, start=start, tol=tol, maxit=maxit)
        results.append(prev)
    return results
