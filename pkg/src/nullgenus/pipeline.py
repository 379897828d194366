"""Orchestration of the construction, stage by stage.

``run_pipeline`` builds the surface, the forms, the normalized disk and the
period engine once, then solves, meshes, realizes and certifies each target.
Every stage contributes a block to the report with its hard checks; the run
is PASS only if every check of every stage holds.  The report is free of
wall-clock data so that identical inputs give byte-identical JSON.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .config import PipelineConfig
from .deform import (DeformationParams, DeformedData, certificate_threshold_scan, local_geometry,
                     metric_certificate, realize, singularity_scan)
from .domain import build_mesh, certify_bounded, choose_r
from .errors import (BoundaryBranchPoint, CertificateFailed, CertificateInconsistent, ConfigError, DomainShrunk,
                     DomainViolation, MeshFailure, MultivaluedRealization, NoConvergence, NoValidAnnulus,
                     NullGenusError, SingularIterate, WrongTopology)
from .forms import build_context, build_f, divisor_check, find_ends, multiply_ends, residue_check
from .nulldisk import bundled_disk, load_disk, normalize_disk
from .periods import PeriodEngine, SOLVE_VARIANT, jacobian, kill_periods, select
from .surface import make_surface

log = logging.getLogger(__name__)

SCHEMA_ID = "nullgenus.report/1"
STAGES = ("surface", "forms", "disk", "periods", "jacobians", "targets")
RECOVERABLE = (WrongTopology, MeshFailure, BoundaryBranchPoint, CertificateFailed, CertificateInconsistent,
               MultivaluedRealization, NoValidAnnulus, DomainViolation)


def cpx(w) -> list:
    return [float(np.real(w)), float(np.imag(w))]


def jsonable(obj):
    """Recursively convert numpy scalars, arrays and complex numbers."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [jsonable(float(obj.real)), jsonable(float(obj.imag))]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if np.isnan(x):
            return None
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


@dataclass
class Stage:
    """Outcome of one stage: data for the report plus named hard checks."""

    name: str
    data: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    error: Optional[dict] = None
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return self.error is None and all(self.checks.values())

    def to_dict(self) -> dict:
        out = {"status": "pass" if self.passed else "fail", "checks": dict(self.checks), **self.data}
        if self.error is not None:
            out["error"] = self.error
        return out


def _error_dict(exc: Exception) -> dict:
    if isinstance(exc, NullGenusError):
        return {"code": exc.code, "message": str(exc), "exit_code": exc.exit_code,
                "details": jsonable(getattr(exc, "details", {}))}
    return {"code": type(exc).__name__, "message": str(exc), "exit_code": 3}


@dataclass
class TargetArtifacts:
    target: str
    c: float
    mesh: object = None
    realization: object = None
    solve: object = None


@dataclass
class RunResult:
    """Report dictionary plus in-memory artifacts for export."""

    config: PipelineConfig
    stages: dict
    targets: dict
    artifacts: dict
    shared: dict
    timings: dict
    mode: str = "certify"

    @property
    def passed(self) -> bool:
        needs_targets = self.mode not in ("periods", "jacobian")
        return all(s.passed for s in self.stages.values()) and (bool(self.targets) or not needs_targets) and \
            all(s.passed for blocks in self.targets.values() for s in blocks.values())

    @property
    def failed_stage(self) -> Optional[str]:
        for name, s in self.stages.items():
            if not s.passed:
                return name
        for t, blocks in self.targets.items():
            for name, s in blocks.items():
                if not s.passed:
                    return f"{t}/{name}"
        return None

    @property
    def exit_code(self) -> int:
        """0 on PASS, otherwise the exit code of the first stage error (3 when
        the failure is a violated check rather than an exception)."""
        if self.passed:
            return 0
        blocks = list(self.stages.values()) + [s for b in self.targets.values() for s in b.values()]
        for s in blocks:
            if s.error is not None:
                return int(s.error.get("exit_code", 3))
        return 3

    @property
    def report(self) -> dict:
        return jsonable({
            "schema": SCHEMA_ID,
            "version": __version__,
            "status": "PASS" if self.passed else "FAIL",
            "mode": self.mode,
            "failed_stage": self.failed_stage,
            "config": self.config.to_dict(),
            "stages": {k: v.to_dict() for k, v in self.stages.items()},
            "targets": {t: {k: v.to_dict() for k, v in blocks.items()} for t, blocks in self.targets.items()},
            "notes": {
                "singularity_criterion": "|ghat| = 1, taken from the maxface literature (external criterion)",
                "c_ramp": "empirical per backend; not a constant of the construction",
            },
        })


class _Timer:
    def __init__(self, stage: Stage):
        self.stage = stage

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self.stage

    def __exit__(self, exc_type, exc, tb):
        self.stage.seconds += time.perf_counter() - self.t0
        if exc is not None and isinstance(exc, Exception):
            self.stage.error = _error_dict(exc)
            return True
        return False


# -- shared stages ---------------------------------------------------------------------

def _stage_surface(cfg: PipelineConfig, shared: dict) -> Stage:
    st = Stage("surface")
    with _Timer(st):
        surface = make_surface(cfg.surface, tau=cfg.tau_complex)
        shared["surface"] = surface
        st.data["model"] = surface.describe()
        if surface.is_torus:
            test = surface.kernel.self_test(seed=cfg.seed)
            st.data["kernel_self_test"] = test
            st.checks["kernel_identities"] = max(test.values()) < 1e-10
    return st


def _stage_forms(cfg: PipelineConfig, shared: dict) -> Stage:
    st = Stage("forms")
    with _Timer(st):
        surface = shared["surface"]
        f, ends = build_f(surface, 2 if surface.is_torus else cfg.power)
        for shift in cfg.shifts:
            f = multiply_ends(surface, f, complex(*shift))
        ctx = build_context(surface, f)
        shared["ctx"] = ctx
        ends = ctx.ends
        st.data["f"] = {"name": f.name, "end_multiplications": len(cfg.shifts)}
        st.data["ends"] = {"e": ends.e, "n": ctx.n, "m0": ends.m0,
                           "points": [cpx(p) if np.isfinite(p) else "inf" for p in ends.points],
                           "orders": list(ends.orders)}
        st.data["basis"] = list(ctx.basis.tags)
        st.data["loops"] = [lp.tag for lp in ctx.loops]
        rc = residue_check(ctx.basis)
        st.data["residues"] = rc
        st.checks["residues"] = rc["max_mismatch"] < 1e-8 and rc["max_sum"] < 1e-8
        rows = divisor_check(ctx)
        shared["divisor_rows"] = rows
        st.data["divisor"] = [{"object": o, "point": cpx(p) if np.isfinite(p) else "inf",
                               "declared": int(d), "numeric": float(m)} for o, p, d, m in rows]
        st.checks["divisor_orders"] = all(abs(m - d) < 1e-3 for _, _, d, m in rows)
        # one end multiplication of the working f, counted by the argument principle
        if cfg.surface == "torus":
            probe = _end_multiplication_probe(surface, f, ends)
            st.data["end_multiplication_probe"] = probe
            st.checks["end_multiplication_count"] = probe["e"] == probe["expected_e"]
    return st


def _end_multiplication_probe(surface, f, ends) -> dict:
    """Apply ``f -> (f - c)^2`` once at a regular value and count the new ends."""
    crit = {complex(np.round(f(np.array([p]))[0], 12)) for p in ends.finite}
    shift = 0.3 + 0.2j
    while any(abs(shift - v) < 1e-3 for v in crit):
        shift += 0.1
    g = multiply_ends(surface, f, shift)
    new = find_ends(surface, g)
    # critical points of (f - c)^2: those of f plus the m0 simple zeros of f - c
    return {"shift": cpx(shift), "e": new.e, "expected_e": ends.e + ends.m0,
            "orders": list(new.orders), "m0": new.m0}


def _load_disk(spec: dict):
    if "name" in spec:
        try:
            return bundled_disk(spec["name"])
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc
    return load_disk(spec["g"], spec["omega"], label=spec.get("label", "custom"))


def _stage_disk(cfg: PipelineConfig, shared: dict) -> Stage:
    st = Stage("disk")
    with _Timer(st):
        raw = _load_disk(cfg.disk)
        z0 = cfg.disk.get("z0")
        disk, rec = normalize_disk(raw, z0=None if z0 is None else complex(*z0))
        shared["disk"] = disk
        rng = np.random.default_rng(cfg.seed)
        z = np.sqrt(rng.uniform(0, 1, 200)) * np.exp(2j * np.pi * rng.uniform(0, 1, 200))
        null = raw.null_residual(z)
        cond = disk.conditions()
        st.data.update({"label": raw.label, "null_residual": null, "conditions": cond,
                        "normalization": rec.to_dict(), "R": disk.R})
        st.checks["null_identity"] = null < cfg.tolerances.nullity
        st.checks["normal_form"] = disk.is_normal()
        st.checks["orthogonal"] = rec.orthogonality_error() < 1e-12
    return st


def _stage_periods(cfg: PipelineConfig, shared: dict) -> Stage:
    st = Stage("periods")
    with _Timer(st):
        engine = PeriodEngine(shared["ctx"], shared["disk"], tol=cfg.tolerances.quadrature)
        shared["engine"] = engine
        per0 = engine.periods(DeformationParams.zero(engine.n), check=False)
        st.data["P"] = engine.P.to_dict()
        st.data["nodes_per_loop"] = list(engine.nodes)
        st.data["per_at_zero"] = float(np.max(np.abs(select("Per1", per0))))
        st.checks["P_nondegenerate"] = engine.P.singular_values[-1] > 1e-10 * engine.P.singular_values[0]
        st.checks["per_at_zero"] = st.data["per_at_zero"] < cfg.tolerances.residual
    return st


def _stage_jacobians(cfg: PipelineConfig, shared: dict) -> Stage:
    st = Stage("jacobians")
    with _Timer(st):
        engine = shared["engine"]
        for var in ("J1", "J2", "J3"):
            rep = jacobian(var, shared["disk"], engine.P, engine=engine, tol=cfg.tolerances.jacobian, strict=False)
            st.data[var] = rep.to_dict()
            st.checks[f"{var}_matches_fd"] = rep.discrepancy < cfg.tolerances.jacobian
            st.checks[f"{var}_rank"] = rep.rank == rep.expected_rank
    return st


# -- per-target stages -------------------------------------------------------------------

def solve_ramp(target: str, ramp, engine, tol: float) -> tuple:
    """Continuation along ``ramp``; stops at the first failure.

    Returns ``(solutions, trace rows)``."""
    sols, rows, prev = [], [], None
    for c in ramp:
        start = None
        if prev is not None:
            ratio = complex(c) / prev.c
            start = DeformationParams(prev.params.lam * ratio, prev.params.delta * ratio)
        try:
            prev = kill_periods(target, c, engine, start=start, tol=tol)
        except (NoConvergence, SingularIterate, DomainShrunk) as exc:
            rows.append({"c": float(c), "status": "fail", "error": _error_dict(exc)})
            break
        sols.append(prev)
        rows.append({"c": float(c), "status": "pass", "residual": prev.residual,
                     "iterations": prev.iterations, "lam_over_c": prev.to_dict()["lam_over_c"]})
    return sols, rows


def _downstream(target: str, sol, cfg: PipelineConfig, shared: dict, stop_after: str = "certify") -> tuple:
    """Mesh, realize and certify at one solved ``c``; returns ``(stages, artifacts)``."""
    ctx, disk, surface = shared["ctx"], shared["disk"], shared["surface"]
    tol = cfg.tolerances
    data = DeformedData(sol.params, disk, ctx)
    lam = sol.params.lam
    Gf = lambda z: ctx.values(z).G(lam)
    dGf = lambda z: ctx.values(z).dG(lam)
    origin = ctx.loops[0].point(0.0)
    out = {}

    st = out["mesh"] = Stage("mesh")
    t0 = time.perf_counter()
    mesh = build_mesh(Gf, dGf, surface, ctx.ends, cfg.mesh.resolution,
                      min_dG=cfg.mesh.min_dG, min_angle_deg=cfg.mesh.min_angle_deg)
    st.data.update(mesh.to_dict())
    st.data["winding"] = [[float(w) for w in row] for row in mesh.winding]
    st.checks["components_match_ends"] = mesh.components == ctx.ends.e + 1
    st.checks["ends_bijective"] = sorted(mesh.boundary_ends) == list(range(ctx.ends.e + 1))
    st.checks["min_dG_positive"] = mesh.min_dG_boundary > 0
    st.checks["boundary_on_level_set"] = st.data["max_boundary_defect"] < tol.boundary
    st.seconds = time.perf_counter() - t0
    if stop_after == "mesh":
        return out, TargetArtifacts(target, float(np.real(sol.c)), mesh, None, sol)

    st = out["realize"] = Stage("realize")
    t0 = time.perf_counter()
    real = realize(target, data, mesh, tol=tol.mesh_residual, origin=origin)
    nullity = data.nullity(mesh.vertices)
    st.data.update(real.to_dict())
    rr = real.residuals
    st.data["cycle_residuals"] = {"cycles": int(rr.shape[0]),
                                  "max_per_component": rr.max(axis=0) if rr.size else [],
                                  "median": float(np.median(rr.max(axis=1))) if rr.size else 0.0}
    st.data["nullity"] = nullity
    st.checks["required_periods_vanish"] = real.max_residual < tol.mesh_residual
    st.checks["nullity"] = nullity < tol.nullity
    if target == "C2":
        st.data["third_coordinate_note"] = "recorded only; the third coordinate need not be single valued"
    st.seconds = time.perf_counter() - t0

    st = out["metric"] = Stage("metric")
    t0 = time.perf_counter()
    cert = metric_certificate(data, mesh.vertices, margin=cfg.certify.metric_margin)
    st.data.update(cert.to_dict())
    st.data["threshold_scan"] = certificate_threshold_scan(data, mesh.vertices, margin=cfg.certify.metric_margin)
    st.checks["inequality"] = cert.passed
    st.seconds = time.perf_counter() - t0

    st = out["geometry"] = Stage("geometry")
    t0 = time.perf_counter()
    if target == "C2":
        X = real.potential[:, :2]
        r_info = choose_r(mesh, dGf, scan=tuple(cfg.certify.r_scan), floor=cfg.certify.dG_floor)
        bc = certify_bounded(data, mesh, X, r_info, segments=cfg.certify.segments, seed=cfg.seed)
        bd = bc.to_dict()
        bd["r_scan"] = r_info["scan"]
        bd["max_direct_over_C"] = max(s["direct"] / s["C"] for s in bc.segments)
        st.data["boundedness"] = bd
        st.checks["segments_within_bound"] = all(s["direct"] <= s["C"] + 1e-8 for s in bc.segments)
        st.checks["mesh_max_dominated"] = bc.mesh_max <= bc.global_bound
        st.data["third_coordinate_residual"] = real.third_residual
        if cfg.mesh.refine_check:
            fine = build_mesh(Gf, dGf, surface, ctx.ends, 2 * cfg.mesh.resolution,
                              min_dG=cfg.mesh.min_dG, min_angle_deg=cfg.mesh.min_angle_deg)
            rf = realize(target, data, fine, tol=tol.mesh_residual, origin=origin)
            m1 = float(np.max(np.linalg.norm(real.values, axis=1)))
            m2 = float(np.max(np.linalg.norm(rf.values, axis=1)))
            change = abs(m2 - m1) / m1
            st.data["refinement"] = {"resolution": 2 * cfg.mesh.resolution, "max_abs_X": m1,
                                     "max_abs_X_refined": m2, "relative_change": change,
                                     "refined_max_residual": rf.max_residual}
            st.checks["refinement_stable"] = change < 0.01
            st.checks["refined_mesh_max_dominated"] = m2 <= bc.global_bound
    else:
        geo = local_geometry(data, mesh, target=target, seed=cfg.seed)
        st.data["local"] = geo
        st.checks["conformality"] = geo["conformality"] < tol.geometry
        st.checks["harmonicity"] = geo["harmonicity"] < tol.geometry
        if target == "L3":
            psi = data.psi(mesh.vertices, check=False)
            Y = np.stack([1j * psi[0], psi[1], psi[2]])
            lor = np.abs(-Y[0] ** 2 + Y[1] ** 2 + Y[2] ** 2) / np.max(np.abs(Y) ** 2, axis=0)
            st.data["lorentz_null"] = float(lor.max())
            st.checks["lorentz_null"] = float(lor.max()) < tol.nullity
            sing = singularity_scan(real, cfg.certify.singular_tol)
            st.data["singularity_scan"] = {"criterion": "||ghat| - 1| < tol (external criterion)",
                                           "tol": cfg.certify.singular_tol, "vertices": sing,
                                           "min_abs_ghat": float(real.ghat_abs.min()),
                                           "max_abs_ghat": float(real.ghat_abs.max())}
    st.seconds = time.perf_counter() - t0
    return out, TargetArtifacts(target, float(np.real(sol.c)), mesh, real, sol)


def run_target(target: str, cfg: PipelineConfig, shared: dict, stop_after: str = "certify") -> tuple:
    """Solve, then mesh/realize/certify with backoff along the ramp."""
    ramp = cfg.c_ramp
    blocks = {}
    st = blocks["solve"] = Stage("solve")
    t0 = time.perf_counter()
    engine = shared["engine"]
    sols, rows = solve_ramp(target, ramp, engine, cfg.tolerances.residual)
    st.data["requested_c"] = float(ramp[-1])
    st.data["ramp"] = rows
    st.checks["converged"] = bool(sols)
    if sols:
        best = sols[-1]
        per = engine.periods(best.params, check=False)
        st.data["periods"] = {"Psi1": per[0], "Psi2": per[1], "Psi3": per[2]}
        st.data["killed_residual"] = float(np.max(np.abs(select(SOLVE_VARIANT[target], per))))
        st.data["solution"] = best.to_dict()
        st.checks["residual"] = best.residual < cfg.tolerances.residual
    st.seconds = time.perf_counter() - t0
    if not sols or stop_after == "solve":
        st.data["c_used"] = float(np.real(sols[-1].c)) if sols else None
        return blocks, (TargetArtifacts(target, st.data["c_used"], solve=sols[-1]) if sols else None)

    backoff = []
    for sol in reversed(sols):
        try:
            stages, art = _downstream(target, sol, cfg, shared, stop_after)
        except RECOVERABLE as exc:
            backoff.append({"c": float(np.real(sol.c)), "error": _error_dict(exc)})
            log.info("%s: backing off from c = %s (%s)", target, sol.c, exc)
            continue
        except NullGenusError as exc:
            st.error = _error_dict(exc)
            return blocks, None
        st.data["c_used"] = float(np.real(sol.c))
        st.data["backoff"] = backoff
        st.data["solution"] = sol.to_dict()
        st.checks["c_used_not_above_requested"] = st.data["c_used"] <= st.data["requested_c"]
        blocks.update(stages)
        return blocks, art
    st.data["c_used"] = None
    st.data["backoff"] = backoff
    st.error = {"code": "backoff-exhausted", "message": "every solved c failed downstream", "exit_code": 3}
    return blocks, None


def run_pipeline(cfg: PipelineConfig, stop_after: str = "certify") -> RunResult:
    """Run every stage up to ``stop_after`` (one of ``periods``, ``jacobian``,
    ``solve``, ``mesh``, ``certify``)."""
    shared: dict = {}
    stages: dict = {}
    order = [("surface", _stage_surface), ("forms", _stage_forms), ("disk", _stage_disk),
             ("periods", _stage_periods)]
    if stop_after != "periods":
        order.append(("jacobians", _stage_jacobians))
    for name, fn in order:
        stages[name] = fn(cfg, shared)
        if stages[name].error is not None:
            break
    targets, artifacts = {}, {}
    timings = {k: v.seconds for k, v in stages.items()}
    if all(s.error is None for s in stages.values()) and stop_after not in ("periods", "jacobian"):
        sub = stop_after if stop_after in ("solve", "mesh") else "certify"
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futs = {t: pool.submit(run_target, t, cfg, shared, sub) for t in cfg.targets}
            for t in cfg.targets:
                blocks, art = futs[t].result()
                targets[t] = blocks
                artifacts[t] = art
                timings[t] = {k: v.seconds for k, v in blocks.items()}
    res = RunResult(cfg, stages, targets, artifacts, shared, timings, stop_after)
    return res
