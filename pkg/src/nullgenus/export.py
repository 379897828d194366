"""Artifact export: JSON report, CSV tables, OBJ meshes, SVG contours and PNG figures.

File names embed the backend, the target and the value of ``c`` actually
used, e.g. ``torus_R3_c0.002.obj``.  Any failure to write raises
``OutputError``.
"""
from __future__ import annotations

import csv
import json
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import OutputError
from .pipeline import RunResult, jsonable

FORMATS = ("json", "csv", "obj", "svg", "png")


def stem(backend: str, target: str, c) -> str:
    return f"{backend}_{target}_c{float(c):g}"


def report_schema() -> dict:
    return json.loads(resources.files("nullgenus").joinpath("report_schema.json").read_text())


def dumps(obj) -> str:
    """Canonical JSON text (sorted keys, fixed indentation, trailing newline)."""
    return json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write_text(path: Path, text: str):
    try:
        path.write_text(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}", path=str(path)) from exc


def _write_csv(path: Path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}", path=str(path)) from exc


def prepare_dir(out) -> Path:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OutputError(f"output directory {out} is not writable: {exc}", path=str(out)) from exc
    return out


# -- individual writers ------------------------------------------------------------------

def write_obj(path: Path, vertices: np.ndarray, triangles: np.ndarray, comment: str = ""):
    lines = [f"# {comment}"] if comment else []
    lines += [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in triangles]
    _write_text(path, "\n".join(lines) + "\n")


def write_c2_csv(path: Path, mesh, values: np.ndarray):
    rows = [[i] + [repr(float(v)) for v in (z.real, z.imag, X[0].real, X[0].imag, X[1].real, X[1].imag)]
            for i, (z, X) in enumerate(zip(mesh.vertices, values))]
    _write_csv(path, ["vertex", "z_re", "z_im", "X1_re", "X1_im", "X2_re", "X2_im"], rows)


def write_matrix_csv(path: Path, P: np.ndarray):
    n = P.shape[1]
    header = ["loop"] + [f"{k}_{j}" for j in range(n) for k in ("re", "im")]
    rows = [[k] + [repr(float(v)) for z in row for v in (z.real, z.imag)] for k, row in enumerate(P)]
    _write_csv(path, header, rows)


def write_divisor_csv(path: Path, rows):
    out = []
    for obj, p, declared, numeric in rows:
        pt = ["inf", ""] if not np.isfinite(p) else [repr(float(np.real(p))), repr(float(np.imag(p)))]
        out.append([obj] + pt + [int(declared), f"{float(numeric):.6f}"])
    _write_csv(path, ["object", "point_re", "point_im", "declared_order", "numeric_order"], out)


def write_svg(path: Path, polylines, title: str = "", size: int = 480):
    """Boundary contours ``|G| = 1`` in the chart coordinate."""
    pts = np.concatenate(polylines) if polylines else np.zeros(1, complex)
    lo = np.array([pts.real.min(), pts.imag.min()])
    hi = np.array([pts.real.max(), pts.imag.max()])
    span = max(float(np.max(hi - lo)), 1e-12)
    pad = 0.05 * span
    scale = size / (span + 2 * pad)
    colors = ["#1b6ca8", "#c0392b", "#27ae60", "#8e44ad", "#d35400", "#2c3e50", "#16a085"]
    body = []
    for k, line in enumerate(polylines):
        x = (line.real - lo[0] + pad) * scale
        y = size - (line.imag - lo[1] + pad) * scale
        d = " ".join(f"{a:.3f},{b:.3f}" for a, b in zip(x, y))
        body.append(f'  <polygon points="{d}" fill="none" stroke="{colors[k % len(colors)]}" '
                    f'stroke-width="1.2"><title>end {k}</title></polygon>')
    svg = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">\n  <title>{title}</title>\n' + "\n".join(body) + "\n</svg>\n")
    _write_text(path, svg)


# -- figures -----------------------------------------------------------------------------

def _short_triangles(mesh):
    """Triangles whose chart edges do not wrap around the torus."""
    V, T = mesh.vertices, mesh.triangles
    L = np.max(np.abs(V[T] - V[np.roll(T, 1, axis=1)]), axis=1)
    return T[L < 4 * np.median(L)]


def _figure_domain(path: Path, mesh, title: str):
    import matplotlib.pyplot as plt
    from matplotlib.tri import Triangulation

    fig, ax = plt.subplots(figsize=(5.5, 5))
    tri = Triangulation(mesh.vertices.real, mesh.vertices.imag, _short_triangles(mesh))
    pc = ax.tripcolor(tri, mesh.G_abs, shading="gouraud", cmap="viridis", vmin=0, vmax=1)
    ax.triplot(tri, lw=0.15, color="k", alpha=0.3)
    for k, line in enumerate(mesh.polylines):
        closed = np.append(line, line[0])
        ax.plot(closed.real, closed.imag, lw=1.2, label=f"end {mesh.boundary_ends[k]}")
    fig.colorbar(pc, ax=ax, label="|G|")
    ax.set_aspect("equal")
    ax.set_title(title)
    ax.legend(fontsize=7, loc="upper right")
    _save(fig, path)


def _figure_realization(path: Path, mesh, real, title: str):
    import matplotlib.pyplot as plt

    fig = plt.figure(figsize=(6, 5))
    if real.target == "C2":
        from matplotlib.tri import Triangulation

        ax = fig.add_subplot(111)
        tri = Triangulation(mesh.vertices.real, mesh.vertices.imag, _short_triangles(mesh))
        pc = ax.tripcolor(tri, np.linalg.norm(real.values, axis=1), shading="gouraud", cmap="magma")
        fig.colorbar(pc, ax=ax, label="|X|")
        ax.set_aspect("equal")
    else:
        ax = fig.add_subplot(111, projection="3d")
        x = real.values
        ax.plot_trisurf(x[:, 0], x[:, 1], x[:, 2], triangles=mesh.triangles, cmap="coolwarm",
                        linewidth=0.05, edgecolor="none", alpha=0.9)
        ax.set_xlabel("x0" if real.target == "L3" else "x1")
        ax.set_ylabel("x1" if real.target == "L3" else "x2")
        ax.set_zlabel("x2" if real.target == "L3" else "x3")
    ax.set_title(title)
    _save(fig, path)


def _figure_convergence(path: Path, trace, title: str):
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.semilogy(np.arange(len(trace)), np.maximum(trace, 1e-300), "o-")
    ax.set_xlabel("Newton iteration")
    ax.set_ylabel("period residual")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    _save(fig, path)


def _save(fig, path: Path):
    import matplotlib.pyplot as plt

    try:
        fig.tight_layout()
        fig.savefig(path, dpi=120)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}", path=str(path)) from exc
    finally:
        plt.close(fig)


# -- driver ------------------------------------------------------------------------------

def export_artifacts(result: RunResult, out, formats=FORMATS) -> list:
    """Write all artifacts of a run into ``out``; returns the written paths.

    ``report.json`` holds no timing data, so it is byte-identical across
    repeated runs; wall-clock timings go to ``timings.json``.
    """
    import matplotlib

    matplotlib.use("Agg")
    out = prepare_dir(out)
    backend = result.config.surface
    written = []

    def add(p):
        written.append(p)
        return p

    if "json" in formats:
        _write_text(add(out / "report.json"), dumps(result.report))
        _write_text(add(out / "timings.json"), dumps(result.timings))
    if "csv" in formats and "engine" in result.shared:
        write_matrix_csv(add(out / f"{backend}_P.csv"), result.shared["engine"].P.P)
    if "csv" in formats and "divisor_rows" in result.shared:
        write_divisor_csv(add(out / f"{backend}_divisor.csv"), result.shared["divisor_rows"])

    for target, art in result.artifacts.items():
        if art is None:
            continue
        name = stem(backend, target, art.c)
        if art.solve is not None and "png" in formats:
            _figure_convergence(add(out / f"{name}_newton.png"), art.solve.trace, f"{target} period killing")
        mesh, real = art.mesh, art.realization
        if mesh is None:
            continue
        if "svg" in formats:
            write_svg(add(out / f"{name}_contours.svg"), mesh.polylines, f"|G| = 1, {backend}, c = {art.c:g}")
        if "png" in formats:
            _figure_domain(add(out / f"{name}_domain.png"), mesh, f"domain |G| < 1 ({backend}, c = {art.c:g})")
        if real is None:
            continue
        if target == "C2" and "csv" in formats:
            write_c2_csv(add(out / f"{name}.csv"), mesh, real.values)
        if target in ("R3", "L3") and "obj" in formats:
            space = "R^3" if target == "R3" else "L^3"
            write_obj(add(out / f"{name}.obj"), real.values, mesh.triangles,
                      comment=f"{space} realization, {backend}, c = {art.c:g}")
            if target == "L3":
                side = {"space": "Lorentz-Minkowski 3-space", "coordinates": ["x0", "x1", "x2"],
                        "metric": "-dx0^2 + dx1^2 + dx2^2", "signature": [-1, 1, 1],
                        "obj": f"{name}.obj", "singular_candidates": singular_vertices(result, target)}
                _write_text(add(out / f"{name}.json"), dumps(side))
        if "png" in formats:
            _figure_realization(add(out / f"{name}_surface.png"), mesh, real, f"{target} realization, c = {art.c:g}")
    return written


def singular_vertices(result: RunResult, target: str) -> list:
    geo = result.targets.get(target, {}).get("geometry")
    if geo is None:
        return []
    return geo.data.get("singularity_scan", {}).get("vertices", [])
