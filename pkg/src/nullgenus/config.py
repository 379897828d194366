"""Pipeline configuration: YAML in, validated dataclass out.

Every field has a default; the resolved configuration is echoed verbatim
into the run report so that a report alone is enough to reproduce a run.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError

DEFAULT_RAMP = {"sphere": [0.005, 0.01, 0.02], "torus": [0.0005, 0.001, 0.002]}
TARGETS = ("C2", "R3", "L3")


@dataclass
class Tolerances:
    quadrature: float = 1e-12
    residual: float = 1e-10
    mesh_residual: float = 1e-8
    boundary: float = 1e-9
    jacobian: float = 1e-6
    nullity: float = 1e-11
    geometry: float = 1e-6


@dataclass
class MeshConfig:
    resolution: int = 128
    refine_check: bool = True
    min_angle_deg: float = 0.5
    min_dG: float = 1e-8


@dataclass
class CertifyConfig:
    segments: int = 16
    r_scan: list = field(default_factory=lambda: [0.6, 0.7, 0.8, 0.9])
    dG_floor: float = 1e-6
    metric_margin: float = 1e-3
    singular_tol: float = 1e-3


@dataclass
class PipelineConfig:
    surface: str = "sphere"
    tau: list = field(default_factory=lambda: [0.0, 1.0])
    power: int = 2
    shifts: list = field(default_factory=list)
    disk: dict = field(default_factory=lambda: {"name": "z-1"})
    targets: list = field(default_factory=lambda: ["C2"])
    ramp: Optional[list] = None
    tolerances: Tolerances = field(default_factory=Tolerances)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    certify: CertifyConfig = field(default_factory=CertifyConfig)
    output: str = "out"
    seed: int = 0
    workers: int = 1

    @property
    def tau_complex(self) -> complex:
        return complex(self.tau[0], self.tau[1])

    @property
    def c_ramp(self) -> list:
        return list(self.ramp) if self.ramp is not None else list(DEFAULT_RAMP[self.surface])

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ramp"] = self.c_ramp
        return d

    def validate(self) -> "PipelineConfig":
        if self.surface not in ("sphere", "torus"):
            raise ConfigError(f"surface must be 'sphere' or 'torus', got {self.surface!r}")
        if len(self.tau) != 2 or not self.tau[1] > 0:
            raise ConfigError("tau must be a pair [re, im] with positive imaginary part")
        if self.surface == "sphere" and self.power < 1:
            raise ConfigError("power must be a positive integer")
        for s in self.shifts:
            if not (isinstance(s, (list, tuple)) and len(s) == 2):
                raise ConfigError(f"end multiplication shifts are [re, im] pairs, got {s!r}")
        bad = [t for t in self.targets if t not in TARGETS]
        if bad or not self.targets:
            raise ConfigError(f"targets must be a non-empty subset of {TARGETS}, got {self.targets}")
        ramp = self.c_ramp
        if not ramp or any(not c > 0 for c in ramp) or any(b <= a for a, b in zip(ramp, ramp[1:])):
            raise ConfigError(f"c ramp must be positive and strictly increasing, got {ramp}")
        for name, val in dataclasses.asdict(self.tolerances).items():
            if not (isinstance(val, (int, float)) and val > 0):
                raise ConfigError(f"tolerance {name} must be positive, got {val!r}")
        if self.mesh.resolution < 16:
            raise ConfigError("mesh resolution must be at least 16")
        if self.certify.segments < 1:
            raise ConfigError("certify.segments must be positive")
        if not all(0 < r < 1 for r in self.certify.r_scan):
            raise ConfigError("certify.r_scan values must lie in (0, 1)")
        if "name" not in self.disk and not ("g" in self.disk and "omega" in self.disk):
            raise ConfigError("disk needs either 'name' or both 'g' and 'omega' coefficient lists")
        z0 = self.disk.get("z0")
        if z0 is not None and not (isinstance(z0, (list, tuple)) and len(z0) == 2
                                   and all(isinstance(v, (int, float)) for v in z0)):
            raise ConfigError(f"disk.z0 is an [re, im] pair, got {z0!r}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        return self


def _build(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")
    kwargs = {}
    for k, v in data.items():
        sub = {"tolerances": Tolerances, "mesh": MeshConfig, "certify": CertifyConfig}.get(k)
        kwargs[k] = _build(sub, v, f"{where}.{k}") if sub and cls is PipelineConfig else v
    return cls(**kwargs)


def from_dict(data: dict) -> PipelineConfig:
    data = dict(data or {})
    if "targets" in data and isinstance(data["targets"], str):
        data["targets"] = [data["targets"]]
    if "targets" in data:
        data["targets"] = [str(t).upper() for t in data["targets"]]
    try:
        cfg = _build(PipelineConfig, data, "config")
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def load_config(path) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    return from_dict(data or {})
