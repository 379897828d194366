import numpy as np
import pytest

from nullgenus.deform import DeformedData
from nullgenus.domain import build_mesh
from nullgenus.forms import build_context
from nullgenus.nulldisk import bundled_disk, normalize_disk
from nullgenus.periods import PeriodEngine, continuation
from nullgenus.surface import make_surface


@pytest.fixture(scope="session")
def sphere():
    return make_surface("sphere")


@pytest.fixture(scope="session")
def torus():
    return make_surface("torus", tau=1j)


@pytest.fixture(scope="session")
def sphere_ctx(sphere):
    return build_context(sphere)


@pytest.fixture(scope="session")
def torus_ctx(torus):
    return build_context(torus)


@pytest.fixture(scope="session")
def disk():
    return normalize_disk(bundled_disk("z-1"))[0]


@pytest.fixture(scope="session")
def sphere_engine(sphere_ctx, disk):
    return PeriodEngine(sphere_ctx, disk)


@pytest.fixture(scope="session")
def torus_engine(torus_ctx, disk):
    return PeriodEngine(torus_ctx, disk)


class Solved:
    """Solved parameters with their deformed data and a traced mesh."""

    def __init__(self, ctx, disk, engine, target, ramp, resolution):
        self.ctx, self.engine = ctx, engine
        self.solution = continuation(target, ramp, engine)[-1]
        self.params = self.solution.params
        self.data = DeformedData(self.params, disk, ctx)
        lam = self.params.lam
        self.G = lambda z: ctx.values(z).G(lam)
        self.dG = lambda z: ctx.values(z).dG(lam)
        self.mesh = build_mesh(self.G, self.dG, ctx.surface, ctx.ends, resolution)
        self.origin = ctx.loops[0].point(0.0)


@pytest.fixture(scope="session")
def sphere_c2(sphere_ctx, disk, sphere_engine):
    return Solved(sphere_ctx, disk, sphere_engine, "C2", [0.005, 0.01], 64)


@pytest.fixture(scope="session")
def torus_c2(torus_ctx, disk, torus_engine):
    return Solved(torus_ctx, disk, torus_engine, "C2", [0.0005, 0.001], 96)


@pytest.fixture(scope="session")
def torus_r3(torus_ctx, disk, torus_engine):
    return Solved(torus_ctx, disk, torus_engine, "R3", [0.0005, 0.001], 96)


@pytest.fixture(scope="session")
def torus_l3(torus_ctx, disk, torus_engine):
    return Solved(torus_ctx, disk, torus_engine, "L3", [0.0005, 0.001], 96)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
