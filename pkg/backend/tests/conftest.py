"""
Shared fixtures: stock and small ellipsoid meshes, their modal bases, the
benchmark bar scenario and a writer for throwaway scenario files.
"""

from pathlib import Path
from typing import Any, Dict

import numpy as np
import pytest

from config import Settings, get_settings
from database.modal_cache import ModalCache
from models.mesh import MaterialParams, MeshResolution
from models.scenario import Scenario
from services.fem_service import STOCK_BASE_MATERIAL, assemble_system
from services.mesh_service import STOCK_BASE_SPEC, generate_ellipsoid_mesh, make_ellipsoid_spec
from services.modal_service import solve_modes

TOP_FACE = list(range(89, 99)) + list(range(100, 110)) + list(range(111, 121)) + list(range(122, 132))

BENCHMARK_FIELDS: Dict[str, Any] = {
    "name": "bench",
    "fixed_nodes": [0, 33, 99],
    "manip_nodes": [76],
    "sample_nodes": TOP_FACE,
    "desired_displacement": [1.0, 1.0, 0.8],
    "modes": 30,
}


@pytest.fixture(scope="session")
def settings() -> Settings:
    return get_settings()


@pytest.fixture(scope="session")
def stock_mesh():
    return generate_ellipsoid_mesh(STOCK_BASE_SPEC)


@pytest.fixture(scope="session")
def stock_system(stock_mesh):
    return assemble_system(stock_mesh, STOCK_BASE_MATERIAL)


@pytest.fixture(scope="session")
def stock_basis(stock_system):
    return solve_modes(stock_system, 30)


@pytest.fixture(scope="session")
def small_spec():
    return make_ellipsoid_spec((2.0, 1.5, 1.0), resolution=MeshResolution(n_lat=4, n_lon=8, n_radial=2))


@pytest.fixture(scope="session")
def small_mesh(small_spec):
    return generate_ellipsoid_mesh(small_spec)


@pytest.fixture(scope="session")
def small_material():
    return MaterialParams(young_modulus=1e3, poisson_ratio=0.3, total_mass=10.0)


@pytest.fixture(scope="session")
def small_basis(small_mesh, small_material):
    return solve_modes(assemble_system(small_mesh, small_material), 12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def fresh_cache(settings) -> ModalCache:
    return ModalCache(settings)


@pytest.fixture
def benchmark_scenario() -> Scenario:
    return Scenario(**BENCHMARK_FIELDS)


def make_scenario(**overrides) -> Scenario:
    return Scenario(**{**BENCHMARK_FIELDS, **overrides})


def write_scenario(directory: Path, name: str, **overrides) -> Path:
    """Write a benchmark-based .scn file with some keys replaced."""
    fields = {**BENCHMARK_FIELDS, **overrides}
    fields.pop("name")
    lines = [f"# {name}"]
    for key, value in fields.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    path = Path(directory) / f"{name}.scn"
    path.write_text("\n".join(lines) + "\n")
    return path
