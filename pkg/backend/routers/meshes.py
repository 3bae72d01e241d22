"""
Mesh router.
Generates ellipsoid base meshes and solves their modal bases on request.
"""

import asyncio

from fastapi import APIRouter

from models.api import EllipsoidMeshRequest, EllipsoidMeshResponse, ModesRequest, ModesResponse
from models.mesh import MaterialParams, SolidMesh
from routers.errors import to_http_exception
from services.exceptions import DeformationControlError
from services.fem_service import assemble_system
from services.mesh_service import (
    euler_rotation,
    format_mesh,
    generate_ellipsoid_mesh,
    make_ellipsoid_spec,
    mesh_summary,
    place_mesh,
)
from services.modal_service import solve_modes

router = APIRouter()


def _ellipsoid(request: EllipsoidMeshRequest) -> SolidMesh:
    spec = make_ellipsoid_spec(request.axes, request.center, euler_rotation(request.rotation_deg), request.resolution)
    return place_mesh(generate_ellipsoid_mesh(spec), spec)


@router.post("/ellipsoid", response_model=EllipsoidMeshResponse)
async def create_ellipsoid_mesh(request: EllipsoidMeshRequest):
    """Ellipsoid mesh in the world frame, with summary and file text."""
    try:
        mesh = _ellipsoid(request)
    except DeformationControlError as e:
        raise to_http_exception(e)
    return EllipsoidMeshResponse(summary=mesh_summary(mesh), mesh_text=format_mesh(mesh))


@router.post("/modes", response_model=ModesResponse)
async def compute_modes(request: ModesRequest):
    """Lowest m eigenvalues and modal stiffness of an ellipsoid base mesh."""
    try:
        material = MaterialParams(
            young_modulus=request.young_modulus,
            poisson_ratio=request.poisson_ratio,
            total_mass=request.total_mass,
        )
        spec = make_ellipsoid_spec(request.mesh.axes, resolution=request.mesh.resolution)
        system = assemble_system(generate_ellipsoid_mesh(spec), material)
        basis = await asyncio.to_thread(solve_modes, system, request.m)
    except DeformationControlError as e:
        raise to_http_exception(e)
    return ModesResponse(
        eigenvalues=basis.freqs.tolist(),
        k_tilde=basis.k_tilde.tolist(),
        rectifier=basis.rectifier.tolist(),
        n_dof=basis.n_dof,
    )
