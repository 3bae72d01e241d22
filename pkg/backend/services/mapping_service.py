"""
Object-to-base-mesh mapping service.
Projects points radially onto the base-mesh surface, assembles the sparse
allocating matrix from triangle shape functions and builds the feature projector.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from config import Settings, get_settings
from models.mapping import AllocationMap, FeatureProjector, SurfaceProjection
from models.mesh import SolidMesh
from models.modal import ModalBasis
from services.exceptions import InvalidPointError, InvalidRequestError, RankDeficientError
from services.modal_service import node_dofs, rectified_projection

logger = logging.getLogger(__name__)

# Barycentric slack for rays through edges and vertices
EDGE_TOLERANCE = 1e-12
POINT_CHUNK = 256


def _ray_hits(origin: np.ndarray, directions: np.ndarray, v0: np.ndarray, e1: np.ndarray, e2: np.ndarray):
    """Vectorized Moller-Trumbore for rays (l, 3) from one origin against (S, 3) triangles."""
    pvec = np.cross(directions[:, None, :], e2[None, :, :])
    det = np.einsum("sk,lsk->ls", e1, pvec)
    tvec = origin[None, :] - v0
    qvec = np.cross(tvec, e1)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_det = np.where(det != 0.0, 1.0 / det, 0.0)
        u = np.einsum("sk,lsk->ls", tvec, pvec) * inv_det
        v = np.einsum("lk,sk->ls", directions, qvec) * inv_det
        t = np.einsum("sk,sk->s", e2, qvec)[None, :] * inv_det
    hit = (
        (det != 0.0)
        & (u >= -EDGE_TOLERANCE)
        & (v >= -EDGE_TOLERANCE)
        & (u + v <= 1.0 + EDGE_TOLERANCE)
        & (t > 0.0)
    )
    return hit, u, v


def project_points(mesh: SolidMesh, rest_points) -> List[SurfaceProjection]:
    """Radially project points onto the outer surface along rays from the mesh center.

    A ray through an edge or vertex is assigned to the lowest-id incident
    triangle. Weights are clamped at zero and renormalized.
    """
    points = np.asarray(rest_points, dtype=float).reshape(-1, 3)
    center = mesh.center
    tris = mesh.surface_tris
    corners = mesh.nodes[tris]
    v0, e1, e2 = corners[:, 0], corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]
    outward = np.cross(e1, e2)

    rays = points - center
    lengths = np.linalg.norm(rays, axis=1)
    extent = float(np.abs(mesh.nodes - center).max())
    degenerate = np.flatnonzero(lengths <= 1e-14 * max(extent, 1.0))
    if degenerate.size:
        raise InvalidPointError(
            f"Point {int(degenerate[0])} coincides with the mesh center; its projection ray is undefined"
        )
    directions = rays / lengths[:, None]

    projections = []
    for start in range(0, points.shape[0], POINT_CHUNK):
        block = directions[start:start + POINT_CHUNK]
        hit, u, v = _ray_hits(center, block, v0, e1, e2)
        hit &= (block @ outward.T) > 0.0
        for row in range(block.shape[0]):
            candidates = np.flatnonzero(hit[row])
            index = start + row
            if candidates.size == 0:
                raise InvalidPointError(f"Ray through point {index} leaves the mesh through no surface triangle")
            tri = int(candidates[0])
            weights = np.array([1.0 - u[row, tri] - v[row, tri], u[row, tri], v[row, tri]])
            weights = np.clip(weights, 0.0, None)
            weights /= weights.sum()
            projections.append(SurfaceProjection(
                point_index=index,
                tri=tri,
                node_ids=tris[tri],
                weights=weights,
                eta=weights @ corners[tri],
            ))
    return projections


def build_allocation(
    mesh: SolidMesh,
    projections: Sequence[SurfaceProjection],
    basis: Optional[ModalBasis] = None,
) -> AllocationMap:
    """Sparse 3l x 3n allocating matrix over the nodes with nonzero weight."""
    if len(projections) == 0:
        raise InvalidRequestError("Allocation needs at least one projected point")

    active = [(p.node_ids[p.weights > 0.0], p.weights[p.weights > 0.0]) for p in projections]
    node_ids = np.unique(np.concatenate([ids for ids, _ in active]))
    if node_ids.max() >= mesh.n_nodes:
        raise InvalidRequestError(f"Projection references node {int(node_ids.max())} outside the mesh")
    column = np.full(mesh.n_nodes, -1, dtype=np.int64)
    column[node_ids] = np.arange(node_ids.size)

    rows, cols, vals = [], [], []
    for point, (ids, weights) in enumerate(active):
        for node, weight in zip(ids, weights):
            for axis in range(3):
                rows.append(3 * point + axis)
                cols.append(3 * column[node] + axis)
                vals.append(weight)
    n_sparse = sp.csr_matrix(
        (vals, (rows, cols)), shape=(3 * len(projections), 3 * node_ids.size)
    )
    rest_eta = np.concatenate([p.eta for p in projections])
    phi_rows = basis.phi[node_dofs(node_ids)] if basis is not None else None
    return AllocationMap(
        projections=list(projections), n_sparse=n_sparse, node_ids=node_ids,
        rest_eta=rest_eta, phi_rows=phi_rows,
    )


def build_feature_projector(
    basis: ModalBasis,
    alloc: AllocationMap,
    sample_ids: Optional[Sequence[int]] = None,
    settings: Optional[Settings] = None,
) -> FeatureProjector:
    """D_N = N_s^T and D_Phi = (K_tilde + I6)^-1 [Phi_n]_s^T, with a full-rank check."""
    settings = settings or get_settings()
    m = basis.m
    l = alloc.n_points
    if 3 * l < m:
        raise InvalidRequestError(f"{l} samples cannot determine {m} features (need l >= m/3)")
    if sample_ids is not None and len(sample_ids) != l:
        raise InvalidRequestError(f"Got {len(sample_ids)} sample ids for {l} samples")

    d_n = alloc.n_sparse.T.tocsr()
    d_phi = rectified_projection(basis, alloc.node_ids)
    product = np.asarray((d_n.T @ d_phi.T).T)
    singular = np.linalg.svd(product, compute_uv=False)
    threshold = settings.rank_tolerance * singular[0] if singular.size else 0.0
    rank = int(np.count_nonzero(singular > threshold))
    if rank < m:
        raise RankDeficientError(
            f"Feature map has rank {rank}, needs {m}: sampling does not determine the modal features",
            deficient=m - rank, rank=rank, expected=m,
        )
    if singular[m - 1] < 1e3 * threshold:
        logger.warning(
            f"Feature map is close to rank deficient: sigma_min/sigma_max = {singular[m - 1] / singular[0]:.3g}"
        )
    return FeatureProjector(
        d_n=d_n, d_phi=d_phi, rest_eta=alloc.rest_eta, node_ids=alloc.node_ids,
        sample_ids=None if sample_ids is None else np.asarray(sample_ids),
        singular_values=singular[:m],
    )


def reassemble_on_sampling_change(
    basis: ModalBasis,
    mesh: SolidMesh,
    new_rest_points,
    sample_ids: Optional[Sequence[int]] = None,
    settings: Optional[Settings] = None,
) -> FeatureProjector:
    """Rebuild the projector after samples are lost or recovered."""
    points = np.asarray(new_rest_points, dtype=float).reshape(-1, 3)
    logger.info(f"Re-assembling feature projector for {points.shape[0]} samples")
    alloc = build_allocation(mesh, project_points(mesh, points), basis)
    return build_feature_projector(basis, alloc, sample_ids=sample_ids, settings=settings)
