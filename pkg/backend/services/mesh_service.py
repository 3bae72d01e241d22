"""
Mesh service.
Generates ellipsoid, bar and blob tetrahedral meshes, extracts outward surfaces,
reads and writes the plain-text mesh format and estimates base-mesh frames.
"""

import logging
from itertools import permutations
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy.spatial.transform import Rotation
from sklearn.decomposition import PCA

from models.mesh import EllipsoidSpec, MeshResolution, MeshSummary, SolidMesh
from services.exceptions import (
    DegenerateInputError,
    InsufficientDataError,
    InvalidMeshError,
    InvalidSpecError,
)

logger = logging.getLogger(__name__)

STOCK_BASE_SPEC = EllipsoidSpec(
    a_x=5.5, a_y=2.0, a_z=1.5,
    translation=(5.0, 1.5, 1.0),
    resolution=MeshResolution(n_lat=8, n_lon=16, n_radial=2),
)

# Face i of a tet is opposite local vertex i.
_TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


def _matrix_tuple(matrix: np.ndarray) -> Tuple[Tuple[float, float, float], ...]:
    return tuple(tuple(float(v) for v in row) for row in np.asarray(matrix, dtype=float))


def make_ellipsoid_spec(
    axes: Sequence[float],
    center: Sequence[float] = (0.0, 0.0, 0.0),
    rotation: Optional[np.ndarray] = None,
    resolution: Optional[MeshResolution] = None,
) -> EllipsoidSpec:
    """Build and validate an EllipsoidSpec, raising InvalidSpecError on failure."""
    try:
        return EllipsoidSpec(
            a_x=float(axes[0]), a_y=float(axes[1]), a_z=float(axes[2]),
            rotation=_matrix_tuple(np.eye(3) if rotation is None else rotation),
            translation=tuple(float(c) for c in center),
            resolution=resolution or MeshResolution(),
        )
    except ValidationError as e:
        raise InvalidSpecError(f"Invalid ellipsoid spec: {e}") from e


def euler_rotation(angles_deg: Sequence[float]) -> np.ndarray:
    """Rotation matrix from extrinsic xyz Euler angles in degrees."""
    return Rotation.from_euler("xyz", list(angles_deg), degrees=True).as_matrix()


def tet_volumes(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Signed volume of every tetrahedron."""
    p = nodes[tets]
    edges = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=1)
    return np.linalg.det(edges) / 6.0


def _orient_tets(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    tets = tets.copy()
    negative = tet_volumes(nodes, tets) < 0
    tets[negative, 2], tets[negative, 3] = tets[negative, 3].copy(), tets[negative, 2].copy()
    return tets


def _orient_outward(nodes: np.ndarray, tris: np.ndarray, inside: np.ndarray) -> np.ndarray:
    """Flip triangles whose normal points towards the matching inside point."""
    tris = tris.copy()
    p = nodes[tris]
    normal = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    inward = np.einsum("ij,ij->i", normal, inside - p[:, 0]) > 0
    tris[inward, 1], tris[inward, 2] = tris[inward, 2].copy(), tris[inward, 1].copy()
    return tris


def extract_surface(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Faces used by exactly one tet, oriented away from that tet."""
    nodes = np.asarray(nodes, dtype=float)
    tets = np.asarray(tets, dtype=np.int64)
    faces = tets[:, _TET_FACES].reshape(-1, 3)
    opposite = tets.reshape(-1)
    keys = np.sort(faces, axis=1)
    _, first, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
    boundary = np.sort(first[counts == 1])
    return _orient_outward(nodes, faces[boundary], nodes[opposite[boundary]])


def _check_resolution(resolution: MeshResolution) -> None:
    if resolution.n_lat < 2 or resolution.n_lon < 3 or resolution.n_radial < 2:
        raise InvalidSpecError(
            "Ellipsoid resolution needs n_lat >= 2, n_lon >= 3 and n_radial >= 2, "
            f"got ({resolution.n_lat}, {resolution.n_lon}, {resolution.n_radial})"
        )


def _shell_directions(n_lat: int, n_lon: int) -> np.ndarray:
    """Unit directions of one shell: south pole, rings south to north, north pole."""
    lat = -0.5 * np.pi + np.pi * np.arange(1, n_lat) / n_lat
    lon = 2.0 * np.pi * np.arange(n_lon) / n_lon
    lat_grid, lon_grid = np.meshgrid(lat, lon, indexing="ij")
    rings = np.stack([
        np.cos(lat_grid) * np.cos(lon_grid),
        np.cos(lat_grid) * np.sin(lon_grid),
        np.sin(lat_grid),
    ], axis=-1).reshape(-1, 3)
    return np.vstack([[0.0, 0.0, -1.0], rings, [0.0, 0.0, 1.0]])


def _shell_triangles(n_lat: int, n_lon: int) -> np.ndarray:
    """Triangles of one shell in shell-local node ids."""
    count = (n_lat - 1) * n_lon + 2
    south, north = 0, count - 1

    def ring(i: int, j: int) -> int:
        return 1 + (i - 1) * n_lon + (j % n_lon)

    tris = [(south, ring(1, j + 1), ring(1, j)) for j in range(n_lon)]
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j + 1), ring(i + 1, j)
            tris.append((a, b, c))
            tris.append((a, c, d))
    tris.extend((north, ring(n_lat - 1, j), ring(n_lat - 1, j + 1)) for j in range(n_lon))
    return np.array(tris, dtype=np.int64)


def generate_ellipsoid_mesh(spec: EllipsoidSpec) -> SolidMesh:
    """Tetrahedral ellipsoid in its own frame (center at the origin).

    Node 0 is the center. Shell r (1-based) holds S = (n_lat - 1) n_lon + 2
    nodes starting at 1 + (r - 1) S. Each prism between two shells is split
    into three tets by sorted shell-local ids so neighbouring prisms conform.
    """
    res = spec.resolution
    _check_resolution(res)
    directions = _shell_directions(res.n_lat, res.n_lon)
    shell_size = directions.shape[0]
    template = _shell_triangles(res.n_lat, res.n_lon)

    scaled = directions * spec.axes
    shells = [scaled * (k / res.n_radial) for k in range(1, res.n_radial + 1)]
    nodes = np.vstack([np.zeros((1, 3))] + shells)

    def offset(shell: int) -> int:
        return 1 + (shell - 1) * shell_size

    blocks = [np.column_stack([np.zeros(len(template), dtype=np.int64), template + offset(1)])]
    ordered = np.sort(template, axis=1)
    a, b, c = ordered[:, 0], ordered[:, 1], ordered[:, 2]
    for shell in range(2, res.n_radial + 1):
        lo, hi = offset(shell - 1), offset(shell)
        blocks.append(np.column_stack([a + lo, b + lo, c + lo, a + hi]))
        blocks.append(np.column_stack([b + lo, c + lo, a + hi, b + hi]))
        blocks.append(np.column_stack([c + lo, a + hi, b + hi, c + hi]))
    tets = _orient_tets(nodes, np.vstack(blocks))

    outer = template + offset(res.n_radial)
    surface = _orient_outward(nodes, outer, np.zeros((len(outer), 3)))

    logger.info(
        f"Generated ellipsoid mesh: {nodes.shape[0]} nodes, {tets.shape[0]} tets, "
        f"{surface.shape[0]} surface triangles"
    )
    return SolidMesh(nodes=nodes, tets=tets, surface_tris=surface, center=np.zeros(3))


def generate_blob_mesh(spec: EllipsoidSpec, amplitude: float = 0.2) -> SolidMesh:
    """Star-shaped irregular solid: an ellipsoid with a smooth radial bump field."""
    if not 0.0 <= amplitude < 0.5:
        raise InvalidSpecError(f"Blob amplitude must lie in [0, 0.5), got {amplitude}")
    mesh = generate_ellipsoid_mesh(spec)
    q = mesh.nodes / spec.axes
    radius = np.linalg.norm(q, axis=1)
    u = np.zeros_like(q)
    u[radius > 0] = q[radius > 0] / radius[radius > 0, None]
    bump = 1.0 + amplitude * (
        0.5 * u[:, 0] * u[:, 1] + 0.25 * u[:, 1] * u[:, 2] + 0.25 * u[:, 2] * u[:, 0]
        + 0.5 * (u[:, 2] ** 2 - u[:, 0] ** 2)
    )
    nodes = mesh.nodes * bump[:, None]
    if np.any(tet_volumes(nodes, mesh.tets) <= 0):
        raise InvalidMeshError("Blob deformation inverted elements; lower the amplitude")
    return SolidMesh(nodes=nodes, tets=mesh.tets, surface_tris=mesh.surface_tris, center=mesh.center)


def generate_bar_mesh(
    size: Sequence[float],
    cells: Sequence[int],
    origin: Sequence[float] = (0.0, 0.0, 0.0),
) -> SolidMesh:
    """Box of nx*ny*nz cells, six Kuhn tets per cell.

    Node id of grid point (i, j, k) is i + (nx + 1) * (j + (ny + 1) * k).
    """
    nx, ny, nz = (int(c) for c in cells)
    if min(nx, ny, nz) < 1:
        raise InvalidSpecError(f"Bar needs at least one cell per axis, got {tuple(cells)}")
    if min(size) <= 0:
        raise InvalidSpecError(f"Bar size must be positive, got {tuple(size)}")
    origin = np.asarray(origin, dtype=float)
    xs = origin[0] + np.linspace(0.0, size[0], nx + 1)
    ys = origin[1] + np.linspace(0.0, size[1], ny + 1)
    zs = origin[2] + np.linspace(0.0, size[2], nz + 1)
    kk, jj, ii = np.meshgrid(np.arange(nz + 1), np.arange(ny + 1), np.arange(nx + 1), indexing="ij")
    nodes = np.column_stack([xs[ii.ravel()], ys[jj.ravel()], zs[kk.ravel()]])

    def corner(dx: int, dy: int, dz: int) -> int:
        return dx + (nx + 1) * (dy + (ny + 1) * dz)

    pattern = []
    for axes in permutations(range(3)):
        step = [0, 0, 0]
        path = [corner(*step)]
        for axis in axes:
            step[axis] = 1
            path.append(corner(*step))
        pattern.append(path)
    pattern = np.array(pattern, dtype=np.int64)

    ck, cj, ci = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    base = (ci + (nx + 1) * (cj + (ny + 1) * ck)).ravel()
    tets = (base[:, None, None] + pattern[None, :, :]).reshape(-1, 4)
    tets = _orient_tets(nodes, tets)
    surface = extract_surface(nodes, tets)
    center = origin + 0.5 * np.asarray(size, dtype=float)
    logger.info(f"Generated bar mesh: {nodes.shape[0]} nodes, {tets.shape[0]} tets")
    return SolidMesh(nodes=nodes, tets=tets, surface_tris=surface, center=center)


def place_mesh(mesh: SolidMesh, spec: EllipsoidSpec) -> SolidMesh:
    """Move a base-frame mesh into the world frame given by the ellipsoid pose."""
    return SolidMesh(
        nodes=spec.base_to_world(mesh.nodes),
        tets=mesh.tets,
        surface_tris=mesh.surface_tris,
        center=spec.translation_vector,
    )


def validate_mesh(mesh: SolidMesh) -> np.ndarray:
    """Return the tet volumes, raising InvalidMeshError on inverted tets."""
    volumes = tet_volumes(mesh.nodes, mesh.tets)
    bad = np.flatnonzero(volumes <= 0)
    if bad.size:
        raise InvalidMeshError(
            f"{bad.size} tetrahedra have non-positive volume (first: tet {int(bad[0])})"
        )
    return volumes


def mesh_summary(mesh: SolidMesh) -> MeshSummary:
    return MeshSummary(
        n_nodes=mesh.n_nodes,
        n_tets=int(mesh.tets.shape[0]),
        n_surface_tris=int(mesh.surface_tris.shape[0]),
        volume=float(tet_volumes(mesh.nodes, mesh.tets).sum()),
        bounding_box=[mesh.nodes.min(axis=0).tolist(), mesh.nodes.max(axis=0).tolist()],
    )


def format_mesh(mesh: SolidMesh) -> str:
    """Serialize to the plain-text mesh format (17 significant digits)."""
    lines = [f"{mesh.n_nodes} {mesh.tets.shape[0]} {mesh.surface_tris.shape[0]}"]
    lines.extend("%.17g %.17g %.17g" % tuple(p) for p in mesh.nodes)
    lines.extend("%d %d %d %d" % tuple(t) for t in mesh.tets)
    lines.extend("%d %d %d" % tuple(s) for s in mesh.surface_tris)
    return "\n".join(lines) + "\n"


def parse_mesh(text: str, center: Optional[Sequence[float]] = None) -> SolidMesh:
    """Parse the plain-text mesh format. The center defaults to the node centroid."""
    rows = [line.split() for line in text.splitlines() if line.strip()]
    try:
        n, t, s = (int(v) for v in rows[0])
        if len(rows) != 1 + n + t + s:
            raise ValueError(f"expected {1 + n + t + s} lines, found {len(rows)}")
        nodes = np.array([[float(v) for v in row] for row in rows[1:1 + n]], dtype=float).reshape(n, 3)
        tets = np.array([[int(v) for v in row] for row in rows[1 + n:1 + n + t]], dtype=np.int64).reshape(t, 4)
        tris = np.array([[int(v) for v in row] for row in rows[1 + n + t:]], dtype=np.int64).reshape(s, 3)
        mid = nodes.mean(axis=0) if center is None else np.asarray(center, dtype=float)
        return SolidMesh(nodes=nodes, tets=tets, surface_tris=tris, center=mid)
    except (IndexError, ValueError, ValidationError) as e:
        raise InvalidMeshError(f"Malformed mesh file: {e}") from e


def write_mesh(mesh: SolidMesh, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(format_mesh(mesh))
    return path


def read_mesh(path: Union[str, Path], center: Optional[Sequence[float]] = None) -> SolidMesh:
    return parse_mesh(Path(path).read_text(), center=center)


def estimate_base_mesh_frame(
    rest_samples,
    effector_orientation,
    a_z: float,
    resolution: Optional[MeshResolution] = None,
    row_band: float = 0.1,
) -> EllipsoidSpec:
    """Estimate base-mesh size and pose from rest-configuration samples.

    Samples are expressed along the effector axes. p0/p1 are the smallest and
    largest x among the lowest row of samples (y within ``row_band`` of the y
    range from the minimum), p2/p3 the same for the highest row. Ties go to the
    lowest sample index.
    """
    points = np.asarray(rest_samples, dtype=float).reshape(-1, 3)
    if points.shape[0] < 4:
        raise InsufficientDataError(f"Frame estimation needs >= 4 samples, got {points.shape[0]}")
    if a_z <= 0:
        raise InvalidSpecError(f"a_z must be positive, got {a_z}")
    if isinstance(effector_orientation, Rotation):
        rotation = effector_orientation.as_matrix()
    else:
        rotation = np.asarray(effector_orientation, dtype=float).reshape(3, 3)

    local = points @ rotation
    centered = local - local.mean(axis=0)
    scale = max(float(np.abs(centered).max()), 1e-300)
    if np.linalg.matrix_rank(centered, tol=1e-12 * scale) < 2:
        raise DegenerateInputError("Rest samples are collinear")

    y = local[:, 1]
    band = row_band * (y.max() - y.min())
    low = np.flatnonzero(y <= y.min() + band)
    high = np.flatnonzero(y >= y.max() - band)
    p0 = points[low[np.argmin(local[low, 0])]]
    p1 = points[low[np.argmax(local[low, 0])]]
    p2 = points[high[np.argmin(local[high, 0])]]
    p3 = points[high[np.argmax(local[high, 0])]]

    a_x = (np.linalg.norm(p1 - p0) + np.linalg.norm(p3 - p2)) / 4.0
    a_y = 0.5 * np.linalg.norm((p0 + p1) / 2.0 - (p2 + p3) / 2.0)
    if a_x <= 0 or a_y <= 0:
        raise DegenerateInputError("Rest samples do not span both in-plane directions")
    translation = points.mean(axis=0) - a_z * rotation[:, 2]
    logger.info(f"Estimated base mesh semi-axes ({a_x:.4g}, {a_y:.4g}, {a_z:.4g})")
    return make_ellipsoid_spec((a_x, a_y, a_z), translation, rotation, resolution)


def estimate_base_mesh_moments(
    points,
    min_axis: float,
    distribution: str = "surface",
    resolution: Optional[MeshResolution] = None,
) -> EllipsoidSpec:
    """Principal-axis estimate: centroid, PCA axes and variance-matched semi-axes."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if points.shape[0] < 4:
        raise InsufficientDataError(f"Moment estimation needs >= 4 points, got {points.shape[0]}")
    if distribution not in ("solid", "surface"):
        raise InvalidSpecError(f"Unknown point distribution '{distribution}'")

    pca = PCA(n_components=3).fit(points)
    directions = pca.components_.copy()
    for row in directions:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    rotation = directions.T
    if np.linalg.det(rotation) < 0:
        rotation[:, 2] *= -1.0

    n = points.shape[0]
    variance = pca.explained_variance_ * (n - 1) / n
    factor = 5.0 if distribution == "solid" else 3.0
    axes = np.maximum(np.sqrt(factor * variance), min_axis)
    return make_ellipsoid_spec(axes, pca.mean_, rotation, resolution)


def perturb_pose(
    spec: EllipsoidSpec,
    rotation_deg: Sequence[float] = (0.0, 0.0, 0.0),
    offset: Sequence[float] = (0.0, 0.0, 0.0),
) -> EllipsoidSpec:
    """Right-multiply the ellipsoid pose by an extra rigid transform given in the base frame."""
    extra = euler_rotation(rotation_deg)
    rotation = spec.rotation_matrix @ extra
    translation = spec.translation_vector + spec.rotation_matrix @ np.asarray(offset, dtype=float)
    return make_ellipsoid_spec(spec.axes, translation, rotation, spec.resolution)
