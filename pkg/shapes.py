"""Procedural closed meshes used as fixtures and as the bundled sweep set.

All shapes are watertight. The humanoids are built from separate capsules and a
sphere with small gaps between parts, so no surface lies inside another part.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np

from geometry import Mesh

logger = logging.getLogger(__name__)


def _orient_outward(vertices: np.ndarray, triangles: np.ndarray, interior: np.ndarray) -> np.ndarray:
    """Flip triangles whose normal points toward ``interior`` (convex shapes only)."""
    tri = vertices[triangles]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    inward = np.einsum("ij,ij->i", normals, tri.mean(axis=1) - interior) < 0
    triangles = triangles.copy()
    triangles[inward] = triangles[inward][:, ::-1]
    return triangles


def _revolve(heights: Sequence[float], radii: Sequence[float], segments: int) -> Mesh:
    """Surface of revolution about +z from a profile running pole to pole.

    The first and last profile entries are the poles (radius 0); every entry in
    between becomes a ring of ``segments`` vertices.
    """
    heights, radii = np.asarray(heights, dtype=np.float64), np.asarray(radii, dtype=np.float64)
    rings = len(heights) - 2
    phi = 2.0 * np.pi * np.arange(segments) / segments
    vertices = [[0.0, 0.0, heights[0]]]
    for z, r in zip(heights[1:-1], radii[1:-1]):
        vertices.extend(np.stack([r * np.cos(phi), r * np.sin(phi), np.full(segments, z)], axis=1))
    vertices.append([0.0, 0.0, heights[-1]])
    vertices = np.array(vertices)

    def ring(i: int, j: int) -> int:
        return 1 + i * segments + j % segments

    top = len(vertices) - 1
    triangles = []
    for j in range(segments):
        triangles.append((0, ring(0, j + 1), ring(0, j)))
        triangles.append((top, ring(rings - 1, j), ring(rings - 1, j + 1)))
        for i in range(rings - 1):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            triangles.extend([(a, b, d), (a, d, c)])
    triangles = np.array(triangles, dtype=np.int64)
    interior = np.array([0.0, 0.0, (heights[0] + heights[-1]) / 2.0])
    return Mesh(vertices, _orient_outward(vertices, triangles, interior))


def box(center=(0.0, 0.0, 0.0), size=(1.0, 1.0, 1.0)) -> Mesh:
    """Axis-aligned box with 8 vertices and 12 triangles."""
    center, half = np.asarray(center, dtype=np.float64), np.asarray(size, dtype=np.float64) / 2.0
    signs = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
    vertices = center + signs * half
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    triangles = np.array([t for a, b, c, d in quads for t in ((a, b, c), (a, c, d))], dtype=np.int64)
    return Mesh(vertices, _orient_outward(vertices, triangles, center))


def uv_sphere(radius: float = 1.0, center=(0.0, 0.0, 0.0), segments: int = 32, rings: int = 16) -> Mesh:
    """UV sphere with its poles on the z axis (pole vertices at center -/+ radius)."""
    theta = np.pi * np.arange(rings + 1) / rings
    mesh = _revolve(-radius * np.cos(theta), radius * np.sin(theta), segments)
    return mesh.translated(center)


def capsule(p0, p1, radius: float, segments: int = 16, rings: int = 6) -> Mesh:
    """Cylinder from ``p0`` to ``p1`` closed by two hemispheres of ``radius``."""
    p0, p1 = np.asarray(p0, dtype=np.float64), np.asarray(p1, dtype=np.float64)
    length = float(np.linalg.norm(p1 - p0))
    if length <= 0.0:
        raise ValueError("Capsule end points must differ")

    theta = 0.5 * np.pi * np.arange(rings + 1) / rings
    heights = np.concatenate([-radius * np.cos(theta), length + radius * np.sin(theta)])
    radii = np.concatenate([radius * np.sin(theta), radius * np.cos(theta)])
    local = _revolve(heights, radii, segments)

    axis = (p1 - p0) / length
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    w = np.cross(axis, u)
    rotation = np.stack([u, w, axis], axis=1)
    return Mesh(local.vertices @ rotation.T + p0, local.triangles)


def humanoid(seed: Optional[int] = 0, arm_forward: bool = False) -> Mesh:
    """Capsule humanoid about 1.8 m tall, standing on y = 0 and facing -z.

    Limb angles are jittered by ``seed``. With ``arm_forward`` the right forearm
    floats in front of the torso, so rays through it cross the surface four times.
    """
    rng = np.random.default_rng(seed)
    parts = [
        capsule((0.0, 0.95, 0.0), (0.0, 1.35, 0.0), 0.16),
        uv_sphere(0.11, center=(0.0, 1.68, 0.0), segments=16, rings=8),
    ]
    for side in (-1.0, 1.0):
        ankle_x = side * (0.1 + 0.1 * rng.random())
        parts.append(capsule((side * 0.1, 0.70, 0.0), (ankle_x, 0.08, 0.02 * rng.standard_normal()), 0.07))

    left_angle = np.radians(rng.uniform(30.0, 80.0))
    parts.append(capsule((-0.26, 1.38, 0.0),
                         (-0.26 - 0.6 * np.sin(left_angle), 1.38 - 0.6 * np.cos(left_angle), 0.0), 0.05))
    if arm_forward:
        reach = rng.uniform(-0.05, 0.05)
        parts.append(capsule((0.24, 1.30, -0.26), (-0.15, 1.15 + reach, -0.40), 0.05))
    else:
        right_angle = np.radians(rng.uniform(30.0, 80.0))
        parts.append(capsule((0.26, 1.38, 0.0),
                             (0.26 + 0.6 * np.sin(right_angle), 1.38 - 0.6 * np.cos(right_angle), 0.0), 0.05))
    return Mesh.concatenate(parts)


def humanoid_set(count: int = 10, seed: int = 0) -> List[Mesh]:
    """Bundled articulated test set; every second mesh is self-occluding."""
    return [humanoid(seed + i, arm_forward=bool(i % 2)) for i in range(count)]
