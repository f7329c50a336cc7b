import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

# Only intersections farther than this from the ray origin count as hits.
MIN_HIT_DISTANCE = 1e-6
# Hits closer than this to the previous accepted hit on the same ray are merged.
MERGE_DISTANCE = 1e-6
# Barycentric slack so rays through shared edges and vertices are never lost.
BARYCENTRIC_TOLERANCE = 1e-9
PARALLEL_DETERMINANT = 1e-14
LEAF_SIZE = 4
RAY_BATCH = 16384
BRUTE_FORCE_PAIRS = 2_000_000

VISIBLE = 0
HIDDEN = 1


def _triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    if len(triangles) == 0:
        return np.zeros(0)
    tri = vertices[triangles]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


class Mesh:
    """Indexed triangle surface in meters.

    Zero-area triangles are dropped on construction; the number dropped is kept in
    ``dropped_degenerate``. ``centroid`` is the area-weighted mean of the triangle
    centroids, i.e. the centre of mass of the surface seen as a uniform lamina.
    """

    def __init__(self, vertices, triangles):
        vertices = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        if len(triangles) and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise ValueError(
                f"Triangle index out of range: indices must lie in [0, {len(vertices)})"
            )

        areas = _triangle_areas(vertices, triangles)
        keep = areas > 0.0
        self.dropped_degenerate = int(np.count_nonzero(~keep))
        if self.dropped_degenerate:
            logger.warning(f"Dropped {self.dropped_degenerate} degenerate triangles with zero area")

        self.vertices = vertices
        self.triangles = triangles[keep]
        self.areas = areas[keep]
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)
        self.areas.setflags(write=False)
        self.centroid = self._area_weighted_centroid()

    def _area_weighted_centroid(self) -> np.ndarray:
        if self.is_empty:
            return np.zeros(3)
        tri_centroids = self.vertices[self.triangles].mean(axis=1)
        return (self.areas[:, None] * tri_centroids).sum(axis=0) / self.areas.sum()

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)

    @property
    def is_empty(self) -> bool:
        return self.triangle_count == 0

    @property
    def surface_area(self) -> float:
        return float(self.areas.sum())

    @property
    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """AABB over the vertices referenced by triangles."""
        used = self.vertices[np.unique(self.triangles)]
        return used.min(axis=0), used.max(axis=0)

    @cached_property
    def is_watertight(self) -> bool:
        """True when every undirected edge is shared by exactly two triangles."""
        if self.is_empty:
            return False
        edges = np.concatenate([
            self.triangles[:, [0, 1]],
            self.triangles[:, [1, 2]],
            self.triangles[:, [2, 0]],
        ])
        edges.sort(axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def transformed(self, pose: np.ndarray) -> "Mesh":
        pose = np.asarray(pose, dtype=np.float64)
        moved = self.vertices @ pose[:3, :3].T + pose[:3, 3]
        return Mesh(moved, self.triangles)

    def translated(self, offset) -> "Mesh":
        return Mesh(self.vertices + np.asarray(offset, dtype=np.float64), self.triangles)

    def subdivided(self) -> "Mesh":
        """Split every triangle into four at its edge midpoints.

        Midpoints are not shared between neighbouring triangles, so the result is a
        triangle soup with the same surface and the same area-weighted centroid.
        """
        tri = self.vertices[self.triangles]
        a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
        ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
        pieces = np.stack([
            np.stack([a, ab, ca], axis=1),
            np.stack([ab, b, bc], axis=1),
            np.stack([ca, bc, c], axis=1),
            np.stack([ab, bc, ca], axis=1),
        ], axis=1).reshape(-1, 3, 3)
        return Mesh(pieces.reshape(-1, 3), np.arange(len(pieces) * 3).reshape(-1, 3))

    @classmethod
    def concatenate(cls, meshes: Sequence["Mesh"]) -> "Mesh":
        vertices, triangles, offset = [], [], 0
        for mesh in meshes:
            vertices.append(mesh.vertices)
            triangles.append(mesh.triangles + offset)
            offset += len(mesh.vertices)
        return cls(np.concatenate(vertices), np.concatenate(triangles))

    def __repr__(self):
        return f"Mesh(vertices={len(self.vertices)}, triangles={self.triangle_count})"


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
            raise ValueError(f"Ray direction must be unit length, got norm {np.linalg.norm(direction)}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)


@dataclass(frozen=True)
class Hit:
    distance: float
    triangle: int
    barycentric: Tuple[float, float]


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera looking down +z in its own frame (x right, y down).

    ``pose`` maps world coordinates to camera coordinates. ``principal_point`` is in
    continuous pixel coordinates where pixel (u, v) covers [u, u+1) x [v, v+1); it
    defaults to the frame centre. Pixels are square.
    """

    width: int
    height: int
    sensor_width: float
    focal_length: float
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))
    principal_point: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"Camera size must be at least 1x1, got {self.width}x{self.height}")
        if not self.focal_length > 0:
            raise ValueError(f"Focal length must be positive, got {self.focal_length}")
        if not self.sensor_width > 0:
            raise ValueError(f"Sensor width must be positive, got {self.sensor_width}")
        pose = np.asarray(self.pose, dtype=np.float64)
        if pose.shape != (4, 4):
            raise ValueError(f"Camera pose must be 4x4, got {pose.shape}")
        object.__setattr__(self, "pose", pose)
        if self.principal_point is None:
            object.__setattr__(self, "principal_point", (self.width / 2.0, self.height / 2.0))
        else:
            cx, cy = self.principal_point
            object.__setattr__(self, "principal_point", (float(cx), float(cy)))

    @property
    def pixel_size(self) -> float:
        """Pixel pitch on the sensor in millimeters."""
        return self.sensor_width / self.width

    def pixel_footprint(self, distance: float) -> float:
        """World-space width of one pixel at ``distance`` meters."""
        return self.pixel_size / self.focal_length * distance

    def matches(self, other: "Camera", atol: float = 1e-9) -> bool:
        """Same frame size, intrinsics, principal point and pose."""
        return (
            (self.width, self.height) == (other.width, other.height)
            and math.isclose(self.sensor_width, other.sensor_width, abs_tol=atol)
            and math.isclose(self.focal_length, other.focal_length, abs_tol=atol)
            and np.allclose(self.principal_point, other.principal_point, rtol=0, atol=atol)
            and np.allclose(self.pose, other.pose, rtol=0, atol=atol)
        )

    def _directions(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        cx, cy = self.principal_point
        x = (u + 0.5 - cx) * self.pixel_size
        y = (v + 0.5 - cy) * self.pixel_size
        z = np.full(np.broadcast(x, y).shape, self.focal_length, dtype=np.float64)
        d = np.stack(np.broadcast_arrays(x, y, z), axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def ray_directions(self) -> np.ndarray:
        """Unit directions through every pixel centre, shape (height, width, 3)."""
        v, u = np.meshgrid(np.arange(self.height, dtype=np.float64),
                           np.arange(self.width, dtype=np.float64), indexing="ij")
        return self._directions(u, v)

    def project(self, points: np.ndarray) -> np.ndarray:
        """Continuous pixel coordinates (u, v) of camera-space points with z > 0."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        cx, cy = self.principal_point
        scale = self.focal_length / self.pixel_size
        return np.stack([
            cx + scale * points[:, 0] / points[:, 2],
            cy + scale * points[:, 1] / points[:, 2],
        ], axis=1)

    def frame_square(self, mesh: "Mesh", resolution: int, margin: float = 0.02) -> "Camera":
        """Square N x N crop camera framing ``mesh`` (given in camera coordinates).

        The projected AABB of the mesh is extended on its shorter side to a square,
        grown by ``margin`` on each side, and resampled to ``resolution`` pixels.
        Focal length and pose are kept; sensor width and principal point change.
        """
        lo, hi = mesh.bounds
        corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
        uv = self.project(corners)
        (u0, v0), (u1, v1) = uv.min(axis=0), uv.max(axis=0)
        side = max(u1 - u0, v1 - v0, 1.0) * (1.0 + 2.0 * margin)
        left = (u0 + u1) / 2.0 - side / 2.0
        top = (v0 + v1) / 2.0 - side / 2.0
        cx, cy = self.principal_point
        return Camera(
            width=resolution,
            height=resolution,
            sensor_width=side * self.pixel_size,
            focal_length=self.focal_length,
            pose=self.pose,
            principal_point=((cx - left) * resolution / side, (cy - top) * resolution / side),
        )

    def place_subject(self, mesh: "Mesh", distance: float) -> "Mesh":
        """Translate ``mesh`` so its centroid sits on the optical axis ``distance`` m away."""
        inverse = np.linalg.inv(self.pose)
        target = inverse[:3, :3] @ np.array([0.0, 0.0, distance]) + inverse[:3, 3]
        return mesh.translated(target - mesh.centroid)


def pixel_ray(camera: Camera, u: int, v: int) -> Ray:
    if not (0 <= u < camera.width and 0 <= v < camera.height):
        raise ValueError(f"Pixel ({u}, {v}) outside {camera.width}x{camera.height} frame")
    direction = camera._directions(np.float64(u), np.float64(v))
    return Ray(np.zeros(3), direction)


@dataclass(eq=False)
class PointCloud:
    """Points in camera coordinates with optional unit normals and provenance labels."""

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    provenance: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.provenance is None:
            self.provenance = np.full(len(self.points), VISIBLE, dtype=np.uint8)
        else:
            self.provenance = np.asarray(self.provenance, dtype=np.uint8).reshape(-1)
            if len(self.provenance) != len(self.points):
                raise ValueError("Provenance labels must match point count")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.points):
                raise ValueError("Normals must match point count")
            lengths = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(lengths - 1.0) > 1e-6):
                raise ValueError("Normals must be unit length")

    def __len__(self):
        return len(self.points)

    @property
    def is_empty(self) -> bool:
        return len(self.points) == 0

    def subset(self, mask: np.ndarray) -> "PointCloud":
        normals = None if self.normals is None else self.normals[mask]
        return PointCloud(self.points[mask], normals, self.provenance[mask])

    @property
    def visible(self) -> "PointCloud":
        return self.subset(self.provenance == VISIBLE)

    @property
    def hidden(self) -> "PointCloud":
        return self.subset(self.provenance == HIDDEN)

    @classmethod
    def concatenate(cls, clouds: Sequence["PointCloud"]) -> "PointCloud":
        clouds = list(clouds)
        if not clouds:
            return cls(np.zeros((0, 3)))
        with_normals = all(c.normals is not None for c in clouds)
        return cls(
            np.concatenate([c.points for c in clouds]),
            np.concatenate([c.normals for c in clouds]) if with_normals else None,
            np.concatenate([c.provenance for c in clouds]),
        )


class Bvh:
    """Binary AABB hierarchy over mesh triangles stored as flat node arrays.

    Leaf ``i`` owns ``order[start[i]:start[i] + count[i]]``; internal nodes have
    ``left``/``right`` child indices and ``left == -1`` marks a leaf.
    """

    def __init__(self, bounds_min, bounds_max, left, right, start, count, order, triangle_count):
        self.bounds_min = bounds_min
        self.bounds_max = bounds_max
        self.left = left
        self.right = right
        self.start = start
        self.count = count
        self.order = order
        self.triangle_count = triangle_count
        for array in (bounds_min, bounds_max, left, right, start, count, order):
            array.setflags(write=False)

    @property
    def node_count(self) -> int:
        return len(self.left)

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    def leaves(self) -> Iterator[np.ndarray]:
        for node in np.flatnonzero(self.left < 0):
            yield self.order[self.start[node]:self.start[node] + self.count[node]]

    def __repr__(self):
        return f"Bvh(nodes={self.node_count}, triangles={self.triangle_count})"


def build_bvh(mesh: Mesh, leaf_size: int = LEAF_SIZE) -> Bvh:
    """Median-split BVH on the longest centroid axis."""
    if mesh.is_empty:
        raise ValueError("Cannot build a BVH over an empty mesh")

    tri = mesh.vertices[mesh.triangles]
    tri_min, tri_max, centers = tri.min(axis=1), tri.max(axis=1), tri.mean(axis=1)
    order = np.arange(mesh.triangle_count)

    bmin: List[np.ndarray] = [None]
    bmax: List[np.ndarray] = [None]
    left, right, start, count = [-1], [-1], [0], [0]
    stack = [(0, 0, mesh.triangle_count)]
    while stack:
        node, lo, hi = stack.pop()
        members = order[lo:hi]
        bmin[node] = tri_min[members].min(axis=0)
        bmax[node] = tri_max[members].max(axis=0)
        extent = centers[members].max(axis=0) - centers[members].min(axis=0)
        axis = int(np.argmax(extent))
        if hi - lo <= leaf_size or extent[axis] <= 0.0:
            start[node], count[node] = lo, hi - lo
            continue

        order[lo:hi] = members[np.argsort(centers[members, axis], kind="stable")]
        mid = (lo + hi) // 2
        children = []
        for _ in range(2):
            children.append(len(left))
            bmin.append(None)
            bmax.append(None)
            left.append(-1)
            right.append(-1)
            start.append(0)
            count.append(0)
        left[node], right[node] = children
        stack.append((children[1], mid, hi))
        stack.append((children[0], lo, mid))

    bounds_min, bounds_max = np.array(bmin), np.array(bmax)
    # Padding keeps hits accepted by the barycentric slack inside their leaf box.
    pad = 1e-8 * (1.0 + np.abs(mesh.vertices).max())
    bvh = Bvh(bounds_min - pad, bounds_max + pad, np.array(left), np.array(right),
              np.array(start), np.array(count), order, mesh.triangle_count)
    logger.debug(f"Built {bvh!r}")
    return bvh


@dataclass(eq=False)
class RayCastResult:
    """Closest and farthest hit for a batch of rays; misses have infinite distance."""

    closest_distance: np.ndarray
    closest_triangle: np.ndarray
    closest_barycentric: np.ndarray
    farthest_distance: np.ndarray
    farthest_triangle: np.ndarray
    farthest_barycentric: np.ndarray
    hit_count: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return self.hit_count > 0

    def closest(self, index: int) -> Optional[Hit]:
        if self.hit_count[index] == 0:
            return None
        u, v = self.closest_barycentric[index]
        return Hit(float(self.closest_distance[index]), int(self.closest_triangle[index]), (float(u), float(v)))

    def farthest(self, index: int) -> Optional[Hit]:
        if self.hit_count[index] == 0:
            return None
        u, v = self.farthest_barycentric[index]
        return Hit(float(self.farthest_distance[index]), int(self.farthest_triangle[index]), (float(u), float(v)))

    @classmethod
    def concatenate(cls, parts: Sequence["RayCastResult"]) -> "RayCastResult":
        return cls(*(np.concatenate([getattr(p, name) for p in parts]) for name in cls.__dataclass_fields__))


def _intersect_pairs(mesh: Mesh, origins, directions, ray_ids, tri_ids):
    """Möller-Trumbore over (ray, triangle) pairs; returns mask, t, u, v."""
    tri = mesh.vertices[mesh.triangles[tri_ids]]
    o, d = origins[ray_ids], directions[ray_ids]
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    p = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, p)
    valid = np.abs(det) > PARALLEL_DETERMINANT
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_det = np.where(valid, 1.0 / det, 0.0)
    s = o - tri[:, 0]
    u = np.einsum("ij,ij->i", s, p) * inv_det
    q = np.cross(s, e1)
    v = np.einsum("ij,ij->i", d, q) * inv_det
    t = np.einsum("ij,ij->i", e2, q) * inv_det
    valid &= (u >= -BARYCENTRIC_TOLERANCE) & (v >= -BARYCENTRIC_TOLERANCE)
    valid &= (u + v <= 1.0 + BARYCENTRIC_TOLERANCE) & (t > MIN_HIT_DISTANCE)
    return valid, t, u, v


def _merge_coincident(ray_ids: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Keep mask over hits sorted by (ray, distance).

    A hit is dropped when it lies within MERGE_DISTANCE of the last hit kept on
    the same ray.
    """
    keep = np.zeros(len(t), dtype=bool)
    if len(t) == 0:
        return keep
    starts = np.flatnonzero(np.r_[True, ray_ids[1:] != ray_ids[:-1]])
    sizes = np.diff(np.r_[starts, len(t)])
    rank = np.arange(len(t)) - np.repeat(starts, sizes)
    keep[starts] = True
    last_kept = np.zeros(int(ray_ids.max()) + 1)
    last_kept[ray_ids[starts]] = t[starts]
    for k in range(1, int(sizes.max())):
        at = np.flatnonzero(rank == k)
        accept = at[t[at] - last_kept[ray_ids[at]] > MERGE_DISTANCE]
        keep[accept] = True
        last_kept[ray_ids[accept]] = t[accept]
    return keep


def _reduce_hits(ray_count: int, ray_ids, tri_ids, t, u, v) -> RayCastResult:
    # Sort by ray, then distance, then triangle index so exact ties keep the lower index.
    order = np.lexsort((tri_ids, t, ray_ids))
    ray_ids, tri_ids, t, u, v = ray_ids[order], tri_ids[order], t[order], u[order], v[order]

    keep = _merge_coincident(ray_ids, t)
    ray_ids, tri_ids, t, u, v = ray_ids[keep], tri_ids[keep], t[keep], u[keep], v[keep]

    first = np.ones(len(t), dtype=bool)
    last = np.ones(len(t), dtype=bool)
    if len(t) > 1:
        first[1:] = ray_ids[1:] != ray_ids[:-1]
        last[:-1] = ray_ids[:-1] != ray_ids[1:]

    result = RayCastResult(
        closest_distance=np.full(ray_count, np.inf),
        closest_triangle=np.full(ray_count, -1, dtype=np.int64),
        closest_barycentric=np.zeros((ray_count, 2)),
        farthest_distance=np.full(ray_count, np.inf),
        farthest_triangle=np.full(ray_count, -1, dtype=np.int64),
        farthest_barycentric=np.zeros((ray_count, 2)),
        hit_count=np.bincount(ray_ids, minlength=ray_count).astype(np.int64),
    )
    for mask, dist, tri, bary in (
        (first, result.closest_distance, result.closest_triangle, result.closest_barycentric),
        (last, result.farthest_distance, result.farthest_triangle, result.farthest_barycentric),
    ):
        rays = ray_ids[mask]
        dist[rays] = t[mask]
        tri[rays] = tri_ids[mask]
        bary[rays] = np.stack([u[mask], v[mask]], axis=1)
    return result


def _bvh_candidates(bvh: Bvh, origins: np.ndarray, directions: np.ndarray):
    """Wavefront traversal: all (ray, triangle) pairs whose leaf box the ray crosses."""
    safe = np.where(directions == 0.0, 0.0, directions)
    with np.errstate(divide="ignore"):
        inv = 1.0 / safe

    ray_ids = np.arange(len(origins))
    node_ids = np.zeros(len(origins), dtype=np.int64)
    out_rays, out_tris = [], []
    while len(ray_ids):
        o, inv_d = origins[ray_ids], inv[ray_ids]
        with np.errstate(invalid="ignore"):
            t1 = (bvh.bounds_min[node_ids] - o) * inv_d
            t2 = (bvh.bounds_max[node_ids] - o) * inv_d
        # 0 * inf: the ray runs inside a slab plane, which counts as inside.
        t1 = np.where(np.isnan(t1), -np.inf, t1)
        t2 = np.where(np.isnan(t2), np.inf, t2)
        t_near = np.minimum(t1, t2).max(axis=1)
        t_far = np.maximum(t1, t2).min(axis=1)
        crossing = (t_near <= t_far) & (t_far >= 0.0)
        ray_ids, node_ids = ray_ids[crossing], node_ids[crossing]

        leaf = bvh.left[node_ids] < 0
        leaf_rays, leaf_nodes = ray_ids[leaf], node_ids[leaf]
        if len(leaf_rays):
            counts = bvh.count[leaf_nodes]
            offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
            out_rays.append(np.repeat(leaf_rays, counts))
            out_tris.append(bvh.order[np.repeat(bvh.start[leaf_nodes], counts) + offsets])

        inner_rays, inner_nodes = ray_ids[~leaf], node_ids[~leaf]
        ray_ids = np.concatenate([inner_rays, inner_rays])
        node_ids = np.concatenate([bvh.left[inner_nodes], bvh.right[inner_nodes]])

    if not out_rays:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(out_rays), np.concatenate(out_tris)


def _cast_batch(bvh: Bvh, mesh: Mesh, origins: np.ndarray, directions: np.ndarray) -> RayCastResult:
    ray_ids, tri_ids = _bvh_candidates(bvh, origins, directions)
    valid, t, u, v = _intersect_pairs(mesh, origins, directions, ray_ids, tri_ids)
    return _reduce_hits(len(origins), ray_ids[valid], tri_ids[valid], t[valid], u[valid], v[valid])


def _as_rays(origins, directions) -> Tuple[np.ndarray, np.ndarray]:
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), directions.shape)
    return np.ascontiguousarray(origins), directions


def cast_rays(bvh: Bvh, mesh: Mesh, origins, directions, workers: int = 1) -> RayCastResult:
    """Closest hit, farthest hit and distinct-hit count for every ray.

    Directions must be unit length so that the returned distances are radial
    distances from the origin. Batches of rays are independent and may run on a
    thread pool; the result does not depend on ``workers``.
    """
    if bvh.triangle_count != mesh.triangle_count:
        raise ValueError("BVH was not built over this mesh")
    origins, directions = _as_rays(origins, directions)
    batches = [slice(i, i + RAY_BATCH) for i in range(0, len(directions), RAY_BATCH)] or [slice(0, 0)]

    def run(batch: slice) -> RayCastResult:
        return _cast_batch(bvh, mesh, origins[batch], directions[batch])

    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(run, batches))
    else:
        parts = [run(batch) for batch in batches]
    return RayCastResult.concatenate(parts)


def cast_rays_brute_force(mesh: Mesh, origins, directions) -> RayCastResult:
    """Reference for ``cast_rays`` testing every ray against every triangle."""
    origins, directions = _as_rays(origins, directions)
    chunk = max(1, BRUTE_FORCE_PAIRS // max(1, mesh.triangle_count))
    parts = []
    for lo in range(0, len(directions), chunk):
        o, d = origins[lo:lo + chunk], directions[lo:lo + chunk]
        ray_ids = np.repeat(np.arange(len(d)), mesh.triangle_count)
        tri_ids = np.tile(np.arange(mesh.triangle_count), len(d))
        valid, t, u, v = _intersect_pairs(mesh, o, d, ray_ids, tri_ids)
        parts.append(_reduce_hits(len(d), ray_ids[valid], tri_ids[valid], t[valid], u[valid], v[valid]))
    if not parts:
        return _reduce_hits(0, *(np.zeros(0, dtype=np.int64),) * 2, *(np.zeros(0),) * 3)
    return RayCastResult.concatenate(parts)


def intersect_closest(bvh: Bvh, mesh: Mesh, ray: Ray) -> Optional[Hit]:
    return cast_rays(bvh, mesh, ray.origin, ray.direction).closest(0)


def intersect_farthest(bvh: Bvh, mesh: Mesh, ray: Ray) -> Optional[Hit]:
    return cast_rays(bvh, mesh, ray.origin, ray.direction).farthest(0)
