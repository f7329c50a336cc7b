"""Surface voxelization baseline: N^3 occupancy over a padded bounding cube."""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from geometry import Mesh, PointCloud
from mesh_io import FileFormatError

logger = logging.getLogger(__name__)

# Padding added on each side of the bounding cube, as a fraction of its side.
PADDING = 0.02
PAIR_CHUNK = 250_000


@dataclass(eq=False)
class VoxelGrid:
    """Occupancy indexed ``[i, j, k]`` along x, y, z; cell (i, j, k) starts at
    ``origin + (i, j, k) * cell_size``."""

    resolution: int
    origin: np.ndarray
    edge_length: float
    occupancy: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.edge_length = float(self.edge_length)
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        n = self.resolution
        if self.occupancy.shape != (n, n, n):
            raise ValueError(f"Occupancy must be {n}x{n}x{n}, got {self.occupancy.shape}")

    @property
    def cell_size(self) -> float:
        return self.edge_length / self.resolution

    @property
    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.occupancy))

    @property
    def dimensionality(self) -> int:
        return self.resolution ** 3

    def cell_centers(self, index: np.ndarray) -> np.ndarray:
        return self.origin + (np.asarray(index, dtype=np.float64) + 0.5) * self.cell_size

    def save(self, path: Union[str, Path]) -> Tuple[Path, Path]:
        """Write the packed bitset to ``path`` and its header to ``path + '.json'``."""
        path = Path(path)
        header = Path(str(path) + ".json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(np.packbits(self.occupancy.ravel()).tobytes())
        with open(header, "w") as f:
            json.dump({"N": self.resolution, "origin": self.origin.tolist(),
                       "edge_length": self.edge_length}, f, indent=2, sort_keys=True)
        return path, header

    @classmethod
    def load(cls, path: Union[str, Path]) -> "VoxelGrid":
        path = Path(path)
        header = Path(str(path) + ".json")
        for p in (path, header):
            if not p.exists():
                raise FileNotFoundError(f"Voxel file not found: {p}")
        try:
            with open(header, "r") as f:
                meta = json.load(f)
            n = int(meta["N"])
            origin, edge = meta["origin"], float(meta["edge_length"])
        except (KeyError, TypeError, json.JSONDecodeError) as e:
            raise FileFormatError(f"Malformed voxel header {header}: {e}") from e
        bits = np.unpackbits(np.frombuffer(path.read_bytes(), dtype=np.uint8))
        if len(bits) < n ** 3:
            raise FileFormatError(f"{path} holds {len(bits)} bits, expected {n ** 3}")
        return cls(n, origin, edge, bits[:n ** 3].astype(bool).reshape(n, n, n))


def bounding_cube(mesh: Mesh) -> Tuple[np.ndarray, float]:
    """Origin and edge of the mesh AABB grown to a cube plus ``PADDING`` per side."""
    lo, hi = mesh.bounds
    side = float((hi - lo).max())
    edge = side * (1.0 + 2.0 * PADDING)
    return (lo + hi) / 2.0 - edge / 2.0, edge


def triangle_box_overlap(triangles: np.ndarray, centers: np.ndarray, half: float) -> np.ndarray:
    """Separating-axis test for (triangle, cube) pairs; touching counts as overlap.

    ``triangles`` is (P, 3, 3) and ``centers`` is (P, 3); ``half`` is the cube half-edge.
    """
    v = triangles - centers[:, None, :]
    edges = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 1], v[:, 0] - v[:, 2]], axis=1)
    overlap = np.ones(len(v), dtype=bool)

    # Box face normals.
    overlap &= ~((v.min(axis=1) > half) | (v.max(axis=1) < -half)).any(axis=1)

    # Triangle normal.
    normal = np.cross(edges[:, 0], edges[:, 1])
    d = np.einsum("ij,ij->i", normal, v[:, 0])
    overlap &= np.abs(d) <= half * np.abs(normal).sum(axis=1)

    # Edge x box-axis cross products.
    for i in range(3):
        for j in range(3):
            axis = np.cross(edges[:, i], np.eye(3)[j])
            p = np.einsum("pkc,pc->pk", v, axis)
            r = half * np.abs(axis).sum(axis=1)
            overlap &= ~((p.min(axis=1) > r) | (p.max(axis=1) < -r))
    return overlap


def _grid_frame(mesh: Mesh, resolution: int, origin, edge_length) -> Tuple[np.ndarray, float]:
    if resolution < 2:
        raise ValueError(f"Voxel resolution must be at least 2, got {resolution}")
    if mesh.is_empty:
        raise ValueError("Cannot voxelize an empty mesh")
    if origin is None or edge_length is None:
        return bounding_cube(mesh)
    return np.asarray(origin, dtype=np.float64), float(edge_length)


def _mark_triangles(grid: VoxelGrid, tri: np.ndarray) -> np.ndarray:
    """Linear indices of the cells overlapped by the triangles in ``tri``."""
    n, h = grid.resolution, grid.cell_size
    lo = np.clip(np.floor((tri.min(axis=1) - grid.origin) / h).astype(np.int64) - 1, 0, n - 1)
    hi = np.clip(np.floor((tri.max(axis=1) - grid.origin) / h).astype(np.int64) + 1, 0, n - 1)
    span = hi - lo + 1
    counts = span.prod(axis=1)

    tri_ids = np.repeat(np.arange(len(tri)), counts)
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    sy, sz = span[tri_ids, 1], span[tri_ids, 2]
    index = lo[tri_ids] + np.stack([offsets // (sy * sz), (offsets // sz) % sy, offsets % sz], axis=1)

    hit = triangle_box_overlap(tri[tri_ids], grid.cell_centers(index), h / 2.0)
    index = index[hit]
    return np.ravel_multi_index((index[:, 0], index[:, 1], index[:, 2]), (n, n, n))


def voxelize_surface(mesh: Mesh, resolution: int, origin=None, edge_length: Optional[float] = None,
                     workers: int = 1) -> VoxelGrid:
    """Mark every cell whose box overlaps at least one triangle.

    The grid defaults to ``bounding_cube(mesh)``; pass ``origin`` and ``edge_length``
    to voxelize into a fixed frame instead.
    """
    origin, edge_length = _grid_frame(mesh, resolution, origin, edge_length)
    n = resolution
    grid = VoxelGrid(n, origin, edge_length, np.zeros((n, n, n), dtype=bool))
    tri = mesh.vertices[mesh.triangles]

    # Size triangle chunks by their candidate cell count.
    h = grid.cell_size
    spans = np.clip(np.ceil((tri.max(axis=1) - tri.min(axis=1)) / h) + 3, 1, n).prod(axis=1)
    bounds = [0]
    total = 0
    for i, s in enumerate(spans):
        total += s
        if total >= PAIR_CHUNK:
            bounds.append(i + 1)
            total = 0
    if bounds[-1] != len(tri):
        bounds.append(len(tri))
    chunks = [tri[a:b] for a, b in zip(bounds[:-1], bounds[1:])]

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            marked = list(executor.map(lambda chunk: _mark_triangles(grid, chunk), chunks))
    else:
        marked = [_mark_triangles(grid, chunk) for chunk in chunks]

    flat = grid.occupancy.reshape(-1)
    for cells in marked:
        flat[cells] = True
    logger.info(f"Voxelized {mesh!r} at N={n}: {grid.occupied_count} occupied cells")
    return grid


def voxelize_surface_brute_force(mesh: Mesh, resolution: int, origin=None,
                                 edge_length: Optional[float] = None) -> VoxelGrid:
    """Reference for ``voxelize_surface`` testing every triangle against every cell."""
    origin, edge_length = _grid_frame(mesh, resolution, origin, edge_length)
    n = resolution
    grid = VoxelGrid(n, origin, edge_length, np.zeros((n, n, n), dtype=bool))
    cells = np.argwhere(np.ones((n, n, n), dtype=bool))
    tri = mesh.vertices[mesh.triangles]
    step = max(1, PAIR_CHUNK // len(cells))
    flat = grid.occupancy.reshape(-1)
    for lo in range(0, len(tri), step):
        block = tri[lo:lo + step]
        tri_ids = np.repeat(np.arange(len(block)), len(cells))
        cell_ids = np.tile(np.arange(len(cells)), len(block))
        hit = triangle_box_overlap(block[tri_ids], grid.cell_centers(cells[cell_ids]), grid.cell_size / 2.0)
        flat[cell_ids[hit]] = True
    return grid


def voxel_points(grid: VoxelGrid) -> PointCloud:
    """One point at the centre of every occupied cell, without normals."""
    occupied = np.argwhere(grid.occupancy)
    if len(occupied) == 0:
        logger.warning("Voxel grid has no occupied cells; returning an empty cloud")
    return PointCloud(grid.cell_centers(occupied))
