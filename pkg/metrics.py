"""Reconstruction error and depth accuracy."""

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from geometry import Camera, Mesh, PointCloud, build_bvh, cast_rays
from mould import MouldPair, foreground_mask

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = 30000
# Radial slack when deciding whether a surface sample is the first or last hit on its ray.
REPRESENTABLE_TOLERANCE = 1e-5


class KdIndex:
    """Balanced k-d tree over a fixed point set."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise ValueError("Cannot index an empty point set")
        self._tree = cKDTree(self.points, balanced_tree=True)

    def __len__(self):
        return len(self.points)

    def nearest(self, queries) -> Tuple[np.ndarray, np.ndarray]:
        """Distance to and index of the nearest indexed point for every query."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        distances, indices = self._tree.query(queries, k=1)
        return distances, indices

    def nearest_linear(self, queries) -> Tuple[np.ndarray, np.ndarray]:
        """Same as ``nearest`` by exhaustive scan; for checking the tree."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        distances = np.empty(len(queries))
        indices = np.empty(len(queries), dtype=np.int64)
        for i, q in enumerate(queries):
            d = np.linalg.norm(self.points - q, axis=1)
            indices[i] = int(np.argmin(d))
            distances[i] = d[indices[i]]
        return distances, indices


def _points(cloud) -> np.ndarray:
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    return points.reshape(-1, 3)


def point_errors(a, b) -> np.ndarray:
    """Distance from every point of ``a`` to its nearest neighbour in ``b``."""
    a, b = _points(a), _points(b)
    if len(a) == 0 or len(b) == 0:
        raise ValueError(f"Point errors need non-empty clouds, got {len(a)} and {len(b)} points")
    distances, _ = KdIndex(b).nearest(a)
    return distances


def chamfer(a, b, squared: bool = False) -> float:
    """Symmetric Chamfer distance: half the sum of both mean nearest-neighbour distances."""
    d_ab = point_errors(a, b)
    d_ba = point_errors(b, a)
    if squared:
        d_ab, d_ba = d_ab ** 2, d_ba ** 2
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def sample_surface(mesh: Mesh, count: int = DEFAULT_SAMPLES, seed: Optional[int] = 0) -> PointCloud:
    """Area-weighted uniform samples of the mesh surface."""
    if count < 1:
        raise ValueError(f"Sample count must be at least 1, got {count}")
    if mesh.is_empty:
        raise ValueError("Cannot sample an empty mesh")

    random = np.random.default_rng(seed).random
    weight_cum = np.cumsum(mesh.areas)
    face_index = np.searchsorted(weight_cum, random(count) * weight_cum[-1], side="right")
    face_index = np.minimum(face_index, mesh.triangle_count - 1)

    tri = mesh.vertices[mesh.triangles[face_index]]
    lengths = random((count, 2, 1))
    # Fold samples from the far half of the parallelogram back into the triangle.
    outside = lengths.sum(axis=1).reshape(-1) > 1.0
    lengths[outside] = 1.0 - lengths[outside]
    vectors = tri[:, 1:] - tri[:, :1]
    return PointCloud(tri[:, 0] + (vectors * lengths).sum(axis=1))


def vertex_cloud(mesh: Mesh) -> PointCloud:
    """Vertices referenced by the triangles, the literal ground-truth protocol."""
    return PointCloud(mesh.vertices[np.unique(mesh.triangles)])


@dataclass(frozen=True)
class DepthAccuracy:
    """Percent of ground-truth foreground pixels within the threshold (NaN when none)."""

    overall: float
    visible: float
    hidden: float

    def to_dict(self) -> Dict[str, float]:
        return {"overall": self.overall, "visible": self.visible, "hidden": self.hidden}


def depth_accuracy(gt: MouldPair, pred: MouldPair, tau: float, epsilon: Optional[float] = None) -> DepthAccuracy:
    """Share of ground-truth foreground pixels whose centered depth error is at most ``tau``."""
    if gt.resolution != pred.resolution:
        raise ValueError(f"Resolution mismatch: ground truth N={gt.resolution}, prediction N={pred.resolution}")
    if not gt.camera.matches(pred.camera):
        raise ValueError("Camera mismatch: ground truth and prediction were framed by different cameras")
    if not tau > 0:
        raise ValueError(f"Threshold must be positive, got {tau}")

    counts = {}
    for channel, truth, guess in (("visible", gt.z_vis, pred.z_vis), ("hidden", gt.z_hid, pred.z_hid)):
        mask = foreground_mask(gt, epsilon, channel)
        good = np.abs(guess[mask] - truth[mask]) <= tau
        counts[channel] = (int(good.sum()), int(mask.sum()))

    def percent(good: int, total: int) -> float:
        return 100.0 * good / total if total else math.nan

    total_good = sum(good for good, _ in counts.values())
    total = sum(n for _, n in counts.values())
    if total == 0:
        logger.warning("Ground truth has no foreground pixels; depth accuracy is undefined")
    return DepthAccuracy(
        overall=percent(total_good, total),
        visible=percent(*counts["visible"]),
        hidden=percent(*counts["hidden"]),
    )


def depth_accuracy_curve(gt: MouldPair, pred: MouldPair, taus: Sequence[float],
                         epsilon: Optional[float] = None) -> List[Tuple[float, DepthAccuracy]]:
    """``depth_accuracy`` at each threshold, in ascending threshold order."""
    return [(float(tau), depth_accuracy(gt, pred, tau, epsilon)) for tau in sorted(taus)]


# Depth classes for the classification baseline: 19 depth bins plus one background class.
DEPTH_BINS = 19
DEPTH_BIN_WIDTH = 0.045


def quantize_depth(pair: MouldPair, bins: int = DEPTH_BINS, bin_width: float = DEPTH_BIN_WIDTH,
                   epsilon: Optional[float] = None) -> np.ndarray:
    """Class index per pixel, shape (2, N, N) for the visible and hidden maps.

    Bin k is centred on (k - (bins - 1) / 2) * bin_width; depths beyond the outer
    bins fall into them. Background pixels get class ``bins``.
    """
    if bins < 1:
        raise ValueError(f"Need at least one depth bin, got {bins}")
    if not bin_width > 0:
        raise ValueError(f"Bin width must be positive, got {bin_width}")
    classes = np.empty((2,) + pair.z_vis.shape, dtype=np.int64)
    for index, (channel, depth) in enumerate((("visible", pair.z_vis), ("hidden", pair.z_hid))):
        k = np.clip(np.rint(depth / bin_width + (bins - 1) / 2.0), 0, bins - 1).astype(np.int64)
        classes[index] = np.where(foreground_mask(pair, epsilon, channel), k, bins)
    return classes


def dequantize_depth(classes: np.ndarray, template: MouldPair, bins: int = DEPTH_BINS,
                     bin_width: float = DEPTH_BIN_WIDTH) -> MouldPair:
    """Pair holding bin centres, with the camera and metadata of ``template``."""
    classes = np.asarray(classes)
    if classes.shape != (2,) + template.z_vis.shape:
        raise ValueError(f"Class map is {classes.shape}, expected {(2,) + template.z_vis.shape}")
    if classes.min() < 0 or classes.max() > bins:
        raise ValueError(f"Class indices must lie in [0, {bins}]")
    centres = (classes - (bins - 1) / 2.0) * bin_width
    depth = np.where(classes == bins, template.background_distance, centres)
    return replace(template, z_vis=depth[0], z_hid=depth[1], warnings=())


def quantized_accuracy(gt: MouldPair, tau: float, bins: int = DEPTH_BINS, bin_width: float = DEPTH_BIN_WIDTH,
                       epsilon: Optional[float] = None) -> DepthAccuracy:
    """Depth accuracy left after snapping the ground truth to depth classes."""
    snapped = dequantize_depth(quantize_depth(gt, bins, bin_width, epsilon), gt, bins, bin_width)
    return depth_accuracy(gt, snapped, tau, epsilon)


def convergence_limit(errors: Sequence[float]) -> float:
    """Limit of a converging error sequence, from its last three terms.

    Assumes the gaps between successive terms shrink geometrically (Aitken's
    delta-squared extrapolation).
    """
    if len(errors) < 3:
        raise ValueError(f"Need at least three errors to extrapolate, got {len(errors)}")
    e0, e1, e2 = (float(e) for e in errors[-3:])
    d1, d2 = e1 - e0, e2 - e1
    if d1 == 0 or d2 / d1 <= 0 or d2 / d1 >= 1:
        raise ValueError(f"Errors {e0:.6g}, {e1:.6g}, {e2:.6g} are not converging geometrically")
    return e2 - d2 * d2 / (d2 - d1)


def representable_mask(mesh: Mesh, samples: PointCloud, tolerance: float = REPRESENTABLE_TOLERANCE,
                       workers: int = 1) -> np.ndarray:
    """Samples (camera coordinates) that are the first or last hit on their own camera ray."""
    radius = np.linalg.norm(samples.points, axis=1)
    result = cast_rays(build_bvh(mesh), mesh, np.zeros(3), samples.points / radius[:, None], workers=workers)
    return (np.abs(result.closest_distance - radius) <= tolerance) | (np.abs(result.farthest_distance - radius) <= tolerance)


def representable_floor(mesh: Mesh, camera: Camera, samples: int = DEFAULT_SAMPLES, seed: Optional[int] = 0,
                        tolerance: float = REPRESENTABLE_TOLERANCE, workers: int = 1) -> float:
    """Chamfer between surface samples and those an ideal two-hit encoding keeps.

    The mesh is given in world coordinates. The result is zero when every ray crosses
    the surface at most twice and grows with the area hidden between outer layers.
    """
    local = mesh.transformed(camera.pose)
    cloud = sample_surface(local, samples, seed)
    keep = representable_mask(local, cloud, tolerance, workers)
    if not keep.any():
        raise ValueError("No surface sample is representable from this camera")
    floor = chamfer(cloud, cloud.subset(keep))
    logger.info(f"Representable floor: {keep.mean() * 100:.2f}% of samples kept, chamfer {floor:.6f} m")
    return floor


def matched_voxel_resolution(mould_resolution: int) -> int:
    """Smallest voxel N whose N^3 is at least the mould's 2N^2."""
    target = 2 * mould_resolution ** 2
    n = max(2, int(round(target ** (1.0 / 3.0))) - 1)
    while n ** 3 < target:
        n += 1
    return n
