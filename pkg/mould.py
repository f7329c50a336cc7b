"""Encode meshes into visible/hidden depth-map pairs and decode them back to clouds.

Depths are radial distances from the camera centre, centered on the distance of the
mesh centroid (``z_orig``). Pixels whose ray misses the mesh hold the background
value ``L`` in both maps.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from geometry import HIDDEN, VISIBLE, Camera, Mesh, PointCloud, build_bvh, cast_rays
from mesh_io import FileFormatError, read_pfm, write_pfm

logger = logging.getLogger(__name__)

DEFAULT_BACKGROUND_DISTANCE = 1.5
DEFAULT_EPSILON = 0.01
DEFAULT_RESOLUTION = 128

EMPTY_FRAME = "empty_frame"
NOT_WATERTIGHT = "not_watertight"
RANGE_VIOLATION = "range_violation"

CHANNELS = ("visible", "hidden")


class EncodeError(RuntimeError):
    pass


def _stem_paths(stem: Union[str, Path]) -> Tuple[Path, Path, Path]:
    stem = str(stem)
    return Path(stem + ".vis.pfm"), Path(stem + ".hid.pfm"), Path(stem + ".mould.json")


@dataclass(frozen=True, eq=False)
class MouldPair:
    """Centered visible/hidden depth maps of one subject, indexed ``[v, u]``."""

    z_vis: np.ndarray
    z_hid: np.ndarray
    z_orig: float
    background_distance: float
    camera: Camera
    epsilon: float = DEFAULT_EPSILON
    warnings: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        z_vis = np.array(self.z_vis, dtype=np.float64)
        z_hid = np.array(self.z_hid, dtype=np.float64)
        if z_vis.ndim != 2 or z_vis.shape[0] != z_vis.shape[1]:
            raise ValueError(f"Depth maps must be square N x N grids, got shape {z_vis.shape}")
        if z_hid.shape != z_vis.shape:
            raise ValueError(f"Visible and hidden maps differ in shape: {z_vis.shape} vs {z_hid.shape}")
        if (self.camera.height, self.camera.width) != z_vis.shape:
            raise ValueError(
                f"Camera is {self.camera.width}x{self.camera.height} but maps are {z_vis.shape[1]}x{z_vis.shape[0]}"
            )
        z_vis.setflags(write=False)
        z_hid.setflags(write=False)
        object.__setattr__(self, "z_vis", z_vis)
        object.__setattr__(self, "z_hid", z_hid)
        object.__setattr__(self, "z_orig", float(self.z_orig))
        object.__setattr__(self, "background_distance", float(self.background_distance))
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "warnings", tuple(self.warnings))

    @property
    def resolution(self) -> int:
        return self.z_vis.shape[0]

    @property
    def dimensionality(self) -> int:
        return 2 * self.resolution ** 2

    @property
    def foreground(self) -> np.ndarray:
        """Pixels where the ray met the subject (either map differs from L)."""
        L = self.background_distance
        return (self.z_vis != L) | (self.z_hid != L)

    def check_invariants(self) -> List[str]:
        """Describe every violated pair invariant; an empty list means the pair is valid."""
        L = self.background_distance
        problems = []
        # A pixel equal to L in one map only is foreground there and background in the other.
        if not np.array_equal(self.z_vis != L, self.z_hid != L):
            problems.append("visible and hidden foreground masks differ")
        fg = self.foreground
        if np.any(self.z_vis[fg] > self.z_hid[fg]):
            problems.append("z_vis exceeds z_hid at a foreground pixel")
        both = np.concatenate([self.z_vis.ravel(), self.z_hid.ravel()])
        if not np.all(np.isfinite(both)):
            problems.append("non-finite depth value")
        elif np.any(both < -self.z_orig) or np.any(both > L):
            problems.append(f"depth outside [-z_orig, L] = [{-self.z_orig}, {L}]")
        return problems

    def sidecar(self) -> dict:
        return {
            "z_orig": self.z_orig,
            "L": self.background_distance,
            "epsilon": self.epsilon,
            "width": self.camera.width,
            "height": self.camera.height,
            "resolution": self.resolution,
            "sensor_width_mm": self.camera.sensor_width,
            "focal_length_mm": self.camera.focal_length,
            "principal_point_px": list(self.camera.principal_point),
            "camera_pose": self.camera.pose.tolist(),
            "warnings": list(self.warnings),
        }

    def save(self, stem: Union[str, Path]) -> List[Path]:
        """Write ``<stem>.vis.pfm``, ``<stem>.hid.pfm`` and ``<stem>.mould.json``."""
        vis_path, hid_path, json_path = _stem_paths(stem)
        json_path.parent.mkdir(parents=True, exist_ok=True)
        write_pfm(vis_path, self.z_vis)
        write_pfm(hid_path, self.z_hid)
        with open(json_path, "w") as f:
            json.dump(self.sidecar(), f, indent=2, sort_keys=True)
        logger.info(f"Saved mould pair to {json_path.parent / json_path.stem}")
        return [vis_path, hid_path, json_path]

    @classmethod
    def load(cls, stem: Union[str, Path]) -> "MouldPair":
        vis_path, hid_path, json_path = _stem_paths(stem)
        for path in (vis_path, hid_path, json_path):
            if not path.exists():
                raise FileNotFoundError(f"Mould file not found: {path}")
        try:
            with open(json_path, "r") as f:
                meta = json.load(f)
            if isinstance(meta, dict) and "principal_point_px" not in meta:
                logger.warning(f"{json_path} has no principal_point_px; assuming the frame centre")
            camera = Camera(
                width=int(meta["width"]),
                height=int(meta["height"]),
                sensor_width=float(meta["sensor_width_mm"]),
                focal_length=float(meta["focal_length_mm"]),
                pose=np.array(meta["camera_pose"], dtype=np.float64),
                principal_point=tuple(meta["principal_point_px"]) if "principal_point_px" in meta else None,
            )
            L = float(meta["L"])
            z_orig = float(meta["z_orig"])
            epsilon = float(meta.get("epsilon", DEFAULT_EPSILON))
        except (KeyError, TypeError, json.JSONDecodeError) as e:
            raise FileFormatError(f"Malformed mould sidecar {json_path}: {e}") from e

        maps = []
        for path in (vis_path, hid_path):
            z = read_pfm(path).astype(np.float64)
            if z.shape != (camera.height, camera.width):
                raise FileFormatError(
                    f"{path} is {z.shape[1]}x{z.shape[0]}, sidecar says {camera.width}x{camera.height}"
                )
            # PFM stores float32; restore the background value exactly.
            z[z == np.float32(L)] = L
            maps.append(z)
        return cls(maps[0], maps[1], z_orig, L, camera, epsilon, tuple(meta.get("warnings", [])))


def _check_epsilon(pair: MouldPair, epsilon: Optional[float]) -> float:
    epsilon = pair.epsilon if epsilon is None else float(epsilon)
    if not 0.0 < epsilon < pair.background_distance:
        raise ValueError(f"Epsilon must lie in (0, L={pair.background_distance}), got {epsilon}")
    return epsilon


def encode(mesh: Mesh, camera: Camera, background_distance: float = DEFAULT_BACKGROUND_DISTANCE,
           resolution: int = DEFAULT_RESOLUTION, frame: bool = True, workers: int = 1) -> MouldPair:
    """Ray cast ``mesh`` (world coordinates) into an N x N mould pair.

    With ``frame`` the camera is replaced by a square crop around the projected mesh
    bounding box; otherwise ``camera`` must already be N x N.
    """
    if mesh.is_empty:
        raise ValueError("Cannot encode an empty mesh")
    if not background_distance > 0:
        raise ValueError(f"Background distance must be positive, got {background_distance}")
    if resolution < 1:
        raise ValueError(f"Resolution must be at least 1, got {resolution}")

    local = mesh.transformed(camera.pose)
    lo, hi = local.bounds
    if lo[2] <= 0.0:
        raise EncodeError(f"Mesh extends behind the camera (nearest depth {lo[2]:.6f} m)")

    warnings = []
    if not mesh.is_watertight:
        logger.warning("Mesh is not watertight; encoding the intersections that exist")
        warnings.append(NOT_WATERTIGHT)

    if frame:
        uv = camera.project(np.array([[x, y, z] for x in (lo[0], hi[0])
                                      for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]))
        (u0, v0), (u1, v1) = uv.min(axis=0), uv.max(axis=0)
        in_view = u1 > 0 and v1 > 0 and u0 < camera.width and v0 < camera.height
        view = camera.frame_square(local, resolution)
    else:
        if (camera.width, camera.height) != (resolution, resolution):
            raise ValueError(
                f"Unframed encoding needs a {resolution}x{resolution} camera, got {camera.width}x{camera.height}"
            )
        in_view = True
        view = camera

    z_orig = float(np.linalg.norm(local.centroid))
    z_vis = np.full((resolution, resolution), float(background_distance))
    z_hid = z_vis.copy()
    if in_view:
        directions = view.ray_directions().reshape(-1, 3)
        result = cast_rays(build_bvh(local), local, np.zeros(3), directions, workers=workers)
        hit = result.hit.reshape(resolution, resolution)
        z_vis[hit] = result.closest_distance.reshape(resolution, resolution)[hit] - z_orig
        z_hid[hit] = result.farthest_distance.reshape(resolution, resolution)[hit] - z_orig
    else:
        hit = np.zeros((resolution, resolution), dtype=bool)

    if not hit.any():
        logger.warning("Mesh does not project into the frame; returning an all-background pair")
        warnings.append(EMPTY_FRAME)
    elif np.any(z_hid[hit] > background_distance) or np.any(z_vis[hit] < -z_orig):
        logger.warning(f"Subject depth leaves [-z_orig, L]; deepest centered value {z_hid[hit].max():.4f} m")
        warnings.append(RANGE_VIOLATION)

    pair = MouldPair(z_vis, z_hid, z_orig, background_distance, view, warnings=tuple(warnings))
    logger.info(f"Encoded {mesh!r} at N={resolution}: {int(hit.sum())} foreground pixels, z_orig={z_orig:.4f} m")
    return pair


def foreground_mask(pair: MouldPair, epsilon: Optional[float] = None, channel: str = "visible") -> np.ndarray:
    """Pixels whose centered depth in ``channel`` is at most L - epsilon."""
    epsilon = _check_epsilon(pair, epsilon)
    if channel not in CHANNELS:
        raise ValueError(f"Channel must be one of {CHANNELS}, got {channel!r}")
    depth = pair.z_vis if channel == "visible" else pair.z_hid
    return depth <= pair.background_distance - epsilon


def _axis_difference(points: np.ndarray, mask: np.ndarray, axis: int) -> np.ndarray:
    """Central difference along ``axis`` inside ``mask``, one-sided at its border."""
    nxt = np.roll(points, -1, axis=axis)
    prv = np.roll(points, 1, axis=axis)
    nxt_ok = np.roll(mask, -1, axis=axis) & mask
    prv_ok = np.roll(mask, 1, axis=axis) & mask
    edge = [slice(None), slice(None)]
    edge[axis] = -1
    nxt_ok[tuple(edge)] = False
    edge[axis] = 0
    prv_ok[tuple(edge)] = False

    diff = np.zeros_like(points)
    central = nxt_ok & prv_ok
    forward = nxt_ok & ~prv_ok
    backward = prv_ok & ~nxt_ok
    diff[central] = (nxt[central] - prv[central]) / 2.0
    diff[forward] = nxt[forward] - points[forward]
    diff[backward] = points[backward] - prv[backward]
    return diff


def _surface_normals(points: np.ndarray, mask: np.ndarray, directions: np.ndarray, toward_camera: bool) -> np.ndarray:
    normals = np.cross(_axis_difference(points, mask, 1), _axis_difference(points, mask, 0))
    length = np.linalg.norm(normals, axis=-1, keepdims=True)
    flat = length[..., 0] < 1e-12
    normals = np.where(flat[..., None], directions, normals / np.where(flat[..., None], 1.0, length))
    facing = np.einsum("...i,...i->...", normals, directions)
    flip = facing > 0 if toward_camera else facing < 0
    normals[flip] *= -1.0
    return normals[mask]


def decode(pair: MouldPair, epsilon: Optional[float] = None) -> PointCloud:
    """Back-project both maps into one cloud, visible points first.

    Normals come from the depth-map gradient and point toward the camera on the
    visible half and away from it on the hidden half.
    """
    epsilon = _check_epsilon(pair, epsilon)
    directions = pair.camera.ray_directions()
    clouds = []
    for channel, depth, label in (("visible", pair.z_vis, VISIBLE), ("hidden", pair.z_hid, HIDDEN)):
        mask = foreground_mask(pair, epsilon, channel)
        points = directions * (depth + pair.z_orig)[..., None]
        normals = _surface_normals(points, mask, directions, toward_camera=(label == VISIBLE))
        clouds.append(PointCloud(points[mask], normals, np.full(len(normals), label, dtype=np.uint8)))

    cloud = PointCloud.concatenate(clouds)
    if cloud.is_empty:
        logger.warning("Decoded an all-background pair: the point cloud is empty")
    else:
        logger.info(f"Decoded {len(cloud)} points ({len(clouds[0])} visible, {len(clouds[1])} hidden)")
    return cloud
