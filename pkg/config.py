import json
import logging
import os
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from geometry import Camera, Mesh
from losses import DEFAULT_LAMBDA
from metrics import DEFAULT_SAMPLES
from mould import DEFAULT_BACKGROUND_DISTANCE, DEFAULT_EPSILON, DEFAULT_RESOLUTION

logger = logging.getLogger(__name__)

# Rendering setup the ground truth is produced with.
DEFAULT_WIDTH = 320
DEFAULT_HEIGHT = 240
DEFAULT_SENSOR_WIDTH_MM = 32.0
DEFAULT_FOCAL_LENGTH_MM = 60.0
DEFAULT_SUBJECT_DISTANCE_M = 8.0
DEFAULT_SUBJECT_DISTANCE_STD_M = 1.0

DEFAULT_SEQUENCE_FRAMES = 100
DEFAULT_TAUS_MM = (30.0, 50.0)
DEFAULT_MOULD_RESOLUTIONS = (32, 64, 128, 256)

THREADS_ENV = "MOULDKIT_THREADS"
LOG_DIR_ENV = "MOULDKIT_LOG_DIR"


class CameraConfig:
    def __init__(self, width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT,
                 sensor_width_mm: float = DEFAULT_SENSOR_WIDTH_MM,
                 focal_length_mm: float = DEFAULT_FOCAL_LENGTH_MM,
                 subject_distance_m: float = DEFAULT_SUBJECT_DISTANCE_M,
                 subject_distance_std_m: float = DEFAULT_SUBJECT_DISTANCE_STD_M,
                 pose: Optional[np.ndarray] = None):
        self.width = int(width)
        self.height = int(height)
        self.sensor_width_mm = float(sensor_width_mm)
        self.focal_length_mm = float(focal_length_mm)
        self.subject_distance_m = float(subject_distance_m)
        self.subject_distance_std_m = float(subject_distance_std_m)
        self.pose = np.eye(4) if pose is None else np.asarray(pose, dtype=np.float64)
        if self.pose.shape != (4, 4):
            raise ValueError(f"Camera pose must be a 4x4 matrix, got shape {self.pose.shape}")
        if self.subject_distance_m <= 0:
            raise ValueError(f"Subject distance must be positive, got {self.subject_distance_m}")
        if self.subject_distance_std_m < 0:
            raise ValueError(f"Subject distance deviation must be non-negative, got {self.subject_distance_std_m}")

    def to_dict(self) -> Dict:
        return {
            'width': self.width,
            'height': self.height,
            'sensor_width_mm': self.sensor_width_mm,
            'focal_length_mm': self.focal_length_mm,
            'subject_distance_m': self.subject_distance_m,
            'subject_distance_std_m': self.subject_distance_std_m,
            'pose': self.pose.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "CameraConfig":
        """Build a config from a dict; missing keys keep their defaults, unknown keys are an error."""
        known = {'width', 'height', 'sensor_width_mm', 'focal_length_mm',
                 'subject_distance_m', 'subject_distance_std_m', 'pose'}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"Unknown camera config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def load(cls, path: Path) -> "CameraConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Camera config not found: {path}")
        try:
            with open(path, 'r') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"Camera config {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ValueError(f"Camera config {path} must hold a JSON object")
        config = cls.from_dict(data)
        logger.info(f"Loaded camera config from {path}: {config.width}x{config.height}, "
                    f"{config.sensor_width_mm} mm sensor, {config.focal_length_mm} mm lens")
        return config

    def save(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2)
        logger.info(f"Camera config saved to {path}")

    def camera(self) -> Camera:
        return Camera(self.width, self.height, self.sensor_width_mm, self.focal_length_mm, self.pose)

    def place(self, mesh: Mesh, distance: Optional[float] = None) -> Mesh:
        """Move ``mesh`` so its centroid is on the optical axis at ``distance`` (default: configured)."""
        distance = self.subject_distance_m if distance is None else float(distance)
        return self.camera().place_subject(mesh, distance)


def worker_count() -> int:
    """Worker threads to use; ``MOULDKIT_THREADS`` caps the default of min(8, CPUs)."""
    default = min(8, os.cpu_count() or 1)
    value = os.environ.get(THREADS_ENV)
    if not value:
        return default
    try:
        threads = int(value)
    except ValueError:
        logger.warning(f"Ignoring {THREADS_ENV}={value!r}: not an integer")
        return default
    if threads < 1:
        logger.warning(f"Ignoring {THREADS_ENV}={threads}: must be at least 1")
        return default
    return threads


def log_dir(script_dir: Path) -> Path:
    return Path(os.environ.get(LOG_DIR_ENV) or script_dir / "logs")
