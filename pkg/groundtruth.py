"""Geometry-side ground truth for mesh sequences.

The subject distance is drawn once per sequence and the camera stays fixed for all
of its frames, so motion within the sequence is preserved in the depth maps.
"""

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from rich.console import Console
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn

from config import DEFAULT_SEQUENCE_FRAMES, CameraConfig
from geometry import Camera
from mesh_io import FileFormatError, load_mesh
from mould import DEFAULT_BACKGROUND_DISTANCE, DEFAULT_EPSILON, DEFAULT_RESOLUTION, EncodeError, encode

console = Console()
logger = logging.getLogger(__name__)

MESH_SUFFIXES = (".obj", ".ply")
MIN_SUBJECT_DISTANCE = 1.0
SEQUENCE_FILE = "sequence.json"


def sample_subject_distance(seed: Optional[int], mean: float = 8.0, std: float = 1.0) -> float:
    """Normally distributed subject distance, never closer than ``MIN_SUBJECT_DISTANCE``."""
    distance = float(np.random.default_rng(seed).normal(mean, std))
    return max(distance, MIN_SUBJECT_DISTANCE)


def mesh_files(mesh_dir: Path) -> List[Path]:
    mesh_dir = Path(mesh_dir)
    if not mesh_dir.is_dir():
        raise FileNotFoundError(f"Mesh directory not found: {mesh_dir}")
    return sorted(p for p in mesh_dir.iterdir() if p.suffix.lower() in MESH_SUFFIXES)


@dataclass
class RenderSummary:
    subject_distance: float
    camera: Camera
    written: List[str] = field(default_factory=list)
    skipped: List[Tuple[str, str]] = field(default_factory=list)
    invalid: List[Tuple[str, List[str]]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return bool(self.written) and not self.invalid

    def to_dict(self, seed: Optional[int]) -> dict:
        return {
            'seed': seed,
            'subject_distance_m': self.subject_distance,
            'camera_pose': self.camera.pose.tolist(),
            'frames': self.written,
            'skipped': [{'frame': name, 'reason': reason} for name, reason in self.skipped],
            'invalid': [{'frame': name, 'problems': problems} for name, problems in self.invalid],
        }


class SequenceRenderer:
    def __init__(self, camera_config: CameraConfig, resolution: int = DEFAULT_RESOLUTION,
                 background_distance: float = DEFAULT_BACKGROUND_DISTANCE, epsilon: float = DEFAULT_EPSILON,
                 max_frames: int = DEFAULT_SEQUENCE_FRAMES, max_workers: int = 1,
                 shutdown_event: Optional[threading.Event] = None, show_progress: bool = False):
        self.camera_config = camera_config
        self.resolution = resolution
        self.background_distance = background_distance
        self.epsilon = epsilon
        self.max_frames = max_frames
        self.max_workers = max(1, max_workers)
        self.shutdown_event = shutdown_event or threading.Event()
        self.show_progress = show_progress

    def place_camera(self, anchor, seed: Optional[int]) -> Tuple[Camera, float]:
        """Camera that sees ``anchor``'s centroid on its axis at the sampled distance."""
        distance = sample_subject_distance(seed, self.camera_config.subject_distance_m,
                                           self.camera_config.subject_distance_std_m)
        base = self.camera_config.camera()
        offset = base.place_subject(anchor, distance).centroid - anchor.centroid
        shift = np.eye(4)
        shift[:3, 3] = offset
        # Moving the camera by -offset is the same as moving the subject by +offset.
        camera = Camera(base.width, base.height, base.sensor_width, base.focal_length, base.pose @ shift)
        return camera, distance

    def render_frame(self, path: Path, camera: Camera, out_dir: Path) -> Tuple[str, List[str]]:
        mesh = load_mesh(path)
        pair = encode(mesh, camera, self.background_distance, self.resolution)
        pair = replace(pair, epsilon=self.epsilon)
        pair.save(out_dir / path.stem)
        return path.stem, pair.check_invariants()

    def render(self, mesh_dir: Path, out_dir: Path, seed: Optional[int] = 0) -> RenderSummary:
        frames = mesh_files(mesh_dir)
        if not frames:
            raise ValueError(f"No .obj or .ply frames in {mesh_dir}")
        if len(frames) > self.max_frames:
            logger.warning(f"Sequence has {len(frames)} frames; rendering the first {self.max_frames}")
            frames = frames[:self.max_frames]
        elif len(frames) < self.max_frames:
            logger.info(f"Sequence has {len(frames)} frames, fewer than the usual {self.max_frames}")

        # The first readable frame fixes the camera for the whole sequence.
        skipped: List[Tuple[str, str]] = []
        anchor = None
        for path in frames:
            try:
                anchor = load_mesh(path)
                break
            except (FileFormatError, ValueError, OSError) as e:
                logger.warning(f"Skipping unreadable frame {path.name}: {e}")
                skipped.append((path.name, str(e)))
        if anchor is None:
            raise ValueError(f"No readable frame in {mesh_dir}")

        camera, distance = self.place_camera(anchor, seed)
        summary = RenderSummary(distance, camera, skipped=skipped)
        todo = [p for p in frames if p.name not in {name for name, _ in skipped}]
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        logger.info(f"Rendering {len(todo)} frames at subject distance {distance:.3f} m")

        results = {}
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            future_to_frame = {executor.submit(self.render_frame, p, camera, out_dir): p for p in todo}
            with Progress(
                SpinnerColumn(),
                TextColumn("[progress.description]{task.description}"),
                BarColumn(),
                TextColumn("[progress.percentage]{task.percentage:>3.0f}%"),
                TimeElapsedColumn(),
                console=console,
                disable=not self.show_progress,
            ) as progress:
                task = progress.add_task(f"[cyan]Rendering {Path(mesh_dir).name}", total=len(todo))
                for future in as_completed(future_to_frame):
                    path = future_to_frame[future]
                    if self.shutdown_event.is_set():
                        for pending in future_to_frame:
                            pending.cancel()
                        raise RuntimeError("Rendering interrupted")
                    try:
                        results[path.name] = future.result()
                    except (FileFormatError, ValueError, OSError, EncodeError) as e:
                        logger.warning(f"Skipping frame {path.name}: {e}")
                        summary.skipped.append((path.name, str(e)))
                    progress.update(task, advance=1)

        for path in todo:
            if path.name not in results:
                continue
            stem, problems = results[path.name]
            summary.written.append(stem)
            if problems:
                logger.error(f"Frame {stem} violates mould invariants: {'; '.join(problems)}")
                summary.invalid.append((stem, problems))
        summary.skipped.sort()

        with open(out_dir / SEQUENCE_FILE, 'w') as f:
            json.dump(summary.to_dict(seed), f, indent=2, sort_keys=True)
        return summary
