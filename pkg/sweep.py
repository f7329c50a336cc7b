"""Resolution sweep comparing mould and voxel reconstruction error at matched dimensionality."""

import csv
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
from rich.console import Console
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn
from rich.table import Table

from geometry import Camera, Mesh, PointCloud
from metrics import (DEFAULT_SAMPLES, chamfer, matched_voxel_resolution, representable_floor,
                     sample_surface, vertex_cloud)
from mould import DEFAULT_BACKGROUND_DISTANCE, decode, encode
from voxel import voxel_points, voxelize_surface

console = Console()
logger = logging.getLogger(__name__)

MOULD = "mould"
VOXEL = "voxel"
REPRESENTATIONS = (MOULD, VOXEL)
CSV_FIELDS = ["representation", "N", "D", "chamfer_m", "encode_ms"]
DEFAULT_SUBJECT_DISTANCE = 8.0


def dimensionality(representation: str, resolution: int) -> int:
    if representation == MOULD:
        return 2 * resolution ** 2
    if representation == VOXEL:
        return resolution ** 3
    raise ValueError(f"Unknown representation {representation!r}; expected one of {REPRESENTATIONS}")


@dataclass(frozen=True)
class SweepRow:
    representation: str
    resolution: int
    chamfer: float
    encode_ms: float

    @property
    def dimensionality(self) -> int:
        return dimensionality(self.representation, self.resolution)

    def to_dict(self, timings: bool = False) -> Dict[str, str]:
        return {
            "representation": self.representation,
            "N": str(self.resolution),
            "D": str(self.dimensionality),
            "chamfer_m": f"{self.chamfer:.9f}",
            "encode_ms": f"{self.encode_ms:.3f}" if timings else "",
        }


class SweepReport:
    """Mean Chamfer error per (representation, N), ordered by dimensionality."""

    def __init__(self, rows: Sequence[SweepRow], floor: Optional[float] = None):
        self.rows = sorted(rows, key=lambda r: (r.dimensionality, r.representation, r.resolution))
        self.floor = floor

    def row(self, representation: str, resolution: int) -> Optional[SweepRow]:
        return next((r for r in self.rows if (r.representation, r.resolution) == (representation, resolution)), None)

    def matched_pairs(self) -> List[Tuple[SweepRow, Optional[SweepRow]]]:
        """Each mould row with the voxel row at the smallest N whose N^3 >= 2N^2."""
        return [(r, self.row(VOXEL, matched_voxel_resolution(r.resolution)))
                for r in self.rows if r.representation == MOULD]

    def to_csv(self, stream: TextIO, timings: bool = False) -> None:
        """Write the report; ``encode_ms`` stays empty unless ``timings`` is set."""
        writer = csv.DictWriter(stream, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow(row.to_dict(timings))

    def write_csv(self, path: Union[str, Path], timings: bool = False) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            self.to_csv(f, timings)
        logger.info(f"Wrote sweep report with {len(self.rows)} rows to {path}")
        return path

    def render_table(self) -> Table:
        table = Table(title="Reconstruction error by dimensionality", show_header=True, header_style="bold magenta")
        table.add_column("Representation", style="cyan", no_wrap=True)
        table.add_column("N", justify="right")
        table.add_column("D", justify="right")
        table.add_column("Chamfer (mm)", justify="right")
        table.add_column("Encode (ms)", justify="right")
        for row in self.rows:
            table.add_row(row.representation, str(row.resolution), str(row.dimensionality),
                          f"{row.chamfer * 1000:.3f}", f"{row.encode_ms:.1f}")
        if self.floor is not None:
            table.caption = f"Two-hit encoding floor: {self.floor * 1000:.3f} mm"
        return table


class SweepRunner:
    """Runs every (mesh, representation, N) task on a thread pool."""

    def __init__(self, camera: Camera, background_distance: float = DEFAULT_BACKGROUND_DISTANCE,
                 samples: int = DEFAULT_SAMPLES, seed: int = 0, subject_distance: float = DEFAULT_SUBJECT_DISTANCE,
                 vertices_only: bool = False, squared: bool = False, max_workers: int = 1,
                 shutdown_event: Optional[threading.Event] = None, show_progress: bool = False):
        self.camera = camera
        self.background_distance = background_distance
        self.samples = samples
        self.seed = seed
        self.subject_distance = subject_distance
        self.vertices_only = vertices_only
        self.squared = squared
        self.max_workers = max(1, max_workers)
        self.shutdown_event = shutdown_event or threading.Event()
        self.show_progress = show_progress

    def prepare(self, meshes: Sequence[Mesh]) -> List[Tuple[Mesh, Mesh, PointCloud]]:
        """Place every mesh in front of the camera and draw its ground truth."""
        prepared = []
        for index, mesh in enumerate(meshes):
            placed = self.camera.place_subject(mesh, self.subject_distance)
            local = placed.transformed(self.camera.pose)
            if self.vertices_only:
                truth = vertex_cloud(local)
            else:
                truth = sample_surface(local, self.samples, self.seed + index)
            prepared.append((placed, local, truth))
        return prepared

    def run_task(self, placed: Mesh, local: Mesh, truth: PointCloud, representation: str, resolution: int) -> Tuple[float, float]:
        """Chamfer error and encode time in milliseconds for one task."""
        start = time.perf_counter()
        if representation == MOULD:
            pair = encode(placed, self.camera, self.background_distance, resolution)
            elapsed = (time.perf_counter() - start) * 1000.0
            cloud = decode(pair)
        else:
            grid = voxelize_surface(local, resolution)
            elapsed = (time.perf_counter() - start) * 1000.0
            cloud = voxel_points(grid)
        if cloud.is_empty:
            logger.warning(f"{representation} N={resolution} decoded to an empty cloud; error is infinite")
            return math.inf, elapsed
        return chamfer(truth, cloud, squared=self.squared), elapsed

    def run(self, meshes: Sequence[Mesh], ns_mould: Sequence[int], ns_voxel: Sequence[int],
            floor: bool = False) -> SweepReport:
        if not meshes:
            raise ValueError("Sweep needs at least one mesh")
        prepared = self.prepare(meshes)
        tasks = [(rep, n) for rep, ns in ((MOULD, ns_mould), (VOXEL, ns_voxel)) for n in ns]
        results: Dict[Tuple[str, int, int], Tuple[float, float]] = {}

        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            future_to_task = {}
            for index, (placed, local, truth) in enumerate(prepared):
                for rep, n in tasks:
                    future = executor.submit(self.run_task, placed, local, truth, rep, n)
                    future_to_task[future] = (rep, n, index)

            with Progress(
                SpinnerColumn(),
                TextColumn("[progress.description]{task.description}"),
                BarColumn(),
                TextColumn("[progress.percentage]{task.percentage:>3.0f}%"),
                TimeElapsedColumn(),
                console=console,
                disable=not self.show_progress,
            ) as progress:
                task = progress.add_task(f"[cyan]Sweeping {len(meshes)} meshes", total=len(future_to_task))
                for future in as_completed(future_to_task):
                    if self.shutdown_event.is_set():
                        for pending in future_to_task:
                            pending.cancel()
                        raise RuntimeError("Sweep interrupted")
                    rep, n, index = future_to_task[future]
                    results[(rep, n, index)] = future.result()
                    logger.debug(f"Mesh {index} {rep} N={n}: chamfer {results[(rep, n, index)][0]:.6f} m")
                    progress.update(task, advance=1)

        # Averaged in mesh order so the result does not depend on completion order.
        rows = []
        for rep, n in tasks:
            errors = [results[(rep, n, i)][0] for i in range(len(prepared))]
            times = [results[(rep, n, i)][1] for i in range(len(prepared))]
            rows.append(SweepRow(rep, n, float(np.mean(errors)), float(np.mean(times))))
            logger.info(f"{rep} N={n}: mean chamfer {rows[-1].chamfer:.6f} m over {len(prepared)} meshes")

        floor_value = None
        if floor:
            floor_value = float(np.mean([
                representable_floor(placed, self.camera, self.samples, self.seed + i)
                for i, (placed, _, _) in enumerate(prepared)
            ]))
        return SweepReport(rows, floor_value)


def run_sweep(meshes: Sequence[Mesh], camera: Camera, ns_mould: Sequence[int], ns_voxel: Sequence[int],
              samples: int = DEFAULT_SAMPLES, seed: int = 0, **options) -> SweepReport:
    """Mean Chamfer error of both representations over ``meshes`` at every requested N.

    Extra keyword options are passed to ``SweepRunner``; ``floor=True`` also measures
    the mean two-hit encoding floor.
    """
    floor = options.pop("floor", False)
    runner = SweepRunner(camera, samples=samples, seed=seed, **options)
    return runner.run(meshes, ns_mould, ns_voxel, floor=floor)
