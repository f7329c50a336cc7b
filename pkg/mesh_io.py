import logging
import re
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from geometry import Mesh, PointCloud

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
PLY_FORMATS = {"ascii": None, "binary_little_endian": "<", "binary_big_endian": ">"}


class FileFormatError(ValueError):
    """Raised for unreadable, unsupported or malformed mesh, PLY and PFM files."""


def _require_file(path: PathLike) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    return path


def load_mesh(path: PathLike) -> Mesh:
    """Read an OBJ or PLY (ASCII or binary) triangle mesh in meters."""
    path = _require_file(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        vertices, triangles = _read_obj(path)
    elif suffix == ".ply":
        vertices, triangles = _read_ply_mesh(path)
    else:
        raise FileFormatError(f"Unsupported mesh format '{suffix}' for {path} (expected .obj or .ply)")

    if len(triangles) and (triangles.min() < 0 or triangles.max() >= len(vertices)):
        raise FileFormatError(f"{path}: face references a vertex that does not exist")
    mesh = Mesh(vertices, triangles)
    logger.info(f"Loaded {path.name}: {len(mesh.vertices)} vertices, {mesh.triangle_count} triangles"
                f" ({mesh.dropped_degenerate} degenerate dropped)")
    return mesh


def _fan(face: List[int]) -> List[Tuple[int, int, int]]:
    return [(face[0], face[k], face[k + 1]) for k in range(1, len(face) - 1)]


def _read_obj(path: Path) -> Tuple[np.ndarray, np.ndarray]:
    vertices: List[List[float]] = []
    triangles: List[Tuple[int, int, int]] = []
    try:
        text = path.read_text(errors="replace")
    except OSError as e:
        raise FileFormatError(f"Cannot read {path}: {e}") from e

    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        if parts[0] == "v":
            try:
                vertices.append([float(x) for x in parts[1:4]])
            except ValueError as e:
                raise FileFormatError(f"{path}:{lineno}: bad vertex record") from e
            if len(vertices[-1]) != 3:
                raise FileFormatError(f"{path}:{lineno}: vertex needs three coordinates")
        elif parts[0] == "f":
            face = []
            for token in parts[1:]:
                try:
                    index = int(token.split("/")[0])
                except ValueError as e:
                    raise FileFormatError(f"{path}:{lineno}: bad face index '{token}'") from e
                # OBJ indices are 1-based; negative indices count back from the last vertex.
                face.append(len(vertices) + index if index < 0 else index - 1)
            if len(face) < 3:
                raise FileFormatError(f"{path}:{lineno}: face with {len(face)} vertices cannot be triangulated")
            triangles.extend(_fan(face))

    return np.array(vertices, dtype=np.float64).reshape(-1, 3), np.array(triangles, dtype=np.int64).reshape(-1, 3)


def _parse_ply_header(handle) -> Tuple[str, List[Tuple[str, int, list]]]:
    if handle.readline().strip() != b"ply":
        raise FileFormatError("Not a PLY file (missing 'ply' magic)")
    fmt = None
    elements: List[Tuple[str, int, list]] = []
    while True:
        line = handle.readline()
        if not line:
            raise FileFormatError("PLY header is missing 'end_header'")
        parts = line.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "end_header":
            break
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in PLY_FORMATS:
                raise FileFormatError(f"Unsupported PLY format line: {line!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise FileFormatError("PLY property declared before any element")
            try:
                if parts[1] == "list":
                    elements[-1][2].append(("list", PLY_TYPES[parts[2]], PLY_TYPES[parts[3]], parts[4]))
                else:
                    elements[-1][2].append(("scalar", PLY_TYPES[parts[1]], parts[2]))
            except (KeyError, IndexError) as e:
                raise FileFormatError(f"Bad PLY property line: {line!r}") from e
    if fmt is None:
        raise FileFormatError("PLY header has no format line")
    return fmt, elements


def _read_ply_ascii(body: bytes, elements) -> Dict[str, Dict[str, list]]:
    tokens = iter(body.split())
    data: Dict[str, Dict[str, list]] = {}
    for name, count, props in elements:
        columns: Dict[str, list] = {p[-1]: [] for p in props}
        for _ in range(count):
            for prop in props:
                if prop[0] == "list":
                    n = int(next(tokens))
                    columns[prop[-1]].append([float(next(tokens)) for _ in range(n)])
                else:
                    columns[prop[-1]].append(float(next(tokens)))
        data[name] = columns
    return data


def _read_ply_binary(body: bytes, elements, endian: str) -> Dict[str, Dict[str, list]]:
    data: Dict[str, Dict[str, list]] = {}
    offset = 0
    for name, count, props in elements:
        if all(p[0] == "scalar" for p in props):
            dtype = np.dtype([(p[2], endian + p[1]) for p in props])
            table = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
            offset += dtype.itemsize * count
            data[name] = {p[2]: table[p[2]].astype(np.float64) for p in props}
            continue

        # Fast path for the common all-triangle face list.
        if len(props) == 1 and count:
            _, count_type, item_type, prop_name = props[0]
            row = np.dtype([("n", endian + count_type), ("items", endian + item_type, (3,))])
            if offset + row.itemsize * count <= len(body):
                table = np.frombuffer(body, dtype=row, count=count, offset=offset)
                if np.all(table["n"] == 3):
                    offset += row.itemsize * count
                    data[name] = {prop_name: table["items"].astype(np.int64)}
                    continue

        columns: Dict[str, list] = {p[-1]: [] for p in props}
        for _ in range(count):
            for prop in props:
                if prop[0] == "list":
                    count_dtype = np.dtype(endian + prop[1])
                    n = int(np.frombuffer(body, dtype=count_dtype, count=1, offset=offset)[0])
                    offset += count_dtype.itemsize
                    item_dtype = np.dtype(endian + prop[2])
                    columns[prop[-1]].append(np.frombuffer(body, dtype=item_dtype, count=n, offset=offset).tolist())
                    offset += item_dtype.itemsize * n
                else:
                    dtype = np.dtype(endian + prop[1])
                    columns[prop[-1]].append(float(np.frombuffer(body, dtype=dtype, count=1, offset=offset)[0]))
                    offset += dtype.itemsize
        data[name] = columns
    return data


def read_ply(path: PathLike) -> Dict[str, Dict[str, list]]:
    """Parse any ASCII/binary PLY into ``{element: {property: values}}``."""
    path = _require_file(path)
    with open(path, "rb") as handle:
        try:
            fmt, elements = _parse_ply_header(handle)
        except FileFormatError as e:
            raise FileFormatError(f"{path}: {e}") from e
        body = handle.read()
    try:
        if fmt == "ascii":
            return _read_ply_ascii(body, elements)
        return _read_ply_binary(body, elements, PLY_FORMATS[fmt])
    except (StopIteration, ValueError) as e:
        raise FileFormatError(f"{path}: truncated or corrupt PLY body") from e


def _read_ply_mesh(path: Path) -> Tuple[np.ndarray, np.ndarray]:
    data = read_ply(path)
    vertex = data.get("vertex")
    if vertex is None or not all(axis in vertex for axis in "xyz"):
        raise FileFormatError(f"{path}: PLY has no vertex x/y/z properties")
    vertices = np.stack([np.asarray(vertex[a], dtype=np.float64) for a in "xyz"], axis=1)

    face = data.get("face", {})
    faces = face.get("vertex_indices", face.get("vertex_index"))
    if faces is None:
        raise FileFormatError(f"{path}: PLY has no face vertex_indices list")
    if isinstance(faces, np.ndarray):
        return vertices, faces
    triangles: List[Tuple[int, int, int]] = []
    for number, indices in enumerate(faces):
        indices = [int(i) for i in indices]
        if len(indices) < 3:
            raise FileFormatError(f"{path}: face {number} with {len(indices)} vertices cannot be triangulated")
        triangles.extend(_fan(indices))
    return vertices, np.array(triangles, dtype=np.int64).reshape(-1, 3)


def write_mesh(path: PathLike, mesh: Mesh) -> None:
    """Write ``mesh`` as OBJ or binary PLY, chosen by suffix."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
        path.write_text("\n".join(lines) + "\n")
    elif suffix == ".ply":
        faces = np.zeros(mesh.triangle_count, dtype=np.dtype([("n", "u1"), ("items", "<i4", (3,))]))
        faces["n"] = 3
        faces["items"] = mesh.triangles
        header = ["ply", "format binary_little_endian 1.0",
                  f"element vertex {len(mesh.vertices)}",
                  "property double x", "property double y", "property double z",
                  f"element face {mesh.triangle_count}",
                  "property list uchar int vertex_indices", "end_header"]
        with open(path, "wb") as handle:
            handle.write(("\n".join(header) + "\n").encode("ascii"))
            handle.write(mesh.vertices.astype("<f8").tobytes())
            handle.write(faces.tobytes())
    else:
        raise FileFormatError(f"Unsupported mesh format '{suffix}' for {path} (expected .obj or .ply)")
    logger.info(f"Wrote {mesh!r} to {path}")


def write_point_cloud_ply(path: PathLike, cloud: PointCloud, binary: bool = True) -> None:
    """Write x,y,z[,nx,ny,nz],provenance (uchar: 0 visible, 1 hidden)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if cloud.normals is not None:
        fields += [("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4")]
    fields.append(("provenance", "u1"))

    table = np.zeros(len(cloud), dtype=np.dtype(fields))
    for i, axis in enumerate("xyz"):
        table[axis] = cloud.points[:, i]
        if cloud.normals is not None:
            table["n" + axis] = cloud.normals[:, i]
    table["provenance"] = cloud.provenance

    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              "comment provenance 0=visible 1=hidden", f"element vertex {len(cloud)}"]
    header += [f"property {'uchar' if name == 'provenance' else 'float'} {name}" for name, _ in fields]
    header.append("end_header")

    with open(path, "wb") as handle:
        handle.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            handle.write(table.tobytes())
        else:
            for row in table:
                handle.write((" ".join(repr(x.item()) for x in row) + "\n").encode("ascii"))
    logger.info(f"Wrote {len(cloud)} points to {path}")


def read_point_cloud_ply(path: PathLike) -> PointCloud:
    vertex = read_ply(path).get("vertex")
    if vertex is None:
        raise FileFormatError(f"{path}: PLY has no vertex element")
    points = np.stack([np.asarray(vertex[a], dtype=np.float64) for a in "xyz"], axis=1).reshape(-1, 3)
    normals = None
    if all(k in vertex for k in ("nx", "ny", "nz")):
        normals = np.stack([np.asarray(vertex[k], dtype=np.float64) for k in ("nx", "ny", "nz")], axis=1)
        # float32 storage; renormalise so the unit-length check holds
        lengths = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = normals / np.where(lengths > 0, lengths, 1.0)
    provenance = vertex.get("provenance")
    return PointCloud(points, normals, None if provenance is None else np.asarray(provenance))


def write_pfm(path: PathLike, image: np.ndarray) -> None:
    """Single-channel little-endian PFM (scale -1.0); rows are stored bottom to top."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"PFM writer expects a 2-D image, got shape {image.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(b"Pf\n")
        handle.write(b"%d %d\n" % (image.shape[1], image.shape[0]))
        handle.write(b"-1.0\n")
        handle.write(np.flipud(image).astype("<f4").tobytes())


def read_pfm(path: PathLike) -> np.ndarray:
    """Read a PFM image as float32, top row first."""
    path = _require_file(path)
    with open(path, "rb") as handle:
        header = handle.readline().rstrip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise FileFormatError(f"{path}: not a PFM file")

        dims = re.match(rb"^\s*(\d+)\s+(\d+)\s*$", handle.readline())
        if not dims:
            raise FileFormatError(f"{path}: malformed PFM header")
        width, height = int(dims.group(1)), int(dims.group(2))
        try:
            scale = float(handle.readline().decode("ascii").strip())
        except ValueError as e:
            raise FileFormatError(f"{path}: malformed PFM scale") from e
        endian = "<" if scale < 0 else ">"
        body = handle.read()
    if len(body) % 4:
        raise FileFormatError(f"{path}: PFM body is not a whole number of float32 samples")
    data = np.frombuffer(body, dtype=endian + "f4")

    expected = width * height * channels
    if data.size != expected:
        raise FileFormatError(f"{path}: expected {expected} samples, found {data.size}")
    shape = (height, width, 3) if channels == 3 else (height, width)
    return np.flipud(data.reshape(shape)).astype(np.float32)
