"""Point-cloud file ingestion and export.

ASCII PLY is the canonical interchange format (diff-able, exact at 9
significant digits); binary little-endian PLY is read-only. OBJ and plain
xyz text are vertex-only. ``shapenet_pts_seg`` pairs a whitespace ``.pts``
file with a sibling ``.seg`` file holding one integer label per line.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import LabelMap, PointCloud, canonicalize_labels

FORMATS = ("ply_ascii", "ply_binary_le", "obj_vertices", "xyz_text", "shapenet_pts_seg")

LABEL_PROPERTY_NAMES = ("label", "part", "seg", "class")

# 12-color qualitative palette used for label export, cycled by label value
PALETTE = np.array(
    [
        (230, 25, 75),
        (60, 180, 75),
        (255, 225, 25),
        (0, 130, 200),
        (245, 130, 48),
        (145, 30, 180),
        (70, 240, 240),
        (240, 50, 230),
        (210, 245, 60),
        (0, 128, 128),
        (220, 190, 255),
        (170, 110, 40),
    ],
    dtype=np.uint8,
)


class CloudIOError(Exception):
    """Base for file ingestion failures; carries a 1-based line when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class MalformedHeaderError(CloudIOError):
    pass


class CountMismatchError(CloudIOError):
    pass


class NonFiniteValueError(CloudIOError):
    pass


@dataclass(frozen=True)
class LabeledCloud:
    """A cloud with optional ground-truth labels and a display name."""

    cloud: PointCloud
    truth: Optional[LabelMap] = None
    name: str = ""

    def __post_init__(self) -> None:
        if self.truth is not None and len(self.truth) != self.cloud.n:
            raise ValueError(
                f"truth length {len(self.truth)} != point count {self.cloud.n}"
            )


_PLY_TYPES = {
    "char": "i1",
    "int8": "i1",
    "uchar": "u1",
    "uint8": "u1",
    "short": "i2",
    "int16": "i2",
    "ushort": "u2",
    "uint16": "u2",
    "int": "i4",
    "int32": "i4",
    "uint": "u4",
    "uint32": "u4",
    "float": "f4",
    "float32": "f4",
    "double": "f8",
    "float64": "f8",
}


@dataclass
class _PlyElement:
    name: str
    count: int
    properties: list[tuple[str, str]]  # (name, type) — type "list:<count>:<item>" for lists


def _parse_ply_header(raw: bytes):
    lines = []
    offset = 0
    while True:
        end = raw.find(b"\n", offset)
        if end < 0:
            raise MalformedHeaderError("no end_header found")
        line = raw[offset : end + 1]
        offset = end + 1
        lines.append(line.decode("ascii", errors="replace").strip())
        if lines[-1] == "end_header":
            break
        if len(lines) > 1000:
            raise MalformedHeaderError("header too long or unterminated")

    if not lines or lines[0] != "ply":
        raise MalformedHeaderError("missing 'ply' magic", line=1)

    fmt = None
    elements: list[_PlyElement] = []
    for i, line in enumerate(lines[1:-1], start=2):
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        parts = line.split()
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                raise MalformedHeaderError(f"unsupported format {line!r}", line=i)
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise MalformedHeaderError(f"bad element line {line!r}", line=i)
            try:
                count = int(parts[2])
            except ValueError:
                raise MalformedHeaderError(f"bad element count {line!r}", line=i)
            elements.append(_PlyElement(parts[1], count, []))
        elif parts[0] == "property":
            if not elements:
                raise MalformedHeaderError("property before any element", line=i)
            if parts[1] == "list":
                if len(parts) != 5:
                    raise MalformedHeaderError(f"bad list property {line!r}", line=i)
                elements[-1].properties.append(
                    (parts[4], f"list:{parts[2]}:{parts[3]}")
                )
            else:
                if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                    raise MalformedHeaderError(f"bad property line {line!r}", line=i)
                elements[-1].properties.append((parts[2], parts[1]))
    if fmt is None:
        raise MalformedHeaderError("header has no format line")
    return fmt, elements, offset, len(lines)


def _extract_vertex_columns(element: _PlyElement, table: dict[str, np.ndarray], path):
    names = {name for name, _ in element.properties}
    for coord in ("x", "y", "z"):
        if coord not in names:
            raise MalformedHeaderError(f"{path}: vertex element lacks property '{coord}'")
    positions = np.stack([table["x"], table["y"], table["z"]], axis=1).astype(np.float64)
    if not np.isfinite(positions).all():
        bad = int(np.flatnonzero(~np.isfinite(positions).all(axis=1))[0])
        raise NonFiniteValueError(f"non-finite vertex coordinate at vertex {bad}")
    normals = None
    if {"nx", "ny", "nz"} <= names:
        normals = np.stack([table["nx"], table["ny"], table["nz"]], axis=1).astype(
            np.float64
        )
    labels = None
    for candidate in LABEL_PROPERTY_NAMES:
        if candidate in names:
            labels = table[candidate].astype(np.int64)
            break
    return positions, normals, labels


def _read_ply(path: Path) -> LabeledCloud:
    raw = path.read_bytes()
    fmt, elements, body_offset, header_lines = _parse_ply_header(raw)
    vertex = next((e for e in elements if e.name == "vertex"), None)
    if vertex is None:
        raise MalformedHeaderError(f"{path}: no vertex element")
    if any(t.startswith("list:") for _, t in vertex.properties):
        raise MalformedHeaderError(f"{path}: list properties on vertices unsupported")

    if fmt == "ascii":
        text_rows = raw[body_offset:].decode("ascii", errors="replace").splitlines()
        row_cursor = 0
        table: dict[str, np.ndarray] = {}
        for element in elements:
            if element.name != "vertex":
                row_cursor += element.count
                continue
            values = np.empty((element.count, len(element.properties)), dtype=np.float64)
            for r in range(element.count):
                line_no = header_lines + row_cursor + r + 1
                if row_cursor + r >= len(text_rows):
                    raise CountMismatchError(
                        f"{path}: expected {element.count} vertex rows, file ended early",
                        line=line_no,
                    )
                tokens = text_rows[row_cursor + r].split()
                if len(tokens) < len(element.properties):
                    raise CountMismatchError(
                        f"{path}: vertex row has {len(tokens)} values, "
                        f"expected {len(element.properties)}",
                        line=line_no,
                    )
                try:
                    values[r] = [float(t) for t in tokens[: len(element.properties)]]
                except ValueError:
                    raise CountMismatchError(
                        f"{path}: unparseable vertex row", line=line_no
                    )
            for c, (name, _) in enumerate(element.properties):
                table[name] = values[:, c]
            row_cursor += element.count
        positions, normals, labels = _extract_vertex_columns(vertex, table, path)
    else:
        body = raw[body_offset:]
        cursor = 0
        table = {}
        for element in elements:
            has_list = any(t.startswith("list:") for _, t in element.properties)
            if has_list:
                for _ in range(element.count):
                    for _, ptype in element.properties:
                        if ptype.startswith("list:"):
                            _, count_t, item_t = ptype.split(":")
                            count_dtype = np.dtype("<" + _PLY_TYPES[count_t])
                            m = int(
                                np.frombuffer(
                                    body, dtype=count_dtype, count=1, offset=cursor
                                )[0]
                            )
                            cursor += count_dtype.itemsize
                            cursor += m * np.dtype(_PLY_TYPES[item_t]).itemsize
                        else:
                            cursor += np.dtype(_PLY_TYPES[ptype]).itemsize
                continue
            dtype = np.dtype(
                [(name, "<" + _PLY_TYPES[t]) for name, t in element.properties]
            )
            nbytes = dtype.itemsize * element.count
            if cursor + nbytes > len(body):
                raise CountMismatchError(
                    f"{path}: binary payload too short for element '{element.name}'"
                )
            block = np.frombuffer(body, dtype=dtype, count=element.count, offset=cursor)
            cursor += nbytes
            if element.name == "vertex":
                for name, _ in element.properties:
                    table[name] = np.array(block[name])
        positions, normals, labels = _extract_vertex_columns(vertex, table, path)

    if normals is not None:
        norms = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = np.where(norms > 0, normals / np.where(norms > 0, norms, 1), normals)
    cloud = PointCloud(positions, normals)
    truth = LabelMap(canonicalize_labels(labels)) if labels is not None else None
    return LabeledCloud(cloud=cloud, truth=truth, name=path.stem)


def _read_obj(path: Path) -> LabeledCloud:
    positions = []
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.startswith("v "):
            continue
        tokens = line.split()
        if len(tokens) < 4:
            raise CountMismatchError(f"{path}: bad vertex line", line=line_no)
        try:
            positions.append([float(t) for t in tokens[1:4]])
        except ValueError:
            raise CountMismatchError(f"{path}: unparseable vertex line", line=line_no)
    if not positions:
        raise MalformedHeaderError(f"{path}: no 'v' lines found")
    arr = np.asarray(positions, dtype=np.float64)
    if not np.isfinite(arr).all():
        bad = int(np.flatnonzero(~np.isfinite(arr).all(axis=1))[0])
        raise NonFiniteValueError(f"{path}: non-finite coordinate at vertex {bad}")
    return LabeledCloud(cloud=PointCloud(arr), name=path.stem)


def _read_xyz(path: Path) -> LabeledCloud:
    rows = []
    width = None
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        if len(tokens) not in (3, 6):
            raise CountMismatchError(
                f"{path}: expected 3 or 6 columns, got {len(tokens)}", line=line_no
            )
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise CountMismatchError(f"{path}: inconsistent column count", line=line_no)
        try:
            rows.append([float(t) for t in tokens])
        except ValueError:
            raise CountMismatchError(f"{path}: unparseable row", line=line_no)
    if not rows:
        raise MalformedHeaderError(f"{path}: empty file")
    arr = np.asarray(rows, dtype=np.float64)
    if not np.isfinite(arr).all():
        bad = int(np.flatnonzero(~np.isfinite(arr).all(axis=1))[0])
        raise NonFiniteValueError(f"{path}: non-finite value at row {bad}")
    normals = arr[:, 3:6] if arr.shape[1] == 6 else None
    return LabeledCloud(cloud=PointCloud(arr[:, :3], normals), name=path.stem)


def _read_shapenet(path: Path) -> LabeledCloud:
    pts = _read_xyz(path)
    seg_path = path.with_suffix(".seg")
    if not seg_path.exists():
        return LabeledCloud(cloud=pts.cloud, name=path.stem)
    labels = []
    for line_no, line in enumerate(seg_path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        try:
            labels.append(int(stripped))
        except ValueError:
            raise CountMismatchError(f"{seg_path}: unparseable label", line=line_no)
    if len(labels) != pts.cloud.n:
        raise CountMismatchError(
            f"{seg_path}: {len(labels)} labels for {pts.cloud.n} points"
        )
    truth = LabelMap(canonicalize_labels(np.asarray(labels, dtype=np.int64)))
    return LabeledCloud(cloud=pts.cloud, truth=truth, name=path.stem)


def _sniff_ply_format(path: Path) -> str:
    head = path.read_bytes()[:512]
    return "ply_binary_le" if b"binary_little_endian" in head else "ply_ascii"


def detect_format(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix == ".ply":
        return _sniff_ply_format(path)
    if suffix == ".obj":
        return "obj_vertices"
    if suffix == ".pts":
        return "shapenet_pts_seg"
    if suffix in (".xyz", ".txt"):
        return "xyz_text"
    raise CloudIOError(f"cannot infer format from suffix {suffix!r} ({path})")


def read_cloud(path, format: Optional[str] = None) -> LabeledCloud:
    """Load a cloud (plus normals and labels when the format carries them)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    fmt = format or detect_format(path)
    if fmt in ("ply_ascii", "ply_binary_le"):
        return _read_ply(path)
    if fmt == "obj_vertices":
        return _read_obj(path)
    if fmt == "xyz_text":
        return _read_xyz(path)
    if fmt == "shapenet_pts_seg":
        return _read_shapenet(path)
    raise CloudIOError(f"unknown format {fmt!r}; choose from {FORMATS}")


def write_labeled_ply(path, cloud: PointCloud, labels) -> None:
    """Write an ASCII PLY with positions, optional normals, an integer label
    property, and palette colors; round-trips through :func:`read_cloud`."""
    arr = labels.labels if isinstance(labels, LabelMap) else np.asarray(labels)
    if arr.shape[0] != cloud.n:
        raise ValueError(f"labels length {arr.shape[0]} != point count {cloud.n}")
    path = Path(path)
    colors = PALETTE[arr % len(PALETTE)]
    has_normals = cloud.normals is not None
    header = ["ply", "format ascii 1.0", f"element vertex {cloud.n}"]
    header += [f"property double {c}" for c in ("x", "y", "z")]
    if has_normals:
        header += [f"property double {c}" for c in ("nx", "ny", "nz")]
    header += ["property int label"]
    header += [f"property uchar {c}" for c in ("red", "green", "blue")]
    header += ["end_header"]

    lines = [*header]
    for i in range(cloud.n):
        fields = [f"{v:.9g}" for v in cloud.positions[i]]
        if has_normals:
            fields += [f"{v:.9g}" for v in cloud.normals[i]]
        fields.append(str(int(arr[i])))
        fields += [str(int(c)) for c in colors[i]]
        lines.append(" ".join(fields))
    path.write_text("\n".join(lines) + "\n")


def downsample_uniform(
    cloud: PointCloud,
    target_n: int,
    rng_seed: int,
    truth: Optional[LabelMap] = None,
    name: str = "downsampled",
) -> LabeledCloud:
    """Seeded uniform sample without replacement; truth carried by index.

    Selected indices are kept in ascending order, so ``target_n == N`` is the
    identity. Truth labels are canonically renumbered in case a class vanishes.
    """
    if target_n > cloud.n:
        raise ValueError(f"target_n {target_n} exceeds point count {cloud.n}")
    if target_n < 1:
        raise ValueError("target_n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    keep = np.sort(rng.choice(cloud.n, size=target_n, replace=False))
    positions = cloud.positions[keep]
    normals = cloud.normals[keep] if cloud.normals is not None else None
    new_truth = (
        LabelMap(canonicalize_labels(truth.labels[keep])) if truth is not None else None
    )
    return LabeledCloud(cloud=PointCloud(positions, normals), truth=new_truth, name=name)
