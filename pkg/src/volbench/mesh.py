"""OBJ / PLY loading, surface sampling and PLY point export."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from volbench.errors import VolbenchError
from volbench.geometry import PointCloud, make_rng


class MeshError(VolbenchError):
    reason = "prediction-unreadable"


class DegenerateMeshError(VolbenchError):
    reason = "prediction-degenerate"


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    def areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _fan(poly: list[int]) -> list[tuple[int, int, int]]:
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def load_obj(path) -> TriangleMesh:
    vertices: list[tuple[float, float, float]] = []
    triangles: list[tuple[int, int, int]] = []
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                try:
                    vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
                except (IndexError, ValueError):
                    raise MeshError(f"{path}:{lineno}: malformed vertex record") from None
            elif tag == "f":
                poly = []
                for tok in parts[1:]:
                    ref = tok.split("/")[0]
                    try:
                        i = int(ref)
                    except ValueError:
                        raise MeshError(f"{path}:{lineno}: malformed face index {tok!r}") from None
                    if i == 0:
                        raise MeshError(f"{path}:{lineno}: OBJ indices are 1-based")
                    i = i - 1 if i > 0 else len(vertices) + i
                    if not 0 <= i < len(vertices):
                        raise MeshError(f"{path}:{lineno}: face index {ref} out of range")
                    poly.append(i)
                if len(poly) < 3:
                    raise MeshError(f"{path}:{lineno}: face with fewer than 3 vertices")
                triangles.extend(_fan(poly))
            # vt, vn, g, o, s, usemtl, mtllib, l, p: geometry-irrelevant
    if not vertices:
        raise MeshError(f"{path}: no vertices")
    return TriangleMesh(np.array(vertices), np.array(triangles, dtype=np.int64).reshape(-1, 3))


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


@dataclass
class _PlyElement:
    name: str
    count: int
    props: list  # (name, dtype) or (name, count_dtype, item_dtype)


def _ply_type(name: str) -> str:
    try:
        return PLY_TYPES[name]
    except KeyError:
        raise MeshError(f"unknown PLY property type {name!r}") from None


def _parse_ply_header(fh) -> tuple[str, list[_PlyElement]]:
    if fh.readline().strip() != b"ply":
        raise MeshError("not a PLY file")
    fmt = None
    elements: list[_PlyElement] = []
    while True:
        line = fh.readline()
        if not line:
            raise MeshError("PLY header not terminated")
        parts = line.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "end_header":
            break
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            try:
                elements.append(_PlyElement(parts[1], int(parts[2]), []))
            except (IndexError, ValueError):
                raise MeshError(f"malformed PLY element line {line!r}") from None
        elif parts[0] == "property":
            if not elements:
                raise MeshError("PLY property before any element")
            if parts[1] == "list":
                elements[-1].props.append((parts[4], _ply_type(parts[2]), _ply_type(parts[3])))
            else:
                elements[-1].props.append((parts[2], _ply_type(parts[1])))
    if fmt == "binary_big_endian":
        raise MeshError("big-endian binary PLY is not supported")
    if fmt not in ("ascii", "binary_little_endian"):
        raise MeshError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def _read_ascii_element(lines, el: _PlyElement) -> dict:
    out = {p[0]: [] for p in el.props}
    for _ in range(el.count):
        tokens = next(lines, None)
        if tokens is None:
            raise MeshError(f"PLY ended inside element {el.name!r}")
        tokens = tokens.split()
        pos = 0
        try:
            for prop in el.props:
                if len(prop) == 3:
                    k = int(tokens[pos])
                    out[prop[0]].append([int(x) for x in tokens[pos + 1 : pos + 1 + k]])
                    if len(out[prop[0]][-1]) != k:
                        raise IndexError
                    pos += 1 + k
                else:
                    out[prop[0]].append(float(tokens[pos]))
                    pos += 1
        except (IndexError, ValueError):
            raise MeshError(f"malformed PLY {el.name} record") from None
    return out


def _read_binary_element(buf: bytes, offset: int, el: _PlyElement) -> tuple[dict, int]:
    lists = [p for p in el.props if len(p) == 3]
    if not lists:
        dtype = np.dtype([(p[0], "<" + p[1]) for p in el.props])
        end = offset + dtype.itemsize * el.count
        if end > len(buf):
            raise MeshError(f"PLY ended inside element {el.name!r}")
        arr = np.frombuffer(buf, dtype=dtype, count=el.count, offset=offset)
        return {name: arr[name] for name in dtype.names}, end

    # single list property with a uniform count: one vectorized read
    if len(el.props) == 1 and el.count > 0:
        name, cnt_t, item_t = el.props[0]
        cnt_dt = np.dtype("<" + cnt_t)
        if offset + cnt_dt.itemsize > len(buf):
            raise MeshError(f"PLY ended inside element {el.name!r}")
        k = int(np.frombuffer(buf, dtype=cnt_dt, count=1, offset=offset)[0])
        dtype = np.dtype([("n", cnt_dt), ("idx", "<" + item_t, (k,))])
        end = offset + dtype.itemsize * el.count
        if end <= len(buf):
            arr = np.frombuffer(buf, dtype=dtype, count=el.count, offset=offset)
            if np.all(arr["n"] == k):
                return {name: arr["idx"].reshape(el.count, k)}, end

    out = {p[0]: [] for p in el.props}
    for _ in range(el.count):
        for prop in el.props:
            if len(prop) == 3:
                cnt_dt, item_dt = np.dtype("<" + prop[1]), np.dtype("<" + prop[2])
                if offset + cnt_dt.itemsize > len(buf):
                    raise MeshError(f"PLY ended inside element {el.name!r}")
                k = int(np.frombuffer(buf, dtype=cnt_dt, count=1, offset=offset)[0])
                offset += cnt_dt.itemsize
                if offset + k * item_dt.itemsize > len(buf):
                    raise MeshError(f"PLY ended inside element {el.name!r}")
                out[prop[0]].append(np.frombuffer(buf, dtype=item_dt, count=k, offset=offset).tolist())
                offset += k * item_dt.itemsize
            else:
                dt = np.dtype("<" + prop[1])
                if offset + dt.itemsize > len(buf):
                    raise MeshError(f"PLY ended inside element {el.name!r}")
                out[prop[0]].append(np.frombuffer(buf, dtype=dt, count=1, offset=offset)[0])
                offset += dt.itemsize
    return out, offset


def load_ply(path) -> TriangleMesh | PointCloud:
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh)
        body = fh.read()

    data = {}
    if fmt == "ascii":
        lines = iter(ln for ln in body.decode("ascii", errors="replace").splitlines() if ln.strip())
        for el in elements:
            data[el.name] = _read_ascii_element(lines, el)
    else:
        offset = 0
        for el in elements:
            data[el.name], offset = _read_binary_element(body, offset, el)

    vert = data.get("vertex")
    if vert is None or not all(k in vert for k in "xyz"):
        raise MeshError(f"{path}: PLY has no vertex x/y/z properties")
    vertices = np.column_stack([np.asarray(vert[k], dtype=np.float64) for k in "xyz"])

    face = data.get("face") or {}
    key = next((k for k in ("vertex_indices", "vertex_index") if k in face), None)
    if key is None or len(face[key]) == 0:
        return PointCloud(vertices)
    polys = face[key]
    if isinstance(polys, np.ndarray) and polys.shape[1] == 3:
        tris = polys.astype(np.int64)
    else:
        tris = []
        for poly in polys:
            poly = [int(i) for i in poly]
            if len(poly) < 3:
                raise MeshError(f"{path}: face with fewer than 3 vertices")
            tris.extend(_fan(poly))
        tris = np.array(tris, dtype=np.int64).reshape(-1, 3)
    if tris.min() < 0 or tris.max() >= len(vertices):
        raise MeshError(f"{path}: face index out of range")
    return TriangleMesh(vertices, tris)


def load_mesh(path) -> TriangleMesh | PointCloud:
    """Load an OBJ or PLY file; vertex-only PLY files come back as point clouds."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return load_obj(path)
    if suffix == ".ply":
        return load_ply(path)
    raise MeshError(f"unsupported mesh extension {suffix!r}")


def sample_surface(mesh: TriangleMesh, n: int, seed: int) -> PointCloud:
    """Area-weighted i.i.d. surface samples with folded uniform barycentrics."""
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = mesh.areas() if len(mesh.triangles) else np.zeros(0)
    total = float(areas.sum())
    if not total > 0:
        raise DegenerateMeshError("mesh has zero surface area")
    rng = make_rng(seed)
    tri = rng.choice(len(areas), size=n, p=areas / total)
    uv = rng.random((n, 2))
    flip = uv.sum(axis=1) > 1
    uv[flip] = 1.0 - uv[flip]
    a, b, c = (mesh.vertices[mesh.triangles[tri, i]] for i in range(3))
    pts = a + uv[:, :1] * (b - a) + uv[:, 1:] * (c - a)
    return PointCloud(pts)


def to_point_cloud(obj: TriangleMesh | PointCloud, n: int, seed: int, mode: str = "surface") -> PointCloud:
    if isinstance(obj, PointCloud):
        return obj
    if mode == "vertices":
        used = np.unique(obj.triangles) if len(obj.triangles) else np.arange(len(obj.vertices))
        return PointCloud(obj.vertices[used])
    return sample_surface(obj, n, seed)


def write_ply_points(cloud, path) -> Path:
    """ASCII PLY with float32 x/y/z vertex properties."""
    pts = np.asarray(cloud.points if isinstance(cloud, PointCloud) else cloud, dtype=np.float32).reshape(-1, 3)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = (
        "ply\nformat ascii 1.0\n"
        f"element vertex {len(pts)}\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
    )
    rows = "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist())
    path.write_text(header + rows)
    return path


def write_obj(mesh: TriangleMesh, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    path.write_text("\n".join(lines) + "\n")
    return path
