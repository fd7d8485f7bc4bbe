"""Plain-text artifacts: checksummed CSV tables, mesh archives and legacy VTK."""
import csv
import hashlib
import io
import os

import numpy as np

from .errors import CacheCorruption

HEADER_PREFIX = "# memdarcy"


def fmt(x) -> str:
    """Round-trip exact text form of a number."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_table(path, meta, columns, rows):
    """Write a CSV whose first line carries metadata and a sha256 of the body."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])
    body = buf.getvalue()
    digest = hashlib.sha256(body.encode()).hexdigest()
    items = " ".join(f"{k}={v}" for k, v in meta.items())
    with open(path, "w", newline="") as fh:
        fh.write(f"{HEADER_PREFIX} {items} sha256={digest}\n")
        fh.write(body)


def read_table(path, expect=None):
    """Read a table written by :func:`write_table`; returns (meta, columns, rows as strings).

    ``expect`` maps metadata keys to required values.
    """
    with open(path, newline="") as fh:
        first = fh.readline()
        body = fh.read()
    if not first.startswith(HEADER_PREFIX):
        raise CacheCorruption(f"{path}: missing metadata header")
    meta = dict(item.split("=", 1) for item in first[len(HEADER_PREFIX):].split())
    if hashlib.sha256(body.encode()).hexdigest() != meta.get("sha256"):
        raise CacheCorruption(f"{path}: checksum mismatch")
    for k, v in (expect or {}).items():
        if meta.get(k) != str(v):
            raise CacheCorruption(f"{path}: {k}={meta.get(k)} does not match expected {v}")
    reader = csv.reader(io.StringIO(body))
    columns = next(reader)
    return meta, columns, [row for row in reader]


def save_mesh_archive(directory, vertices, triangles, tags):
    """Store a mesh as vertices.csv, triangles.csv and tags.csv (tag name, vertex id)."""
    os.makedirs(directory, exist_ok=True)
    write_table(os.path.join(directory, "vertices.csv"), {}, ["x", "y"], vertices)
    write_table(os.path.join(directory, "triangles.csv"), {}, ["v0", "v1", "v2"], triangles)
    rows = [(name, int(i)) for name, ids in tags.items() for i in np.asarray(ids).ravel()]
    write_table(os.path.join(directory, "tags.csv"), {}, ["tag", "vertex"], rows)


def load_mesh_archive(directory):
    _, _, vrows = read_table(os.path.join(directory, "vertices.csv"))
    _, _, trows = read_table(os.path.join(directory, "triangles.csv"))
    _, _, grows = read_table(os.path.join(directory, "tags.csv"))
    vertices = np.array(vrows, dtype=float).reshape(-1, 2)
    triangles = np.array(trows, dtype=np.int64).reshape(-1, 3)
    tags = {}
    for name, i in grows:
        tags.setdefault(name, []).append(int(i))
    return vertices, triangles, {k: np.array(v, dtype=np.int64) for k, v in tags.items()}


def write_vtk(path, vertices, triangles, point_data=None, cell_data=None, title="memdarcy"):
    """Legacy ASCII VTK unstructured grid of triangles (VTK cell type 5)."""
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(vertices)} double"]
    lines += [f"{fmt(x)} {fmt(y)} 0.0" for x, y in vertices]
    lines.append(f"CELLS {len(triangles)} {4 * len(triangles)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in triangles]
    lines.append(f"CELL_TYPES {len(triangles)}")
    lines += ["5"] * len(triangles)

    def block(data, count):
        out = []
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.ndim == 1:
                out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                out += [fmt(v) for v in arr]
            else:
                out.append(f"VECTORS {name} double")
                out += [f"{fmt(a)} {fmt(b)} 0.0" for a, b in arr[:, :2]]
        return out

    if point_data:
        lines.append(f"POINT_DATA {len(vertices)}")
        lines += block(point_data, len(vertices))
    if cell_data:
        lines.append(f"CELL_DATA {len(triangles)}")
        lines += block(cell_data, len(triangles))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
