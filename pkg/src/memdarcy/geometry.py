"""Periodic reference cell, its perforation and the epsilon-tiled pore space.

The cell is Y = (0, 1)^2 with one disk-shaped solid inclusion. Meshes are
boundary fitted (the disk is replaced by an inscribed polygon) and carry the
left/right and bottom/top vertex identifications needed for periodic spaces.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math
import os

import numpy as np
import triangle
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DegenerateInclusion, MarginViolation, MeshQualityFailure, SeamMismatch
from .io import save_mesh_archive, write_vtk

MIN_ANGLE_DEG = 20.0
DEFAULT_MARGIN = 0.05


@dataclass(frozen=True)
class CellGeometry:
    inclusion_center: tuple
    inclusion_radius_ref: float
    margin: float = DEFAULT_MARGIN
    dim: int = 2
    inclusion_shape: str = "disk"

    @property
    def porosity(self) -> float:
        return 1.0 - math.pi * self.inclusion_radius_ref**2

    @property
    def solid_fraction(self) -> float:
        return math.pi * self.inclusion_radius_ref**2

    def distance_to_cell_boundary(self) -> float:
        cx, cy = self.inclusion_center
        return min(cx, cy, 1.0 - cx, 1.0 - cy) - self.inclusion_radius_ref


def build_cell_geometry(r0: float, center=(0.5, 0.5), margin: float = DEFAULT_MARGIN) -> CellGeometry:
    """Validate a disk inclusion of radius ``r0`` and return the cell geometry."""
    if not r0 > 0.0:
        raise DegenerateInclusion(f"inclusion radius must be positive, got {r0}")
    if r0 >= 0.5:
        raise MarginViolation(f"inclusion radius {r0} does not fit in the unit cell")
    geom = CellGeometry(inclusion_center=(float(center[0]), float(center[1])),
                        inclusion_radius_ref=float(r0), margin=float(margin))
    if geom.distance_to_cell_boundary() < margin:
        raise MarginViolation(
            f"disk (r0={r0}, center={tuple(center)}) is closer than {margin} to the cell boundary")
    return geom


@dataclass
class PerforatedCellMesh:
    """Triangulation of the fluid part Y* of the unit cell."""

    geometry: CellGeometry
    vertices: np.ndarray          # (nv, 2)
    triangles: np.ndarray         # (nt, 3), counter-clockwise
    interface_edges: np.ndarray   # (ni, 2), edges on the inclusion polygon
    periodic_lr: np.ndarray       # (k, 2) [left vertex, right vertex]
    periodic_bt: np.ndarray       # (k, 2) [bottom vertex, top vertex]
    mesh_size: float

    @property
    def periodic_pairs(self) -> np.ndarray:
        return np.vstack([self.periodic_lr, self.periodic_bt])

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def triangle_areas(self) -> np.ndarray:
        return triangle_areas(self.vertices, self.triangles)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def interface_vertices(self) -> np.ndarray:
        return np.unique(self.interface_edges)

    def boundary_vertices(self) -> np.ndarray:
        """Vertices on the outer cell boundary."""
        v = self.vertices
        on = (np.abs(v[:, 0]) < 1e-14) | (np.abs(v[:, 0] - 1) < 1e-14) \
            | (np.abs(v[:, 1]) < 1e-14) | (np.abs(v[:, 1] - 1) < 1e-14)
        return np.flatnonzero(on)

    def min_angle(self) -> float:
        return float(triangle_min_angles(self.vertices, self.triangles).min())


def triangle_areas(vertices, triangles):
    p0, p1, p2 = (vertices[triangles[:, i]] for i in range(3))
    d1 = p1 - p0
    d2 = p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def triangle_min_angles(vertices, triangles):
    p = [vertices[triangles[:, i]] for i in range(3)]
    angles = []
    for i in range(3):
        a = p[(i + 1) % 3] - p[i]
        b = p[(i + 2) % 3] - p[i]
        cosang = (a * b).sum(1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
    return np.min(angles, axis=0)


def _square_boundary(n):
    s = np.linspace(0.0, 1.0, n + 1)
    zero = np.zeros(n)
    one = np.ones(n)
    bottom = np.c_[s[:-1], zero]
    right = np.c_[one, s[:-1]]
    top = np.c_[s[::-1][:-1], one]
    left = np.c_[zero, s[::-1][:-1]]
    return np.vstack([bottom, right, top, left])


def interface_vertex_count(r0: float, h: float) -> int:
    return max(16, int(math.ceil(2.0 * math.pi * r0 / h)))


def _laplacian_smooth(vertices, triangles, fixed):
    nv = len(vertices)
    rows = np.concatenate([triangles[:, [0, 1, 2, 1, 2, 0]].ravel()])
    cols = np.concatenate([triangles[:, [1, 2, 0, 0, 1, 2]].ravel()])
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(nv, nv)).tocsr()
    adj.data[:] = 1.0
    deg = np.asarray(adj.sum(axis=1)).ravel()
    avg = (adj @ vertices) / deg[:, None]
    out = vertices.copy()
    free = np.ones(nv, dtype=bool)
    free[fixed] = False
    out[free] = avg[free]
    return out


def _pair_side(vertices, idx_a, idx_b, coord):
    a = idx_a[np.argsort(vertices[idx_a, coord], kind="stable")]
    b = idx_b[np.argsort(vertices[idx_b, coord], kind="stable")]
    if len(a) != len(b):
        raise SeamMismatch("opposite cell faces carry different vertex counts")
    return np.c_[a, b]


def triangulate_cell(geom: CellGeometry, h: float) -> PerforatedCellMesh:
    """Constrained Delaunay mesh of Y* with target edge length ``h``."""
    if not (0.0 < h <= 0.25):
        raise ValueError(f"mesh size must lie in (0, 0.25], got {h}")
    r0 = geom.inclusion_radius_ref
    c = np.asarray(geom.inclusion_center, dtype=float)
    n_side = int(math.ceil(1.0 / h))
    square = _square_boundary(n_side)
    m = interface_vertex_count(r0, h)
    theta = 2.0 * math.pi * np.arange(m) / m
    circle = c + r0 * np.c_[np.cos(theta), np.sin(theta)]
    ns = len(square)
    pts = np.vstack([square, circle])
    seg = np.vstack([
        np.c_[np.arange(ns), (np.arange(ns) + 1) % ns],
        ns + np.c_[np.arange(m), (np.arange(m) + 1) % m],
    ])
    max_area = math.sqrt(3.0) / 4.0 * h * h
    n_fixed = ns + m

    best = None
    for q in (28.0, 30.0, 25.0, 32.0):
        out = triangle.triangulate(
            {"vertices": pts, "segments": seg, "holes": [c]},
            f"pq{q:g}Ya{max_area:.12g}Q")
        verts = np.asarray(out["vertices"], dtype=float)
        tris = np.asarray(out["triangles"], dtype=np.int64)
        if not np.array_equal(verts[:n_fixed], pts):
            raise MeshQualityFailure("boundary vertices were moved by the mesher")
        smoothed = _laplacian_smooth(verts, tris, np.arange(n_fixed))
        if (triangle_areas(smoothed, tris) > 0).all() \
                and triangle_min_angles(smoothed, tris).min() >= MIN_ANGLE_DEG:
            verts = smoothed
        areas = triangle_areas(verts, tris)
        flip = areas < 0
        tris[flip] = tris[flip][:, [0, 2, 1]]
        angle = triangle_min_angles(verts, tris).min()
        if angle >= MIN_ANGLE_DEG:
            best = (verts, tris)
            break
    if best is None:
        raise MeshQualityFailure(f"minimum angle below {MIN_ANGLE_DEG} deg after refinement attempts")
    verts, tris = best

    iface = ns + np.c_[np.arange(m), (np.arange(m) + 1) % m]
    x, y = verts[:, 0], verts[:, 1]
    left = np.flatnonzero(x == 0.0)
    right = np.flatnonzero(x == 1.0)
    bottom = np.flatnonzero(y == 0.0)
    top = np.flatnonzero(y == 1.0)
    mesh = PerforatedCellMesh(
        geometry=geom, vertices=verts, triangles=tris, interface_edges=iface,
        periodic_lr=_pair_side(verts, left, right, 1),
        periodic_bt=_pair_side(verts, bottom, top, 0),
        mesh_size=float(h))
    check_periodic_pairs(mesh)
    return mesh


def check_periodic_pairs(mesh: PerforatedCellMesh, tol: float = 1e-12) -> None:
    v = mesh.vertices
    lr, bt = mesh.periodic_lr, mesh.periodic_bt
    bad_lr = (np.abs(v[lr[:, 0], 0]) > tol) | (np.abs(v[lr[:, 1], 0] - 1.0) > tol) \
        | (np.abs(v[lr[:, 0], 1] - v[lr[:, 1], 1]) > tol)
    bad_bt = (np.abs(v[bt[:, 0], 1]) > tol) | (np.abs(v[bt[:, 1], 1] - 1.0) > tol) \
        | (np.abs(v[bt[:, 0], 0] - v[bt[:, 1], 0]) > tol)
    if bad_lr.any() or bad_bt.any():
        raise SeamMismatch(
            f"{int(bad_lr.sum())} left/right and {int(bad_bt.sum())} bottom/top pairs disagree")


@dataclass
class EpsilonDomainMesh:
    """Perforated macro domain Omega_eps = (0,1)^2 cap eps*Y*_#, tiled by n x n cells."""

    epsilon: float
    n: int
    cell_mesh: PerforatedCellMesh
    vertices: np.ndarray
    triangles: np.ndarray
    triangle_cell: np.ndarray     # (nt,) cell index k = i + n*j
    interface_edges: np.ndarray   # Gamma_eps
    outer_vertices: np.ndarray    # Lambda_eps (vertex indices on the boundary of Omega)
    tile_vertex_map: np.ndarray = field(repr=False)   # (n*n, nv_cell) -> global vertex

    @property
    def cell_index_set(self):
        return [(k % self.n, k // self.n) for k in range(self.n * self.n)]

    def cell_origin(self, k):
        return self.epsilon * np.array([k % self.n, k // self.n], dtype=float)

    def area(self) -> float:
        return float(triangle_areas(self.vertices, self.triangles).sum())

    def interface_curves(self) -> int:
        """Number of connected components of Gamma_eps."""
        e = self.interface_edges
        nv = len(self.vertices)
        g = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(nv, nv))
        _, labels = connected_components(g, directed=False)
        return len(np.unique(labels[np.unique(e)]))


def tile_epsilon_domain(mesh: PerforatedCellMesh, n: int) -> EpsilonDomainMesh:
    """Tile ``n x n`` scaled copies of the cell mesh and merge periodic seams."""
    if not (2 <= int(n) <= 32):
        raise ValueError(f"cells per side must lie in [2, 32], got {n}")
    n = int(n)
    check_periodic_pairs(mesh)
    eps = 1.0 / n
    nv = mesh.n_vertices
    ncell = n * n
    raw = np.empty((ncell * nv, 2))
    for k in range(ncell):
        i, j = k % n, k // n
        raw[k * nv:(k + 1) * nv] = eps * (mesh.vertices + np.array([i, j], dtype=float))

    # identify seam vertices: left face of tile (i, j) with right face of tile (i-1, j), etc.
    rows, cols = [], []
    lr, bt = mesh.periodic_lr, mesh.periodic_bt
    for k in range(ncell):
        i, j = k % n, k // n
        if i > 0:
            kk = k - 1
            rows.append(k * nv + lr[:, 0])
            cols.append(kk * nv + lr[:, 1])
        if j > 0:
            kk = k - n
            rows.append(k * nv + bt[:, 0])
            cols.append(kk * nv + bt[:, 1])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    if np.abs(raw[rows] - raw[cols]).max() > 1e-12:
        raise SeamMismatch("seam vertex coordinates disagree between adjacent tiles")
    g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(ncell * nv, ncell * nv))
    _, labels = connected_components(g, directed=False)
    # first occurrence order gives a deterministic compact numbering
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first, kind="stable")
    relabel = np.empty(len(order), dtype=np.int64)
    relabel[order] = np.arange(len(order))
    gid = relabel[labels]
    vertices = np.empty((len(order), 2))
    vertices[gid] = raw

    tile_map = gid.reshape(ncell, nv)
    tris = np.vstack([tile_map[k][mesh.triangles] for k in range(ncell)])
    tri_cell = np.repeat(np.arange(ncell), len(mesh.triangles))
    iface = np.vstack([tile_map[k][mesh.interface_edges] for k in range(ncell)])
    x, y = vertices[:, 0], vertices[:, 1]
    tol = 1e-12
    outer = np.flatnonzero((x < tol) | (x > 1 - tol) | (y < tol) | (y > 1 - tol))
    return EpsilonDomainMesh(epsilon=eps, n=n, cell_mesh=mesh, vertices=vertices,
                             triangles=tris, triangle_cell=tri_cell, interface_edges=iface,
                             outer_vertices=outer, tile_vertex_map=tile_map)


def export_mesh(directory, mesh, emit_vtk=False):
    """Write a cell or epsilon mesh as a CSV archive, plus mesh.vtk on request."""
    if isinstance(mesh, EpsilonDomainMesh):
        tags = {"interface": np.unique(mesh.interface_edges), "outer": mesh.outer_vertices}
        cell_data = {"cell": mesh.triangle_cell.astype(float)}
    else:
        tags = {"interface": mesh.interface_vertices(), "cell_boundary": mesh.boundary_vertices()}
        cell_data = None
    save_mesh_archive(directory, mesh.vertices, mesh.triangles, tags)
    if emit_vtk:
        write_vtk(os.path.join(directory, "mesh.vtk"), mesh.vertices, mesh.triangles,
                  cell_data=cell_data)
