import dataclasses

import numpy as np
import pytest

from memdarcy.errors import DegenerateInclusion, MarginViolation, SeamMismatch
from memdarcy.geometry import (build_cell_geometry, check_periodic_pairs, export_mesh,
                               tile_epsilon_domain, triangle_areas, triangulate_cell)
from memdarcy.io import load_mesh_archive

DISK_POROSITY = 1 - np.pi / 16


def test_porosity_of_centered_disk():
    geom = build_cell_geometry(0.25, (0.5, 0.5))
    assert geom.porosity == pytest.approx(DISK_POROSITY, abs=1e-12)
    assert geom.solid_fraction == pytest.approx(np.pi / 16, abs=1e-12)


def test_degenerate_and_margin_errors():
    with pytest.raises(DegenerateInclusion):
        build_cell_geometry(0.0)
    with pytest.raises(MarginViolation):
        build_cell_geometry(0.48, (0.5, 0.5))
    with pytest.raises(MarginViolation):
        build_cell_geometry(0.2, (0.2, 0.5))


def test_mesh_area_converges(cell_mesh_coarse, cell_mesh_fine):
    err_coarse = abs(cell_mesh_coarse.area() - DISK_POROSITY)
    err_fine = abs(cell_mesh_fine.area() - DISK_POROSITY)
    assert err_coarse < 0.01 * DISK_POROSITY
    assert err_fine < err_coarse


def test_mesh_size_precondition():
    with pytest.raises(ValueError):
        triangulate_cell(build_cell_geometry(0.25), 0.3)


def test_mesh_quality_and_orientation(cell_mesh_coarse):
    m = cell_mesh_coarse
    assert m.min_angle() >= 20.0
    assert np.all(triangle_areas(m.vertices, m.triangles) > 0)
    v = m.vertices[m.triangles]
    cross = ((v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1])
             - (v[:, 1, 1] - v[:, 0, 1]) * (v[:, 2, 0] - v[:, 0, 0]))
    assert np.all(cross > 0)


def test_interface_vertices_on_circle(cell_mesh_coarse):
    m = cell_mesh_coarse
    p = m.vertices[np.unique(m.interface_edges)]
    dist = np.hypot(p[:, 0] - 0.5, p[:, 1] - 0.5)
    assert np.abs(dist - 0.25).max() < 1e-12 * m.mesh_size + 1e-15


def test_periodic_pairs_match(cell_mesh_coarse):
    m = cell_mesh_coarse
    lr, bt = m.periodic_lr, m.periodic_bt
    assert np.allclose(m.vertices[lr[:, 0], 0], 0) and np.allclose(m.vertices[lr[:, 1], 0], 1)
    assert np.abs(m.vertices[lr[:, 0], 1] - m.vertices[lr[:, 1], 1]).max() < 1e-12
    assert np.abs(m.vertices[bt[:, 0], 0] - m.vertices[bt[:, 1], 0]).max() < 1e-12
    assert len(np.unique(lr[:, 0])) == len(lr)
    check_periodic_pairs(m)


def test_tiling_preserves_porosity(cell_mesh_coarse):
    d = tile_epsilon_domain(cell_mesh_coarse, 2)
    assert d.epsilon == 0.5
    assert len(np.unique(d.triangle_cell)) == 4
    assert d.area() == pytest.approx(cell_mesh_coarse.area(), rel=1e-12)


def test_tiling_interface_curves(cell_mesh_coarse):
    assert tile_epsilon_domain(cell_mesh_coarse, 4).interface_curves() == 16


def test_tiling_merges_seams(cell_mesh_coarse):
    d = tile_epsilon_domain(cell_mesh_coarse, 3)
    # no duplicate coordinates after merging
    keys = np.round(d.vertices * 1e10).astype(np.int64)
    assert len(np.unique(keys, axis=0)) == len(d.vertices)
    outer = d.vertices[d.outer_vertices]
    on_square = (np.isclose(outer, 0) | np.isclose(outer, 1)).any(axis=1)
    assert on_square.all()


def test_corrupted_pairs_detected(cell_mesh_coarse):
    lr = cell_mesh_coarse.periodic_lr.copy()
    lr[:, 1] = np.roll(lr[:, 1], 1)
    bad = dataclasses.replace(cell_mesh_coarse, periodic_lr=lr)
    with pytest.raises(SeamMismatch):
        tile_epsilon_domain(bad, 2)


def test_tiling_bounds(cell_mesh_coarse):
    with pytest.raises(ValueError):
        tile_epsilon_domain(cell_mesh_coarse, 1)


def test_export_round_trip(tmp_path, cell_mesh_coarse):
    export_mesh(tmp_path / "cell", cell_mesh_coarse, emit_vtk=True)
    v, t, tags = load_mesh_archive(tmp_path / "cell")
    assert np.array_equal(v, cell_mesh_coarse.vertices)
    assert np.array_equal(t, cell_mesh_coarse.triangles)
    assert set(tags) == {"interface", "cell_boundary"}
    assert (tmp_path / "cell" / "mesh.vtk").read_text().startswith("# vtk DataFile")
