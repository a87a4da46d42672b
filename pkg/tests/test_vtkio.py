"""Legacy VTK reading and writing."""

from __future__ import annotations

import numpy as np
import pytest

from monocal.errors import MeshFormatError
from monocal.geometry import build_slab_mesh
from monocal.vtkio import (read_fields, read_mesh, surface_path, write_fields,
                           write_mesh)


@pytest.fixture
def slab():
    return build_slab_mesh((0.2, 0.15, 0.1), 0.05)


class TestMeshRoundTrip:
    def test_round_trip_preserves_structure(self, slab, tmp_path):
        path = tmp_path / "mesh.vtk"
        write_mesh(path, slab)
        assert surface_path(path).exists()
        back = read_mesh(path)
        assert np.allclose(back.nodes, slab.nodes, atol=1e-9)
        assert np.array_equal(back.elems, slab.elems)
        assert np.array_equal(back.boundary_faces, slab.boundary_faces)
        assert np.array_equal(back.boundary_tags, slab.boundary_tags)
        assert back.characteristic_size == slab.characteristic_size

    def test_write_read_write_is_idempotent(self, slab, tmp_path):
        first = tmp_path / "a.vtk"
        second = tmp_path / "b.vtk"
        write_mesh(first, slab)
        write_mesh(second, read_mesh(first))
        assert first.read_bytes() == second.read_bytes()
        assert surface_path(first).read_bytes() == \
            surface_path(second).read_bytes()

    def test_missing_surface_companion(self, slab, tmp_path):
        path = tmp_path / "mesh.vtk"
        write_mesh(path, slab)
        surface_path(path).unlink()
        with pytest.raises(MeshFormatError, match="surface"):
            read_mesh(path)


class TestMeshParseErrors:
    def test_seven_node_cell_names_the_cell(self, unit_cube, tmp_path):
        path = tmp_path / "mesh.vtk"
        write_mesh(path, unit_cube)
        text = path.read_text()
        path.write_text(text.replace("\n8 ", "\n7 ", 1))
        with pytest.raises(MeshFormatError,
                           match="cell 0 lists 7 corner nodes") as err:
            read_mesh(path)
        assert err.value.line is not None

    def test_not_a_vtk_file(self, tmp_path):
        path = tmp_path / "mesh.vtk"
        path.write_text("hello\nworld\n")
        with pytest.raises(MeshFormatError, match="not a legacy VTK file"):
            read_mesh(path)

    def test_truncated_file(self, unit_cube, tmp_path):
        path = tmp_path / "mesh.vtk"
        write_mesh(path, unit_cube)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:6]) + "\n")
        with pytest.raises(MeshFormatError, match="end of file"):
            read_mesh(path)


class TestFields:
    def test_scalar_and_vector_round_trip(self, slab, tmp_path):
        path = tmp_path / "fields.vtk"
        rng = np.random.default_rng(11)
        scalar = rng.normal(size=slab.n_nodes)
        scalar[3] = np.nan
        vector = rng.normal(size=(slab.n_nodes, 3))
        write_fields(path, slab, {"tau": scalar, "direction": vector})
        back = read_fields(path)
        assert set(back) == {"tau", "direction"}
        assert np.allclose(back["tau"], scalar, atol=1e-9, equal_nan=True)
        assert np.isnan(back["tau"][3])
        assert np.allclose(back["direction"], vector, atol=1e-9)

    def test_zero_field_round_trip(self, unit_cube, tmp_path):
        path = tmp_path / "fields.vtk"
        write_fields(path, unit_cube, {"u": np.zeros(unit_cube.n_nodes)})
        back = read_fields(path)
        assert np.array_equal(back["u"], np.zeros(unit_cube.n_nodes))

    def test_bad_shape_is_rejected(self, unit_cube, tmp_path):
        path = tmp_path / "fields.vtk"
        with pytest.raises(MeshFormatError, match="shape"):
            write_fields(path, unit_cube, {"u": np.zeros(5)})
