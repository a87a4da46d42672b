"""Mesh generation, structural audit and surface geodesics."""

from __future__ import annotations

import numpy as np
import pytest

from monocal import geometry
from monocal.errors import (InvalidArgumentError, RefinementRequiredError,
                            UnreachableSurfaceError)
from monocal.geometry import (Mesh, SurfaceTag, build_lv_mesh,
                              build_slab_mesh, surface_geodesic_distance)


class TestBuildSlabMesh:
    def test_single_unit_cube(self):
        mesh = build_slab_mesh((1.0, 1.0, 1.0), 1.0)
        assert mesh.n_elems == 1
        assert mesh.n_nodes == 8
        mesh.validate()

    def test_two_by_one_brick_counts(self):
        mesh = build_slab_mesh((2.0, 1.0, 1.0), 0.5)
        assert mesh.n_elems == 16
        assert mesh.n_nodes == 45

    def test_acceptance_slab_counts_and_volumes(self):
        mesh = build_slab_mesh((0.7, 0.7, 0.3), 0.035)
        # 20 x 20 cells in plane; 0.3 / 0.035 rounds to 9 layers
        assert mesh.n_elems == 20 * 20 * 9
        assert mesh.n_nodes == 21 * 21 * 10
        volumes = mesh.element_volumes()
        assert np.all(volumes > 0.0)
        assert np.isclose(volumes.sum(), 0.7 * 0.7 * 0.3, rtol=1e-12)

    def test_face_tags(self):
        mesh = build_slab_mesh((0.2, 0.2, 0.1), 0.1)
        endo = mesh.boundary_node_ids(int(SurfaceTag.ENDO))
        epi = mesh.boundary_node_ids(int(SurfaceTag.EPI))
        assert np.all(mesh.nodes[endo, 2] == 0.0)
        assert np.all(mesh.nodes[epi, 2] == 0.1)
        assert len(endo) == len(epi) == 9

    def test_halving_h_gives_eight_times_elements(self):
        coarse = build_slab_mesh((0.4, 0.2, 0.1), 0.05)
        fine = build_slab_mesh((0.4, 0.2, 0.1), 0.025)
        assert fine.n_elems == 8 * coarse.n_elems

    @pytest.mark.parametrize("extents,h", [
        ((0.0, 1.0, 1.0), 0.1),
        ((1.0, -1.0, 1.0), 0.1),
        ((1.0, 1.0, 1.0), 0.0),
        ((1.0, 1.0, 1.0), -0.5),
    ])
    def test_rejects_nonpositive_sizes(self, extents, h):
        with pytest.raises(InvalidArgumentError):
            build_slab_mesh(extents, h)


class TestBuildLvMesh:
    def test_shell_is_closed_and_fully_tagged(self):
        mesh = build_lv_mesh((1.5, 1.5, 3.0), (2.0, 2.0, 3.5), 1.0, 0.1)
        mesh.validate()
        tags = set(np.unique(mesh.boundary_tags))
        assert tags == {int(SurfaceTag.ENDO), int(SurfaceTag.EPI),
                        int(SurfaceTag.BASE)}
        base = mesh.boundary_node_ids(int(SurfaceTag.BASE))
        assert np.allclose(mesh.nodes[base, 2], 1.0, atol=1e-12)
        assert np.all(mesh.element_volumes() > 0.0)

    def test_surfaces_lie_on_their_ellipsoids(self):
        endo_axes, epi_axes = (0.45, 0.45, 1.05), (0.6, 0.6, 1.2)
        mesh = build_lv_mesh(endo_axes, epi_axes, 0.3, 0.07)
        for tag, axes in ((SurfaceTag.ENDO, endo_axes),
                          (SurfaceTag.EPI, epi_axes)):
            ids = mesh.boundary_node_ids(int(tag))
            # base-rim nodes are shared with the truncation plane
            interior = ids[mesh.nodes[ids, 2] < 0.3 - 1e-9]
            radii = np.sum((mesh.nodes[interior] / axes) ** 2, axis=1)
            assert np.allclose(radii, 1.0, atol=1e-9)

    def test_refinement_scales_like_h_cubed(self):
        coarse = build_lv_mesh((1.5, 1.5, 3.0), (2.0, 2.0, 3.5), 1.0, 0.1)
        fine = build_lv_mesh((1.5, 1.5, 3.0), (2.0, 2.0, 3.5), 1.0, 0.05)
        ratio = fine.n_elems / coarse.n_elems
        assert 0.85 * 8.0 <= ratio <= 1.15 * 8.0

    def test_thin_wall_requires_refinement(self):
        with pytest.raises(RefinementRequiredError):
            build_lv_mesh((1.5, 1.5, 3.0), (1.55, 1.55, 3.05), 1.0, 0.1)


class TestValidate:
    def test_repeated_corner_is_reported(self, unit_cube):
        elems = unit_cube.elems.copy()
        elems[0, 1] = elems[0, 0]
        mesh = Mesh(nodes=unit_cube.nodes, elems=elems,
                    boundary_faces=unit_cube.boundary_faces,
                    boundary_tags=unit_cube.boundary_tags,
                    characteristic_size=1.0)
        with pytest.raises(InvalidArgumentError, match="repeated corner"):
            mesh.validate()

    def test_inverted_element_is_reported(self, unit_cube):
        elems = unit_cube.elems[:, [4, 5, 6, 7, 0, 1, 2, 3]]
        mesh = Mesh(nodes=unit_cube.nodes, elems=elems,
                    boundary_faces=unit_cube.boundary_faces,
                    boundary_tags=unit_cube.boundary_tags,
                    characteristic_size=1.0)
        with pytest.raises(InvalidArgumentError, match="inverted"):
            mesh.validate()

    def test_open_boundary_is_reported(self, unit_cube):
        mesh = Mesh(nodes=unit_cube.nodes, elems=unit_cube.elems,
                    boundary_faces=unit_cube.boundary_faces[:-1],
                    boundary_tags=unit_cube.boundary_tags[:-1],
                    characteristic_size=1.0)
        with pytest.raises(InvalidArgumentError, match="not closed"):
            mesh.validate()

    def test_unknown_tag_is_reported(self, unit_cube):
        tags = unit_cube.boundary_tags.copy()
        tags[0] = 17
        mesh = Mesh(nodes=unit_cube.nodes, elems=unit_cube.elems,
                    boundary_faces=unit_cube.boundary_faces,
                    boundary_tags=tags, characteristic_size=1.0)
        with pytest.raises(InvalidArgumentError, match="tags"):
            mesh.validate()


class TestContentHash:
    def test_stable_across_rebuilds(self):
        a = build_slab_mesh((0.2, 0.1, 0.1), 0.05)
        b = build_slab_mesh((0.2, 0.1, 0.1), 0.05)
        assert a.content_hash() == b.content_hash()

    def test_sensitive_to_node_motion(self, small_slab):
        nodes = small_slab.nodes.copy()
        nodes[0, 0] += 1e-9
        moved = Mesh(nodes=nodes, elems=small_slab.elems,
                     boundary_faces=small_slab.boundary_faces,
                     boundary_tags=small_slab.boundary_tags,
                     characteristic_size=small_slab.characteristic_size)
        assert moved.content_hash() != small_slab.content_hash()


class TestSurfaceGeodesic:
    def test_same_node_is_zero(self, unit_cube):
        assert surface_geodesic_distance(unit_cube, [0], [0]) == 0.0

    def test_straight_edge_path(self):
        mesh = build_slab_mesh((0.5, 0.1, 0.1), 0.1)
        start = int(np.nonzero(np.all(mesh.nodes == 0.0, axis=1))[0][0])
        end = int(np.nonzero(np.all(
            mesh.nodes == (0.5, 0.0, 0.0), axis=1))[0][0])
        d = surface_geodesic_distance(mesh, [start], [end])
        assert np.isclose(d, 0.5, rtol=1e-12)

    def test_face_diagonal_is_direct(self, unit_cube):
        a = int(np.nonzero(np.all(unit_cube.nodes == 0.0, axis=1))[0][0])
        b = int(np.nonzero(np.all(
            unit_cube.nodes == (1.0, 1.0, 0.0), axis=1))[0][0])
        d = surface_geodesic_distance(unit_cube, [a], [b])
        assert np.isclose(d, np.sqrt(2.0), rtol=1e-12)

    def test_symmetry_and_euclidean_lower_bound(self):
        mesh = build_slab_mesh((0.4, 0.2, 0.1), 0.05)
        rng = np.random.default_rng(3)
        boundary = mesh.boundary_node_ids()
        for a, b in rng.choice(boundary, size=(10, 2)):
            forward = surface_geodesic_distance(mesh, [int(a)], [int(b)])
            backward = surface_geodesic_distance(mesh, [int(b)], [int(a)])
            assert np.isclose(forward, backward, rtol=1e-12)
            euclid = np.linalg.norm(mesh.nodes[a] - mesh.nodes[b])
            assert forward >= euclid - 1e-12

    def test_triangle_inequality(self):
        mesh = build_slab_mesh((0.4, 0.2, 0.1), 0.05)
        boundary = mesh.boundary_node_ids()
        rng = np.random.default_rng(5)
        for a, b, c in rng.choice(boundary, size=(10, 3)):
            ab = surface_geodesic_distance(mesh, [int(a)], [int(b)])
            bc = surface_geodesic_distance(mesh, [int(b)], [int(c)])
            ac = surface_geodesic_distance(mesh, [int(a)], [int(c)])
            assert ac <= ab + bc + 1e-12

    def test_interior_node_is_rejected(self):
        mesh = build_slab_mesh((0.2, 0.2, 0.2), 0.1)
        interior = 13  # center node of the 3 x 3 x 3 lattice
        assert interior not in mesh.boundary_node_ids()
        with pytest.raises(InvalidArgumentError):
            surface_geodesic_distance(mesh, [interior], [0])

    def test_empty_set_is_rejected(self, unit_cube):
        with pytest.raises(InvalidArgumentError):
            surface_geodesic_distance(unit_cube, [], [0])

    def test_disconnected_shells_are_unreachable(self, unit_cube):
        nodes = np.vstack([unit_cube.nodes, unit_cube.nodes + (5.0, 0.0, 0.0)])
        elems = np.vstack([unit_cube.elems, unit_cube.elems + 8])
        faces = geometry._extract_boundary(elems)
        mesh = Mesh(nodes=nodes, elems=elems, boundary_faces=faces,
                    boundary_tags=np.zeros(len(faces), dtype=int),
                    characteristic_size=1.0)
        mesh.validate()
        with pytest.raises(UnreachableSurfaceError):
            surface_geodesic_distance(mesh, [0], [8])
