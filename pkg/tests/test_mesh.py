"""
Tests for mesh construction, bisection, coarsening and level-set geometry.
"""

import pytest
import numpy as np
import sys
import os

# Add src to path for imports
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from src.errors import DegenerateLevelSetError, InvalidParameterError
from src.mesh import (
    build_rectangle_mesh, coarsen, coarsen_with_transfer, extract_isoline, refine, refine_with_transfer,
    sublevel_area,
)


@pytest.fixture
def square():
    return build_rectangle_mesh((0.0, 0.0, 1.0, 1.0), 1.0 / 16)


class TestRectangleMesh:
    """Test the criss-cross background mesh."""

    def test_counts_and_areas(self, square):
        """A 2 x 2 cell grid split by both diagonals."""
        assert square.n_simplices == 16
        assert square.n_vertices == 13
        assert np.allclose(square.areas, 1.0 / 16)
        assert square.areas.sum() == pytest.approx(1.0)
        assert square.is_conforming()

    def test_area_bound_respected(self):
        """Every simplex is at most the requested area."""
        mesh = build_rectangle_mesh((0.0, 0.0, 1.0, 5.0), 1.0 / 1600)
        assert mesh.areas.max() <= 1.0 / 1600 + 1e-15
        assert mesh.areas.sum() == pytest.approx(5.0)

    def test_boundary_tags(self, square):
        """Each side carries the same number of boundary edges."""
        tags = square.edge_tags[square.boundary_edges]
        assert sorted(np.bincount(tags).tolist()) == [2, 2, 2, 2]

    def test_target_area_too_large(self):
        """A target area above the domain area is rejected."""
        with pytest.raises(InvalidParameterError):
            build_rectangle_mesh((0.0, 0.0, 1.0, 1.0), 2.0)


class TestBisection:
    """Test newest-vertex bisection and its inverse."""

    def test_single_boundary_simplex(self, square):
        """Bisecting one simplex whose refinement edge is on the boundary needs no closure."""
        fine = refine(square, [0])
        assert fine.n_simplices == 17
        assert fine.is_conforming()
        assert fine.areas.sum() == pytest.approx(1.0)

    def test_closure_keeps_conformity(self, square):
        """Refining an interior simplex repeatedly stays conforming."""
        mesh = square
        for _ in range(4):
            centers = mesh.vertices[mesh.simplices].mean(axis=1)
            target = int(np.argmin(np.linalg.norm(centers - 0.5, axis=1)))
            mesh = refine(mesh, [target])
            assert mesh.is_conforming()
        assert mesh.areas.sum() == pytest.approx(1.0)
        assert mesh.areas.min() > 0

    def test_refine_everything_then_coarsen(self, square):
        """Uniform bisection followed by full coarsening restores the mesh."""
        fine = refine(square, np.arange(square.n_simplices))
        assert fine.n_simplices == 32
        assert fine.tree.depth().tolist() == [1] * 32

        coarse = coarsen(fine, np.arange(fine.n_simplices))
        assert coarse.n_simplices == 16
        assert np.array_equal(coarse.vertices, square.vertices)
        assert sorted(map(tuple, np.sort(coarse.simplices, axis=1))) == \
            sorted(map(tuple, np.sort(square.simplices, axis=1)))

    def test_refinement_transfer_exact_for_linear(self, square):
        """P1 prolongation reproduces linear fields."""
        fine, transfer = refine_with_transfer(square, [0, 5, 9])
        f = lambda v: 2.0 * v[:, 0] - 3.0 * v[:, 1] + 0.5
        assert np.allclose(transfer.interpolate(f(square.vertices)), f(fine.vertices))

    def test_coarsening_transfer_injects(self, square):
        """Surviving vertices keep their values after coarsening."""
        fine = refine(square, np.arange(square.n_simplices))
        values = np.arange(fine.n_vertices, dtype=float)
        coarse, transfer = coarsen_with_transfer(fine, np.arange(fine.n_simplices))
        assert np.array_equal(transfer.interpolate(values), values[: coarse.n_vertices])
        assert np.all(transfer.simplex_source == -1)

    def test_unmarked_coarsening_is_identity(self, square):
        """Nothing marked, nothing changes."""
        coarse, transfer = coarsen_with_transfer(square, [])
        assert coarse is square
        assert np.array_equal(transfer.simplex_source, np.arange(16))

    def test_invalid_mark_set(self, square):
        """Unknown simplex ids are rejected."""
        with pytest.raises(InvalidParameterError):
            refine(square, [99])


class TestLevelSets:
    """Test isolines and sublevel areas of P1 fields."""

    def test_vertical_line(self, square):
        """The zero isoline of x - 0.5 is a unit segment."""
        values = square.vertices[:, 0] - 0.5
        assert extract_isoline(square, values).length == pytest.approx(1.0, abs=1e-9)

    def test_sublevel_area_linear(self, square):
        """Area of {x < 0.3} is exact for a linear field."""
        values = square.vertices[:, 0] - 0.3
        assert sublevel_area(square, values) == pytest.approx(0.3, abs=1e-12)

    def test_sublevel_area_bounds(self, square):
        """Fields of one sign give the whole or none of the domain."""
        assert sublevel_area(square, -np.ones(square.n_vertices)) == pytest.approx(1.0)
        assert sublevel_area(square, np.ones(square.n_vertices)) == pytest.approx(0.0)

    def test_constant_field_degenerate(self, square):
        """A constant field has no isoline."""
        with pytest.raises(DegenerateLevelSetError):
            extract_isoline(square, np.zeros(square.n_vertices))

    def test_constant_field_away_from_level(self, square):
        """A constant field off the level has an empty isoline."""
        line = extract_isoline(square, np.full(square.n_vertices, 0.5))
        assert len(line) == 0
        assert line.length == 0.0

    def test_complementary_areas_fill_domain(self, square):
        """|{f < c}| + |{f > c}| = |Omega| per simplex and in total."""
        rng = np.random.default_rng(11)
        fine = refine(square, np.arange(square.n_simplices))
        values = rng.uniform(-1.0, 1.0, fine.n_vertices)
        below = fine.sublevel_areas(values, 0.2)
        above = fine.sublevel_areas(-values, -0.2)
        assert np.allclose(below + above, fine.areas, atol=1e-14)
        assert sublevel_area(fine, values, 0.2) + sublevel_area(fine, -values, -0.2) == pytest.approx(1.0, abs=1e-12)

    def test_line_length_unchanged_by_refinement(self, square):
        """The isoline of a linear field is the same segment on every refinement."""
        f = lambda v: v[:, 0] + 2.0 * v[:, 1] - 1.2
        mesh = square
        for _ in range(3):
            assert extract_isoline(mesh, f(mesh.vertices)).length == pytest.approx(np.sqrt(1.25), abs=1e-12)
            mesh = refine(mesh, np.arange(mesh.n_simplices))

    def test_circle_converges_quadratically(self):
        """Length and enclosed area of an interpolated circle converge at second order."""
        radius = 0.3
        length_errors, area_errors = [], []
        for area in (1.0 / 256, 1.0 / 1024, 1.0 / 4096):
            mesh = build_rectangle_mesh((0.0, 0.0, 1.0, 1.0), area)
            values = np.hypot(mesh.vertices[:, 0] - 0.5, mesh.vertices[:, 1] - 0.5) - radius
            length_errors.append(abs(extract_isoline(mesh, values).length - 2.0 * np.pi * radius))
            area_errors.append(abs(sublevel_area(mesh, values) - np.pi * radius ** 2))
        assert length_errors[2] <= length_errors[0] / 6.0
        assert area_errors[2] <= area_errors[0] / 6.0
        assert length_errors[2] < 1e-2
        assert area_errors[2] < 1e-3
