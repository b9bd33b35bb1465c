"""
Tests for finite element fields, quadrature, assembly and boundary interpolation.
"""

import pytest
import numpy as np
import sys
import os

# Add src to path for imports
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from src.errors import ConfigError, InvalidParameterError
from src.fem import (
    DEGREE4, ScalarFieldP1, VectorFieldP2, divergence_matrix, integrate, interpolate_boundary, load_vector_p1,
    mass_matrix_p1, mass_matrix_p2, stiffness_matrix_p1, stiffness_matrix_p2,
)
from src.mesh import build_rectangle_mesh
from src.state import BoundaryProfile


@pytest.fixture
def mesh():
    return build_rectangle_mesh((0.0, 0.0, 1.0, 1.0), 1.0 / 64)


class TestQuadrature:
    """Test the degree-4 triangle rule."""

    def test_weights_sum_to_one(self):
        assert DEGREE4.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(DEGREE4.points.sum(axis=1), 1.0)

    def test_quartic_exact(self, mesh):
        """int_0^1 int_0^1 x^4 dx dy = 1/5 and int x^2 y^2 = 1/9."""
        from src.fem import fem_data
        pts = fem_data(mesh).points
        x, y = pts[..., 0], pts[..., 1]
        assert integrate(mesh, x ** 4) == pytest.approx(0.2, abs=1e-12)
        assert integrate(mesh, x ** 2 * y ** 2) == pytest.approx(1.0 / 9.0, abs=1e-12)

    def test_data_cached_per_mesh_and_released(self):
        """Quadrature data is shared while the mesh lives and dropped with it."""
        import gc
        import weakref
        from src.fem import fem_data
        mesh = build_rectangle_mesh((0.0, 0.0, 1.0, 1.0), 1.0 / 16)
        assert fem_data(mesh) is fem_data(mesh)
        alive = weakref.ref(mesh)
        del mesh
        gc.collect()
        assert alive() is None


class TestFields:
    """Test P1 and P2 field containers."""

    def test_p1_integral_and_gradient(self, mesh):
        field = ScalarFieldP1.interpolate(mesh, lambda x, y: 2.0 * x + y)
        assert field.integral() == pytest.approx(1.5)
        assert np.allclose(field.gradients(), [2.0, 1.0])

    def test_p1_shape_checked(self, mesh):
        with pytest.raises(InvalidParameterError):
            ScalarFieldP1(mesh, np.zeros(3))

    def test_p2_quadratic_exact(self, mesh):
        """P2 interpolation reproduces quadratics at quadrature points."""
        u = VectorFieldP2.interpolate(mesh, lambda x, y: (x * y, x * x - y))
        from src.fem import fem_data
        pts = fem_data(mesh).points
        uq = u.at_quadrature()
        assert np.allclose(uq[..., 0], pts[..., 0] * pts[..., 1])
        assert np.allclose(uq[..., 1], pts[..., 0] ** 2 - pts[..., 1])

    def test_p2_laplacian(self, mesh):
        """Elementwise Laplacian of (x^2 + y^2, x y) is (4, 0)."""
        u = VectorFieldP2.interpolate(mesh, lambda x, y: (x * x + y * y, x * y))
        lap = u.laplacian()
        assert np.allclose(lap[:, 0], 4.0)
        assert np.allclose(lap[:, 1], 0.0, atol=1e-9)

    def test_flat_roundtrip_shape(self, mesh):
        u = VectorFieldP2.zeros(mesh)
        assert VectorFieldP2(mesh, u.flat).values.shape == u.values.shape


class TestAssembly:
    """Test matrices and load vectors."""

    def test_mass_matrices_sum_to_area(self, mesh):
        assert mass_matrix_p1(mesh).sum() == pytest.approx(1.0)
        assert mass_matrix_p2(mesh).sum() == pytest.approx(1.0)

    def test_stiffness_kills_constants(self, mesh):
        assert np.allclose(stiffness_matrix_p1(mesh) @ np.ones(mesh.n_vertices), 0.0, atol=1e-12)
        n2 = mesh.n_vertices + mesh.n_edges
        assert np.allclose(stiffness_matrix_p2(mesh) @ np.ones(n2), 0.0, atol=1e-12)

    def test_stiffness_energy_of_linear(self, mesh):
        """int |grad (x + 2y)|^2 = 5."""
        f = ScalarFieldP1.interpolate(mesh, lambda x, y: x + 2.0 * y).values
        assert f @ (stiffness_matrix_p1(mesh) @ f) == pytest.approx(5.0)

    def test_load_vector_matches_mass(self, mesh):
        """Load of a P1 field at quadrature equals the mass matrix product."""
        f = ScalarFieldP1.interpolate(mesh, lambda x, y: np.sin(x) + y)
        assert np.allclose(load_vector_p1(mesh, f.at_quadrature()), mass_matrix_p1(mesh) @ f.values)

    def test_weighted_mass(self, mesh):
        from src.fem import fem_data
        weight = np.full_like(fem_data(mesh).jxw, 3.0)
        assert np.allclose((mass_matrix_p1(mesh, weight) - 3.0 * mass_matrix_p1(mesh)).toarray(), 0.0)

    def test_divergence_of_solenoidal_field(self, mesh):
        """(y, -x) is divergence free, so every P1 moment vanishes."""
        u = VectorFieldP2.interpolate(mesh, lambda x, y: (y, -x))
        assert np.allclose(divergence_matrix(mesh) @ u.flat, 0.0, atol=1e-12)


class TestBoundaryData:
    """Test nodal interpolation of in- and outflow profiles."""

    def test_balanced_channel(self, mesh):
        profiles = [
            BoundaryProfile(side="left", center=0.5, width=0.4, height=1.0, kind="inflow"),
            BoundaryProfile(side="right", center=0.5, width=0.4, height=1.0, kind="outflow"),
        ]
        trace = interpolate_boundary(profiles, mesh)
        assert abs(trace.net_flux()) < 1e-12

    def test_uniform_background_through_tall_box(self):
        """A constant vertical field passes a closed rectangle with zero net flux."""
        mesh = build_rectangle_mesh((0.0, 0.0, 1.0, 5.0), 1.0 / 16)
        trace = interpolate_boundary([], mesh, background=(0.0, 1.0))
        assert abs(trace.net_flux()) < 1e-12
        assert np.allclose(trace.values[1], 1.0)

    def test_incompatible_data_rejected(self, mesh):
        profiles = [BoundaryProfile(side="left", center=0.5, width=0.4, height=1.0, kind="inflow")]
        with pytest.raises(ConfigError):
            interpolate_boundary(profiles, mesh)

    def test_profile_leaving_side_rejected(self, mesh):
        profiles = [
            BoundaryProfile(side="left", center=0.9, width=0.4, height=1.0, kind="inflow"),
            BoundaryProfile(side="right", center=0.5, width=0.4, height=1.0, kind="outflow"),
        ]
        with pytest.raises(ConfigError):
            interpolate_boundary(profiles, mesh)
