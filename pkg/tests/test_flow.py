"""
Tests for the penalized Navier-Stokes state solver, the adjoint and the flow monitors.
"""

import pytest
import numpy as np
import sys
import os

# Add src to path for imports
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from src.chstep import AlphaFunction
from src.errors import ConfigError
from src.events import EventAction, event_log
from src.fem import (
    DirichletTrace, ScalarFieldP1, VectorFieldP2, boundary_p2_nodes, divergence_matrix, interpolate_boundary,
    l2_error, mass_matrix_p2, p2_node_coordinates, vector_block,
)
from src.flow import (
    assemble_flow_system, check_mixing_assumption, check_uniqueness, divergence_residual, mixing_weight, pressure_mean,
    solve_adjoint, solve_oseen, solve_state, velocity_gradient_norm,
)
from src.mesh import build_rectangle_mesh
from src.state import BoundaryProfile, OseenOptions

CHANNEL = [
    BoundaryProfile(side="left", center=0.5, width=1.0, height=1.0, kind="inflow"),
    BoundaryProfile(side="right", center=0.5, width=1.0, height=1.0, kind="outflow"),
]


def no_drag(phi):
    return np.zeros_like(phi)


def exact_trace(mesh, fn):
    nodes = boundary_p2_nodes(mesh)
    x, y = p2_node_coordinates(mesh)[nodes].T
    ux, uy = fn(x, y)
    return DirichletTrace(mesh, nodes, np.vstack([ux, uy]))


@pytest.fixture
def mesh():
    return build_rectangle_mesh((0.0, 0.0, 1.0, 1.0), 1.0 / 64)


@pytest.fixture
def poiseuille(mesh):
    trace = interpolate_boundary(CHANNEL, mesh)
    phi = ScalarFieldP1.constant(mesh, 1.0)
    return solve_state(phi, trace, 1.0, no_drag, OseenOptions(stokes=True))


class TestStateSolver:
    """Test the Oseen fixed point and its Stokes start."""

    def test_poiseuille_exact(self, mesh, poiseuille):
        """The P2 velocity reproduces the parabolic channel flow."""
        y = p2_node_coordinates(mesh)[:, 1]
        assert np.max(np.abs(poiseuille.u.values[0] - 4.0 * y * (1.0 - y))) < 1e-10
        assert np.max(np.abs(poiseuille.u.values[1])) < 1e-10

    def test_poiseuille_pressure(self, poiseuille):
        """Pressure drop -8 mu along the channel, mean zero."""
        assert np.allclose(poiseuille.p.gradients(), [-8.0, 0.0], atol=1e-8)
        assert abs(pressure_mean(poiseuille.p)) < 1e-10

    def test_navier_stokes_poiseuille(self, mesh):
        """Convection vanishes for channel flow, so the Oseen loop stops at once."""
        trace = interpolate_boundary(CHANNEL, mesh)
        flow = solve_state(ScalarFieldP1.constant(mesh, 1.0), trace, 1.0, no_drag, OseenOptions())
        y = p2_node_coordinates(mesh)[:, 1]
        assert flow.sweeps <= 1
        assert np.max(np.abs(flow.u.values[0] - 4.0 * y * (1.0 - y))) < 1e-9

    def test_gmres_matches_direct(self, mesh, poiseuille):
        trace = interpolate_boundary(CHANNEL, mesh)
        flow = solve_state(ScalarFieldP1.constant(mesh, 1.0), trace, 1.0, no_drag,
                           OseenOptions(stokes=True, linear_solver="gmres"))
        assert np.allclose(flow.u.values, poiseuille.u.values, atol=1e-8)

    def test_discrete_divergence_free(self, poiseuille):
        assert divergence_residual(poiseuille) < 1e-12

    def test_manufactured_convergence(self):
        """Quartic solution u = (y^4, x^4), p = x - 1/2: L2 order close to three."""
        def exact(x, y):
            return y ** 4, x ** 4

        def forcing(x, y):
            return -12.0 * y ** 2 + 1.0, -12.0 * x ** 2

        errors = []
        for area in (1.0 / 64, 1.0 / 256, 1.0 / 1024):
            mesh = build_rectangle_mesh((0.0, 0.0, 1.0, 1.0), area)
            flow = solve_state(ScalarFieldP1.constant(mesh, 1.0), exact_trace(mesh, exact), 1.0, no_drag,
                               OseenOptions(stokes=True), forcing=forcing)
            errors.append(l2_error(flow.u, exact))
        orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
        assert orders[-1] >= 2.7
        assert np.log2(errors[0] / errors[-1]) / 2.0 >= 2.7

    def test_porous_drag_leaves_dirichlet_minimum(self, mesh, poiseuille):
        """Channel flow minimizes the Dirichlet energy; porous drag moves away from it."""
        trace = interpolate_boundary(CHANNEL, mesh)
        flow = solve_state(ScalarFieldP1.constant(mesh, 1.0), trace, 1.0, lambda phi: np.full_like(phi, 1e3),
                           OseenOptions(stokes=True))
        assert velocity_gradient_norm(flow.u) > velocity_gradient_norm(poiseuille.u)

    def test_incompatible_trace(self, mesh):
        """Dirichlet data with net outflow is rejected before solving."""
        trace = exact_trace(mesh, lambda x, y: (x, 0.0 * y))
        with pytest.raises(ConfigError):
            solve_state(ScalarFieldP1.constant(mesh, 1.0), trace, 1.0, no_drag)


class TestFlowOperator:
    """Test the assembled Oseen operator."""

    def test_stokes_block_spd(self, mesh):
        """In pure fluid with zero trace the momentum block is symmetric positive definite."""
        system = assemble_flow_system(ScalarFieldP1.constant(mesh, 1.0), None, 1.0, AlphaFunction(alpha_bar=50.0))
        A = system.A_ii.toarray()
        assert np.allclose(A, A.T, atol=1e-12)
        assert np.linalg.eigvalsh(A).min() > 0.0

    def test_constant_drag_adds_mass(self, mesh):
        """alpha = c adds c times the P2 vector mass to the Stokes block."""
        phi = ScalarFieldP1.interpolate(mesh, lambda x, y: x - y)
        c = 7.5
        stokes = assemble_flow_system(phi, None, 2.0, no_drag)
        porous = assemble_flow_system(phi, None, 2.0, lambda v: np.full_like(v, c))
        diff = porous.velocity_block - stokes.velocity_block - c * vector_block(mass_matrix_p2(mesh))
        assert np.abs(diff.toarray()).max() < 1e-12

    def test_divergence_kills_constants(self, mesh):
        system = assemble_flow_system(ScalarFieldP1.constant(mesh, 1.0), None, 1.0, no_drag)
        u = VectorFieldP2.interpolate(mesh, lambda x, y: (0.3 + 0.0 * x, -1.2 + 0.0 * y))
        assert np.max(np.abs(system.divergence @ u.flat)) < 1e-12

    def test_state_uses_assembled_operator(self, mesh, poiseuille):
        """The channel solution satisfies the assembled Stokes system."""
        trace = interpolate_boundary(CHANNEL, mesh)
        system = assemble_flow_system(ScalarFieldP1.constant(mesh, 1.0), None, 1.0, no_drag, trace)
        x = system.pack(poiseuille.u, poiseuille.p)
        x[-1] = solve_oseen(system)[-1]
        assert system.residual_norm(x) < 1e-10

    def test_linear_in_right_hand_side(self, mesh, poiseuille):
        """With frozen transport the solve is linear in the data."""
        phi = ScalarFieldP1.interpolate(mesh, lambda x, y: np.tanh((np.hypot(x - 0.5, y - 0.5) - 0.2) / 0.05))
        system = assemble_flow_system(phi, poiseuille.u, 1.0, AlphaFunction(alpha_bar=50.0))
        rng = np.random.default_rng(3)
        b1 = rng.standard_normal(len(system.rhs))
        b2 = rng.standard_normal(len(system.rhs))
        b1[-1] = b2[-1] = 0.0
        x1 = solve_oseen(system, rhs=b1)
        x2 = solve_oseen(system, rhs=b2)
        x = solve_oseen(system, rhs=3.0 * b1 - b2)
        assert np.allclose(x, 3.0 * x1 - x2, atol=1e-8 * np.abs(x).max())


class TestAdjoint:
    """Test the lagged adjoint solve."""

    def test_zero_trace_and_divergence(self, mesh, poiseuille):
        phi = ScalarFieldP1.constant(mesh, 1.0)
        adjoint = solve_adjoint(phi, poiseuille, None, 1.0, no_drag, OseenOptions())
        nodes = boundary_p2_nodes(mesh)
        assert np.allclose(adjoint.q.values[:, nodes], 0.0)
        assert np.max(np.abs(divergence_matrix(mesh) @ adjoint.q.flat)) < 1e-10

    def test_zero_state_gives_zero_adjoint(self, mesh):
        phi = ScalarFieldP1.constant(mesh, 0.0)
        still = solve_state(phi, DirichletTrace.zero(mesh), 1.0, no_drag, OseenOptions(stokes=True))
        adjoint = solve_adjoint(phi, still, None, 1.0, no_drag, OseenOptions())
        assert np.allclose(adjoint.q.values, 0.0)

    def test_stokes_adjoint_of_dissipation(self, mesh):
        """Without convection the adjoint velocity vanishes and the adjoint pressure is -p."""
        phi = ScalarFieldP1.interpolate(mesh, lambda x, y: np.tanh((np.hypot(x - 0.5, y - 0.5) - 0.2) / 0.05))
        alpha = AlphaFunction(alpha_bar=50.0)
        options = OseenOptions(stokes=True)
        state = solve_state(phi, interpolate_boundary(CHANNEL, mesh), 1.0, alpha, options)
        adjoint = solve_adjoint(phi, state, None, 1.0, alpha, options)
        assert np.abs(adjoint.q.values).max() < 1e-8 * np.abs(state.p.values).max()
        assert np.allclose(adjoint.pi.values, -state.p.values, atol=1e-8 * np.abs(state.p.values).max())

    def test_affine_in_lagged_adjoint(self, mesh, poiseuille):
        """The adjoint responds linearly to the lagged velocity."""
        phi = ScalarFieldP1.constant(mesh, 1.0)
        lagged = VectorFieldP2.interpolate(
            mesh, lambda x, y: (np.sin(np.pi * x) * np.sin(np.pi * y), x * y * (1.0 - x) * (1.0 - y)))
        base = solve_adjoint(phi, poiseuille, None, 1.0, no_drag, OseenOptions()).q.values
        once = solve_adjoint(phi, poiseuille, lagged, 1.0, no_drag, OseenOptions()).q.values - base
        thrice = solve_adjoint(phi, poiseuille, lagged.scaled(3.0), 1.0, no_drag, OseenOptions()).q.values - base
        assert np.abs(once).max() > 1e-6
        assert np.allclose(thrice, 3.0 * once, atol=1e-9)

    def test_self_consistent_fixed_point(self, mesh, poiseuille):
        """Iterating the lagged term converges to a fixed point."""
        phi = ScalarFieldP1.constant(mesh, 1.0)
        options = OseenOptions(self_consistent_adjoint=True)
        adjoint = solve_adjoint(phi, poiseuille, None, 1.0, no_drag, options)
        again = solve_adjoint(phi, poiseuille, adjoint.q, 1.0, no_drag, OseenOptions())
        assert np.allclose(again.q.values, adjoint.q.values, atol=1e-8)


class TestMonitors:
    """Test uniqueness and mixing-assumption monitors."""

    def test_uniqueness_constant(self, poiseuille):
        """K_Omega = sqrt(|Omega|) / 2; ||grad u|| = 4 / sqrt(3) for the channel."""
        report = check_uniqueness(poiseuille, 1.0)
        assert report.k_omega == pytest.approx(0.5)
        assert report.norm == pytest.approx(4.0 / np.sqrt(3.0), rel=1e-8)
        assert report.bound == pytest.approx(2.0)
        assert not report.satisfied
        assert check_uniqueness(poiseuille, 1.0, domain_area=5.0).k_omega == pytest.approx(0.5 * np.sqrt(5.0))

    def test_mixing_weight(self, mesh):
        u = VectorFieldP2.interpolate(mesh, lambda x, y: (1.0 + 0.0 * x, 0.0 * y))
        assert np.allclose(mixing_weight(u, None), 0.5)
        assert np.allclose(mixing_weight(u, u), -0.5)

    def test_mixing_warning_logged(self, mesh, tmp_path):
        """A negative minimum is reported as an event, never raised."""
        event_log.set_directory(str(tmp_path))
        u = VectorFieldP2.interpolate(mesh, lambda x, y: (1.0 + 0.0 * x, 0.0 * y))
        assert check_mixing_assumption(u, u, step=3) == pytest.approx(-0.5)
        events = event_log.read_events(EventAction.ASSUMPTION_WARNING)
        assert len(events) == 1
        assert events[0]['step'] == 3
        assert check_mixing_assumption(u, None) == pytest.approx(0.5)
        assert len(event_log.read_events(EventAction.ASSUMPTION_WARNING)) == 1
