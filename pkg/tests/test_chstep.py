"""
Tests for the porous drag interpolation, the Moreau-Yosida multiplier and the Cahn-Hilliard step.
"""

import pytest
import numpy as np
import sys
import os

# Add src to path for imports
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from src.chstep import (
    AlphaFunction, CahnHilliardProblem, PhaseState, ch_step, frozen_energy, lambda_s, lambda_s_prime, psi0,
    reduced_gradient,
)
from src.errors import InvalidParameterError, NewtonNonConvergenceError
from src.fem import ScalarFieldP1, VectorFieldP2
from src.mesh import build_rectangle_mesh
from src.state import Params


@pytest.fixture
def mesh():
    return build_rectangle_mesh((0.0, 0.0, 1.0, 1.0), 1.0 / 64)


@pytest.fixture
def alpha():
    return AlphaFunction(alpha_bar=50.0, q=10.0, epsilon=0.005)


def random_phase(mesh, seed, amplitude=0.9):
    rng = np.random.default_rng(seed)
    return PhaseState.from_phi(ScalarFieldP1(mesh, amplitude * rng.uniform(-1.0, 1.0, mesh.n_vertices)))


class TestAlphaFunction:
    """Test alpha_eps values, derivatives and the cut-off."""

    def test_reference_values(self, alpha):
        values = alpha(np.array([1.0, -1.0, 0.0]))
        assert values[0] == pytest.approx(0.0, abs=1e-12)
        assert values[1] == pytest.approx(707.1068, abs=1e-4)
        assert values[2] == pytest.approx(321.4122, abs=1e-4)

    def test_unscaled_variant(self):
        """Without epsilon scaling alpha(-1) equals alpha_bar."""
        alpha = AlphaFunction(alpha_bar=50.0, epsilon=0.005, epsilon_scaling=False)
        assert alpha(np.array([-1.0]))[0] == pytest.approx(50.0)

    def test_decreasing_and_constant_beyond_cut(self, alpha):
        phi = np.linspace(-1.5, 1.1, 500)
        assert np.all(np.diff(alpha(phi)) < 0)
        beyond = alpha(np.array([1.1, 1.3, 5.0]))
        assert np.allclose(beyond, alpha.lower_bound)
        assert alpha.lower_bound < 0

    def test_c1_blend(self, alpha):
        """Value and slope are continuous at 1 and at the cut."""
        for point in (1.0, alpha.phi_cut):
            left = alpha(np.array([point - 1e-9]))[0]
            right = alpha(np.array([point + 1e-9]))[0]
            assert left == pytest.approx(right, abs=1e-6)
            dl = alpha.derivative(np.array([point - 1e-9]))[0]
            dr = alpha.derivative(np.array([point + 1e-9]))[0]
            assert dl == pytest.approx(dr, abs=1e-5)

    def test_derivatives_match_differences(self, alpha):
        phi = np.array([-1.2, -0.5, 0.0, 0.7, 1.05])
        h = 1e-6
        assert np.allclose(alpha.derivative(phi), (alpha(phi + h) - alpha(phi - h)) / (2 * h), rtol=1e-6)
        assert np.allclose(alpha.second_derivative(phi),
                           (alpha.derivative(phi + h) - alpha.derivative(phi - h)) / (2 * h), rtol=1e-5)

    def test_convex(self, alpha):
        assert np.all(alpha.second_derivative(np.linspace(-3.0, 3.0, 301)) >= 0)

    def test_invalid_parameters(self):
        with pytest.raises(InvalidParameterError):
            AlphaFunction(alpha_bar=-1.0)
        with pytest.raises(InvalidParameterError):
            AlphaFunction(alpha_bar=1.0, phi_cut=1.0)

    def test_from_params_override(self):
        alpha = AlphaFunction.from_params(Params(alpha_bar=5.0), alpha_bar=50.0)
        assert alpha.alpha_bar == 50.0


class TestMultiplier:
    """Test the Moreau-Yosida multiplier."""

    def test_values(self):
        assert float(lambda_s(0.0, 1e6)) == 0.0
        assert float(lambda_s(1.5, 1e6)) == pytest.approx(5e5)
        assert float(lambda_s(-1.2, 1e6)) == pytest.approx(-2e5)

    def test_monotone(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(-3, 3, 200), rng.uniform(-3, 3, 200)
        assert np.all((lambda_s(a, 1e6) - lambda_s(b, 1e6)) * (a - b) >= 0)

    def test_derivative_selection(self):
        assert lambda_s_prime(np.array([-1.0, 0.0, 1.0, 1.01, -2.0]), 10.0).tolist() == [0.0, 0.0, 0.0, 10.0, 10.0]

    def test_psi0(self):
        assert float(psi0(1.0)) == 0.0
        assert float(psi0(0.0)) == 0.5


class TestFrozenEnergy:
    """Test the frozen-field energy."""

    def test_pure_fluid(self, mesh, alpha):
        phi = ScalarFieldP1.constant(mesh, 1.0)
        assert frozen_energy(phi, None, None, Params(), alpha) == pytest.approx(0.0, abs=1e-12)

    def test_constant_state(self, mesh, alpha):
        params = Params(gamma=0.01, epsilon=0.005)
        phi = ScalarFieldP1.constant(mesh, 0.3)
        expected = (0.01 / 0.005) * (1.0 - 0.09) / 2.0
        assert frozen_energy(phi, None, None, params, alpha) == pytest.approx(expected)

    def test_penalty_above_one(self, mesh, alpha):
        params = Params(gamma=0.01, epsilon=0.005, s=1e6)
        phi = ScalarFieldP1.constant(mesh, 1.1)
        expected = 0.5e6 * 0.01 + (0.01 / 0.005) * (1.0 - 1.21) / 2.0
        assert frozen_energy(phi, None, None, params, alpha) == pytest.approx(expected, rel=1e-9)

    def test_gradient_is_energy_derivative(self, mesh, alpha):
        """reduced_gradient is the exact derivative of the frozen energy with (u, q) fixed."""
        params = Params(gamma=0.05, epsilon=0.05)
        phi = random_phase(mesh, 2).phi
        u = VectorFieldP2.interpolate(mesh, lambda x, y: (np.sin(np.pi * y), x * y))
        q = u.scaled(0.25)
        g = reduced_gradient(phi, u, q, params, alpha)
        d = np.random.default_rng(3).standard_normal(mesh.n_vertices)
        h = 1e-6
        plus = frozen_energy(phi.with_values(phi.values + h * d), u, q, params, alpha)
        minus = frozen_energy(phi.with_values(phi.values - h * d), u, q, params, alpha)
        assert (plus - minus) / (2 * h) == pytest.approx(float(g @ d), rel=1e-6)


class TestCahnHilliardStep:
    """Test the semismooth Newton step."""

    def test_constant_state_is_stationary(self, mesh, alpha):
        params = Params(gamma=0.01, epsilon=0.005)
        prev = PhaseState.from_phi(ScalarFieldP1.constant(mesh, 0.2))
        new = ch_step(prev, None, None, 1.0, params, alpha)
        assert np.allclose(new.phi.values, 0.2)
        assert np.allclose(new.w.values, -(0.01 / 0.005) * 0.2)

    def test_pure_fluid_chemical_potential(self, mesh, alpha):
        """phi = 1 everywhere gives w = -gamma / eps and no gradient."""
        params = Params(gamma=0.01, epsilon=0.005)
        new = ch_step(PhaseState.from_phi(ScalarFieldP1.constant(mesh, 1.0)), None, None, 1e4, params, alpha)
        assert np.allclose(new.phi.values, 1.0)
        assert np.allclose(new.w.values, -2.0)

    def test_jacobian_matches_residual(self, mesh, alpha):
        params = Params(gamma=0.05, epsilon=0.05, s=1e3)
        prev = random_phase(mesh, 4, amplitude=0.8)
        u = VectorFieldP2.interpolate(mesh, lambda x, y: (y, 0.0 * x))
        problem = CahnHilliardProblem(prev, u, None, 0.1, params, alpha)
        x = np.concatenate([prev.phi.values, np.zeros(mesh.n_vertices)])
        d = np.random.default_rng(5).standard_normal(2 * mesh.n_vertices)
        h = 1e-7
        fd = (problem.residual(x + h * d) - problem.residual(x - h * d)) / (2 * h)
        assert np.allclose(problem.jacobian(x) @ d, fd, rtol=1e-5, atol=1e-6)

    def test_nonpositive_tau(self, mesh, alpha):
        prev = PhaseState.from_phi(ScalarFieldP1.constant(mesh, 0.0))
        with pytest.raises(InvalidParameterError):
            ch_step(prev, None, None, 0.0, Params(), alpha)

    def test_iteration_cap(self, mesh, alpha):
        """A non-trivial step cannot converge without iterations."""
        prev = random_phase(mesh, 6)
        with pytest.raises(NewtonNonConvergenceError) as info:
            ch_step(prev, None, None, 1.0, Params(gamma=0.1, epsilon=0.05), alpha, max_iterations=0)
        assert len(info.value.residuals) == 1

    @pytest.mark.parametrize("seed", range(20))
    def test_mass_and_energy(self, mesh, alpha, seed):
        """Mass is kept and the frozen energy does not increase, for any tau."""
        rng = np.random.default_rng(100 + seed)
        params = Params(gamma=0.1, epsilon=0.05, s=1e4)
        prev = random_phase(mesh, seed)
        amplitude = rng.uniform(0.0, 2.0)
        u = VectorFieldP2.interpolate(mesh, lambda x, y: (amplitude * np.sin(np.pi * y), amplitude * x * (1 - x)))
        q = u.scaled(rng.uniform(0.0, 0.5))
        tau = 10.0 ** rng.uniform(-4.0, 4.0)

        new = ch_step(prev, u, q, tau, params, alpha)
        assert abs(new.mass - prev.mass) <= 1e-8 * mesh.domain_area
        before = frozen_energy(prev.phi, u, q, params, alpha)
        after = frozen_energy(new.phi, u, q, params, alpha)
        assert after <= before + 1e-9 * max(1.0, abs(before))
