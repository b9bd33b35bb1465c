"""
One implicit step of the H^-1 gradient flow for the phase field.
Houses the porous drag interpolation alpha_eps, the Moreau-Yosida multiplier
lambda_s, the semismooth Newton solver and the frozen-field energy.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as splin

from .config import Config
from .errors import InvalidParameterError, LinearSolverError, NewtonNonConvergenceError
from .fem import (
    ScalarFieldP1, VectorFieldP2, fem_data, integrate, load_vector_p1, mass_matrix_p1, mean_vector_p1,
    stiffness_matrix_p1,
)
from .flow import mixing_weight
from .state import Params


@dataclass(frozen=True)
class AlphaFunction:
    """
    Porous drag alpha_eps(phi) = c (1 - phi) q / (phi + 1 + q), c = alpha_bar / (2 sqrt(eps)).

    On [1, phi_cut] a C1 quadratic blend brings the slope to zero; beyond
    phi_cut the value is constant. The function is convex and decreasing
    up to phi_cut.
    """
    alpha_bar: float
    q: float = 10.0
    epsilon: float = 0.005
    phi_cut: float = 1.1
    epsilon_scaling: bool = True

    def __post_init__(self):
        if self.alpha_bar <= 0 or self.q <= 0 or self.epsilon <= 0:
            raise InvalidParameterError("alpha_bar, q and epsilon must be positive")
        if self.phi_cut <= 1.0:
            raise InvalidParameterError("phi_cut must be larger than 1")

    @classmethod
    def from_params(cls, params: Params, alpha_bar: Optional[float] = None) -> "AlphaFunction":
        return cls(
            alpha_bar=params.alpha_bar if alpha_bar is None else alpha_bar,
            q=params.q,
            epsilon=params.epsilon,
            phi_cut=params.phi_cut,
            epsilon_scaling=params.alpha_epsilon_scaling,
        )

    @property
    def scale(self) -> float:
        eps = self.epsilon if self.epsilon_scaling else 1.0
        return self.alpha_bar / (2.0 * np.sqrt(eps))

    @property
    def slope_at_one(self) -> float:
        return -self.scale * self.q / (2.0 + self.q)

    @property
    def blend_curvature(self) -> float:
        return -self.slope_at_one / (self.phi_cut - 1.0)

    @property
    def lower_bound(self) -> float:
        """alpha(phi_cut), the most negative value; its modulus is the delta of the boundedness assumption."""
        return 0.5 * self.slope_at_one * (self.phi_cut - 1.0)

    def _pieces(self, phi: np.ndarray):
        phi = np.asarray(phi, dtype=float)
        return phi, phi <= 1.0, (phi > 1.0) & (phi <= self.phi_cut)

    def __call__(self, phi) -> np.ndarray:
        phi, rational, blend = self._pieces(phi)
        c, q = self.scale, self.q
        out = np.full(phi.shape, self.lower_bound)
        p = phi[rational]
        out[rational] = c * (1.0 - p) * q / (p + 1.0 + q)
        d = phi[blend] - 1.0
        out[blend] = self.slope_at_one * d + 0.5 * self.blend_curvature * d * d
        return out

    def derivative(self, phi) -> np.ndarray:
        phi, rational, blend = self._pieces(phi)
        c, q = self.scale, self.q
        out = np.zeros(phi.shape)
        p = phi[rational]
        out[rational] = -c * q * (2.0 + q) / (p + 1.0 + q) ** 2
        out[blend] = self.slope_at_one + self.blend_curvature * (phi[blend] - 1.0)
        return out

    def second_derivative(self, phi) -> np.ndarray:
        phi, rational, blend = self._pieces(phi)
        c, q = self.scale, self.q
        out = np.zeros(phi.shape)
        p = phi[rational]
        out[rational] = 2.0 * c * q * (2.0 + q) / (p + 1.0 + q) ** 3
        out[blend] = self.blend_curvature
        return out


def lambda_s(phi, s: float) -> np.ndarray:
    """Moreau-Yosida multiplier s max(0, phi - 1) + s min(0, phi + 1)."""
    phi = np.asarray(phi, dtype=float)
    return s * np.maximum(0.0, phi - 1.0) + s * np.minimum(0.0, phi + 1.0)


def lambda_s_prime(phi, s: float) -> np.ndarray:
    """Semismooth derivative; the kinks at |phi| = 1 count as inactive."""
    phi = np.asarray(phi, dtype=float)
    return np.where(np.abs(phi) > 1.0, s, 0.0)


def penalty_density(phi, s: float) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    return 0.5 * s * (np.maximum(0.0, phi - 1.0) ** 2 + np.minimum(0.0, phi + 1.0) ** 2)


def psi0(phi) -> np.ndarray:
    """Smooth part of the double obstacle potential, (1 - phi^2) / 2."""
    phi = np.asarray(phi, dtype=float)
    return 0.5 * (1.0 - phi * phi)


@dataclass(frozen=True)
class PhaseState:
    """Phase field phi and chemical potential w on one mesh."""
    phi: ScalarFieldP1
    w: ScalarFieldP1
    newton_iterations: int = 0

    @property
    def mesh(self):
        return self.phi.mesh

    @property
    def mass(self) -> float:
        return self.phi.integral()

    @classmethod
    def from_phi(cls, phi: ScalarFieldP1) -> "PhaseState":
        return cls(phi, ScalarFieldP1.constant(phi.mesh, 0.0))


def _weight(u: Optional[VectorFieldP2], q: Optional[VectorFieldP2], mesh) -> np.ndarray:
    if u is None:
        return np.zeros_like(fem_data(mesh).jxw)
    return mixing_weight(u, q)


def frozen_energy(phi: ScalarFieldP1, u: Optional[VectorFieldP2], q: Optional[VectorFieldP2], params: Params,
                  alpha: AlphaFunction) -> float:
    """
    Free energy of the step with (u, q) frozen:
    int (gamma eps / 2)|grad phi|^2 + (gamma / eps) psi0 + penalty + alpha(phi)(|u|^2 / 2 - u . q).
    """
    mesh = phi.mesh
    gamma, eps = params.gamma, params.epsilon
    phq = phi.at_quadrature()
    grad = phi.gradients()
    gradient_part = 0.5 * gamma * eps * float(np.sum(mesh.areas * np.sum(grad * grad, axis=1)))
    density = (gamma / eps) * psi0(phq) + penalty_density(phq, params.s) + alpha(phq) * _weight(u, q, mesh)
    return gradient_part + integrate(mesh, density)


class CahnHilliardProblem:
    """Residual and Jacobian of the coupled (phi, w) system for one time step."""

    def __init__(self, prev: PhaseState, u: Optional[VectorFieldP2], q: Optional[VectorFieldP2], tau: float,
                 params: Params, alpha: AlphaFunction):
        if tau <= 0:
            raise InvalidParameterError(f"time step must be positive, got {tau}")
        mesh = prev.mesh
        self.mesh = mesh
        self.n = mesh.n_vertices
        self.tau = tau
        self.params = params
        self.alpha = alpha
        self.phi_prev = prev.phi.values
        self.mass = mass_matrix_p1(mesh)
        self.stiffness = stiffness_matrix_p1(mesh)
        self.weight = _weight(u, q, mesh)
        self.explicit = -(params.gamma / params.epsilon) * (self.mass @ self.phi_prev)

    def split(self, x: np.ndarray):
        return x[: self.n], x[self.n:]

    def residual(self, x: np.ndarray) -> np.ndarray:
        phi, w = self.split(x)
        p = self.params
        phq = ScalarFieldP1(self.mesh, phi).at_quadrature()
        nonlinear = lambda_s(phq, p.s) + self.alpha.derivative(phq) * self.weight
        f1 = self.mass @ (phi - self.phi_prev) / self.tau + self.stiffness @ w
        f2 = (p.gamma * p.epsilon * (self.stiffness @ phi) + load_vector_p1(self.mesh, nonlinear)
              + self.explicit - self.mass @ w)
        return np.concatenate([f1, f2])

    def jacobian(self, x: np.ndarray) -> sp.csc_matrix:
        phi, _ = self.split(x)
        p = self.params
        phq = ScalarFieldP1(self.mesh, phi).at_quadrature()
        curvature = lambda_s_prime(phq, p.s) + self.alpha.second_derivative(phq) * self.weight
        lower_left = p.gamma * p.epsilon * self.stiffness + mass_matrix_p1(self.mesh, curvature)
        return sp.bmat([
            [self.mass / self.tau, self.stiffness],
            [lower_left, -self.mass],
        ], format="csc")

    def energy(self, x: np.ndarray) -> float:
        """
        Step energy for iterates with F1 = 0, convex while 1/2|u|^2 - u.q >= 0:
        (tau / 2) w^T K w + (gamma eps / 2) phi^T K phi + int penalty + int alpha(phi) weight
        - (gamma / eps)(phi_prev, phi).
        On F1 = 0 its derivative along a Newton direction (dphi, dw) is F2 . dphi.
        """
        phi, w = self.split(x)
        p = self.params
        phq = ScalarFieldP1(self.mesh, phi).at_quadrature()
        density = penalty_density(phq, p.s) + self.alpha(phq) * self.weight
        return float(0.5 * self.tau * (w @ (self.stiffness @ w))
                     + 0.5 * p.gamma * p.epsilon * (phi @ (self.stiffness @ phi))
                     + integrate(self.mesh, density) + self.explicit @ phi)

    def initial_guess(self, prev: PhaseState) -> np.ndarray:
        """phi_prev with w replaced by its mean, so F1 vanishes at the start and along every Newton step."""
        w_mean = float(mean_vector_p1(self.mesh) @ prev.w.values) / self.mesh.domain_area
        return np.concatenate([self.phi_prev, np.full(self.n, w_mean)])


ARMIJO_SLOPE = 1e-4
LINE_SEARCH_BISECTIONS = 50


def _energy_line_search(problem: CahnHilliardProblem, x: np.ndarray, delta: np.ndarray, energy: float,
                        slope: float) -> Optional[float]:
    """
    Step length along a descent direction: the full step when it passes the
    Armijo test, otherwise the root of t -> F2(x + t delta) . dphi on (0, 1),
    which is increasing where the step energy is convex. None when no
    length lowers the energy.
    """
    n = problem.n
    slack = 1e-13 * max(1.0, abs(energy))
    if problem.energy(x + delta) <= energy + ARMIJO_SLOPE * slope + slack:
        return 1.0

    lo, hi = 0.0, 1.0
    for _ in range(LINE_SEARCH_BISECTIONS):
        mid = 0.5 * (lo + hi)
        if problem.residual(x + mid * delta)[n:] @ delta[:n] < 0.0:
            lo = mid
        else:
            hi = mid
    for step in (lo, hi):
        if step > 0.0 and problem.energy(x + step * delta) <= energy + slack:
            return step
    return None


def _residual_damping(problem: CahnHilliardProblem, x: np.ndarray, delta: np.ndarray, norm: float) -> float:
    step = 1.0
    while step > Config.NEWTON_MIN_DAMPING:
        if np.linalg.norm(problem.residual(x + step * delta)) < norm:
            break
        step *= 0.5
    return step


def ch_step(prev: PhaseState, u: Optional[VectorFieldP2], q: Optional[VectorFieldP2], tau: float, params: Params,
            alpha: AlphaFunction, tolerance: float = None, max_iterations: int = None) -> PhaseState:
    """
    Semismooth Newton solve of one Cahn-Hilliard step.

    Iterates stay on F1 = 0, where the step energy is a merit function: a
    step is accepted by an Armijo test or an exact line search on it.
    Directions that do not descend, possible where 1/2|u|^2 - u.q < 0,
    fall back to residual damping down to Config.NEWTON_MIN_DAMPING.

    Args:
        prev: phase field phi^k (the mean of the previous w seeds the initial guess)
        u: state velocity; None means no flow coupling
        q: adjoint velocity
        tau: time increment
        params: model constants
        alpha: porous drag interpolation

    Returns:
        PhaseState (phi^{k+1}, w^{k+1})

    Raises:
        NewtonNonConvergenceError: residual above tolerance after the iteration cap
    """
    tolerance = Config.NEWTON_TOLERANCE if tolerance is None else tolerance
    max_iterations = Config.NEWTON_MAX_ITERATIONS if max_iterations is None else max_iterations
    problem = CahnHilliardProblem(prev, u, q, tau, params, alpha)
    n = problem.n

    x = problem.initial_guess(prev)
    r = problem.residual(x)
    norm = float(np.linalg.norm(r))
    energy = problem.energy(x)
    target = tolerance * (1.0 + norm)
    history: List[float] = [norm]

    for iteration in range(max_iterations + 1):
        if norm <= target:
            phi, w = problem.split(x)
            return PhaseState(ScalarFieldP1(problem.mesh, phi), ScalarFieldP1(problem.mesh, w),
                              newton_iterations=iteration)
        if iteration == max_iterations:
            break

        try:
            delta = splin.splu(problem.jacobian(x)).solve(-r)
        except RuntimeError as e:
            raise LinearSolverError(f"Newton system factorization failed: {e}") from e

        slope = float(r[n:] @ delta[:n])
        if slope < 0.0:
            step = _energy_line_search(problem, x, delta, energy, slope)
            if step is None:
                break
        else:
            step = _residual_damping(problem, x, delta, norm)

        x = x + step * delta
        r = problem.residual(x)
        norm = float(np.linalg.norm(r))
        energy = problem.energy(x)
        history.append(norm)

    raise NewtonNonConvergenceError(
        f"semismooth Newton not converged after {len(history) - 1} iterations "
        f"(residual {norm:.3e}, target {target:.3e})",
        residuals=history,
    )


def reduced_gradient(phi: ScalarFieldP1, u: VectorFieldP2, q: VectorFieldP2, params: Params,
                     alpha: AlphaFunction) -> np.ndarray:
    """
    Derivative of the relaxed reduced objective tested with every P1 basis function.

    Entry a is gamma eps (grad phi, grad N_a) - (gamma / eps)(phi, N_a)
    + (lambda_s(phi) + alpha'(phi)(|u|^2 / 2 - u . q), N_a).
    """
    mesh = phi.mesh
    p = params
    phq = phi.at_quadrature()
    density = lambda_s(phq, p.s) + alpha.derivative(phq) * mixing_weight(u, q)
    return (p.gamma * p.epsilon * (stiffness_matrix_p1(mesh) @ phi.values)
            - (p.gamma / p.epsilon) * (mass_matrix_p1(mesh) @ phi.values)
            + load_vector_p1(mesh, density))
