"""
Penalized Navier-Stokes state solver and lagged adjoint solver.
Both share one Oseen saddle-point system and one linear-solve kernel.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as splin
from pydantic import BaseModel

from .config import Config
from .errors import ConfigError, LinearSolverError, OseenNonConvergenceError
from .events import EventAction, event_log
from .fem import (
    DirichletTrace, ScalarFieldP1, VectorFieldP2, convection_matrix, divergence_matrix, fem_data,
    load_vector_p2, mass_matrix_p1, mass_matrix_p2, mean_vector_p1, stiffness_matrix_p2,
    vector_block, velocity_gradient_matrix,
)
from .mesh import Mesh
from .state import OseenOptions

AlphaFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class FlowState:
    """Velocity and mean-zero pressure of the penalized flow."""
    u: VectorFieldP2
    p: ScalarFieldP1
    sweeps: int = 0
    residuals: List[float] = field(default_factory=list)

    @property
    def mesh(self) -> Mesh:
        return self.u.mesh


@dataclass(frozen=True)
class AdjointState:
    """Adjoint velocity (zero trace) and adjoint pressure."""
    q: VectorFieldP2
    pi: ScalarFieldP1
    lag_sweeps: int = 1
    lag_residual: float = 0.0


class UniquenessReport(BaseModel):
    norm: float
    bound: float
    k_omega: float
    satisfied: bool


class OseenSystem:
    """
    Oseen saddle-point system with Dirichlet rows eliminated.

    Unknowns: interior velocity dofs, P1 pressure, one multiplier for the
    mean-zero pressure constraint.
    """

    def __init__(self, mesh: Mesh, velocity_block: sp.spmatrix, divergence: sp.spmatrix, load: np.ndarray,
                 trace: DirichletTrace, mu: float):
        self.mesh = mesh
        self.velocity_block = velocity_block.tocsr()
        self.divergence = divergence.tocsr()
        self.load = np.asarray(load, dtype=float)
        self.trace = trace
        self.mu = mu

        data = fem_data(mesh)
        self.n1, self.n2 = data.n1, data.n2
        fixed = np.zeros(2 * self.n2, dtype=bool)
        fixed[trace.nodes] = True
        fixed[self.n2 + trace.nodes] = True
        self.fixed = fixed
        self.free = np.nonzero(~fixed)[0]
        self.dirichlet = np.nonzero(fixed)[0]
        g = trace.as_field().flat
        self.g_fixed = g[self.dirichlet]

        A = self.velocity_block
        self.A_ii = A[self.free][:, self.free].tocsc()
        self.B_i = self.divergence[:, self.free]
        self.mean = sp.csr_matrix(mean_vector_p1(mesh)[:, None])
        self.matrix = sp.bmat([
            [self.A_ii, self.B_i.T, None],
            [self.B_i, None, self.mean],
            [None, self.mean.T, None],
        ], format="csc")
        self.rhs = np.concatenate([
            self.load[self.free] - A[self.free][:, self.dirichlet] @ self.g_fixed,
            -self.divergence[:, self.dirichlet] @ self.g_fixed,
            [0.0],
        ])

    @property
    def n_free(self) -> int:
        return len(self.free)

    def expand(self, x: np.ndarray) -> Tuple[VectorFieldP2, ScalarFieldP1, float]:
        u = np.zeros(2 * self.n2)
        u[self.free] = x[: self.n_free]
        u[self.dirichlet] = self.g_fixed
        p = x[self.n_free: self.n_free + self.n1]
        return VectorFieldP2(self.mesh, u), ScalarFieldP1(self.mesh, p), float(x[-1])

    def pack(self, u: VectorFieldP2, p: ScalarFieldP1, multiplier: float = 0.0) -> np.ndarray:
        return np.concatenate([u.flat[self.free], p.values, [multiplier]])

    def residual_norm(self, x: np.ndarray, rhs: Optional[np.ndarray] = None) -> float:
        """Relative algebraic residual of x."""
        b = self.rhs if rhs is None else rhs
        scale = np.linalg.norm(b)
        r = np.linalg.norm(self.matrix @ x - b)
        return float(r / scale) if scale > 0 else float(r)


class BlockTriangularPreconditioner:
    """
    Upper block-triangular preconditioner [[A, C^T], [0, S]].

    The momentum block is factorized exactly; the (pressure, multiplier) Schur
    block is approximated by [[-M_p / mu, c], [c^T, 0]].
    """

    def __init__(self, system: OseenSystem):
        self.system = system
        self.n_free = system.n_free
        self.momentum = splin.splu(system.A_ii)
        schur = sp.bmat([
            [-mass_matrix_p1(system.mesh) / system.mu, system.mean],
            [system.mean.T, None],
        ], format="csc")
        self.schur = splin.splu(schur)
        self.coupling_t = sp.vstack([system.B_i, sp.csr_matrix((1, self.n_free))]).T.tocsr()

    def apply(self, v: np.ndarray) -> np.ndarray:
        z_y = self.schur.solve(v[self.n_free:])
        z_u = self.momentum.solve(v[: self.n_free] - self.coupling_t @ z_y)
        return np.concatenate([z_u, z_y])

    def as_operator(self) -> splin.LinearOperator:
        n = self.system.matrix.shape[0]
        return splin.LinearOperator((n, n), matvec=self.apply)


def solve_oseen(system: OseenSystem, options: Optional[OseenOptions] = None,
                rhs: Optional[np.ndarray] = None, x0: Optional[np.ndarray] = None) -> np.ndarray:
    """Shared linear-solve kernel for state and adjoint systems."""
    options = options or OseenOptions()
    b = system.rhs if rhs is None else rhs
    if not np.any(b):
        return np.zeros_like(b)

    if options.linear_solver == "direct":
        try:
            return splin.splu(system.matrix).solve(b)
        except RuntimeError as e:
            raise LinearSolverError(f"sparse factorization failed: {e}") from e

    try:
        prec = BlockTriangularPreconditioner(system)
    except RuntimeError as e:
        raise LinearSolverError(f"preconditioner factorization failed: {e}") from e
    x, info = splin.gmres(
        system.matrix, b, x0=x0, M=prec.as_operator(),
        rtol=options.gmres_tolerance, atol=0.0,
        restart=options.gmres_restart, maxiter=options.gmres_max_iterations,
    )
    if info != 0:
        raise LinearSolverError(f"GMRES did not converge (info={info})")
    return x


def _flow_blocks(phi: ScalarFieldP1, mu: float, alpha_fn: AlphaFn):
    """alpha-weighted vector mass plus mu times vector stiffness, and the P2 pieces."""
    mesh = phi.mesh
    alpha = alpha_fn(phi.at_quadrature())
    mass_alpha = mass_matrix_p2(mesh, alpha)
    stiffness = stiffness_matrix_p2(mesh)
    return vector_block(mass_alpha + mu * stiffness), mass_alpha, stiffness


def assemble_flow_system(phi: ScalarFieldP1, transport: Optional[VectorFieldP2], mu: float, alpha_fn: AlphaFn,
                         trace: Optional[DirichletTrace] = None, forcing: Optional[Callable] = None) -> OseenSystem:
    """
    Oseen system alpha(phi) u - mu Lap u + (w . grad) u + grad p = f with frozen transport w.

    Args:
        phi: phase field (P1)
        transport: frozen convecting velocity; None gives the Stokes-Brinkman operator
        mu: viscosity
        alpha_fn: porous drag as a function of phi values
        trace: Dirichlet data (zero when omitted)
        forcing: optional body force callable f(x, y) -> (fx, fy)
    """
    mesh = phi.mesh
    block, _, _ = _flow_blocks(phi, mu, alpha_fn)
    if transport is not None:
        block = block + vector_block(convection_matrix(mesh, transport))
    trace = trace or DirichletTrace.zero(mesh)
    return OseenSystem(mesh, block, divergence_matrix(mesh), load_vector_p2(mesh, forcing), trace, mu)


def _check_trace(trace: DirichletTrace):
    flux = trace.net_flux()
    size = trace.size()
    if abs(flux) > 1e-10 * max(size, 1e-300):
        raise ConfigError(f"incompatible Dirichlet data: net flux {flux:.3e} through the boundary", key="boundary")


def solve_state(phi: ScalarFieldP1, trace: DirichletTrace, mu: float, alpha_fn: AlphaFn,
                options: Optional[OseenOptions] = None, forcing: Optional[Callable] = None) -> FlowState:
    """
    Oseen fixed point for the penalized Navier-Stokes equations.

    The first transport is the Stokes solution; sweeps continue until the
    relative nonlinear residual is below options.tolerance.
    """
    options = options or OseenOptions()
    _check_trace(trace)

    stokes = assemble_flow_system(phi, None, mu, alpha_fn, trace, forcing)
    x = solve_oseen(stokes, options)
    if options.stokes:
        u, p, _ = stokes.expand(x)
        return FlowState(u, p, sweeps=0, residuals=[stokes.residual_norm(x)])

    residuals: List[float] = []
    window = Config.OSEEN_DIVERGENCE_WINDOW
    for sweep in range(options.max_sweeps + 1):
        u, p, _ = stokes.expand(x)
        system = assemble_flow_system(phi, u, mu, alpha_fn, trace, forcing)
        residuals.append(system.residual_norm(x))
        if residuals[-1] <= options.tolerance:
            return FlowState(u, p, sweeps=sweep, residuals=residuals)
        if len(residuals) > window and all(residuals[-k] > residuals[-k - 1] for k in range(1, window + 1)):
            raise OseenNonConvergenceError(
                f"Oseen iteration diverging (residual {residuals[-1]:.3e} after {sweep} sweeps)",
                last_iterate=FlowState(u, p, sweeps=sweep, residuals=residuals), residuals=residuals,
            )
        if sweep == options.max_sweeps:
            break
        x = solve_oseen(system, options, x0=x)

    raise OseenNonConvergenceError(
        f"Oseen iteration not converged after {options.max_sweeps} sweeps (residual {residuals[-1]:.3e})",
        last_iterate=FlowState(u, p, sweeps=options.max_sweeps, residuals=residuals), residuals=residuals,
    )


def adjoint_rhs(phi: ScalarFieldP1, u: VectorFieldP2, mu: float, alpha_fn: AlphaFn) -> np.ndarray:
    """alpha u + mu (grad u, grad v): derivative of the objective w.r.t. the velocity."""
    _, mass_alpha, stiffness = _flow_blocks(phi, mu, alpha_fn)
    return vector_block(mass_alpha + mu * stiffness) @ u.flat


def solve_adjoint(phi: ScalarFieldP1, state: FlowState, q_prev: Optional[VectorFieldP2], mu: float,
                  alpha_fn: AlphaFn, options: Optional[OseenOptions] = None) -> AdjointState:
    """
    Linear adjoint Oseen solve with the lagged term (grad u)^T q_prev on the right.

    The convection operator is the transpose of the assembled state convection
    matrix. With options.self_consistent_adjoint the lagged term is iterated to
    a fixed point.
    """
    options = options or OseenOptions()
    mesh = phi.mesh
    u = state.u
    block, _, _ = _flow_blocks(phi, mu, alpha_fn)
    if not options.stokes:
        block = block + vector_block(convection_matrix(mesh, u).T.tocsr())
    system = OseenSystem(mesh, block, divergence_matrix(mesh), adjoint_rhs(phi, u, mu, alpha_fn),
                         DirichletTrace.zero(mesh), mu)
    lag = velocity_gradient_matrix(mesh, u)
    q = q_prev if q_prev is not None else VectorFieldP2.zeros(mesh)

    def lagged_solve(q_lag: VectorFieldP2):
        rhs = system.rhs.copy()
        if not options.stokes:
            rhs[: system.n_free] -= (lag @ q_lag.flat)[system.free]
        q_new, pi, _ = system.expand(solve_oseen(system, options, rhs=rhs))
        return q_new, pi

    q_new, pi = lagged_solve(q)
    if not options.self_consistent_adjoint:
        return AdjointState(q_new, pi, lag_sweeps=1, lag_residual=_relative_change(q_new, q))

    for sweep in range(2, Config.ADJOINT_FIXED_POINT_MAX + 1):
        change = _relative_change(q_new, q)
        if change <= Config.ADJOINT_FIXED_POINT_TOLERANCE:
            return AdjointState(q_new, pi, lag_sweeps=sweep - 1, lag_residual=change)
        q = q_new
        q_new, pi = lagged_solve(q)
    raise OseenNonConvergenceError(
        f"adjoint fixed point not converged after {Config.ADJOINT_FIXED_POINT_MAX} sweeps",
        last_iterate=AdjointState(q_new, pi), residuals=[_relative_change(q_new, q)],
    )


def _relative_change(new: VectorFieldP2, old: VectorFieldP2) -> float:
    scale = np.linalg.norm(new.flat)
    diff = np.linalg.norm(new.flat - old.flat)
    return float(diff / scale) if scale > 0 else float(diff)


def velocity_gradient_norm(u: VectorFieldP2) -> float:
    """||grad u|| in L2."""
    K = stiffness_matrix_p2(u.mesh)
    return float(np.sqrt(max(sum(float(c @ (K @ c)) for c in u.values), 0.0)))


def check_uniqueness(state: FlowState, mu: float, domain_area: Optional[float] = None) -> UniquenessReport:
    """Compare ||grad u|| with the smallness bound mu / K_Omega, K_Omega = 0.5 sqrt(|Omega|)."""
    area = state.mesh.domain_area if domain_area is None else domain_area
    k_omega = 0.5 * np.sqrt(area)
    norm = velocity_gradient_norm(state.u)
    bound = mu / k_omega
    return UniquenessReport(norm=norm, bound=bound, k_omega=k_omega, satisfied=bool(norm < bound))


def mixing_weight(u: VectorFieldP2, q: Optional[VectorFieldP2]) -> np.ndarray:
    """1/2 |u|^2 - u . q at quadrature points."""
    uq = u.at_quadrature()
    weight = 0.5 * np.sum(uq * uq, axis=-1)
    if q is not None:
        weight = weight - np.sum(uq * q.at_quadrature(), axis=-1)
    return weight


def check_mixing_assumption(u: VectorFieldP2, q: Optional[VectorFieldP2], step: Optional[int] = None) -> float:
    """Minimum of 1/2 |u|^2 - u . q; a negative value is reported, never raised."""
    minimum = float(mixing_weight(u, q).min())
    if minimum < 0.0:
        event_log.warning(
            EventAction.ASSUMPTION_WARNING,
            f"1/2|u|^2 - u.q attains {minimum:.3e} < 0",
            step=step, minimum=minimum,
        )
    return minimum


def pressure_mean(p: ScalarFieldP1) -> float:
    return p.integral()


def divergence_residual(state: FlowState) -> float:
    """max |(div u, r)| over the P1 test functions."""
    return float(np.max(np.abs(divergence_matrix(state.mesh) @ state.u.flat)))
