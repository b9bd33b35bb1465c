"""
Scalar diagnostics of the phase-field flow optimizer.
Objective terms, dissipative power, drag, circularity, interface width,
stopping norm, mixing-energy cell fields and the channel connectivity test.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .chstep import AlphaFunction, PhaseState, psi0
from .config import Config
from .errors import DegenerateLevelSetError
from .events import EventAction, event_log
from .fem import (
    DirichletTrace, GAUSS2_POINTS, GAUSS2_WEIGHTS, ScalarFieldP1, VectorFieldP2, fem_data, integrate,
    integrate_per_simplex, stiffness_matrix_p1, stiffness_matrix_p2,
)
from .flow import AdjointState, FlowState, check_uniqueness, mixing_weight, solve_state
from .mesh import LOCAL_EDGES, SIDES, Mesh, extract_isoline, sublevel_area
from .state import BoundaryProfile, DiagnosticsRecord, OseenOptions, Params

DRAG_DIRECTION = (0.0, 1.0)


@dataclass(frozen=True)
class ObjectiveTerms:
    """Breakdown of J_eps; the penalties complete the relaxed functional."""
    porous_energy: float
    dissipation: float
    gradient_energy: float
    potential_energy: float
    penalty_upper: float
    penalty_lower: float

    @property
    def total(self) -> float:
        return self.porous_energy + self.dissipation + self.gradient_energy + self.potential_energy

    @property
    def relaxed(self) -> float:
        return self.total + self.penalty_upper + self.penalty_lower


def dissipative_power(u: VectorFieldP2, mu: float) -> float:
    """F = (mu / 2) int |grad u|^2."""
    K = stiffness_matrix_p2(u.mesh)
    return 0.5 * mu * float(sum(c @ (K @ c) for c in u.values))


def objective(phi: ScalarFieldP1, u: VectorFieldP2, params: Params, alpha: AlphaFunction) -> ObjectiveTerms:
    """Terms of J_eps(phi, u) with psi replaced by psi0 and the obstacle by the two penalties."""
    mesh = phi.mesh
    p = params
    phq = phi.at_quadrature()
    uq = u.at_quadrature()
    grad = phi.gradients()
    return ObjectiveTerms(
        porous_energy=integrate(mesh, 0.5 * alpha(phq) * np.sum(uq * uq, axis=-1)),
        dissipation=dissipative_power(u, p.mu),
        gradient_energy=0.5 * p.gamma * p.epsilon * float(np.sum(mesh.areas * np.sum(grad * grad, axis=1))),
        potential_energy=(p.gamma / p.epsilon) * integrate(mesh, psi0(phq)),
        penalty_upper=integrate(mesh, 0.5 * p.s * np.maximum(0.0, phq - 1.0) ** 2),
        penalty_lower=integrate(mesh, 0.5 * p.s * np.minimum(0.0, phq + 1.0) ** 2),
    )


def reduced_objective(phi: ScalarFieldP1, trace: DirichletTrace, params: Params, alpha: AlphaFunction,
                      options: Optional[OseenOptions] = None) -> Tuple[float, FlowState]:
    """Relaxed objective at phi with u = u(phi) from the state equation."""
    state = solve_state(phi, trace, params.mu, alpha, options)
    return objective(phi, state.u, params, alpha).relaxed, state


# ---------------------------------------------------------------------------- drag

def drag(phi: ScalarFieldP1, state: FlowState, mu: float,
         direction: Sequence[float] = DRAG_DIRECTION, step: Optional[int] = None) -> float:
    """F_D = -int_{phi<0} (-mu Lap(u . a) + grad p . a), evaluated per clipped simplex."""
    mesh = phi.mesh
    a = np.asarray(direction, dtype=float)
    region = mesh.sublevel_areas(phi.values, 0.0)
    if not np.any(region > 0):
        event_log.warning(EventAction.DIAGNOSTIC_WARNING, "drag requested for an empty region {phi < 0}", step=step)
        return 0.0
    lap = state.u.laplacian() @ a
    dp = state.p.gradients() @ a
    return float(-np.sum((-mu * lap + dp) * region))


def _barycentric(mesh: Mesh, simplices: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of points (..., 2) inside the given simplices."""
    centroid = mesh.vertices[mesh.simplices[simplices]].mean(axis=1)
    glam = mesh.barycentric_gradients[simplices]
    offset = points - centroid[:, None, :]
    return 1.0 / 3.0 + np.einsum("skd,sqd->sqk", glam, offset)


def drag_boundary_form(phi: ScalarFieldP1, state: FlowState, mu: float,
                       direction: Sequence[float] = DRAG_DIRECTION) -> float:
    """
    F_D = int_{phi=0} -mu ((nu . grad) u) . a + p nu . a ds, nu = -grad phi / |grad phi|.

    Two-point Gauss rule on each isoline segment.
    """
    mesh = phi.mesh
    a = np.asarray(direction, dtype=float)
    line = extract_isoline(mesh, phi.values, 0.0)
    if len(line) == 0:
        return 0.0
    t = line.simplices
    g = phi.gradients()[t]
    nu = -g / np.linalg.norm(g, axis=1)[:, None]

    start, end = line.segments[:, 0], line.segments[:, 1]
    points = start[:, None, :] + GAUSS2_POINTS[None, :, None] * (end - start)[:, None, :]
    lam = _barycentric(mesh, t, points)  # (S, 2, 3)
    glam = mesh.barycentric_gradients[t]  # (S, 3, 2)
    ea, eb = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    grad_vertex = (4.0 * lam - 1.0)[..., None] * glam[:, None, :, :]
    grad_edge = 4.0 * (lam[:, :, eb, None] * glam[:, None, ea, :] + lam[:, :, ea, None] * glam[:, None, eb, :])
    grad_basis = np.concatenate([grad_vertex, grad_edge], axis=2)  # (S, 2, 6, 2)

    dofs = fem_data(mesh).dofs2[t]
    local_u = state.u.values[:, dofs]  # (2, S, 6)
    jac = np.einsum("isk,sqkj->sqij", local_u, grad_basis)  # d u_i / d x_j
    du_dnu = np.einsum("sqij,sj->sqi", jac, nu)
    p_vals = np.einsum("sqk,sk->sq", lam, state.p.values[mesh.simplices[t]])
    integrand = -mu * (du_dnu @ a) + p_vals * (nu @ a)[:, None]
    return float(np.sum(line.segment_lengths[:, None] * GAUSS2_WEIGHTS[None, :] * integrand))


# ------------------------------------------------------------------------- shape

def circularity(phi: ScalarFieldP1) -> float:
    """sqrt(4 pi |{phi < 0}|) / |{phi = 0}|."""
    mesh = phi.mesh
    length = extract_isoline(mesh, phi.values, 0.0).length
    area = sublevel_area(mesh, phi.values, 0.0)
    if length <= 0.0 or area <= 0.0:
        raise DegenerateLevelSetError("degenerate level set: no zero isoline or empty region {phi < 0}")
    return float(np.sqrt(4.0 * np.pi * area) / length)


def interface_width(phi: ScalarFieldP1, cutoff: float = Config.INTERFACE_CUTOFF) -> float:
    """|{|phi| <= 1 - cutoff}| divided by the length of the zero isoline."""
    mesh = phi.mesh
    length = extract_isoline(mesh, phi.values, 0.0).length
    if length <= 0.0:
        raise DegenerateLevelSetError("degenerate level set: no zero isoline")
    level = 1.0 - cutoff
    band = sublevel_area(mesh, phi.values, level) - sublevel_area(mesh, phi.values, -level)
    return float(max(band, 0.0) / length)


def stopping_norm(w: ScalarFieldP1) -> float:
    """||grad w||_{L2}."""
    return float(np.sqrt(max(float(w.values @ (stiffness_matrix_p1(w.mesh) @ w.values)), 0.0)))


def mixing_energy_fields(phi: ScalarFieldP1, u: VectorFieldP2, q: Optional[VectorFieldP2], params: Params,
                         alpha: AlphaFunction) -> Dict[str, np.ndarray]:
    """Cell means of alpha(phi)(|u|^2/2 - u . q) and (gamma / eps)(1 - phi^2)."""
    mesh = phi.mesh
    phq = phi.at_quadrature()
    porous = integrate_per_simplex(mesh, alpha(phq) * mixing_weight(u, q)) / mesh.areas
    ginzburg = integrate_per_simplex(mesh, (params.gamma / params.epsilon) * (1.0 - phq ** 2)) / mesh.areas
    return {"mixing_porous": porous, "mixing_ginzburg_landau": ginzburg}


# ------------------------------------------------------------------ connectivity

def _profile_edges(mesh: Mesh, profile: BoundaryProfile) -> np.ndarray:
    b = mesh.boundary_edges
    on_side = mesh.edge_tags[b] == SIDES.index(profile.side)
    mid = mesh.edge_midpoints[b]
    along = mid[:, 0] if profile.side in ("bottom", "top") else mid[:, 1]
    return b[on_side & (np.abs(along - profile.center) < 0.5 * profile.width)]


def fluid_components(phi: ScalarFieldP1) -> np.ndarray:
    """Component label of every fluid simplex (vertex mean of phi > 0), -1 elsewhere."""
    mesh = phi.mesh
    fluid = phi.values[mesh.simplices].mean(axis=1) > 0
    owners = mesh.edge_simplices
    e = owners[:, 1] >= 0
    t1, t2 = owners[e, 0], owners[e, 1]
    link = fluid[t1] & fluid[t2]
    n = mesh.n_simplices
    graph = coo_matrix((np.ones(int(link.sum())), (t1[link], t2[link])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return np.where(fluid, labels, -1)


def connected_outlets(phi: ScalarFieldP1, profiles: Sequence[BoundaryProfile]) -> List[bool]:
    """For each outflow profile, whether a fluid path links it to some inflow profile."""
    mesh = phi.mesh
    labels = fluid_components(phi)
    owners = mesh.edge_simplices

    def touching(profile: BoundaryProfile) -> set:
        comps = labels[owners[_profile_edges(mesh, profile), 0]]
        return set(comps[comps >= 0].tolist())

    inlet = set()
    for p in profiles:
        if p.kind == "inflow":
            inlet |= touching(p)
    return [bool(touching(p) & inlet) for p in profiles if p.kind == "outflow"]


# -------------------------------------------------------------------------- record

def _safe_shape_measures(phi: ScalarFieldP1) -> Tuple[Optional[float], Optional[float]]:
    try:
        return circularity(phi), interface_width(phi)
    except DegenerateLevelSetError:
        return None, None


def build_record(step: int, time: float, tau: float, alpha_bar: float, phi: ScalarFieldP1, flow: FlowState,
                 adjoint: Optional[AdjointState], new_phase: PhaseState, params: Params, alpha: AlphaFunction,
                 adapting: bool, domain_area: float) -> DiagnosticsRecord:
    """
    One history row. Objective terms, drag and shape measures use the pair
    (phi^k, u^k); mass and the stopping norm use the new phase state.
    """
    terms = objective(phi, flow.u, params, alpha)
    q = adjoint.q if adjoint is not None else None
    uniqueness = check_uniqueness(flow, params.mu, domain_area)
    theta, width = _safe_shape_measures(phi)
    mesh = new_phase.mesh
    return DiagnosticsRecord(
        step=step,
        time=time,
        tau=tau,
        alpha_bar=alpha_bar,
        porous_energy=terms.porous_energy,
        dissipation=terms.dissipation,
        gradient_energy=terms.gradient_energy,
        potential_energy=terms.potential_energy,
        objective=terms.total,
        penalty_upper=terms.penalty_upper,
        penalty_lower=terms.penalty_lower,
        dissipative_power=terms.dissipation,
        drag=drag(phi, flow, params.mu, step=step),
        circularity=theta,
        interface_width=width,
        mass=new_phase.mass,
        min_mixing_weight=float(mixing_weight(flow.u, q).min()),
        grad_w_norm=stopping_norm(new_phase.w),
        grad_u_norm=uniqueness.norm,
        uniqueness_bound=uniqueness.bound,
        uniqueness_satisfied=uniqueness.satisfied,
        n_simplices=mesh.n_simplices,
        n_vertices=mesh.n_vertices,
        adapting=adapting,
    )

