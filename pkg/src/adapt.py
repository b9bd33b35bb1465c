"""
Mesh adaptation for the phase-field gradient flow.
Jump-based error indicators, Doerfler marking restricted to admissible simplices,
the once-per-step adaptive cycle and the CFL-like time-step controller.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .chstep import AlphaFunction, PhaseState, lambda_s
from .errors import MeshLimitError
from .fem import ScalarFieldP1, VectorFieldP2, fem_data, integrate_per_simplex
from .flow import mixing_weight
from .mesh import SIDE_NORMALS, Mesh, coarsen_with_transfer, refine_with_transfer
from .state import MarkingParams, Params


@dataclass(frozen=True)
class IndicatorField:
    """Per-simplex jump indicators, optional per-vertex residual terms."""
    eta_w: np.ndarray  # jumps of grad w
    eta_phi: np.ndarray  # jumps of grad phi
    node_phi: Optional[np.ndarray] = None  # residual phi - phi^k
    node_w: Optional[np.ndarray] = None  # residual of the chemical potential equation

    @property
    def values(self) -> np.ndarray:
        """eta_TE = eta_w + eta_phi, the marking indicator."""
        return self.eta_w + self.eta_phi

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def estimator(self, tau: float, gamma_eps: float) -> float:
        """Squared global estimator; node terms enter only when computed."""
        est = tau * float(np.sum(self.eta_w ** 2)) + gamma_eps * float(np.sum(self.eta_phi ** 2))
        if self.node_phi is not None:
            est += float(np.sum(self.node_phi ** 2)) / tau
        if self.node_w is not None:
            est += float(np.sum(self.node_w ** 2)) / gamma_eps
        return est


def _edge_normals(mesh: Mesh) -> np.ndarray:
    ends = mesh.vertices[mesh.edges]
    t = ends[:, 1] - ends[:, 0]
    n = np.column_stack([t[:, 1], -t[:, 0]])
    return n / np.linalg.norm(n, axis=1)[:, None]


def face_jumps(mesh: Mesh, gradients: np.ndarray, boundary_faces: bool = True) -> np.ndarray:
    """
    Sum over the faces of each simplex of h_E |[grad f . n]_E|.

    For a P1 field the jump is constant along E, so h_E^{1/2} times its L2(E)
    norm equals h_E times its modulus. Boundary faces use the outward normal
    derivative when boundary_faces is set.
    """
    owners = mesh.edge_simplices
    h = mesh.edge_lengths
    interior = owners[:, 1] >= 0
    eta = np.zeros(mesh.n_simplices)

    e = np.nonzero(interior)[0]
    t1, t2 = owners[e, 0], owners[e, 1]
    normals = _edge_normals(mesh)[e]
    jump = np.abs(np.einsum("ed,ed->e", gradients[t1] - gradients[t2], normals)) * h[e]
    np.add.at(eta, t1, jump)
    np.add.at(eta, t2, jump)

    if boundary_faces:
        b = mesh.boundary_edges
        t = owners[b, 0]
        flux = np.abs(np.einsum("ed,ed->e", gradients[t], SIDE_NORMALS[mesh.edge_tags[b]])) * h[b]
        np.add.at(eta, t, flux)
    return eta


def node_residuals(mesh: Mesh, residual_at_quadrature: np.ndarray) -> np.ndarray:
    """h_N^2 ||r - R_N||^2 over each vertex patch, R_N the patch mean of r."""
    r_int = integrate_per_simplex(mesh, residual_at_quadrature)
    r2_int = integrate_per_simplex(mesh, residual_at_quadrature ** 2)
    t = mesh.simplices.ravel()
    n = mesh.n_vertices
    patch = mesh.vertex_patch_areas
    mean = np.bincount(t, weights=np.repeat(r_int, 3), minlength=n) / patch
    square = np.bincount(t, weights=np.repeat(r2_int, 3), minlength=n)
    h = np.zeros(n)
    np.maximum.at(h, t, np.repeat(mesh.diameters, 3))
    return h ** 2 * np.maximum(square - patch * mean ** 2, 0.0)


def compute_indicators(phase: PhaseState, previous: Optional[ScalarFieldP1] = None,
                       u: Optional[VectorFieldP2] = None, q: Optional[VectorFieldP2] = None,
                       params: Optional[Params] = None, alpha: Optional[AlphaFunction] = None,
                       diagnostic: bool = False, boundary_faces: bool = True) -> IndicatorField:
    """
    Indicators of the new phase state.

    The node residual terms are evaluated only with diagnostic=True and need
    the previous phase field, the flow pair and the model constants.
    """
    mesh = phase.mesh
    eta_w = face_jumps(mesh, phase.w.gradients(), boundary_faces)
    eta_phi = face_jumps(mesh, phase.phi.gradients(), boundary_faces)
    if not diagnostic:
        return IndicatorField(eta_w, eta_phi)

    if previous is None or params is None or alpha is None:
        raise ValueError("diagnostic indicators need previous, params and alpha")
    phq = phase.phi.at_quadrature()
    prev_q = previous.at_quadrature()
    weight = mixing_weight(u, q) if u is not None else np.zeros_like(fem_data(mesh).jxw)
    r1 = phq - prev_q
    r2 = (alpha.derivative(phq) * weight + lambda_s(phq, params.s)
          - (params.gamma / params.epsilon) * prev_q - phase.w.at_quadrature())
    return IndicatorField(eta_w, eta_phi, node_residuals(mesh, r1), node_residuals(mesh, r2))


def admissible(mesh: Mesh, mp: MarkingParams) -> np.ndarray:
    areas = mesh.areas
    return (areas >= mp.a_min) & (areas <= mp.a_max)


def doerfler_mark(eta, mp: MarkingParams, mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    """
    Refine and coarsen sets, as sorted simplex ids.

    The refine set is the shortest prefix of the simplices ordered by
    descending indicator (ties by index) carrying theta_r of the total,
    intersected with the admissible simplices. A simplex in both sets is
    refined only.
    """
    values = eta.values if isinstance(eta, IndicatorField) else np.asarray(eta, dtype=float)
    n = len(values)
    allowed = admissible(mesh, mp)
    total = float(values.sum())

    refine_mask = np.zeros(n, dtype=bool)
    if total > 0:
        order = np.lexsort((np.arange(n), -values))
        bulk = np.cumsum(values[order])
        count = int(np.searchsorted(bulk, mp.theta_r * total * (1.0 - 1e-12))) + 1
        refine_mask[order[:min(count, n)]] = True

    coarsen_mask = values <= mp.theta_c * total / n
    refine_mask &= allowed
    coarsen_mask &= allowed & ~refine_mask
    return np.nonzero(refine_mask)[0], np.nonzero(coarsen_mask)[0]


@dataclass(frozen=True)
class AdaptResult:
    mesh: Mesh
    phase: PhaseState
    indicators: IndicatorField
    refined: int
    coarsened: int

    @property
    def changed(self) -> bool:
        return self.refined > 0 or self.coarsened > 0


def adapt_cycle(phase: PhaseState, mp: MarkingParams, indicators: Optional[IndicatorField] = None,
                boundary_faces: bool = True) -> AdaptResult:
    """
    One adaptive cycle: indicators, marking, coarsening then refinement, and
    transfer of (phi, w) to the new mesh.

    Coarsening injects at the surviving vertices; phi is then shifted by a
    constant so its integral is unchanged. Flow fields are not transferred.

    Raises:
        MeshLimitError: the refined mesh exceeds mp.max_simplices
    """
    mesh = phase.mesh
    indicators = indicators or compute_indicators(phase, boundary_faces=boundary_faces)
    refine_ids, coarsen_ids = doerfler_mark(indicators, mp, mesh)
    phi, w = phase.phi.values, phase.w.values
    mass = phase.mass

    coarse, transfer = coarsen_with_transfer(mesh, coarsen_ids)
    coarsened = mesh.n_simplices - coarse.n_simplices
    if coarsened:
        phi = transfer.interpolate(phi)
        w = transfer.interpolate(w)
        shift = (mass - ScalarFieldP1(coarse, phi).integral()) / coarse.domain_area
        phi = phi + shift

    marked = np.zeros(mesh.n_simplices, dtype=bool)
    marked[refine_ids] = True
    source = transfer.simplex_source
    refine_new = np.nonzero((source >= 0) & marked[np.maximum(source, 0)])[0]
    fine, transfer = refine_with_transfer(coarse, refine_new)
    if fine.n_simplices > mp.max_simplices:
        raise MeshLimitError(
            f"adapted mesh has {fine.n_simplices} simplices (cap {mp.max_simplices}); increase marking.a_min"
        )
    refined = fine.n_simplices - coarse.n_simplices
    if refined:
        phi = transfer.interpolate(phi)
        w = transfer.interpolate(w)

    new_phase = PhaseState(ScalarFieldP1(fine, phi), ScalarFieldP1(fine, w), phase.newton_iterations)
    return AdaptResult(fine, new_phase, indicators, refined=refined, coarsened=coarsened)


def refine_interface(mesh: Mesh, fn: Callable[[np.ndarray, np.ndarray], np.ndarray], levels: int,
                     a_min: float, band: float = 0.99) -> ScalarFieldP1:
    """
    Resolve the interface of an initial phase field before the first step.

    Simplices where the interpolant of fn changes sign or leaves the pure
    phases (|phi| < band) are bisected while their children stay above a_min.
    fn is re-interpolated after every round.
    """
    field = ScalarFieldP1.interpolate(mesh, fn)
    for _ in range(levels):
        local = field.values[mesh.simplices]
        transition = (np.abs(local) < band).any(axis=1) | (local.max(axis=1) * local.min(axis=1) < 0)
        marked = transition & (mesh.areas >= 2.0 * a_min)
        if not marked.any():
            break
        mesh = refine_with_transfer(mesh, np.nonzero(marked)[0])[0]
        field = ScalarFieldP1.interpolate(mesh, fn)
    return field


def next_time_step(w: ScalarFieldP1, tau_max: float) -> float:
    """
    CFL-like step tau = min(tau_max, min_T h_T / |grad w|_T).

    Simplices with vanishing gradient impose no bound. The published update
    reads max(tau_max, tau*), which contradicts tau_max being an upper bound;
    min is used.
    """
    if tau_max <= 0:
        raise ValueError("tau_max must be positive")
    mesh = w.mesh
    g = np.linalg.norm(w.gradients(), axis=1)
    with np.errstate(divide="ignore"):
        bound = np.where(g > 0, mesh.diameters / g, np.inf)
    return float(min(tau_max, bound.min()))
