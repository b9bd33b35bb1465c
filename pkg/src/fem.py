"""
Finite element spaces on triangle meshes.
P1 scalar and P2 vector (Taylor-Hood) degrees of freedom, quadrature, boundary
interpolation and sparse assembly of every form used by the flow and phase solvers.
"""

import weakref
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, InvalidParameterError
from .mesh import LOCAL_EDGES, SIDES, SIDE_NORMALS, Mesh
from .state import BoundaryProfile


@dataclass(frozen=True)
class QuadratureRule:
    """Triangle rule in barycentric coordinates; weights sum to one."""
    points: np.ndarray  # (Q, 3)
    weights: np.ndarray  # (Q,)
    degree: int


def _symmetric_rule(groups) -> QuadratureRule:
    points, weights = [], []
    for a, b, w in groups:
        for k in range(3):
            bary = np.full(3, b)
            bary[k] = a
            points.append(bary)
            weights.append(w)
    return QuadratureRule(np.array(points), np.array(weights), degree=4)


# 6-point rule, exact for polynomials of degree 4
DEGREE4 = _symmetric_rule([
    (0.108103018168070, 0.445948490915965, 0.223381589678011),
    (0.816847572980459, 0.091576213509771, 0.109951743655322),
])

# 2-point Gauss-Legendre on [0, 1], used along segments
GAUSS2_POINTS = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
GAUSS2_WEIGHTS = np.array([0.5, 0.5])


def p1_basis(bary: np.ndarray) -> np.ndarray:
    return np.asarray(bary, dtype=float)


def p2_basis(bary: np.ndarray) -> np.ndarray:
    """Values of the six P2 shape functions: three vertex then three edge functions."""
    lam = np.asarray(bary, dtype=float)
    vertex = lam * (2.0 * lam - 1.0)
    edge = 4.0 * lam[..., LOCAL_EDGES[:, 0]] * lam[..., LOCAL_EDGES[:, 1]]
    return np.concatenate([vertex, edge], axis=-1)


class FEMData:
    """Per-mesh quadrature data and degree-of-freedom maps."""

    def __init__(self, mesh: Mesh, rule: QuadratureRule = DEGREE4):
        self.rule = rule
        bary = rule.points
        self.jxw = mesh.areas[:, None] * rule.weights[None, :]  # (M, Q)
        self.phi1 = p1_basis(bary)  # (Q, 3)
        self.phi2 = p2_basis(bary)  # (Q, 6)
        self.points = np.einsum("qk,mkd->mqd", bary, mesh.vertices[mesh.simplices])  # (M, Q, 2)

        glam = mesh.barycentric_gradients  # (M, 3, 2)
        self.grad1 = glam  # constant per element
        a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
        grad_vertex = (4.0 * bary - 1.0)[None, :, :, None] * glam[:, None, :, :]
        grad_edge = 4.0 * (bary[None, :, b, None] * glam[:, None, a, :] + bary[None, :, a, None] * glam[:, None, b, :])
        self.grad2 = np.concatenate([grad_vertex, grad_edge], axis=2)  # (M, Q, 6, 2)
        lap_vertex = 4.0 * np.einsum("mkd,mkd->mk", glam, glam)
        lap_edge = 8.0 * np.einsum("mkd,mkd->mk", glam[:, a], glam[:, b])
        self.laplace2 = np.concatenate([lap_vertex, lap_edge], axis=1)  # (M, 6)

        self.n1 = mesh.n_vertices
        self.n2 = mesh.n_vertices + mesh.n_edges
        self.dofs1 = mesh.simplices
        self.dofs2 = np.hstack([mesh.simplices, mesh.n_vertices + mesh.simplex_edges])


_FEM_DATA: "weakref.WeakKeyDictionary[Mesh, FEMData]" = weakref.WeakKeyDictionary()


def fem_data(mesh: Mesh) -> FEMData:
    """Quadrature data of a mesh, kept for as long as the mesh is alive."""
    data = _FEM_DATA.get(mesh)
    if data is None:
        data = _FEM_DATA[mesh] = FEMData(mesh)
    return data


def p2_node_coordinates(mesh: Mesh) -> np.ndarray:
    return np.vstack([mesh.vertices, mesh.edge_midpoints])


def _assemble(local: np.ndarray, rows: np.ndarray, cols: np.ndarray, shape: Tuple[int, int]) -> sp.csr_matrix:
    """Scatter element matrices (M, k, l) into a CSR matrix; duplicates are summed."""
    r = np.broadcast_to(rows[:, :, None], local.shape).ravel()
    c = np.broadcast_to(cols[:, None, :], local.shape).ravel()
    return sp.coo_matrix((local.ravel(), (r, c)), shape=shape).tocsr()


# --------------------------------------------------------------------------- fields

class ScalarFieldP1:
    """Continuous piecewise linear field, one coefficient per vertex."""

    def __init__(self, mesh: Mesh, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_vertices,):
            raise InvalidParameterError(
                f"P1 field needs {mesh.n_vertices} coefficients, got shape {values.shape}"
            )
        self.mesh = mesh
        self.values = values

    @classmethod
    def constant(cls, mesh: Mesh, value: float) -> "ScalarFieldP1":
        return cls(mesh, np.full(mesh.n_vertices, float(value)))

    @classmethod
    def interpolate(cls, mesh: Mesh, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "ScalarFieldP1":
        x, y = mesh.vertices.T
        return cls(mesh, np.broadcast_to(fn(x, y), (mesh.n_vertices,)).astype(float))

    def with_values(self, values: np.ndarray) -> "ScalarFieldP1":
        return ScalarFieldP1(self.mesh, values)

    def at_quadrature(self) -> np.ndarray:
        data = fem_data(self.mesh)
        return self.values[data.dofs1] @ data.phi1.T  # (M, Q)

    def gradients(self) -> np.ndarray:
        """Elementwise constant gradient, shape (M, 2)."""
        return np.einsum("mk,mkd->md", self.values[self.mesh.simplices], self.mesh.barycentric_gradients)

    def integral(self) -> float:
        return float(np.sum(self.mesh.areas * self.values[self.mesh.simplices].mean(axis=1)))


class VectorFieldP2:
    """Continuous piecewise quadratic vector field; values[i] is component i on P2 nodes."""

    def __init__(self, mesh: Mesh, values: np.ndarray):
        n2 = mesh.n_vertices + mesh.n_edges
        values = np.asarray(values, dtype=float)
        if values.shape == (2 * n2,):
            values = values.reshape(2, n2)
        if values.shape != (2, n2):
            raise InvalidParameterError(f"P2 vector field needs 2 x {n2} coefficients, got shape {values.shape}")
        self.mesh = mesh
        self.values = values

    @classmethod
    def zeros(cls, mesh: Mesh) -> "VectorFieldP2":
        return cls(mesh, np.zeros((2, mesh.n_vertices + mesh.n_edges)))

    @classmethod
    def interpolate(cls, mesh: Mesh, fn: Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]
                    ) -> "VectorFieldP2":
        x, y = p2_node_coordinates(mesh).T
        ux, uy = fn(x, y)
        n = len(x)
        return cls(mesh, np.vstack([np.broadcast_to(ux, (n,)), np.broadcast_to(uy, (n,))]))

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    @property
    def vertex_values(self) -> np.ndarray:
        return self.values[:, : self.mesh.n_vertices].T

    def at_quadrature(self) -> np.ndarray:
        """Values at quadrature points, shape (M, Q, 2)."""
        data = fem_data(self.mesh)
        local = self.values[:, data.dofs2]  # (2, M, 6)
        return np.einsum("imk,qk->mqi", local, data.phi2)

    def gradient_at_quadrature(self) -> np.ndarray:
        """Jacobian d u_i / d x_j at quadrature points, shape (M, Q, 2, 2)."""
        data = fem_data(self.mesh)
        local = self.values[:, data.dofs2]
        return np.einsum("imk,mqkj->mqij", local, data.grad2)

    def laplacian(self) -> np.ndarray:
        """Elementwise constant Laplacian of each component, shape (M, 2)."""
        data = fem_data(self.mesh)
        return np.einsum("imk,mk->mi", self.values[:, data.dofs2], data.laplace2)

    def scaled(self, factor: float) -> "VectorFieldP2":
        return VectorFieldP2(self.mesh, factor * self.values)


# ------------------------------------------------------------------- boundary data

def profile_eval(profile: BoundaryProfile, x) -> np.ndarray:
    """Parabolic magnitude h(1-((x-m)/(l/2))^2) inside the support, zero outside."""
    x = np.asarray(x, dtype=float)
    r = (x - profile.center) / (0.5 * profile.width)
    return np.where(np.abs(r) < 1.0, profile.height * (1.0 - r * r), 0.0)


def _side_index(profile: BoundaryProfile) -> int:
    return SIDES.index(profile.side)


def profile_direction(profile: BoundaryProfile) -> np.ndarray:
    """Unit-height velocity direction: normal part along the flow, tangential along the side."""
    side = _side_index(profile)
    outward = SIDE_NORMALS[side]
    flow = outward if profile.kind == "outflow" else -outward
    tangent = np.array([1.0, 0.0]) if profile.side in ("bottom", "top") else np.array([0.0, 1.0])
    return profile.normal * flow + profile.tangential * tangent


def _side_span(mesh: Mesh, side: int) -> Tuple[float, float]:
    x0, y0, x1, y1 = mesh.extent
    return (x0, x1) if SIDES[side] in ("bottom", "top") else (y0, y1)


def _node_on_side(mesh: Mesh, coords: np.ndarray, side: int) -> np.ndarray:
    x0, y0, x1, y1 = mesh.extent
    tol = 1e-10 * max(x1 - x0, y1 - y0)
    target = {0: (1, y0), 1: (0, x1), 2: (1, y1), 3: (0, x0)}[side]
    return np.abs(coords[:, target[0]] - target[1]) < tol


def check_profiles(profiles: Sequence[BoundaryProfile], mesh: Mesh):
    """Reject profiles leaving their side or overlapping on one side."""
    for side in range(4):
        on_side = sorted((p for p in profiles if _side_index(p) == side), key=lambda p: p.center)
        lo, hi = _side_span(mesh, side)
        for p in on_side:
            if p.center - 0.5 * p.width < lo - 1e-12 or p.center + 0.5 * p.width > hi + 1e-12:
                raise ConfigError(f"boundary profile on side '{SIDES[side]}' leaves the side", key="boundary.profiles")
        for a, b in zip(on_side, on_side[1:]):
            if a.center + 0.5 * a.width > b.center - 0.5 * b.width + 1e-12:
                raise ConfigError(f"overlapping boundary profiles on side '{SIDES[side]}'", key="boundary.profiles")


def continuous_flux(profiles: Sequence[BoundaryProfile], mesh: Mesh,
                    background: Tuple[float, float] = (0.0, 0.0)) -> Tuple[float, float]:
    """Exact net outward flux of the configured data and its L1 size."""
    b = np.asarray(background, dtype=float)
    flux, size = 0.0, 0.0
    x0, y0, x1, y1 = mesh.extent
    size += np.hypot(*b) * 2.0 * ((x1 - x0) + (y1 - y0))
    for p in profiles:
        outward = SIDE_NORMALS[_side_index(p)]
        d = profile_direction(p)
        flux += (2.0 / 3.0) * p.height * p.width * float(d @ outward)
        flux -= p.width * float(b @ outward)
        size += (2.0 / 3.0) * abs(p.height) * p.width * np.hypot(*d)
        size -= p.width * np.hypot(*b)
    return flux, max(size, 0.0)


class DirichletTrace:
    """Nodal velocity values on all boundary P2 nodes (the discrete g_h)."""

    def __init__(self, mesh: Mesh, nodes: np.ndarray, values: np.ndarray):
        self.mesh = mesh
        self.nodes = np.asarray(nodes, dtype=np.int64)
        self.values = np.asarray(values, dtype=float).reshape(2, len(self.nodes))

    @classmethod
    def zero(cls, mesh: Mesh) -> "DirichletTrace":
        nodes = boundary_p2_nodes(mesh)
        return cls(mesh, nodes, np.zeros((2, len(nodes))))

    def as_field(self) -> VectorFieldP2:
        field = VectorFieldP2.zeros(self.mesh)
        field.values[:, self.nodes] = self.values
        return field

    def scaled(self, factor: float) -> "DirichletTrace":
        return DirichletTrace(self.mesh, self.nodes, factor * self.values)

    def net_flux(self) -> float:
        """Outward flux of the P2 trace (Simpson's rule is exact on each edge)."""
        g = self.as_field().values
        return float(edge_flux(self.mesh, g).sum())

    def size(self) -> float:
        g = self.as_field().values
        mesh = self.mesh
        e = mesh.boundary_edges
        mag = np.hypot(g[0], g[1])
        ends = mesh.edges[e]
        return float(np.sum(mesh.edge_lengths[e] * (mag[ends[:, 0]] + 4.0 * mag[mesh.n_vertices + e] + mag[ends[:, 1]]) / 6.0))


def boundary_p2_nodes(mesh: Mesh) -> np.ndarray:
    return np.concatenate([mesh.boundary_vertices, mesh.n_vertices + mesh.boundary_edges])


def edge_flux(mesh: Mesh, g: np.ndarray) -> np.ndarray:
    """Outward flux of a P2 vector field through each boundary edge."""
    e = mesh.boundary_edges
    normals = SIDE_NORMALS[mesh.edge_tags[e]]
    ends = mesh.edges[e]
    def gn(nodes):
        return np.einsum("ie,ei->e", g[:, nodes], normals)

    return mesh.edge_lengths[e] * (gn(ends[:, 0]) + 4.0 * gn(mesh.n_vertices + e) + gn(ends[:, 1])) / 6.0


def interpolate_boundary(profiles: Sequence[BoundaryProfile], mesh: Mesh,
                         background: Tuple[float, float] = (0.0, 0.0),
                         balance: bool = True) -> DirichletTrace:
    """
    Nodal interpolation of the Dirichlet data at all boundary P2 nodes.

    Args:
        profiles: parabolic in/outflow profiles on the rectangle sides
        mesh: target mesh
        background: value on boundary parts not covered by a profile
        balance: remove the O(h^3) discrete flux defect left by profile kinks

    Returns:
        DirichletTrace with zero net flux when balance is set
    """
    profiles = list(profiles)
    check_profiles(profiles, mesh)
    flux, size = continuous_flux(profiles, mesh, background)
    if abs(flux) > 1e-10 * max(size, 1e-300):
        raise ConfigError(f"incompatible boundary data: net outward flux {flux:.6e}", key="boundary")

    nodes = boundary_p2_nodes(mesh)
    coords = p2_node_coordinates(mesh)[nodes]
    values = np.tile(np.asarray(background, dtype=float)[:, None], (1, len(nodes)))
    support = np.zeros(len(nodes), dtype=bool)
    correction = np.zeros((2, len(nodes)))
    for p in profiles:
        side = _side_index(p)
        along = coords[:, 0] if p.side in ("bottom", "top") else coords[:, 1]
        inside = _node_on_side(mesh, coords, side) & (np.abs(along - p.center) < 0.5 * p.width)
        magnitude = profile_eval(p, along[inside])
        values[:, inside] = profile_direction(p)[:, None] * magnitude[None, :]
        support |= inside
        correction[:, inside] = SIDE_NORMALS[side][:, None] * np.abs(magnitude * (profile_direction(p) @ SIDE_NORMALS[side]))[None, :]

    trace = DirichletTrace(mesh, nodes, values)
    if balance and support.any():
        defect = trace.net_flux()
        weight = DirichletTrace(mesh, nodes, correction).net_flux()
        if weight > 0 and defect != 0.0:
            trace = DirichletTrace(mesh, nodes, values - (defect / weight) * correction)
    return trace


# ------------------------------------------------------------------------ assembly

def mass_matrix_p1(mesh: Mesh, weight: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """P1 mass matrix, optionally weighted by values at quadrature points (M, Q)."""
    data = fem_data(mesh)
    w = data.jxw if weight is None else data.jxw * weight
    local = np.einsum("mq,qa,qb->mab", w, data.phi1, data.phi1)
    return _assemble(local, data.dofs1, data.dofs1, (data.n1, data.n1))


def stiffness_matrix_p1(mesh: Mesh) -> sp.csr_matrix:
    data = fem_data(mesh)
    local = mesh.areas[:, None, None] * np.einsum("mad,mbd->mab", data.grad1, data.grad1)
    return _assemble(local, data.dofs1, data.dofs1, (data.n1, data.n1))


def load_vector_p1(mesh: Mesh, values_at_quadrature: np.ndarray) -> np.ndarray:
    """Entries int r N_a for r given at quadrature points."""
    data = fem_data(mesh)
    local = np.einsum("mq,mq,qa->ma", data.jxw, values_at_quadrature, data.phi1)
    return np.bincount(data.dofs1.ravel(), weights=local.ravel(), minlength=data.n1)


def mean_vector_p1(mesh: Mesh) -> np.ndarray:
    """Entries int N_a; the constraint row for mean-zero pressure."""
    return mesh.vertex_patch_areas / 3.0


def mass_matrix_p2(mesh: Mesh, weight: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Scalar P2 mass matrix, optionally weighted at quadrature points."""
    data = fem_data(mesh)
    w = data.jxw if weight is None else data.jxw * weight
    local = np.einsum("mq,qa,qb->mab", w, data.phi2, data.phi2)
    return _assemble(local, data.dofs2, data.dofs2, (data.n2, data.n2))


def stiffness_matrix_p2(mesh: Mesh) -> sp.csr_matrix:
    data = fem_data(mesh)
    local = np.einsum("mq,mqad,mqbd->mab", data.jxw, data.grad2, data.grad2)
    return _assemble(local, data.dofs2, data.dofs2, (data.n2, data.n2))


def convection_matrix(mesh: Mesh, transport: VectorFieldP2) -> sp.csr_matrix:
    """N[a, b] = int phi_a (w . grad phi_b) for the frozen transport w."""
    data = fem_data(mesh)
    w = transport.at_quadrature()
    wgrad = np.einsum("mqd,mqbd->mqb", w, data.grad2)
    local = np.einsum("mq,qa,mqb->mab", data.jxw, data.phi2, wgrad)
    return _assemble(local, data.dofs2, data.dofs2, (data.n2, data.n2))


def velocity_gradient_matrix(mesh: Mesh, u: VectorFieldP2) -> sp.csr_matrix:
    """Block matrix of ((delta . grad) u, v): block (j, i) is the mass weighted by d u_i / d x_j."""
    grad = u.gradient_at_quadrature()
    blocks = [[mass_matrix_p2(mesh, grad[:, :, i, j]) for i in range(2)] for j in range(2)]
    return sp.bmat(blocks, format="csr")


def divergence_matrix(mesh: Mesh) -> sp.csr_matrix:
    """B[r, (i, b)] = -int N_r d phi_b / d x_i, shape (n1, 2 n2)."""
    data = fem_data(mesh)
    blocks = []
    for i in range(2):
        local = -np.einsum("mq,qr,mqb->mrb", data.jxw, data.phi1, data.grad2[..., i])
        blocks.append(_assemble(local, data.dofs1, data.dofs2, (data.n1, data.n2)))
    return sp.hstack(blocks, format="csr")


def vector_block(matrix: sp.spmatrix) -> sp.csr_matrix:
    return sp.block_diag((matrix, matrix), format="csr")


def load_vector_p2(mesh: Mesh, forcing: Optional[Callable] = None) -> np.ndarray:
    """int f . v for a forcing callable f(x, y) -> (fx, fy); flat length 2 n2."""
    data = fem_data(mesh)
    if forcing is None:
        return np.zeros(2 * data.n2)
    x, y = data.points[..., 0], data.points[..., 1]
    fx, fy = forcing(x, y)
    out = []
    for f in (fx, fy):
        f = np.broadcast_to(f, x.shape)
        local = np.einsum("mq,mq,qa->ma", data.jxw, f, data.phi2)
        out.append(np.bincount(data.dofs2.ravel(), weights=local.ravel(), minlength=data.n2))
    return np.concatenate(out)


def integrate(mesh: Mesh, values_at_quadrature: np.ndarray) -> float:
    return float(np.sum(fem_data(mesh).jxw * values_at_quadrature))


def integrate_per_simplex(mesh: Mesh, values_at_quadrature: np.ndarray) -> np.ndarray:
    return np.sum(fem_data(mesh).jxw * values_at_quadrature, axis=1)


def l2_error(field: VectorFieldP2, exact: Callable) -> float:
    """Discrete L2 distance between a P2 field and an analytic vector function."""
    data = fem_data(field.mesh)
    ex, ey = exact(data.points[..., 0], data.points[..., 1])
    uh = field.at_quadrature()
    err = (uh[..., 0] - ex) ** 2 + (uh[..., 1] - ey) ** 2
    return float(np.sqrt(np.sum(data.jxw * err)))

