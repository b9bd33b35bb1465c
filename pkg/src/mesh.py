"""
Conforming triangular meshes of rectangular domains.
Criss-cross construction, newest-vertex bisection with closure, coarsening along
the refinement tree, and level-set geometry (isolines, sublevel areas) of P1 fields.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence, Tuple, Union

import numpy as np

from .config import Config
from .errors import InvalidParameterError, DegenerateLevelSetError


# Side tags, in the order bottom, right, top, left
SIDES = ("bottom", "right", "top", "left")
SIDE_NORMALS = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])

# Local edge k is opposite local vertex k; edge 2 = (v0, v1) is the refinement edge
LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])

MarkSet = Union[np.ndarray, Sequence[int]]


class RefinementTree:
    """
    Bisection forest over all simplices ever created.

    nodes[k] is the vertex triple of tree node k, parent[k] its parent (-1 for roots),
    children[k] its two children (-1 for leaves). leaf[i] is the node of simplex i.
    """

    def __init__(self, nodes: np.ndarray, parent: np.ndarray, children: np.ndarray, leaf: np.ndarray):
        self.nodes = np.asarray(nodes, dtype=np.int64)
        self.parent = np.asarray(parent, dtype=np.int64)
        self.children = np.asarray(children, dtype=np.int64).reshape(-1, 2)
        self.leaf = np.asarray(leaf, dtype=np.int64)

    @classmethod
    def roots(cls, simplices: np.ndarray) -> "RefinementTree":
        n = len(simplices)
        return cls(simplices.copy(), -np.ones(n, np.int64), -np.ones((n, 2), np.int64), np.arange(n))

    @property
    def size(self) -> int:
        return len(self.nodes)

    def depth(self) -> np.ndarray:
        """Bisection depth of every current simplex."""
        depth = np.zeros(self.size, dtype=np.int64)
        for k in range(self.size):
            if self.parent[k] >= 0:
                depth[k] = depth[self.parent[k]] + 1
        return depth[self.leaf]


@dataclass(frozen=True)
class MeshTransfer:
    """How the vertices and simplices of a new mesh relate to the old one."""
    vertex_source: np.ndarray  # (n_new, 2) old vertex ids; equal entries mean a copied vertex
    simplex_source: np.ndarray  # (m_new,) old simplex id or -1 for merged parents

    def interpolate(self, values: np.ndarray) -> np.ndarray:
        """P1 transfer: copy at surviving vertices, edge mean at new midpoints."""
        values = np.asarray(values)
        return 0.5 * (values[self.vertex_source[:, 0]] + values[self.vertex_source[:, 1]])


class Mesh:
    """Immutable conforming triangulation of an axis-aligned rectangle."""

    def __init__(self, vertices: np.ndarray, simplices: np.ndarray, extent: Tuple[float, float, float, float],
                 tree: RefinementTree = None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.simplices = np.ascontiguousarray(simplices, dtype=np.int64)
        self.extent = tuple(float(v) for v in extent)
        self.tree = tree if tree is not None else RefinementTree.roots(self.simplices)
        self.vertices.setflags(write=False)
        self.simplices.setflags(write=False)

    def __repr__(self) -> str:
        return f"Mesh(n_vertices={self.n_vertices}, n_simplices={self.n_simplices}, extent={self.extent})"

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_simplices(self) -> int:
        return len(self.simplices)

    @property
    def domain_area(self) -> float:
        x0, y0, x1, y1 = self.extent
        return (x1 - x0) * (y1 - y0)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.simplices]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def barycentric_gradients(self) -> np.ndarray:
        """Constant gradients of the three barycentric coordinates, shape (M, 3, 2)."""
        p = self.vertices[self.simplices]
        # grad lambda_k is the rotated opposite edge divided by 2|T|
        opp = p[:, LOCAL_EDGES[:, 1]] - p[:, LOCAL_EDGES[:, 0]]
        grads = np.stack([-opp[..., 1], opp[..., 0]], axis=-1)
        return grads / (2.0 * self.areas)[:, None, None]

    @cached_property
    def _edge_structure(self):
        local = self.simplices[:, LOCAL_EDGES].reshape(-1, 2)
        edges, inverse = np.unique(np.sort(local, axis=1), axis=0, return_inverse=True)
        inverse = np.asarray(inverse).reshape(-1)
        owner = np.repeat(np.arange(self.n_simplices), 3)
        order = np.argsort(inverse, kind="stable")
        sorted_edges = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_edges[1:] != sorted_edges[:-1]
        edge_simplices = -np.ones((len(edges), 2), dtype=np.int64)
        edge_simplices[sorted_edges[first], 0] = owner[order[first]]
        edge_simplices[sorted_edges[~first], 1] = owner[order[~first]]
        return edges, inverse.reshape(-1, 3), edge_simplices

    @property
    def edges(self) -> np.ndarray:
        """Faces as sorted vertex pairs, shape (E, 2)."""
        return self._edge_structure[0]

    @property
    def simplex_edges(self) -> np.ndarray:
        """Edge id of local edge k (opposite vertex k), shape (M, 3)."""
        return self._edge_structure[1]

    @property
    def edge_simplices(self) -> np.ndarray:
        """One or two adjacent simplices per edge; -1 marks the missing side."""
        return self._edge_structure[2]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return np.nonzero(self.edge_simplices[:, 1] < 0)[0]

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    @cached_property
    def edge_tags(self) -> np.ndarray:
        """Side id (index into SIDES) per boundary edge, -1 for interior edges."""
        tags = -np.ones(self.n_edges, dtype=np.int64)
        x0, y0, x1, y1 = self.extent
        tol = 1e-10 * max(x1 - x0, y1 - y0)
        mid = self.edge_midpoints[self.boundary_edges]
        side = np.full(len(mid), -1, dtype=np.int64)
        side[np.abs(mid[:, 0] - x0) < tol] = 3
        side[np.abs(mid[:, 1] - y1) < tol] = 2
        side[np.abs(mid[:, 0] - x1) < tol] = 1
        side[np.abs(mid[:, 1] - y0) < tol] = 0
        tags[self.boundary_edges] = side
        return tags

    @cached_property
    def diameters(self) -> np.ndarray:
        """h_T as the longest edge of each simplex."""
        return self.edge_lengths[self.simplex_edges].max(axis=1)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edges])

    @cached_property
    def vertex_patch_areas(self) -> np.ndarray:
        """|omega_N| for every vertex."""
        return np.bincount(self.simplices.ravel(), weights=np.repeat(self.areas, 3), minlength=self.n_vertices)

    def is_conforming(self) -> bool:
        """No hanging nodes: every single-owner edge lies on the rectangle boundary."""
        if np.any(self.areas <= 0):
            return False
        return bool(np.all(self.edge_tags[self.boundary_edges] >= 0))

    def sublevel_areas(self, values: np.ndarray, level: float = 0.0) -> np.ndarray:
        """Per-simplex area of {f < level} for the piecewise linear f."""
        d = _shift_for_ties(np.asarray(values, dtype=float), level)[self.simplices]
        negative = d < 0
        count = negative.sum(axis=1)
        fraction = (count == 3).astype(float)
        cut = (count == 1) | (count == 2)
        if np.any(cut):
            dc = d[cut]
            neg = negative[cut]
            # the vertex alone on its side of the level
            lone = np.where(count[cut] == 1, np.argmax(neg, axis=1), np.argmin(neg, axis=1))
            others = (lone[:, None] + np.array([1, 2])[None, :]) % 3
            d_lone = np.take_along_axis(dc, lone[:, None], axis=1)[:, 0]
            d_other = np.take_along_axis(dc, others, axis=1)
            corner = np.prod(d_lone[:, None] / (d_lone[:, None] - d_other), axis=1)
            fraction[cut] = np.where(count[cut] == 1, corner, 1.0 - corner)
        return fraction * self.areas


def _shift_for_ties(values: np.ndarray, level: float) -> np.ndarray:
    d = values - level
    span = float(values.max() - values.min()) if values.size else 0.0
    bump = Config.ISOLINE_TIE_BREAK * (span if span > 0 else max(1.0, float(np.abs(values).max(initial=0.0))))
    return np.where(d == 0, bump, d)


def _as_mask(marked: MarkSet, n: int) -> np.ndarray:
    marked = np.asarray(marked)
    if marked.dtype == bool:
        if marked.shape != (n,):
            raise InvalidParameterError("boolean mark set must have one entry per simplex")
        return marked.copy()
    mask = np.zeros(n, dtype=bool)
    if marked.size:
        if marked.min() < 0 or marked.max() >= n:
            raise InvalidParameterError("mark set contains unknown simplex ids")
        mask[marked.astype(np.int64)] = True
    return mask


def build_rectangle_mesh(extent: Tuple[float, float, float, float], target_area: float) -> Mesh:
    """
    Uniform criss-cross triangulation: every cell is split by both diagonals.

    Args:
        extent: (x0, y0, x1, y1)
        target_area: upper bound on simplex area

    Returns:
        Mesh whose simplices all have area <= target_area
    """
    x0, y0, x1, y1 = (float(v) for v in extent)
    width, height = x1 - x0, y1 - y0
    if not (width > 0 and height > 0):
        raise InvalidParameterError("rectangle is degenerate")
    if not target_area > 0:
        raise InvalidParameterError("target_area must be positive")
    if target_area > width * height:
        raise InvalidParameterError(
            f"target_area {target_area} exceeds the domain area {width * height}"
        )

    h = np.sqrt(4.0 * target_area)
    nx = max(1, int(np.ceil(width / h - 1e-9)))
    ny = max(1, int(np.ceil(height / h - 1e-9)))

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    cx, cy = np.meshgrid(0.5 * (xs[:-1] + xs[1:]), 0.5 * (ys[:-1] + ys[1:]))
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    vertices = np.vstack([grid, centers])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    c0 = j * (nx + 1) + i
    c1 = c0 + 1
    c2 = c1 + nx + 1
    c3 = c0 + nx + 1
    z = len(grid) + j * nx + i
    # outer cell edge first: it is the refinement edge, the center is the newest vertex
    simplices = np.stack([
        np.column_stack([c0, c1, z]),
        np.column_stack([c1, c2, z]),
        np.column_stack([c2, c3, z]),
        np.column_stack([c3, c0, z]),
    ], axis=1).reshape(-1, 3)
    return Mesh(vertices, simplices, (x0, y0, x1, y1))


def refine_with_transfer(mesh: Mesh, marked: MarkSet) -> Tuple[Mesh, MeshTransfer]:
    """Newest-vertex bisection of the marked simplices plus conforming closure."""
    mask = _as_mask(marked, mesh.n_simplices)
    nv = mesh.n_vertices
    if not mask.any():
        return mesh, MeshTransfer(np.repeat(np.arange(nv)[:, None], 2, axis=1), np.arange(mesh.n_simplices))

    t = mesh.simplices
    se = mesh.simplex_edges
    edge_marked = np.zeros(mesh.n_edges, dtype=bool)
    edge_marked[se[mask, 2]] = True
    # closure: any simplex with a marked edge must have its refinement edge marked
    while True:
        need = edge_marked[se].any(axis=1) & ~edge_marked[se[:, 2]]
        if not need.any():
            break
        edge_marked[se[need, 2]] = True

    new_edges = np.nonzero(edge_marked)[0]
    midpoint = -np.ones(mesh.n_edges, dtype=np.int64)
    midpoint[new_edges] = nv + np.arange(len(new_edges))
    ends = mesh.edges[new_edges]
    vertices = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[ends[:, 0]] + mesh.vertices[ends[:, 1]])])
    vertex_source = np.vstack([np.repeat(np.arange(nv)[:, None], 2, axis=1), ends])

    tree = mesh.tree
    nodes = [tree.nodes]
    parent = [tree.parent]
    children = tree.children.copy()
    next_node = tree.size

    split = np.nonzero(edge_marked[se[:, 2]])[0]
    keep = np.nonzero(~edge_marked[se[:, 2]])[0]
    p0, p1, p2 = t[split].T
    m = midpoint[se[split, 2]]
    n1 = len(split)
    first_gen = np.vstack([np.column_stack([p2, p0, m]), np.column_stack([p1, p2, m])])
    first_edges = np.concatenate([se[split, 1], se[split, 0]])
    first_owner = np.concatenate([split, split])
    first_sub = np.concatenate([np.zeros(n1, np.int64), np.full(n1, 2, np.int64)])
    first_nodes = next_node + np.arange(2 * n1)
    next_node += 2 * n1
    children[tree.leaf[split]] = np.column_stack([first_nodes[:n1], first_nodes[n1:]])
    nodes.append(first_gen)
    parent.append(np.concatenate([tree.leaf[split], tree.leaf[split]]))

    second = edge_marked[first_edges]
    again = np.nonzero(second)[0]
    rest = np.nonzero(~second)[0]
    c0, c1, c2 = first_gen[again].T
    mm = midpoint[first_edges[again]]
    n2 = len(again)
    second_gen = np.vstack([np.column_stack([c2, c0, mm]), np.column_stack([c1, c2, mm])])
    second_nodes = next_node + np.arange(2 * n2)
    next_node += 2 * n2
    children = np.vstack([children, -np.ones((2 * n1 + 2 * n2, 2), np.int64)])
    children[first_nodes[again]] = np.column_stack([second_nodes[:n2], second_nodes[n2:]])
    nodes.append(second_gen)
    parent.append(np.concatenate([first_nodes[again], first_nodes[again]]))

    leaves = np.vstack([t[keep], first_gen[rest], second_gen])
    owner = np.concatenate([keep, first_owner[rest], first_owner[again], first_owner[again]])
    sub = np.concatenate([np.zeros(len(keep), np.int64), first_sub[rest], first_sub[again], first_sub[again] + 1])
    leaf_nodes = np.concatenate([tree.leaf[keep], first_nodes[rest], second_nodes])
    order = np.lexsort((sub, owner))

    new_tree = RefinementTree(np.vstack(nodes), np.concatenate(parent), children, leaf_nodes[order])
    new_mesh = Mesh(vertices, leaves[order], mesh.extent, new_tree)
    return new_mesh, MeshTransfer(vertex_source, owner[order])


def coarsen_with_transfer(mesh: Mesh, marked: MarkSet) -> Tuple[Mesh, MeshTransfer]:
    """Merge marked sibling pairs whose shared newest vertex can be removed conformingly."""
    mask = _as_mask(marked, mesh.n_simplices)
    nv, nt = mesh.n_vertices, mesh.n_simplices
    identity = MeshTransfer(np.repeat(np.arange(nv)[:, None], 2, axis=1), np.arange(nt))
    if not mask.any():
        return mesh, identity

    tree = mesh.tree
    t = mesh.simplices
    node_is_leaf = np.zeros(tree.size, dtype=bool)
    node_is_leaf[tree.leaf] = True
    parent = tree.parent[tree.leaf]
    has_parent = parent >= 0
    safe_parent = np.where(has_parent, parent, 0)
    pair = has_parent & node_is_leaf[tree.children[safe_parent, 0]] & node_is_leaf[tree.children[safe_parent, 1]]

    newest = t[:, 2]
    valence = np.bincount(t.ravel(), minlength=nv)
    candidate = pair & mask
    ready = np.bincount(newest[candidate], minlength=nv)
    removable = (ready == valence) & ((valence == 2) | (valence == 4))
    drop = candidate & removable[newest]
    if not drop.any():
        return mesh, identity

    merged_parents, first_child = np.unique(parent[drop], return_index=True)
    drop_idx = np.nonzero(drop)[0]
    position_of_parent = drop_idx[first_child]
    kept = np.nonzero(~drop)[0]

    leaves = np.vstack([t[kept], tree.nodes[merged_parents]])
    position = np.concatenate([kept, position_of_parent])
    leaf_nodes = np.concatenate([tree.leaf[kept], merged_parents])
    source = np.concatenate([kept, -np.ones(len(merged_parents), np.int64)])
    order = np.argsort(position, kind="stable")

    children = tree.children.copy()
    children[merged_parents] = -1
    alive = tree.parent < 0
    ids = np.arange(tree.size)
    while True:
        p = np.where(tree.parent >= 0, tree.parent, 0)
        grow = (~alive & (tree.parent >= 0) & alive[p]
                & ((children[p, 0] == ids) | (children[p, 1] == ids)))
        if not grow.any():
            break
        alive |= grow
    node_map = -np.ones(tree.size, dtype=np.int64)
    node_map[alive] = np.arange(alive.sum())

    surviving = ~removable
    vertex_map = -np.ones(nv, dtype=np.int64)
    vertex_map[surviving] = np.arange(surviving.sum())

    new_parent = np.where(tree.parent[alive] >= 0, node_map[np.maximum(tree.parent[alive], 0)], -1)
    new_children = np.where(children[alive] >= 0, node_map[np.maximum(children[alive], 0)], -1)
    new_tree = RefinementTree(vertex_map[tree.nodes[alive]], new_parent, new_children,
                              node_map[leaf_nodes[order]])
    new_mesh = Mesh(mesh.vertices[surviving], vertex_map[leaves[order]], mesh.extent, new_tree)
    kept_vertices = np.nonzero(surviving)[0]
    return new_mesh, MeshTransfer(np.repeat(kept_vertices[:, None], 2, axis=1), source[order])


def refine(mesh: Mesh, marked: MarkSet) -> Mesh:
    """Bisect the marked simplices; neighbours are bisected as conformity requires."""
    return refine_with_transfer(mesh, marked)[0]


def coarsen(mesh: Mesh, marked: MarkSet) -> Mesh:
    """Undo bisections whose sibling pairs are entirely marked."""
    return coarsen_with_transfer(mesh, marked)[0]


@dataclass(frozen=True)
class Isoline:
    """Piecewise linear level set: one segment per crossed simplex."""
    segments: np.ndarray  # (S, 2, 2)
    simplices: np.ndarray  # (S,) source simplex per segment

    @property
    def segment_lengths(self) -> np.ndarray:
        d = self.segments[:, 1] - self.segments[:, 0]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def length(self) -> float:
        return float(self.segment_lengths.sum())

    def __len__(self) -> int:
        return len(self.simplices)


def extract_isoline(mesh: Mesh, values: np.ndarray, level: float = 0.0) -> Isoline:
    """Level set {f = level} of the P1 field with nodal values `values`."""
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.n_vertices,):
        raise InvalidParameterError("field must have one value per vertex")
    if np.all(values == level):
        raise DegenerateLevelSetError(f"degenerate level set: field equals the level {level} everywhere")

    d = _shift_for_ties(values, level)[mesh.simplices]
    positive = d > 0
    crossed = positive.any(axis=1) & ~positive.all(axis=1)
    idx = np.nonzero(crossed)[0]
    if len(idx) == 0:
        return Isoline(np.zeros((0, 2, 2)), idx)

    dc = d[idx]
    p = mesh.vertices[mesh.simplices[idx]]
    a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    cut = positive[idx][:, a] != positive[idx][:, b]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(cut, dc[:, a] / (dc[:, a] - dc[:, b]), 0.0)
    points = p[:, a] + s[..., None] * (p[:, b] - p[:, a])
    which = np.argsort(~cut, axis=1, kind="stable")[:, :2]
    segments = np.take_along_axis(points, which[..., None], axis=1)
    return Isoline(segments, idx)


def sublevel_area(mesh: Mesh, values: np.ndarray, level: float = 0.0) -> float:
    """Exact area of {f < level} for the piecewise linear field."""
    return float(mesh.sublevel_areas(values, level).sum())
