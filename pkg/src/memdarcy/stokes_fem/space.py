"""Taylor-Hood P2/P1 degree-of-freedom layout on a triangulation.

Velocity DOFs are blocked: all x-components, then all y-components, over the
(reduced) P2 node set. Periodic identifications are applied by mapping full
node indices to representatives before assembly, so periodic contributions
are summed automatically.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .elements import (LOCAL_EDGES, QUAD_POINTS, QUAD_WEIGHTS, element_geometry,
                       p1_values, p1_ref_gradients, p2_ref_gradients, p2_values)


def build_edges(triangles):
    """Unique undirected edges and the (nt, 3) triangle-to-edge table."""
    loc = triangles[:, LOCAL_EDGES]                    # (nt, 3, 2)
    flat = np.sort(loc.reshape(-1, 2), axis=1)
    edges, inverse = np.unique(flat, axis=0, return_inverse=True)
    return edges, inverse.reshape(-1, 3)


def _compact_labels(n, pairs):
    """Union of index pairs -> representative labels numbered by first occurrence."""
    if len(pairs) == 0:
        return np.arange(n)
    pairs = np.asarray(pairs)
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(g, directed=False)
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first, kind="stable")
    relabel = np.empty(len(order), dtype=np.int64)
    relabel[order] = np.arange(len(order))
    return relabel[labels]


@dataclass
class MixedSpace:
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    node_rep: np.ndarray          # full P2 node -> reduced node
    vert_rep: np.ndarray          # vertex -> reduced pressure DOF
    dirichlet_nodes: np.ndarray   # reduced node indices with prescribed velocity
    n_nodes: int                  # reduced P2 node count
    n_pressure: int               # reduced P1 count
    geo: tuple = field(repr=False, default=None)

    @property
    def n_velocity(self) -> int:
        return 2 * self.n_nodes

    @property
    def node_coords(self):
        """Coordinates of all full (unreduced) P2 nodes."""
        mid = 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])
        return np.vstack([self.vertices, mid])

    @property
    def elem_nodes(self):
        """(nt, 6) full P2 node indices per triangle."""
        return np.hstack([self.triangles, len(self.vertices) + self.tri_edges])

    @property
    def elem_vel_nodes(self):
        return self.node_rep[self.elem_nodes]

    @property
    def elem_vel_dofs(self):
        """(nt, 12) reduced velocity DOFs; local order node-major, component-minor."""
        en = self.elem_vel_nodes
        out = np.empty((len(en), 12), dtype=np.int64)
        out[:, 0::2] = en
        out[:, 1::2] = en + self.n_nodes
        return out

    @property
    def elem_pres_dofs(self):
        return self.vert_rep[self.triangles]

    def dirichlet_dofs(self):
        d = self.dirichlet_nodes
        return np.concatenate([d, d + self.n_nodes])

    def rep_coords(self):
        """Coordinates of one representative per reduced P2 node."""
        c = self.node_coords
        out = np.empty((self.n_nodes, 2))
        out[self.node_rep[::-1]] = c[::-1]
        return out

    def rep_pressure_coords(self):
        out = np.empty((self.n_pressure, 2))
        out[self.vert_rep[::-1]] = self.vertices[::-1]
        return out

    # quadrature data -------------------------------------------------------
    def quadrature(self, rule=None):
        """Physical quadrature points (nt, nq, 2) and weights (nt, nq).

        ``rule`` is an optional (reference points, weights) pair; the default is
        the 7-point rule.
        """
        ref, wref = (QUAD_POINTS, QUAD_WEIGHTS) if rule is None else rule
        p0, B, det, _ = self.geo
        pts = p0[:, None, :] + np.einsum("tij,qj->tqi", B, ref)
        w = 0.5 * np.abs(det)[:, None] * wref[None, :]
        return pts, w

    def p2_basis(self, rule=None):
        """P2 values (nq, 6) and physical gradients (nt, nq, 6, 2)."""
        ref = QUAD_POINTS if rule is None else rule[0]
        _, _, _, BinvT = self.geo
        vals = p2_values(ref)
        grads = np.einsum("tij,qaj->tqai", BinvT, p2_ref_gradients(ref))
        return vals, grads

    def p1_basis(self, rule=None):
        ref = QUAD_POINTS if rule is None else rule[0]
        _, _, _, BinvT = self.geo
        vals = p1_values(ref)
        grads = np.einsum("tij,aj->tai", BinvT, p1_ref_gradients())
        return vals, grads

    # field evaluation --------------------------------------------------------
    def velocity_at_quadrature(self, u):
        """Values (nt, nq, 2) and gradients (nt, nq, 2, 2) [k, i] = d_k u_i."""
        vals, grads = self.p2_basis()
        en = self.elem_vel_nodes
        coef = np.stack([u[en], u[en + self.n_nodes]], axis=-1)     # (nt, 6, 2)
        uq = np.einsum("qa,tai->tqi", vals, coef)
        duq = np.einsum("tqak,tai->tqki", grads, coef)
        return uq, duq

    def velocity_at_quadrature_multi(self, U, rule=None):
        """Values (k, nt*nq, 2) for the k coefficient columns of U."""
        vals, _ = self.p2_basis(rule)
        en = self.elem_vel_nodes
        U = np.asarray(U)
        coef = np.stack([U[en], U[en + self.n_nodes]], axis=-1)    # (nt, 6, k, 2)
        uq = np.einsum("qa,taki->ktqi", vals, coef)
        return uq.reshape(U.shape[1], -1, 2), None

    def pressure_at_quadrature(self, p):
        vals, _ = self.p1_basis()
        return np.einsum("qa,ta->tq", vals, p[self.elem_pres_dofs])

    def interpolate_velocity(self, func):
        """Nodal P2 interpolant of a callable (m, 2) -> (m, 2)."""
        vals = np.asarray(func(self.rep_coords()), dtype=float)
        return np.concatenate([vals[:, 0], vals[:, 1]])

    def interpolate_pressure(self, func):
        return np.asarray(func(self.rep_pressure_coords()), dtype=float)


def build_space(vertices, triangles, dirichlet_vertices=(), dirichlet_edges=(),
                periodic_vertex_pairs=()):
    """Set up the Taylor-Hood layout.

    dirichlet_vertices / dirichlet_edges: vertex ids and vertex pairs whose P2
    nodes carry prescribed velocity. periodic_vertex_pairs: (k, 2) identified
    vertex pairs; edge midpoints between identified vertices are paired too.
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    nv = len(vertices)
    edges, tri_edges = build_edges(triangles)
    n_full = nv + len(edges)
    pairs = np.asarray(periodic_vertex_pairs, dtype=np.int64).reshape(-1, 2)

    edge_index = {(int(a), int(b)): k for k, (a, b) in enumerate(edges)}
    node_pairs = [pairs] if len(pairs) else []
    if len(pairs):
        partner = {}
        for a, b in pairs:
            partner.setdefault(int(a), []).append(int(b))
        mid_pairs = []
        for k, (a, b) in enumerate(edges):
            for pa in partner.get(int(a), []):
                for pb in partner.get(int(b), []):
                    key = (min(pa, pb), max(pa, pb))
                    if key in edge_index:
                        mid_pairs.append((nv + k, nv + edge_index[key]))
        if mid_pairs:
            node_pairs.append(np.array(mid_pairs, dtype=np.int64))
    all_pairs = np.vstack(node_pairs) if node_pairs else np.zeros((0, 2), dtype=np.int64)
    node_rep = _compact_labels(n_full, all_pairs)
    vert_rep = _compact_labels(nv, pairs)

    dnodes = [np.asarray(dirichlet_vertices, dtype=np.int64).ravel()]
    de = np.asarray(dirichlet_edges, dtype=np.int64).reshape(-1, 2)
    if len(de):
        de = np.sort(de, axis=1)
        dnodes.append(np.array([nv + edge_index[(int(a), int(b))] for a, b in de], dtype=np.int64))
    dnodes = np.concatenate(dnodes)
    dirichlet = np.unique(node_rep[dnodes]) if len(dnodes) else np.zeros(0, dtype=np.int64)

    return MixedSpace(vertices=vertices, triangles=triangles, edges=edges, tri_edges=tri_edges,
                      node_rep=node_rep, vert_rep=vert_rep, dirichlet_nodes=dirichlet,
                      n_nodes=int(node_rep.max()) + 1, n_pressure=int(vert_rep.max()) + 1,
                      geo=element_geometry(vertices, triangles))


def boundary_edges(triangles):
    """Edges that belong to exactly one triangle."""
    edges, tri_edges = build_edges(triangles)
    counts = np.bincount(tri_edges.ravel(), minlength=len(edges))
    return edges[counts == 1]


def cell_space(mesh):
    """Periodic space on a perforated cell mesh with no-slip on the inclusion."""
    return build_space(mesh.vertices, mesh.triangles,
                       dirichlet_vertices=np.unique(mesh.interface_edges),
                       dirichlet_edges=mesh.interface_edges,
                       periodic_vertex_pairs=mesh.periodic_pairs)


def epsilon_space(dmesh):
    """Space on the tiled domain: no-slip on Gamma_eps, natural condition on Lambda_eps."""
    return build_space(dmesh.vertices, dmesh.triangles,
                       dirichlet_vertices=np.unique(dmesh.interface_edges),
                       dirichlet_edges=dmesh.interface_edges)


def unit_square_mesh(n):
    """Structured triangulation of (0,1)^2 with n x n squares split along the diagonal."""
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(g, g, indexing="xy")
    vertices = np.c_[X.ravel(), Y.ravel()]
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    tris = np.vstack([np.c_[a, b, c], np.c_[a, c, d]])
    # order: square by square (lower triangle, upper triangle)
    order = np.arange(2 * n * n).reshape(2, -1).T.ravel()
    return vertices, tris[order]


def dirichlet_square_space(n):
    vertices, tris = unit_square_mesh(n)
    bedges = boundary_edges(tris)
    return build_space(vertices, tris, dirichlet_vertices=np.unique(bedges), dirichlet_edges=bedges)
