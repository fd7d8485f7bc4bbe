"""Reference-triangle quadrature and Lagrange P1/P2 shape functions.

Reference triangle has vertices (0,0), (1,0), (0,1). P2 local nodes are the three
vertices followed by the midpoints of edges (0,1), (1,2), (2,0).
"""
import numpy as np

# symmetric 7-point rule, exact for polynomials of degree 5 (weights sum to 1)
_A1, _B1, _W1 = 0.0597158717897698, 0.4701420641051151, 0.1323941527885062
_A2, _B2, _W2 = 0.7974269853530873, 0.1012865073234563, 0.1259391805448271

QUAD_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
# weights relative to the triangle area
QUAD_WEIGHTS = np.array([0.225, _W1, _W1, _W1, _W2, _W2, _W2])
QUAD_POINTS = QUAD_BARY[:, 1:]   # reference coordinates (xi, eta)

LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])


def p1_values(xi):
    xi = np.atleast_2d(xi)
    return np.c_[1.0 - xi[:, 0] - xi[:, 1], xi[:, 0], xi[:, 1]]


def p1_ref_gradients():
    return np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def p2_values(xi):
    l = p1_values(xi)
    l0, l1, l2 = l.T
    return np.c_[l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                 4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0]


def p2_ref_gradients(xi):
    """Gradients (npts, 6, 2) of the P2 shape functions in reference coordinates."""
    l = p1_values(xi)
    dl = p1_ref_gradients()
    l0, l1, l2 = l.T
    g = np.empty((len(l), 6, 2))
    for a in range(3):
        g[:, a] = (4 * l[:, a] - 1)[:, None] * dl[a]
    pairs = [(0, 1), (1, 2), (2, 0)]
    for e, (a, b) in enumerate(pairs):
        g[:, 3 + e] = 4 * (l[:, a][:, None] * dl[b] + l[:, b][:, None] * dl[a])
    return g


def element_geometry(vertices, triangles):
    """Affine maps of all triangles: (origin, B, det B, B^{-T}) with B = [p1-p0, p2-p0]."""
    p0 = vertices[triangles[:, 0]]
    B = np.stack([vertices[triangles[:, 1]] - p0, vertices[triangles[:, 2]] - p0], axis=2)
    det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
    BinvT = np.empty_like(B)
    BinvT[:, 0, 0] = B[:, 1, 1] / det
    BinvT[:, 0, 1] = -B[:, 1, 0] / det
    BinvT[:, 1, 0] = -B[:, 0, 1] / det
    BinvT[:, 1, 1] = B[:, 0, 0] / det
    return p0, B, det, BinvT


def refined_rule(levels=2):
    """The 7-point rule applied on 4**levels congruent sub-triangles of the reference triangle."""
    tris = [np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])]
    for _ in range(levels):
        nxt = []
        for t in tris:
            m01, m12, m20 = (t[0] + t[1]) / 2, (t[1] + t[2]) / 2, (t[2] + t[0]) / 2
            nxt += [np.array([t[0], m01, m20]), np.array([m01, t[1], m12]),
                    np.array([m20, m12, t[2]]), np.array([m12, m20, m01])]
        tris = nxt
    pts = np.vstack([QUAD_BARY @ t for t in tris])
    w = np.tile(QUAD_WEIGHTS, len(tris)) / len(tris)
    return pts, w
