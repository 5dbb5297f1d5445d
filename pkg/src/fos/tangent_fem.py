"""Per-vertex tangent frames, vector finite-element matrices for tangent
fields on a triangle mesh, and the mixed (saddle-point) solve of the
linearized demons update.

Frames follow the angle-normalized one-ring construction: wedge angles
around each interior vertex are scaled to sum to 2*pi, edges get intrinsic
polar coordinates, and parallel transport across an edge is the rotation
aligning the edge's coordinates at its two endpoints. Boundary vertices
keep their actual angles (no scaling), which makes the connection exactly
flat on planar patches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .mesh import TriangleMesh


class FemError(RuntimeError):
    pass


@dataclass
class TangentFrameAtlas:
    """Orthonormal tangent frames plus intrinsic edge angle coordinates.

    edge_angle[(i, j)] is the polar angle of the directed edge i->j in the
    normalized tangent coordinates at vertex i, measured from e1_i.
    """

    mesh: TriangleMesh
    normals: np.ndarray          # (K, 3)
    e1: np.ndarray               # (K, 3)
    e2: np.ndarray               # (K, 3)
    edge_angle: dict

    def to_ambient(self, coefficients):
        """Per-vertex 2-coefficients -> ambient 3-vectors."""
        c = np.asarray(coefficients, float).reshape(-1, 2)
        return c[:, :1] * self.e1 + c[:, 1:] * self.e2

    def to_frame(self, ambient_vectors):
        """Project ambient 3-vectors to the tangent planes, in coefficients."""
        v = np.asarray(ambient_vectors, float)
        return np.stack([np.sum(v * self.e1, axis=1),
                         np.sum(v * self.e2, axis=1)], axis=1)

    def rotated(self, angles):
        """New atlas with every frame rotated in-plane by the given angles.

        Coefficient fields transform contravariantly; the ambient view of
        any field is unchanged when its coefficients are rotated by the
        same angles.
        """
        b = np.asarray(angles, float)
        cb, sb = np.cos(b)[:, None], np.sin(b)[:, None]
        e1 = cb * self.e1 + sb * self.e2
        e2 = -sb * self.e1 + cb * self.e2
        edge_angle = {(i, j): a - b[i] for (i, j), a in self.edge_angle.items()}
        return TangentFrameAtlas(self.mesh, self.normals, e1, e2, edge_angle)


class TangentField:
    """Tangent vector field: 2 coefficients per vertex in the local frames."""

    def __init__(self, atlas: TangentFrameAtlas, coefficients):
        coefficients = np.asarray(coefficients, float).reshape(-1, 2)
        if len(coefficients) != atlas.mesh.n_vertices:
            raise ValueError("coefficient count must be 2 * vertex count")
        if not np.all(np.isfinite(coefficients)):
            raise ValueError("non-finite coefficients")
        self.atlas = atlas
        self.coefficients = coefficients

    def ambient(self):
        return self.atlas.to_ambient(self.coefficients)

    def norm_max(self):
        return float(np.linalg.norm(self.coefficients, axis=1).max())


def _vertex_rings(mesh: TriangleMesh):
    """Ordered one-ring neighbors and wedge angles per vertex.

    Returns (rings, angles): rings[k] is the ccw-ordered neighbor list, and
    angles[k][m] the wedge angle between rings[k][m] and rings[k][m+1].
    Boundary rings are open chains. Raises FemError on non-manifold edges.
    """
    v = mesh.vertices
    succ = [dict() for _ in range(mesh.n_vertices)]
    wedge = [dict() for _ in range(mesh.n_vertices)]
    first_nb = [None] * mesh.n_vertices
    for face in mesh.faces:
        for k, a, b in ((face[0], face[1], face[2]),
                        (face[1], face[2], face[0]),
                        (face[2], face[0], face[1])):
            if a in succ[k]:
                raise FemError(f"non-manifold edge at vertex {k}")
            succ[k][a] = b
            ea, eb = v[a] - v[k], v[b] - v[k]
            cosang = np.dot(ea, eb) / (np.linalg.norm(ea) * np.linalg.norm(eb))
            wedge[k][a] = float(np.arccos(np.clip(cosang, -1.0, 1.0)))
            if first_nb[k] is None:
                first_nb[k] = a

    rings, angles = [], []
    for k in range(mesh.n_vertices):
        s = succ[k]
        if not s:
            rings.append([])
            angles.append([])
            continue
        targets = set(s.values())
        starts = [nb for nb in s if nb not in targets]
        if starts:                       # boundary: open chain
            start = min(starts)
        else:                            # interior: closed ring
            start = first_nb[k]
        ring = [start]
        ang = []
        cur = start
        while cur in s:
            ang.append(wedge[k][cur])
            cur = s[cur]
            if cur == start:
                break
            ring.append(cur)
        rings.append(ring)
        angles.append(ang)
    return rings, angles


def build_frames(mesh: TriangleMesh) -> TangentFrameAtlas:
    """Frames and intrinsic edge coordinates for every vertex.

    e1 seeds from the first edge of the ordered ring (the chain start on
    the boundary), projected to the plane orthogonal to the vertex normal.
    """
    rings, angles = _vertex_rings(mesh)
    v = mesh.vertices
    normals = mesh.vertex_normals
    e1 = np.zeros_like(v)
    e2 = np.zeros_like(v)
    edge_angle = {}
    boundary = mesh.boundary_vertices
    for k in range(mesh.n_vertices):
        ring = rings[k]
        if not ring:
            e1[k] = [1.0, 0.0, 0.0]
            e2[k] = np.cross(normals[k], e1[k])
            continue
        total = sum(angles[k])
        closed = len(angles[k]) == len(ring) and not boundary[k]
        scale = (2.0 * np.pi / total) if closed and total > 0 else 1.0
        cum = 0.0
        edge_angle[(k, ring[0])] = 0.0
        for m, th in enumerate(angles[k]):
            cum += th * scale
            if m + 1 < len(ring):
                edge_angle[(k, ring[m + 1])] = cum
        d = v[ring[0]] - v[k]
        d = d - np.dot(d, normals[k]) * normals[k]
        nd = np.linalg.norm(d)
        if nd < 1e-14:
            raise FemError(f"degenerate tangent seed at vertex {k}")
        e1[k] = d / nd
        e2[k] = np.cross(normals[k], e1[k])
    return TangentFrameAtlas(mesh, normals, e1, e2, edge_angle)


def _cot_weights(mesh: TriangleMesh):
    """Cotangent edge weights (cot alpha + cot beta)/2 per undirected edge."""
    v = mesh.vertices
    w = {}
    for face in mesh.faces:
        for a, b, c in ((face[0], face[1], face[2]),
                        (face[1], face[2], face[0]),
                        (face[2], face[0], face[1])):
            # angle at c, opposite edge (a, b)
            ea, eb = v[a] - v[c], v[b] - v[c]
            cross = np.linalg.norm(np.cross(ea, eb))
            cot = np.dot(ea, eb) / cross
            key = (min(a, b), max(a, b))
            w[key] = w.get(key, 0.0) + 0.5 * cot
    return w


def transport_rotation(atlas: TangentFrameAtlas, i: int, j: int) -> float:
    """Rotation angle carrying coefficients at i to coefficients at j
    across edge (i, j)."""
    return atlas.edge_angle[(j, i)] + np.pi - atlas.edge_angle[(i, j)]


def assemble_connection_matrices(mesh: TriangleMesh,
                                 atlas: TangentFrameAtlas):
    """Mass matrix R0 (lumped barycentric, SPD) and connection-Dirichlet
    stiffness R1 (symmetric PSD for non-obtuse meshes), both 2K x 2K.

    R1 realizes sum_edges w_ij |u_j - T_ij u_i|^2 with T_ij the parallel
    transport rotation, the Dirichlet energy of the parallel linear basis.
    """
    k_n = mesh.n_vertices
    area = np.zeros(k_n)
    for col in range(3):
        np.add.at(area, mesh.faces[:, col], mesh.face_areas / 3.0)
    r0 = sparse.diags(np.repeat(area, 2), format="csr")

    rows, cols, vals = [], [], []

    def add_block(i, j, block):
        for a in range(2):
            for b in range(2):
                rows.append(2 * i + a)
                cols.append(2 * j + b)
                vals.append(block[a, b])

    eye = np.eye(2)
    for (i, j), w in _cot_weights(mesh).items():
        rho = transport_rotation(atlas, i, j)
        cr, sr = np.cos(rho), np.sin(rho)
        rot = np.array([[cr, -sr], [sr, cr]])
        add_block(i, i, w * eye)
        add_block(j, j, w * eye)
        add_block(j, i, -w * rot)
        add_block(i, j, -w * rot.T)
    r1 = sparse.csr_matrix((vals, (rows, cols)), shape=(2 * k_n, 2 * k_n))
    return r0, r1


def assemble_data_matrices(mesh: TriangleMesh, atlas: TangentFrameAtlas,
                           j_field: TangentField, residual):
    """Sparse Theta2 (block-diagonal J J^T in frame coordinates) and the
    right-hand side Theta1 z with entries -z_k J_k."""
    z = np.asarray(residual, float)
    if z.shape != (mesh.n_vertices,):
        raise ValueError("residual length must equal vertex count")
    jc = j_field.coefficients
    blocks = np.einsum("ka,kb->kab", jc, jc)
    theta2 = sparse.block_diag([blocks[k] for k in range(mesh.n_vertices)],
                               format="csr")
    rhs = (-z[:, None] * jc).ravel()
    return theta2, rhs


@dataclass
class FemSystem:
    mesh: TriangleMesh
    atlas: TangentFrameAtlas
    r0: sparse.spmatrix
    r1: sparse.spmatrix
    theta2: sparse.spmatrix
    rhs: np.ndarray                  # Theta1 z, length 2K
    dirichlet_applied: bool = False


def build_system(mesh, atlas, r0, r1, j_field, residual) -> FemSystem:
    theta2, rhs = assemble_data_matrices(mesh, atlas, j_field, residual)
    return FemSystem(mesh, atlas, r0, r1, theta2, rhs)


def apply_dirichlet(system: FemSystem, penalty: float | None = None) -> FemSystem:
    """Homogeneous Dirichlet conditions on boundary vertices by penalty:
    add M to the two diagonal entries of the top-left block and zero the
    matching right-hand-side entries. No boundary, no change."""
    boundary = np.flatnonzero(system.mesh.boundary_vertices)
    if len(boundary) == 0:
        return system
    theta2 = system.theta2.tolil(copy=True)
    if penalty is None:
        # per-vertex coefficient-norm of the theta2 blocks (the block trace)
        # rather than single diagonal entries, so the penalty — and with it
        # the solution — does not depend on the in-plane frame choice
        d2 = system.theta2.diagonal()
        diag_max = max((d2[0::2] + d2[1::2]).max(),
                       abs(system.r0.diagonal()).max(),
                       abs(system.r1.diagonal()).max())
        penalty = 1e8 * diag_max
    rhs = system.rhs.copy()
    for k in boundary:
        theta2[2 * k, 2 * k] += penalty
        theta2[2 * k + 1, 2 * k + 1] += penalty
        rhs[2 * k] = 0.0
        rhs[2 * k + 1] = 0.0
    return FemSystem(system.mesh, system.atlas, system.r0, system.r1,
                     theta2.tocsr(), rhs, dirichlet_applied=True)


def solve_update(system: FemSystem, lam: float) -> TangentField:
    """Solve the 4K x 4K mixed system

        [Theta2   lam R1] [u]   [Theta1 z]
        [lam R1  -lam R0] [h] = [   0    ]

    with a sparse direct factorization; returns u as a TangentField."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    n2 = system.rhs.shape[0]
    a = sparse.bmat([[system.theta2, lam * system.r1],
                     [lam * system.r1, -lam * system.r0]], format="csc")
    b = np.concatenate([system.rhs, np.zeros(n2)])
    if not np.any(b):
        return TangentField(system.atlas, np.zeros(n2))
    factor = splu(a)
    sol = factor.solve(b)
    if not np.all(np.isfinite(sol)):
        raise FemError("singular demons system; try a larger lambda")
    # two rounds of iterative refinement recover the accuracy lost to the
    # ill-conditioning introduced by the Dirichlet penalty
    for _ in range(2):
        sol = sol + factor.solve(b - a @ sol)
    resid = np.linalg.norm(a @ sol - b)
    if resid > 1e-8 * np.linalg.norm(b):
        raise FemError(f"linear solve residual too large ({resid:.3e}); "
                       "try a larger lambda")
    return TangentField(system.atlas, sol[:n2])
