"""Diffeomorphic demons-style registration of scalar functions living on a
fixed surface.

The mapping s is built as a composition of small vertex-based flows: each
outer iteration solves the regularized vector-FEM system for an update
field, takes one explicit Euler step, and reprojects onto the surface with
a closest-point map. The inverse applies the negated update fields in
reverse order, followed by the same reprojection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .mesh import ScalarField, TriangleMesh
from .tangent_fem import (TangentField, TangentFrameAtlas, apply_dirichlet,
                          assemble_connection_matrices, build_frames,
                          build_system, solve_update)


# -- surface geometry helpers -------------------------------------------------

def surface_gradient(mesh: TriangleMesh, values) -> np.ndarray:
    """Per-face gradient of a piecewise-linear scalar, shape (F, 3)."""
    f = np.asarray(values, float)
    tri = mesh.vertices[mesh.faces]
    n = mesh.face_area_normals
    a2 = 2.0 * mesh.face_areas
    nhat = n / (0.5 * a2)[:, None]
    # gradient = sum_i f_i (nhat x e_i) / (2A), e_i the edge opposite vertex i
    e0 = tri[:, 2] - tri[:, 1]
    e1 = tri[:, 0] - tri[:, 2]
    e2 = tri[:, 1] - tri[:, 0]
    fv = f[mesh.faces]
    g = (fv[:, 0:1] * np.cross(nhat, e0) + fv[:, 1:2] * np.cross(nhat, e1)
         + fv[:, 2:3] * np.cross(nhat, e2)) / a2[:, None]
    return g


def vertex_gradient(mesh: TriangleMesh, values,
                    atlas: TangentFrameAtlas) -> TangentField:
    """Area-weighted one-ring average of face gradients, projected to the
    vertex tangent planes."""
    g = surface_gradient(mesh, values)
    acc = np.zeros_like(mesh.vertices)
    wsum = np.zeros(mesh.n_vertices)
    wa = mesh.face_areas
    for col in range(3):
        np.add.at(acc, mesh.faces[:, col], wa[:, None] * g)
        np.add.at(wsum, mesh.faces[:, col], wa)
    acc /= wsum[:, None]
    return TangentField(atlas, atlas.to_frame(acc))


def _closest_on_triangles(p, a, b, c):
    """Vectorized closest point on triangles; all inputs broadcast to
    (..., 3). Returns closest points of the same shape."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.sum(ab * ap, axis=-1)
    d2 = np.sum(ac * ap, axis=-1)
    bp = p - b
    d3 = np.sum(ab * bp, axis=-1)
    d4 = np.sum(ac * bp, axis=-1)
    cp = p - c
    d5 = np.sum(ab * cp, axis=-1)
    d6 = np.sum(ac * cp, axis=-1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom
    for t in (t_ab, t_ac, t_bc, v_in, w_in):
        np.nan_to_num(t, copy=False)

    out = a + v_in[..., None] * ab + w_in[..., None] * ac   # interior default
    reg_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    reg_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    reg_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    reg_c = (d6 >= 0) & (d5 <= d6)
    reg_b = (d3 >= 0) & (d4 <= d3)
    reg_a = (d1 <= 0) & (d2 <= 0)
    out = np.where(reg_bc[..., None], b + t_bc[..., None] * (c - b), out)
    out = np.where(reg_ac[..., None], a + t_ac[..., None] * ac, out)
    out = np.where(reg_ab[..., None], a + t_ab[..., None] * ab, out)
    out = np.where(reg_c[..., None], c, out)
    out = np.where(reg_b[..., None], b, out)
    out = np.where(reg_a[..., None], a, out)
    return out


def _barycentric_rows(p, tri):
    """Barycentric coordinates of points (n, 3) in triangles (n, 3, 3)."""
    v0, v1 = tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    v2 = p - tri[:, 0]
    d00 = np.sum(v0 * v0, axis=1)
    d01 = np.sum(v0 * v1, axis=1)
    d11 = np.sum(v1 * v1, axis=1)
    d20 = np.sum(v2 * v0, axis=1)
    d21 = np.sum(v2 * v1, axis=1)
    denom = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / denom
    w = (d00 * d21 - d01 * d20) / denom
    return np.clip(np.stack([1.0 - v - w, v, w], axis=1), 0.0, 1.0)


class SurfaceProjector:
    """Closest-point projection onto a triangle mesh with barycentric
    attachment lookup. Candidate faces are the one-rings of the nearest
    vertices, so projection is exact for points near the surface; ties
    resolve to the lowest face index."""

    def __init__(self, mesh: TriangleMesh, n_nearest: int = 2):
        self.mesh = mesh
        self.tree = cKDTree(mesh.vertices)
        self.n_nearest = min(n_nearest, mesh.n_vertices)
        vertex_faces = mesh.vertex_faces
        width = max(len(fs) for fs in vertex_faces)
        table = np.empty((mesh.n_vertices, width), dtype=int)
        for k, fs in enumerate(vertex_faces):
            fs = sorted(fs)
            table[k, :len(fs)] = fs
            table[k, len(fs):] = fs[0]
        self._face_table = table

    def project(self, points):
        """Returns (projected points, face index, barycentric coords)."""
        pts = np.atleast_2d(np.asarray(points, float))
        _, nearest = self.tree.query(pts, k=self.n_nearest)
        nearest = nearest.reshape(len(pts), -1)
        cand = np.sort(self._face_table[nearest].reshape(len(pts), -1), axis=1)
        tri = self.mesh.vertices[self.mesh.faces[cand]]     # (n, m, 3, 3)
        q = _closest_on_triangles(pts[:, None, :], tri[:, :, 0],
                                  tri[:, :, 1], tri[:, :, 2])
        d = np.sum((pts[:, None, :] - q) ** 2, axis=-1)
        # argmin takes the first minimum; candidates are index-sorted, so
        # ties already resolve to the lowest face index
        best = np.argmin(d, axis=1)
        rows = np.arange(len(pts))
        out = q[rows, best]
        fidx = cand[rows, best]
        bary = _barycentric_rows(out, self.mesh.vertices[self.mesh.faces[fidx]])
        return out, fidx, bary

    def interpolate_at(self, fidx, bary, vertex_values):
        """Barycentric interpolation of per-vertex values (scalar or
        vector) at known attachments."""
        vals = np.asarray(vertex_values, float)
        corners = vals[self.mesh.faces[fidx]]      # (n, 3, ...)
        w = bary.reshape(len(bary), 3, *([1] * (corners.ndim - 2)))
        return np.sum(w * corners, axis=1)

    def interpolate(self, points, vertex_values):
        """Interpolation at the closest surface points."""
        _, fidx, bary = self.project(points)
        return self.interpolate_at(fidx, bary, vertex_values)


# -- the composed mapping -----------------------------------------------------

@dataclass
class VertexMap:
    """Mapping s of the surface into itself, stored as the sequence of
    per-vertex ambient update fields it was composed from."""

    mesh: TriangleMesh
    updates: list = field(default_factory=list)   # each (K, 3) ambient
    _projector: SurfaceProjector | None = None

    @property
    def projector(self):
        if self._projector is None:
            self._projector = SurfaceProjector(self.mesh)
        return self._projector

    def _run(self, points, updates, sign):
        proj = self.projector
        p, fidx, bary = proj.project(points)
        for u in updates:
            moved = p + sign * proj.interpolate_at(fidx, bary, u)
            p, fidx, bary = proj.project(moved)
        return p, fidx, bary

    def apply(self, points) -> np.ndarray:
        """s(points): run the update flows in composition order."""
        return self._run(np.asarray(points, float), self.updates, +1.0)[0]

    def apply_inverse(self, points) -> np.ndarray:
        """Approximate s^-1: negated update fields in reverse order."""
        return self._run(np.asarray(points, float),
                         list(reversed(self.updates)), -1.0)[0]

    def pull_back(self, values) -> np.ndarray:
        """(values o s) sampled at the mesh vertices."""
        _, fidx, bary = self._run(self.mesh.vertices, self.updates, +1.0)
        return self.projector.interpolate_at(fidx, bary,
                                             np.asarray(values, float))

    def push_forward(self, values) -> np.ndarray:
        """(values o s^-1) sampled at the mesh vertices."""
        _, fidx, bary = self._run(self.mesh.vertices,
                                  list(reversed(self.updates)), -1.0)
        return self.projector.interpolate_at(fidx, bary,
                                             np.asarray(values, float))

    def inverse_consistency(self) -> float:
        """max |s^-1(s(x)) - x| over the vertices, as a diagnostic."""
        fwd = self.apply(self.mesh.vertices)
        back = self.apply_inverse(fwd)
        return float(np.linalg.norm(back - self.mesh.vertices, axis=1).max())


# -- registration -------------------------------------------------------------

@dataclass
class DemonsConfig:
    lam: float = 1.0                 # regularization weight
    max_iterations: int = 60
    max_step_frac: float = 0.4      # step cap, fraction of mean edge length
    tol: float = 1e-4               # relative SSD decrease defining a stall
    stall_iterations: int = 3       # consecutive stalls before stopping
    j_mode: str = "symmetric"       # symmetric | moving
    dirichlet: bool = True

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.j_mode not in ("symmetric", "moving"):
            raise ValueError("j_mode must be 'symmetric' or 'moving'")


@dataclass
class DemonsResult:
    mapping: VertexMap
    warped: ScalarField             # moving o s on the fixed surface
    ssd_trace: np.ndarray
    iterations: int
    converged: bool


def _ssd(mesh, a, b, mass):
    return float(np.sum(mass * (a - b) ** 2))


def register_functions(mesh: TriangleMesh, moving, fixed,
                       config: DemonsConfig | None = None,
                       atlas: TangentFrameAtlas | None = None) -> DemonsResult:
    """Find s such that moving o s matches fixed, both given as per-vertex
    values (or ScalarFields) on the same surface."""
    config = config or DemonsConfig()
    m_vals = moving.values if isinstance(moving, ScalarField) else \
        np.asarray(moving, float)
    f_vals = fixed.values if isinstance(fixed, ScalarField) else \
        np.asarray(fixed, float)
    if m_vals.shape != (mesh.n_vertices,) or f_vals.shape != (mesh.n_vertices,):
        raise ValueError("value arrays must match the vertex count")

    if atlas is None:
        atlas = build_frames(mesh)
    r0, r1 = assemble_connection_matrices(mesh, atlas)

    edges = np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]],
                            mesh.faces[:, [2, 0]]])
    mean_edge = float(np.linalg.norm(
        mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1).mean())
    step_cap = config.max_step_frac * mean_edge

    mass = np.zeros(mesh.n_vertices)
    for col in range(3):
        np.add.at(mass, mesh.faces[:, col], mesh.face_areas / 3.0)

    mapping = VertexMap(mesh)
    proj = mapping.projector
    cur, cur_f, cur_b = proj.project(mesh.vertices)   # running s(vertices)
    warped = m_vals.copy()
    trace = [_ssd(mesh, warped, f_vals, mass)]
    stalls = 0
    converged = False
    it = 0
    g_f = vertex_gradient(mesh, f_vals, atlas).coefficients
    for it in range(1, config.max_iterations + 1):
        z = f_vals - warped
        g_w = vertex_gradient(mesh, warped, atlas).coefficients
        jc = -0.5 * (g_w + g_f) if config.j_mode == "symmetric" else -g_w
        j_field = TangentField(atlas, jc)
        system = build_system(mesh, atlas, r0, r1, j_field, z)
        if config.dirichlet:
            system = apply_dirichlet(system)
        u = solve_update(system, config.lam)
        amb = u.ambient()
        umax = float(np.linalg.norm(amb, axis=1).max())
        if umax < 1e-14:
            converged = True
            break
        if umax > step_cap:
            amb = amb * (step_cap / umax)
        mapping.updates.append(amb)
        moved = cur + proj.interpolate_at(cur_f, cur_b, amb)
        cur, cur_f, cur_b = proj.project(moved)
        warped = proj.interpolate_at(cur_f, cur_b, m_vals)
        trace.append(_ssd(mesh, warped, f_vals, mass))
        if trace[-2] - trace[-1] < config.tol * trace[0]:
            stalls += 1
            if stalls >= config.stall_iterations:
                converged = True
                break
        else:
            stalls = 0
    return DemonsResult(mapping, ScalarField(mesh, warped),
                        np.asarray(trace), it, converged)


def _top_eigenvalues(aligned, mass, k=3):
    """Leading eigenvalues of the empirical covariance of the field stack
    in the lumped mass inner product (via the n x n Gram matrix)."""
    x = np.asarray(aligned, float)
    xc = x - x.mean(axis=0)
    gram = (xc * mass) @ xc.T / len(x)
    evals = np.linalg.eigvalsh(gram)[::-1]
    return evals[:k]


def groupwise_template(mesh: TriangleMesh, fields,
                       config: DemonsConfig | None = None,
                       atlas: TangentFrameAtlas | None = None):
    """Joint alignment of n fields on one surface: starting from identity
    maps and the cross-sectional mean as template, each iteration applies
    one linearized demons update per subject toward the current template,
    recomposes the maps, and re-estimates the template as the mean of the
    aligned fields. Stops when the three leading eigenvalues of the
    aligned-field covariance all change by less than 1% over two
    consecutive iterations (scree stability), or at max_iterations.

    Returns (template values, list of VertexMap, list of aligned values).
    """
    config = config or DemonsConfig()
    vals = [f.values if isinstance(f, ScalarField) else np.asarray(f, float)
            for f in fields]
    n = len(vals)
    if n < 2:
        raise ValueError("need at least two fields")
    if atlas is None:
        atlas = build_frames(mesh)
    r0, r1 = assemble_connection_matrices(mesh, atlas)

    edges = np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]],
                            mesh.faces[:, [2, 0]]])
    mean_edge = float(np.linalg.norm(
        mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1).mean())
    step_cap = config.max_step_frac * mean_edge
    mass = np.zeros(mesh.n_vertices)
    for col in range(3):
        np.add.at(mass, mesh.faces[:, col], mesh.face_areas / 3.0)

    mappings = [VertexMap(mesh) for _ in range(n)]
    proj = mappings[0].projector
    for m in mappings[1:]:
        m._projector = proj
    identity = proj.project(mesh.vertices)
    states = [identity] * n
    aligned = [v.copy() for v in vals]
    template = np.mean(aligned, axis=0)
    prev_evals = None
    stable = 0
    for _ in range(config.max_iterations):
        g_t = vertex_gradient(mesh, template, atlas).coefficients
        for i in range(n):
            z = template - aligned[i]
            g_w = vertex_gradient(mesh, aligned[i], atlas).coefficients
            jc = -0.5 * (g_w + g_t) if config.j_mode == "symmetric" else -g_w
            system = build_system(mesh, atlas, r0, r1,
                                  TangentField(atlas, jc), z)
            if config.dirichlet:
                system = apply_dirichlet(system)
            amb = solve_update(system, config.lam).ambient()
            umax = float(np.linalg.norm(amb, axis=1).max())
            if umax < 1e-14:
                continue
            if umax > step_cap:
                amb = amb * (step_cap / umax)
            mappings[i].updates.append(amb)
            cur, cur_f, cur_b = states[i]
            moved = cur + proj.interpolate_at(cur_f, cur_b, amb)
            states[i] = proj.project(moved)
            aligned[i] = proj.interpolate_at(states[i][1], states[i][2],
                                             vals[i])
        template = np.mean(aligned, axis=0)
        evals = _top_eigenvalues(aligned, mass)
        if prev_evals is not None and np.all(
                np.abs(evals - prev_evals)
                <= 0.01 * np.maximum(prev_evals, 1e-300)):
            stable += 1
            if stable >= 2:
                break
        else:
            stable = 0
        prev_evals = evals
    return template, mappings, aligned
