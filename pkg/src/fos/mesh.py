"""Triangle mesh representation, OFF/PLY-ascii I/O and geometric queries."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


class MeshError(ValueError):
    """Raised for malformed mesh files or invalid mesh data."""


class TriangleMesh:
    """Immutable triangulated surface embedded in R^3.

    Vertices and faces keep the order of the source arrays/files. Derived
    per-face quantities (centers, unit normals, areas) and per-vertex
    boundary flags are computed once at construction. Counter-clockwise
    winding is taken to define the outward normal.
    """

    def __init__(self, vertices, faces):
        v = np.asarray(vertices, dtype=float)
        f = np.asarray(faces, dtype=int)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError("vertices must be an (n, 3) array")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError("faces must be an (m, 3) array of vertex indices")
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinate")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")

        self.vertices = v
        self.faces = f
        self.vertices.setflags(write=False)
        self.faces.setflags(write=False)

        tri = v[f]
        self.face_centers = tri.mean(axis=1)
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        norms = np.linalg.norm(cross, axis=1)
        if np.any(norms <= 0.0):
            bad = int(np.argmin(norms))
            raise MeshError(f"degenerate face {bad} (zero area)")
        self.face_areas = 0.5 * norms
        self.face_normals = cross / norms[:, None]
        # area-weighted (un-normalized) normals, used by current metrics
        self.face_area_normals = 0.5 * cross

        self.boundary_vertices = self._boundary_flags()
        self._tree = None
        self._vertex_faces = None
        self._vertex_normals = None

    # -- derived structure ------------------------------------------------

    def _boundary_flags(self):
        flags = np.zeros(len(self.vertices), dtype=bool)
        if not len(self.faces):
            return flags
        e = np.concatenate([self.faces[:, [0, 1]],
                            self.faces[:, [1, 2]],
                            self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        _, inv, counts = np.unique(e, axis=0, return_inverse=True,
                                   return_counts=True)
        boundary_edges = np.unique(e[counts[inv] == 1], axis=0)
        if len(boundary_edges):
            flags[boundary_edges.ravel()] = True
        return flags

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def total_area(self):
        return float(self.face_areas.sum())

    @property
    def vertex_faces(self):
        """List of incident face indices per vertex."""
        if self._vertex_faces is None:
            vf = [[] for _ in range(self.n_vertices)]
            for fi, face in enumerate(self.faces):
                for vi in face:
                    vf[vi].append(fi)
            self._vertex_faces = [np.array(x, dtype=int) for x in vf]
        return self._vertex_faces

    @property
    def vertex_normals(self):
        """Area-weighted average of incident face normals, unit length."""
        if self._vertex_normals is None:
            n = np.zeros((self.n_vertices, 3))
            np.add.at(n, self.faces[:, 0], self.face_area_normals)
            np.add.at(n, self.faces[:, 1], self.face_area_normals)
            np.add.at(n, self.faces[:, 2], self.face_area_normals)
            lens = np.linalg.norm(n, axis=1)
            lens[lens == 0.0] = 1.0
            self._vertex_normals = n / lens[:, None]
        return self._vertex_normals

    # -- queries -----------------------------------------------------------

    def face_geometry(self, face):
        """Return (center, unit normal, area) of one face."""
        return (self.face_centers[face], self.face_normals[face],
                float(self.face_areas[face]))

    def nearest_vertex(self, point):
        """Index of the closest vertex; ties broken by lowest index."""
        return int(self.nearest_vertices(np.asarray(point)[None, :])[0])

    def nearest_vertices(self, points):
        """Vectorized nearest_vertex. Matches an exhaustive scan exactly."""
        points = np.asarray(points, dtype=float)
        if self._tree is None:
            self._tree = cKDTree(self.vertices)
        dist, idx = self._tree.query(points)
        # kd-tree tie-breaking is unspecified; re-resolve near-exact ties
        # by lowest vertex index
        out = np.asarray(idx, dtype=int).copy()
        for i, (d, p) in enumerate(zip(np.atleast_1d(dist), points)):
            cand = self._tree.query_ball_point(p, d * (1.0 + 1e-12) + 1e-300)
            if len(cand) > 1:
                cand = np.sort(np.asarray(cand, dtype=int))
                dd = np.linalg.norm(self.vertices[cand] - p, axis=1)
                best = dd.min()
                out[i] = int(cand[dd <= best][0])
        return out

    def with_vertices(self, new_vertices):
        """New mesh sharing this mesh's faces (deformations copy, never mutate)."""
        return TriangleMesh(new_vertices, self.faces)


class ScalarField:
    """One real value per vertex of a host mesh (a piecewise-linear function)."""

    def __init__(self, mesh: TriangleMesh, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_vertices,):
            raise MeshError("value count must equal vertex count")
        if not np.all(np.isfinite(values)):
            raise MeshError("non-finite field value")
        self.mesh = mesh
        self.values = values

    def face_values(self):
        """Vertex-value mean per face (value at the face center under
        linear interpolation)."""
        return self.values[self.mesh.faces].mean(axis=1)


# -- file I/O ---------------------------------------------------------------

def load_mesh(path, fmt=None):
    """Load an OFF or ascii-PLY mesh. Format inferred from suffix if not given."""
    path = str(path)
    if fmt is None:
        fmt = "PLY" if path.lower().endswith(".ply") else "OFF"
    fmt = fmt.upper()
    with open(path) as fh:
        text = fh.read()
    if fmt == "OFF":
        return _parse_off(text)
    if fmt == "PLY":
        return _parse_ply(text)
    raise MeshError(f"unsupported format {fmt!r}")


def _tokens(text):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield from line.split()


def _parse_off(text):
    tok = _tokens(text)
    try:
        first = next(tok)
        if first == "OFF":
            nv, nf = int(next(tok)), int(next(tok))
        else:
            nv, nf = int(first), int(next(tok))
        next(tok)  # edge count, ignored
        verts = np.array([float(next(tok)) for _ in range(3 * nv)]).reshape(nv, 3)
        faces = []
        for _ in range(nf):
            k = int(next(tok))
            if k != 3:
                raise MeshError("only triangle faces are supported")
            faces.append([int(next(tok)) for _ in range(3)])
    except (StopIteration, ValueError) as exc:
        raise MeshError(f"malformed OFF file: {exc}") from exc
    return TriangleMesh(verts, np.array(faces, dtype=int).reshape(nf, 3))


def _parse_ply(text):
    lines = iter(text.splitlines())
    try:
        if next(lines).strip() != "ply":
            raise MeshError("missing ply magic")
        nv = nf = None
        for line in lines:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "format" and parts[1] != "ascii":
                raise MeshError("only ascii PLY is supported")
            if parts[0] == "element" and parts[1] == "vertex":
                nv = int(parts[2])
            if parts[0] == "element" and parts[1] == "face":
                nf = int(parts[2])
            if parts[0] == "end_header":
                break
        if nv is None or nf is None:
            raise MeshError("missing vertex/face elements")
        verts = np.empty((nv, 3))
        for i in range(nv):
            vals = next(lines).split()
            verts[i] = [float(x) for x in vals[:3]]
        faces = np.empty((nf, 3), dtype=int)
        for i in range(nf):
            vals = next(lines).split()
            if int(vals[0]) != 3:
                raise MeshError("only triangle faces are supported")
            faces[i] = [int(x) for x in vals[1:4]]
    except (StopIteration, ValueError, IndexError) as exc:
        raise MeshError(f"malformed PLY file: {exc}") from exc
    return TriangleMesh(verts, faces)


def save_mesh(mesh, path, fmt=None):
    """Write OFF or ascii-PLY with 17 significant digits (round-trip exact)."""
    path = str(path)
    if fmt is None:
        fmt = "PLY" if path.lower().endswith(".ply") else "OFF"
    fmt = fmt.upper()
    with open(path, "w") as fh:
        if fmt == "OFF":
            fh.write("OFF\n")
            fh.write(f"{mesh.n_vertices} {mesh.n_faces} 0\n")
        elif fmt == "PLY":
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {mesh.n_vertices}\n")
            fh.write("property double x\nproperty double y\nproperty double z\n")
            fh.write(f"element face {mesh.n_faces}\n")
            fh.write("property list uchar int vertex_indices\nend_header\n")
        else:
            raise MeshError(f"unsupported format {fmt!r}")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


def save_field(field, path):
    """Persist a ScalarField as CSV with header vertex_id,value."""
    with open(str(path), "w") as fh:
        fh.write("vertex_id,value\n")
        for i, v in enumerate(field.values):
            fh.write(f"{i},{v:.17g}\n")


def load_field(mesh, path):
    data = np.loadtxt(str(path), delimiter=",", skiprows=1)
    data = np.atleast_2d(data)
    values = np.empty(mesh.n_vertices)
    values[data[:, 0].astype(int)] = data[:, 1]
    return ScalarField(mesh, values)
