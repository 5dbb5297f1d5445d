import numpy as np
import pytest

from fos.demons import (DemonsConfig, SurfaceProjector, VertexMap,
                        groupwise_template, register_functions,
                        surface_gradient, vertex_gradient)
from fos.synthdata import graph_geodesic_distances, icosphere
from fos.tangent_fem import build_frames


def test_surface_gradient_of_linear_function_is_exact():
    mesh = icosphere(2)
    coeff = np.array([0.7, -0.3, 1.1])
    values = mesh.vertices @ coeff
    g = surface_gradient(mesh, values)
    # per-face gradient equals the tangential part of the ambient gradient
    n = mesh.face_normals
    expected = coeff[None, :] - (n @ coeff)[:, None] * n
    assert np.abs(g - expected).max() <= 1e-10


def test_vertex_gradient_lives_in_tangent_plane():
    mesh = icosphere(2)
    atlas = build_frames(mesh)
    values = mesh.vertices[:, 2] ** 2
    tf = vertex_gradient(mesh, values, atlas)
    ambient = tf.ambient()
    assert np.abs(np.sum(ambient * atlas.normals, axis=1)).max() <= 1e-12


def test_projector_identity_on_vertices():
    mesh = icosphere(2)
    proj = SurfaceProjector(mesh)
    p, fidx, bary = proj.project(mesh.vertices)
    assert np.abs(p - mesh.vertices).max() <= 1e-12
    # interpolation of vertex coordinates reproduces the vertices
    assert np.abs(proj.interpolate_at(fidx, bary, mesh.vertices)
                  - mesh.vertices).max() <= 1e-12


def test_projector_recovers_nearby_offsets():
    mesh = icosphere(3)
    rng = np.random.default_rng(0)
    base = mesh.face_centers[rng.choice(mesh.n_faces, 50, replace=False)]
    pushed = base * 1.02
    p, _, _ = SurfaceProjector(mesh).project(pushed)
    # closest point of a radially offset center is near, not exactly at,
    # the center (the face is not perpendicular to the offset direction)
    assert np.linalg.norm(p - base, axis=1).max() <= 1e-3


def test_vertex_map_forward_inverse_consistency():
    mesh = icosphere(2)
    rng = np.random.default_rng(1)
    vm = VertexMap(mesh)
    edge = np.linalg.norm(
        mesh.vertices[mesh.faces[:, 0]] - mesh.vertices[mesh.faces[:, 1]],
        axis=1).mean()
    for _ in range(3):
        vm.updates.append(0.1 * edge * rng.normal(size=mesh.vertices.shape))
    assert vm.inverse_consistency() <= 0.2 * edge


def test_register_functions_reduces_ssd():
    mesh = icosphere(3)
    src = int(np.argmax(mesh.vertices[:, 2]))
    d = graph_geodesic_distances(mesh, src)
    fixed = np.exp(-d ** 2 / 0.18)
    # moving: same bump around a slightly rotated location
    th = 0.25
    rot = np.array([[np.cos(th), -np.sin(th), 0],
                    [np.sin(th), np.cos(th), 0], [0, 0, 1]])
    proj = SurfaceProjector(mesh)
    moving = proj.interpolate(mesh.vertices @ rot.T, fixed)
    cfg = DemonsConfig(lam=0.2, max_iterations=40)
    res = register_functions(mesh, moving, fixed, cfg)
    assert res.ssd_trace[-1] <= 0.25 * res.ssd_trace[0]
    assert np.all(np.diff(res.ssd_trace) <= 1e-12)


def test_register_identical_fields_is_noop():
    mesh = icosphere(2)
    values = mesh.vertices[:, 0]
    res = register_functions(mesh, values, values,
                             DemonsConfig(lam=1.0, max_iterations=5))
    assert res.converged
    assert len(res.mapping.updates) == 0 or \
        max(np.abs(u).max() for u in res.mapping.updates) <= 1e-10


def test_config_validation():
    with pytest.raises(ValueError):
        DemonsConfig(lam=0.0)
    with pytest.raises(ValueError):
        DemonsConfig(j_mode="fixed")


def test_groupwise_template_reduces_spread():
    mesh = icosphere(2)
    src = int(np.argmax(mesh.vertices[:, 2]))
    d = graph_geodesic_distances(mesh, src)
    rng = np.random.default_rng(2)
    fields = []
    for _ in range(4):
        shift = 0.15 * rng.normal(size=3)
        proj = SurfaceProjector(mesh)
        f = np.exp(-d ** 2 / 0.25)
        fields.append(proj.interpolate(mesh.vertices + shift, f))
    template, results, aligned = groupwise_template(
        mesh, fields, config=DemonsConfig(lam=0.5, max_iterations=10))
    spread0 = np.var(np.asarray(fields), axis=0).mean()
    spread1 = np.var(np.asarray(aligned), axis=0).mean()
    assert spread1 < spread0
    assert template.shape == (mesh.n_vertices,)
