"""Geodesic shooting of control-point/momenta systems and flow of the
induced time-dependent velocity field.

The velocity field is v_t(x) = sum_k K(c_k(t), x) a_k(t); control points and
momenta evolve under the Hamiltonian system

    dc_k/dt = sum_l K(c_k, c_l) a_l
    da_k/dt = -1/2 (sum_l grad_1 K(c_k, c_l) a_k.a_l)

integrated with an explicit midpoint (RK2) scheme on a uniform grid over
[0, 1]. The time-1 map is the deformation operator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .kernels import GaussianKernel
from .mesh import TriangleMesh


class ShootingError(RuntimeError):
    """Non-finite state during integration (diverged shooting).

    Usually fixed by smaller momenta or more integration steps.
    """


@dataclass
class InitialMomenta:
    """Control points plus per-point momentum 3-vectors parameterizing v0."""

    control_points: np.ndarray
    momenta: np.ndarray
    kernel: GaussianKernel

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, float)
        self.momenta = np.asarray(self.momenta, float)
        if self.control_points.shape != self.momenta.shape or \
                self.control_points.ndim != 2 or self.control_points.shape[1] != 3:
            raise ValueError("control_points and momenta must both be (k, 3)")
        if len(self.control_points) < 1:
            raise ValueError("need at least one control point")
        if not (np.all(np.isfinite(self.control_points))
                and np.all(np.isfinite(self.momenta))):
            raise ValueError("non-finite entries")

    def velocity_at(self, points):
        """v0 evaluated at arbitrary points, shape (n, 3)."""
        gram = self.kernel.gram(np.asarray(points, float), self.control_points)
        return gram @ self.momenta


@dataclass
class GeodesicPath:
    """Per-time control-point positions and momenta on a uniform grid."""

    times: np.ndarray          # (T+1,)
    points: np.ndarray         # (T+1, k, 3)
    momenta: np.ndarray        # (T+1, k, 3)
    kernel: GaussianKernel

    @property
    def steps(self):
        return len(self.times) - 1


def _rhs(kernel, c, a):
    gram, gfac = kernel.gram_pair(c)
    dc = gram @ a
    # da_k = -1/2 sum_l gamma_kl (c_k - c_l) (a_k . a_l)
    s = gfac * (a @ a.T)
    da = -0.5 * (c * s.sum(axis=1)[:, None] - s @ c)
    return dc, da


def _rhs_vjp(kernel, c, a, p, q):
    """Vector-Jacobian product of _rhs at (c, a) with cotangents (p, q):
    returns (cbar, abar) = (d f / d c)^T (p, q), (d f / d a)^T (p, q).

    All contractions reduce to row/column sums and matrix products thanks
    to the radial structure grad1 K = gamma (x - y) and
    grad1 grad1 K = 2 gamma' (x-y)(x-y)^T + gamma I.
    """
    k, g, g2 = kernel.gram_triple(c)
    s = a @ a.T
    qc_diff = np.sum(q * c, axis=1)[:, None] - q @ c.T     # (q_k).(c_k - c_l)

    # dc = K a: sensitivity to c through the kernel, to a through K itself
    s1 = g * (p @ a.T)
    cbar = c * (s1.sum(axis=1) + s1.sum(axis=0))[:, None] - s1 @ c - s1.T @ c
    abar = k @ p

    # da = -1/2 gamma (c_k - c_l)(a_k.a_l): sensitivity to a
    u = g * qc_diff
    abar += -0.5 * (u @ a + u.T @ a)

    # ... and to c, including the kernel-Hessian radial term
    w = 2.0 * g2 * s * qc_diff
    t = g * s
    cbar += -0.5 * (c * (w.sum(axis=1) + w.sum(axis=0))[:, None]
                    - w @ c - w.T @ c
                    + q * t.sum(axis=1)[:, None] - t.T @ q)
    return cbar, abar


def shoot_gradient(path: GeodesicPath, cbar_end, abar_end=None):
    """Exact adjoint of the RK2 shooting map: pulls cotangents at t=1 back
    to t=0. Returns (cbar0, abar0); abar0 is the gradient of any endpoint
    functional with gradient cbar_end with respect to the initial momenta.
    """
    dt = 1.0 / path.steps
    cb = np.asarray(cbar_end, float).copy()
    ab = np.zeros_like(cb) if abar_end is None else \
        np.asarray(abar_end, float).copy()
    kernel = path.kernel
    for t in range(path.steps - 1, -1, -1):
        c, a = path.points[t], path.momenta[t]
        dc, da = _rhs(kernel, c, a)
        cm, am = c + 0.5 * dt * dc, a + 0.5 * dt * da
        # y1 = y + dt f(m), m = y + dt/2 f(y)
        cmb, amb = _rhs_vjp(kernel, cm, am, cb, ab)
        cmb *= dt
        amb *= dt
        cyb, ayb = _rhs_vjp(kernel, c, a, cmb, amb)
        cb = cb + cmb + 0.5 * dt * cyb
        ab = ab + amb + 0.5 * dt * ayb
    return cb, ab


def _check_finite(*arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise ShootingError(
                "integration diverged; use smaller momenta or more steps")


def shoot(v0: InitialMomenta, steps: int = 20) -> GeodesicPath:
    """Integrate the Hamiltonian system from (c, a(0)) to t=1."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    dt = 1.0 / steps
    c = v0.control_points.copy()
    a = v0.momenta.copy()
    cs = [c.copy()]
    As = [a.copy()]
    for _ in range(steps):
        dc, da = _rhs(v0.kernel, c, a)
        cm = c + 0.5 * dt * dc
        am = a + 0.5 * dt * da
        dc, da = _rhs(v0.kernel, cm, am)
        c = c + dt * dc
        a = a + dt * da
        _check_finite(c, a)
        cs.append(c.copy())
        As.append(a.copy())
    return GeodesicPath(np.linspace(0.0, 1.0, steps + 1),
                        np.array(cs), np.array(As), v0.kernel)


def _advect(kernel, c0, a0, x0, dt, steps):
    """Integrate controls and passive points jointly with midpoint RK2."""
    c, a, x = c0.copy(), a0.copy(), x0.copy()
    for _ in range(steps):
        dc, da = _rhs(kernel, c, a)
        dx = kernel.gram(x, c) @ a
        cm, am, xm = c + 0.5 * dt * dc, a + 0.5 * dt * da, x + 0.5 * dt * dx
        dc, da = _rhs(kernel, cm, am)
        dx = kernel.gram(xm, cm) @ am
        c, a, x = c + dt * dc, a + dt * da, x + dt * dx
        _check_finite(c, a, x)
    return c, a, x


def flow_points(path: GeodesicPath, points) -> np.ndarray:
    """Advect points through the flow ODE to t=1, same scheme and grid."""
    x0 = np.asarray(points, float)
    dt = 1.0 / path.steps
    _, _, x = _advect(path.kernel, path.points[0], path.momenta[0], x0,
                      dt, path.steps)
    return x


def flow_points_inverse(path: GeodesicPath, points) -> np.ndarray:
    """Advect points backward from t=1 to t=0 (the inverse deformation)."""
    x1 = np.asarray(points, float)
    dt = -1.0 / path.steps
    _, _, x = _advect(path.kernel, path.points[-1], path.momenta[-1], x1,
                      dt, path.steps)
    return x


def deformation_energy(v0: InitialMomenta) -> float:
    """|v0|^2_V = sum_kl a_k . a_l K(c_k, c_l); conserved along geodesics."""
    gram = v0.kernel.gram(v0.control_points)
    return float(np.sum((gram @ v0.momenta) * v0.momenta))


def path_energies(path: GeodesicPath) -> np.ndarray:
    """Instantaneous energy at every stored time node."""
    out = np.empty(path.steps + 1)
    for t in range(path.steps + 1):
        gram = path.kernel.gram(path.points[t])
        out[t] = np.sum((gram @ path.momenta[t]) * path.momenta[t])
    return out


def deform_mesh(template: TriangleMesh, v0: InitialMomenta,
                steps: int = 20) -> TriangleMesh:
    """Flow the template vertices through the geodesic of v0.

    Control points are the template vertices by convention, so the vertex
    trajectories are the control trajectories themselves.
    """
    if v0.control_points.shape == template.vertices.shape and \
            np.array_equal(v0.control_points, template.vertices):
        path = shoot(v0, steps)
        return template.with_vertices(path.points[-1])
    path = shoot(v0, steps)
    return template.with_vertices(flow_points(path, template.vertices))


# -- serialization ----------------------------------------------------------

def save_momenta(v0: InitialMomenta, csv_path, sidecar_path=None):
    """CSV `k,cx,cy,cz,ax,ay,az` plus a JSON sidecar with kernel parameters."""
    csv_path = str(csv_path)
    with open(csv_path, "w") as fh:
        fh.write("k,cx,cy,cz,ax,ay,az\n")
        for k, (c, a) in enumerate(zip(v0.control_points, v0.momenta)):
            fh.write(f"{k},{c[0]:.17g},{c[1]:.17g},{c[2]:.17g},"
                     f"{a[0]:.17g},{a[1]:.17g},{a[2]:.17g}\n")
    if sidecar_path is None:
        sidecar_path = csv_path + ".json"
    kern = v0.kernel
    with open(str(sidecar_path), "w") as fh:
        json.dump({"sigma": kern.sigma, "sigma2": kern.sigma2,
                   "weight": kern.weight}, fh)


def load_momenta(csv_path, sidecar_path=None) -> InitialMomenta:
    csv_path = str(csv_path)
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1)
    data = np.atleast_2d(data)
    if sidecar_path is None:
        sidecar_path = csv_path + ".json"
    with open(str(sidecar_path)) as fh:
        kp = json.load(fh)
    kernel = GaussianKernel(sigma=kp["sigma"], sigma2=kp["sigma2"],
                            weight=kp["weight"])
    return InitialMomenta(data[:, 1:4], data[:, 4:7], kernel)
