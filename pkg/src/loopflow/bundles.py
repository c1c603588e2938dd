"""Sections of the pullback tangent bundle over a base loop.

A bundle is the base map phi0 together with the tangent projector of the
target at each node; a section stores one fiber vector per node. The
bundle gradient pairs the circle's tangent frame with the fiberwise
projected derivative of the section. Charts move between small sections
and nearby loops on the target through nearest-point projection.
"""

from dataclasses import dataclass

import numpy as np

from .mesh import differentiate, frame_field, laplace_beltrami

_FIBER_TOL = 1e-10
_CHART_DOT_MIN = 0.1


@dataclass(frozen=True)
class PullbackBundle:
    mesh: object
    target: object
    base_map: np.ndarray  # (n, p), points on the target
    projectors: np.ndarray  # (n, p, p), orthogonal projectors onto the fibers


@dataclass(frozen=True)
class BundleSection:
    bundle: PullbackBundle
    values: np.ndarray  # (n, p), values[i] in the fiber at node i


def build_pullback_bundle(mesh, target, base_map):
    base = np.asarray(base_map, dtype=float)
    if base.shape != (mesh.n_nodes, target.ambient_dim):
        raise ValueError(
            f"base map must have shape ({mesh.n_nodes}, {target.ambient_dim}), got {base.shape}"
        )
    target.require_on_manifold(base, tol=1e-10, what="base map")
    projectors = np.stack([target.tangent_projector(y) for y in base])
    base = base.copy()
    base.setflags(write=False)
    projectors.setflags(write=False)
    return PullbackBundle(mesh, target, base, projectors)


def section(bundle, values):
    """Wrap nodal values as a section, enforcing the fiber constraint."""
    vals = np.asarray(values, dtype=float)
    if vals.shape != bundle.base_map.shape:
        raise ValueError(f"section values must have shape {bundle.base_map.shape}")
    proj = np.einsum("nij,nj->ni", bundle.projectors, vals)
    worst = float(np.max(np.abs(proj - vals))) if vals.size else 0.0
    if worst > _FIBER_TOL:
        raise ValueError(
            f"values leave the fibers by {worst:.3e}; use project_section for raw fields"
        )
    vals = vals.copy()
    vals.setflags(write=False)
    return BundleSection(bundle, vals)


def project_section(bundle, raw_values):
    """Fiberwise projection of an arbitrary nodal vector field."""
    vals = np.asarray(raw_values, dtype=float)
    if vals.shape != bundle.base_map.shape:
        raise ValueError(f"raw values must have shape {bundle.base_map.shape}")
    proj = np.einsum("nij,nj->ni", bundle.projectors, vals)
    proj.setflags(write=False)
    return BundleSection(bundle, proj)


def zero_section(bundle):
    return project_section(bundle, np.zeros_like(bundle.base_map))


def section_values(sec):
    return sec.values


def bundle_gradient(bundle, sec):
    """Fiber part of the covariant gradient: P_omega d(section)/dtheta."""
    _check_same_bundle(bundle, sec)
    dv = differentiate(bundle.mesh, sec.values)
    return np.einsum("nij,nj->ni", bundle.projectors, dv)


def bundle_gradient_tensor(bundle, sec):
    """Full frame-tensor form tau (x) P(dv/dtheta), shape (n, 2, p)."""
    frames = frame_field(bundle.mesh)
    fiber = bundle_gradient(bundle, sec)
    return np.einsum("na,nb->nab", frames, fiber)


def _check_same_bundle(bundle, sec):
    if sec.bundle is not bundle:
        # Allow structurally identical bundles (e.g. reconstructed ones).
        same = (
            sec.bundle.mesh.n_nodes == bundle.mesh.n_nodes
            and sec.bundle.base_map.shape == bundle.base_map.shape
            and np.array_equal(sec.bundle.base_map, bundle.base_map)
        )
        if not same:
            raise ValueError("section belongs to a different bundle")


def l2_inner(s1, s2):
    """Quadrature-weighted L2 pairing of two sections over the same bundle."""
    if s1.bundle is not s2.bundle:
        _check_same_bundle(s1.bundle, s2)
    w = s1.bundle.mesh.quad_weights
    return float(np.sum(w * np.sum(s1.values * s2.values, axis=1)))


def l2_norm(sec):
    return float(np.sqrt(max(l2_inner(sec, sec), 0.0)))


def sobolev_norms(sec):
    """(L2, W^{1,2}, W^{2,2}) norms; derivatives taken componentwise."""
    mesh = sec.bundle.mesh
    w = mesh.quad_weights
    v = sec.values
    dv = differentiate(mesh, v)
    ddv = laplace_beltrami(mesh, v)
    l2sq = float(np.sum(w * np.sum(v * v, axis=1)))
    d1sq = float(np.sum(w * np.sum(dv * dv, axis=1)))
    d2sq = float(np.sum(w * np.sum(ddv * ddv, axis=1)))
    l2 = np.sqrt(max(l2sq, 0.0))
    w12 = np.sqrt(max(l2sq + d1sq, 0.0))
    w22 = np.sqrt(max(l2sq + d1sq + d2sq, 0.0))
    return l2, w12, w22


# -- charts ----------------------------------------------------------------


def chart_encode(bundle, points):
    """Tangent-chart coordinates of a nearby loop: solve Pi(phi0 + tau) = u.

    On the sphere the solution is closed form, tau = u/(u.phi0) - phi0.
    On an ellipsoid each node runs a projected-chord iteration with a
    tangent-space correction.
    """
    u = np.asarray(points, dtype=float)
    if u.shape != bundle.base_map.shape:
        raise ValueError(f"points must have shape {bundle.base_map.shape}")
    bundle.target.require_on_manifold(u, tol=1e-8, what="loop to encode")
    base = bundle.base_map
    if bundle.target.kind == "sphere":
        dots = np.sum(u * base, axis=1)
        if np.any(dots <= _CHART_DOT_MIN):
            raise ValueError(
                f"loop leaves the chart: min alignment {dots.min():.3f} <= {_CHART_DOT_MIN}"
            )
        vals = u / dots[:, None] - base
        return project_section(bundle, vals)
    target = bundle.target
    vals = np.zeros_like(base)
    for i in range(base.shape[0]):
        P = bundle.projectors[i]
        tau = P @ (u[i] - base[i])
        ok = False
        for _ in range(100):
            r = u[i] - target.project_nearest(base[i] + tau)
            if np.linalg.norm(r) <= 1e-12:
                ok = True
                break
            tau = P @ (tau + r)
        if not ok:
            raise RuntimeError(f"chart encoding did not converge at node {i}")
        vals[i] = tau
    return project_section(bundle, vals)


def chart_decode(bundle, sec):
    """Loop on the target corresponding to a small section: Pi(phi0 + v)."""
    _check_same_bundle(bundle, sec)
    v = sec.values
    norms = np.linalg.norm(v, axis=1)
    tube = bundle.target.tube_radius
    if np.any(norms >= tube):
        raise ValueError(
            f"section leaves the chart tube: max |v| = {norms.max():.3f} >= {tube}"
        )
    return bundle.target.project_nearest(bundle.base_map + v)


def decode_points(bundle, values):
    """chart_decode for raw (already fiberwise-tangent) value arrays."""
    return chart_decode(bundle, section(bundle, values))
