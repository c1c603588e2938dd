"""Dirichlet energy of loops, tension fields, and Euler-Lagrange assembly.

The energy of a loop uses the mesh's centered first difference, so the
energy of a degree-k great circle is exactly 2*pi*sin^2(kh)/h^2 on an
order-2 mesh. The tension field is the classical pointwise assembly
Delta u minus the curvature contraction; its fiberwise tangential part
is the constrained gradient of the discrete energy up to O(h^2).

Functionals over a pullback bundle are described by an integrand
F(theta, z, eta) with partials in the z and eta slots. The generic
Euler-Lagrange assembly differentiates a staggered (midpoint-flux)
quadrature of the integrand, which makes the discrete duality
<M_F(u), v> = d/ds F(u + s v) exact up to rounding. The energy
functional of a chart additionally carries exact value and gradient
routines: the value composes the chart with the energy itself, and the
gradient differentiates a compact-stencil energy through the chart, so
loops that are exact critical points of the discrete energy stay exact
critical points of the reduced machinery.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .bundles import BundleSection, project_section, section
from .mesh import (
    curvature_field,
    differentiate,
    forward_difference,
    frame_field,
    integrate,
    laplace_beltrami,
)
from .targets import curvature_contraction

__all__ = [
    "MapState",
    "map_state",
    "energy",
    "tension_field",
    "tangential_tension",
    "first_variation_check",
    "FunctionalSpec",
    "make_functional_spec",
    "functional_value",
    "general_euler_lagrange",
    "energy_functional_on_bundle",
    "with_quartic_penalty",
    "fiber_frames",
    "frame_linearization",
    "linearization_matrix",
    "quadratic_remainder_check",
    "ellipticity_check",
]


# -- maps into the target --------------------------------------------------


@dataclass(frozen=True)
class MapState:
    mesh: object
    target: object
    values: np.ndarray  # (n, p), points on the target


def map_state(mesh, target, values):
    vals = np.asarray(values, dtype=float)
    if vals.shape != (mesh.n_nodes, target.ambient_dim):
        raise ValueError(
            f"map values must have shape ({mesh.n_nodes}, {target.ambient_dim})"
        )
    target.require_on_manifold(vals, tol=1e-10, what="map")
    vals = vals.copy()
    vals.setflags(write=False)
    return MapState(mesh, target, vals)


def _ambient_energy(mesh, values):
    du = differentiate(mesh, values)
    return integrate(mesh, np.sum(du * du, axis=1))


def energy(state):
    """Dirichlet energy: quadrature of |du/dtheta|^2."""
    return _ambient_energy(state.mesh, state.values)


def _unit_normals(target, y):
    grad = y / target.semi_axes**2
    return grad / np.linalg.norm(grad, axis=-1, keepdims=True)


def _tangent_part(target, y, X):
    n = _unit_normals(target, y)
    return X - np.sum(X * n, axis=-1, keepdims=True) * n


def tension_field(state):
    """Pointwise Delta u - A_u(Du, Du); tangent at u up to O(h^2).

    The raw field keeps its O(h^2) normal residue so that convergence
    studies can measure it; take tangential_tension for the constrained
    gradient direction that actually drives the flow.
    """
    mesh, target, u = state.mesh, state.target, state.values
    lap = laplace_beltrami(mesh, u)
    du = differentiate(mesh, u)
    du_t = _tangent_part(target, u, du)
    A = curvature_contraction(target, u, du_t)
    return lap - A


def tangential_tension(state):
    return _tangent_part(state.target, state.values, tension_field(state))


def _staggered_energy(mesh, values):
    diff = np.roll(values, -1, axis=0) - values
    return float(np.sum(diff * diff) / mesh.spacing)


def first_variation_check(state, direction, step=1e-5):
    """Compare the differenced energy variation with -2 <M_E, xi>.

    The differenced side uses the conservative forward-difference
    quadrature: its exact discrete gradient is the three-point Laplacian
    that the tension assembly uses on second-order meshes, so both sides
    evaluate the same discrete object and the comparison is meaningful
    far below the O(h^2) gap between quadrature flavors. The pairing
    uses the tangential part of the tension field; the normal residue of
    the raw assembly is discretization error and pairs against nothing
    in the constrained variation. On fourth-order meshes the two sides
    use different second-difference stencils and the mismatch is O(h^2)
    rather than roundoff-level.
    """
    xi = np.asarray(direction, dtype=float)
    if xi.shape != state.values.shape:
        raise ValueError("direction must match the map's shape")
    if step <= 0.0:
        raise ValueError("step must be positive")
    target, mesh = state.target, state.mesh
    plus = target.project_nearest(state.values + step * xi)
    minus = target.project_nearest(state.values - step * xi)
    lhs = (_staggered_energy(mesh, plus) - _staggered_energy(mesh, minus)) / (2.0 * step)
    mt = tangential_tension(state)
    rhs = -2.0 * float(np.sum(mesh.quad_weights * np.sum(mt * xi, axis=1)))
    mismatch = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-9)
    return lhs, rhs, mismatch


# -- functionals on bundle sections ----------------------------------------


@dataclass(frozen=True)
class FunctionalSpec:
    """Integrand triple plus optional exact value/gradient routines.

    integrand, partial_z, partial_eta have signature (theta, z, eta) with
    z and eta ambient vectors. When value_fn or euler_lagrange_fn are
    set they take precedence over the generic quadrature/assembly; the
    energy-of-a-chart functional uses both so that its critical set is
    exactly the critical set of the discrete energy.
    """

    label: str
    integrand: Callable
    partial_z: Callable
    partial_eta: Callable
    validity_radius: float
    value_fn: Optional[Callable] = None
    euler_lagrange_fn: Optional[Callable] = None


def make_functional_spec(
    label,
    integrand,
    partial_z,
    partial_eta,
    validity_radius=0.3,
    value_fn=None,
    euler_lagrange_fn=None,
    probe_dim=3,
    probe_thetas=None,
    validate=True,
):
    if validity_radius <= 0.0:
        raise ValueError("validity_radius must be positive")
    spec = FunctionalSpec(
        label, integrand, partial_z, partial_eta, float(validity_radius), value_fn, euler_lagrange_fn
    )
    if validate:
        _validate_partials(spec, probe_dim, probe_thetas)
    return spec


def _validate_partials(spec, dim, thetas, n_probes=100, tol=1e-6):
    rng = np.random.default_rng(1711)
    if thetas is None:
        thetas = rng.uniform(0.0, 2.0 * np.pi, size=n_probes)
    else:
        thetas = np.asarray(thetas, dtype=float)
        thetas = thetas[rng.integers(0, thetas.size, size=n_probes)]
    fd = 1e-6
    for k in range(n_probes):
        th = float(thetas[k])
        z = 0.02 * rng.standard_normal(dim)
        eta = 0.02 * rng.standard_normal(dim)
        az = np.asarray(spec.partial_z(th, z, eta), dtype=float)
        ae = np.asarray(spec.partial_eta(th, z, eta), dtype=float)
        for j in range(dim):
            e = np.zeros(dim)
            e[j] = fd
            dz = (spec.integrand(th, z + e, eta) - spec.integrand(th, z - e, eta)) / (2 * fd)
            de = (spec.integrand(th, z, eta + e) - spec.integrand(th, z, eta - e)) / (2 * fd)
            if abs(dz - az[j]) > tol * (1.0 + abs(az[j])):
                raise ValueError(
                    f"functional '{spec.label}': partial_z[{j}] disagrees with the "
                    f"differenced integrand by {abs(dz - az[j]):.3e}"
                )
            if abs(de - ae[j]) > tol * (1.0 + abs(ae[j])):
                raise ValueError(
                    f"functional '{spec.label}': partial_eta[{j}] disagrees with the "
                    f"differenced integrand by {abs(de - ae[j]):.3e}"
                )


def _require_validity(functional, values):
    c0 = float(np.max(np.linalg.norm(values, axis=1)))
    if c0 >= functional.validity_radius:
        raise ValueError(
            f"section with sup norm {c0:.3f} leaves the validity radius "
            f"{functional.validity_radius:.3f} of functional '{functional.label}'"
        )


def _staggered_data(bundle, values):
    mesh = bundle.mesh
    h = mesh.spacing
    vbar = 0.5 * (values + np.roll(values, -1, axis=0))
    pbar = 0.5 * (bundle.projectors + np.roll(bundle.projectors, -1, axis=0))
    dplus = (np.roll(values, -1, axis=0) - values) / h
    eta = np.einsum("nij,nj->ni", pbar, dplus)
    mid_thetas = mesh.node_angles + 0.5 * h
    return mid_thetas, vbar, pbar, eta


def functional_value(bundle, functional, sec):
    """Quadrature value of the functional, normalized so F(0) = 0."""
    _require_validity(functional, sec.values)
    if functional.value_fn is not None:
        return float(functional.value_fn(bundle, sec.values))
    mid, vbar, _, eta = _staggered_data(bundle, sec.values)
    h = bundle.mesh.spacing
    zero = np.zeros(bundle.target.ambient_dim)
    total = 0.0
    for i in range(bundle.mesh.n_nodes):
        total += functional.integrand(mid[i], vbar[i], eta[i])
        total -= functional.integrand(mid[i], zero, zero)
    return h * total


def general_euler_lagrange(bundle, functional, sec):
    """Euler-Lagrange field of the functional at a section.

    Generic integrands are assembled by differentiating the staggered
    quadrature: node j receives the averaged z-partial minus the
    difference of the fiber-projected eta-flux, minus the contraction of
    the mean curvature with the frame (identically zero on the circle,
    kept for the record). The result is projected into the fibers.
    """
    _require_validity(functional, sec.values)
    if functional.euler_lagrange_fn is not None:
        raw = functional.euler_lagrange_fn(bundle, sec.values)
        return project_section(bundle, raw)
    mesh = bundle.mesh
    n, p = sec.values.shape
    mid, vbar, pbar, eta = _staggered_data(bundle, sec.values)
    fz = np.empty((n, p))
    flux = np.empty((n, p))
    for i in range(n):
        fz[i] = np.asarray(functional.partial_z(mid[i], vbar[i], eta[i]), dtype=float)
        fe = np.asarray(functional.partial_eta(mid[i], vbar[i], eta[i]), dtype=float)
        flux[i] = pbar[i] @ fe
    fz_prev = np.roll(fz, 1, axis=0)
    flux_prev = np.roll(flux, 1, axis=0)
    # H . tau vanishes identically on the circle; the term is kept so the
    # assembly states the full integration-by-parts formula.
    hcoef = np.einsum("na,na->n", curvature_field(mesh), frame_field(mesh))
    raw = (
        0.5 * (fz + fz_prev)
        - (flux - flux_prev) / mesh.spacing
        + hcoef[:, None] * 0.5 * (flux + flux_prev)
    )
    return project_section(bundle, raw)


# -- the energy functional of a chart --------------------------------------


def _differential_transpose(target, points, fields):
    """Rows of dPi_x^T applied to fields, vectorized for spheres."""
    if target.kind == "sphere":
        r = np.linalg.norm(points, axis=1, keepdims=True)
        xn = points / r
        return (fields - np.sum(fields * xn, axis=1, keepdims=True) * xn) / r
    out = np.empty_like(fields)
    p = target.ambient_dim
    for i in range(points.shape[0]):
        J = np.empty((p, p))
        for j in range(p):
            e = np.zeros(p)
            e[j] = 1.0
            J[:, j] = target.differential_of_projection(points[i], e)
        out[i] = J.T @ fields[i]
    return out


def _compact_laplacian(mesh, values):
    h = mesh.spacing
    return (np.roll(values, -1, axis=0) - 2.0 * values + np.roll(values, 1, axis=0)) / (h * h)


def energy_functional_on_bundle(bundle, harmonic_tol=0.05, validate=True):
    """FunctionalSpec for v -> E(Pi(phi0 + v)) - E(phi0).

    The value routine composes the chart with the energy, so it inherits
    every exact symmetry of the discrete energy. The gradient routine
    differentiates the forward-difference energy through the chart; its
    second-order part is the compact three-point Laplacian regardless of
    the mesh's differentiation order, which keeps the spectrum of the
    linearization monotone in frequency and leaves loops that are exact
    discrete critical points exactly critical here as well.
    """
    mesh, target = bundle.mesh, bundle.target
    base = bundle.base_map
    state = MapState(mesh, target, base)
    resid = float(np.sqrt(np.sum(mesh.quad_weights * np.sum(tangential_tension(state) ** 2, axis=1))))
    e0 = _ambient_energy(mesh, base)
    if resid > harmonic_tol * max(1.0, np.sqrt(e0)):
        raise ValueError(
            f"base map is not near-harmonic: tangential tension norm {resid:.3e}"
        )

    def value_fn(bnd, values):
        points = bnd.target.project_nearest(bnd.base_map + values)
        return _ambient_energy(bnd.mesh, points) - e0

    def el_fn(bnd, values):
        points = bnd.target.project_nearest(bnd.base_map + values)
        lap = _compact_laplacian(bnd.mesh, points)
        return _differential_transpose(bnd.target, bnd.base_map + values, -2.0 * lap)

    gbase = differentiate(mesh, base)
    kmats = differentiate(mesh, bundle.projectors)
    h = mesh.spacing
    n = mesh.n_nodes
    ref = np.array(
        [
            np.sum(target.differential_of_projection(base[i], gbase[i]) ** 2)
            for i in range(n)
        ]
    )

    def _node_of(theta):
        idx = int(round(theta / h)) % n
        if abs(theta - mesh.node_angles[idx]) > 1e-9 and abs(theta - mesh.node_angles[idx] - 2 * np.pi) > 1e-9:
            raise ValueError("energy integrand is tabulated at mesh nodes only")
        return idx

    def integrand(theta, z, eta):
        i = _node_of(theta)
        x = base[i] + np.asarray(z, dtype=float)
        arg = gbase[i] + np.asarray(eta, dtype=float) + kmats[i] @ np.asarray(z, dtype=float)
        img = target.differential_of_projection(x, arg)
        return float(np.sum(img * img) - ref[i])

    def partial_z(theta, z, eta):
        return _fd_partial(integrand, theta, z, eta, slot=0)

    def partial_eta(theta, z, eta):
        return _fd_partial(integrand, theta, z, eta, slot=1)

    return make_functional_spec(
        label="chart energy",
        integrand=integrand,
        partial_z=partial_z,
        partial_eta=partial_eta,
        validity_radius=0.9 * target.tube_radius,
        value_fn=value_fn,
        euler_lagrange_fn=el_fn,
        probe_dim=target.ambient_dim,
        probe_thetas=mesh.node_angles,
        validate=validate,
    )


def _fd_partial(integrand, theta, z, eta, slot, step=1e-7):
    z = np.asarray(z, dtype=float)
    eta = np.asarray(eta, dtype=float)
    p = z.size
    out = np.empty(p)
    for j in range(p):
        e = np.zeros(p)
        e[j] = step
        if slot == 0:
            out[j] = (integrand(theta, z + e, eta) - integrand(theta, z - e, eta)) / (2 * step)
        else:
            out[j] = (integrand(theta, z, eta + e) - integrand(theta, z, eta - e)) / (2 * step)
    return out


def with_quartic_penalty(bundle, functional, weight):
    """Add a pointwise quartic |z|^4 term: value, gradient and integrand.

    The penalty's Hessian vanishes at the zero section, so the kernel of
    the linearization is untouched while the reduced function picks up a
    quartic well along the kernel directions.
    """
    if weight <= 0.0:
        raise ValueError("penalty weight must be positive")
    w = float(weight)
    base_value = functional.value_fn
    base_el = functional.euler_lagrange_fn
    if base_value is None or base_el is None:
        raise ValueError("quartic penalty expects a functional with exact routines")

    def value_fn(bnd, values):
        q = np.sum(values * values, axis=1) ** 2
        return base_value(bnd, values) + w * float(np.sum(bnd.mesh.quad_weights * q))

    def el_fn(bnd, values):
        nsq = np.sum(values * values, axis=1, keepdims=True)
        return base_el(bnd, values) + 4.0 * w * nsq * values

    def integrand(theta, z, eta):
        zz = float(np.sum(np.asarray(z) ** 2))
        return functional.integrand(theta, z, eta) + w * zz * zz

    def partial_z(theta, z, eta):
        z = np.asarray(z, dtype=float)
        return np.asarray(functional.partial_z(theta, z, eta)) + 4.0 * w * float(np.sum(z * z)) * z

    return FunctionalSpec(
        label=functional.label + " + quartic",
        integrand=integrand,
        partial_z=partial_z,
        partial_eta=functional.partial_eta,
        validity_radius=functional.validity_radius,
        value_fn=value_fn,
        euler_lagrange_fn=el_fn,
    )


# -- linearization ---------------------------------------------------------


def fiber_frames(bundle):
    """Deterministic orthonormal bases of the fibers, shape (n, p, p-1).

    Greedy Gram-Schmidt on the projected coordinate axes: stable under
    small perturbations of the base map and reproducible across runs.
    """
    n, p = bundle.base_map.shape
    q = p - 1
    frames = np.empty((n, p, q))
    for i in range(n):
        cols = bundle.projectors[i].copy()
        chosen = []
        for _ in range(q):
            norms = np.linalg.norm(cols, axis=0)
            j = int(np.argmax(norms))
            if norms[j] < 1e-12:
                raise ValueError(f"fiber at node {i} has deficient rank")
            v = cols[:, j] / norms[j]
            chosen.append(v)
            cols = cols - np.outer(v, v @ cols)
        frames[i] = np.stack(chosen, axis=1)
    return frames


def _fd_response(bundle, functional, at_values, direction, step):
    vp = project_section(bundle, at_values + step * direction)
    vm = project_section(bundle, at_values - step * direction)
    return (
        general_euler_lagrange(bundle, functional, vp).values
        - general_euler_lagrange(bundle, functional, vm).values
    ) / (2.0 * step)


def _detect_stencil_radius(bundle, functional, at_values, frames, step):
    """Support radius of the assembled operator, or None if not banded.

    Probes two well-separated nodes and measures how far their responses
    reach. Compact stencils answer exactly zero outside their band, so a
    nonzero anywhere past the measured radius disables the banded path.
    """
    n = bundle.base_map.shape[0]
    q = frames.shape[2]
    radius = 0
    for node in (0, n // 2):
        for a in range(q):
            d = np.zeros_like(at_values)
            d[node] = frames[node, :, a]
            col = _fd_response(bundle, functional, at_values, d, step)
            hit = np.nonzero(np.any(col != 0.0, axis=1))[0]
            for j in hit:
                off = min((j - node) % n, (node - j) % n)
                radius = max(radius, int(off))
    if 2 * (2 * radius + 1) > n:
        return None
    return radius


def _packed_probe_nodes(n, separation):
    """Cover 0..n-1 by groups of nodes pairwise at least `separation` apart
    on the circle; greedy, deterministic."""
    remaining = list(range(n))
    groups = []
    while remaining:
        taken = []
        rest = []
        for i in remaining:
            ok = True
            if taken:
                if i - taken[-1] < separation:
                    ok = False
                elif n - i + taken[0] < separation:
                    ok = False
            if ok:
                taken.append(i)
            else:
                rest.append(i)
        groups.append(taken)
        remaining = rest
    return groups


def frame_linearization(
    bundle, functional, at_values=None, step=1e-6, frames=None, stencil_radius="auto"
):
    """Symmetrized matrix of the Euler-Lagrange linearization in fiber frames.

    Columns are centered differences of the assembled field along the
    frame directions; the matrix acts on frame coordinates (node-major,
    p-1 per node) and is returned with its raw asymmetry. When the
    operator is banded (every functional built here has stencil radius
    1) many columns are probed in one evaluation; pass stencil_radius=None
    to force the dense column-by-column path.
    """
    n, p = bundle.base_map.shape
    q = p - 1
    if at_values is None:
        at_values = np.zeros((n, p))
    if frames is None:
        frames = fiber_frames(bundle)
    m = n * q
    L = np.zeros((m, m))
    if stencil_radius == "auto":
        stencil_radius = _detect_stencil_radius(bundle, functional, at_values, frames, step)
    if stencil_radius is None:
        for i in range(n):
            for a in range(q):
                d = np.zeros((n, p))
                d[i] = frames[i, :, a]
                col = _fd_response(bundle, functional, at_values, d, step)
                L[:, i * q + a] = np.einsum("njb,nj->nb", frames, col).reshape(m)
    else:
        window = np.arange(-stencil_radius, stencil_radius + 1)
        for group in _packed_probe_nodes(n, 2 * stencil_radius + 1):
            for a in range(q):
                d = np.zeros((n, p))
                for i in group:
                    d[i] = frames[i, :, a]
                col = _fd_response(bundle, functional, at_values, d, step)
                for i in group:
                    rows = (i + window) % n
                    block = np.einsum("njb,nj->nb", frames[rows], col[rows])
                    for r, j in enumerate(rows):
                        L[j * q : j * q + q, i * q + a] = block[r]
    asym = float(np.max(np.abs(L - L.T)))
    return 0.5 * (L + L.T), asym


def linearization_matrix(bundle, functional, at_section=None, step=1e-6):
    """Ambient (n*p, n*p) node-major linearization, zero on normal directions."""
    at_values = None if at_section is None else at_section.values
    frames = fiber_frames(bundle)
    Lf, _ = frame_linearization(bundle, functional, at_values, step, frames)
    n, p = bundle.base_map.shape
    q = p - 1
    L4 = Lf.reshape(n, q, n, q)
    t1 = np.einsum("ipa,iajb->ipjb", frames, L4)
    t2 = np.einsum("ipjb,jqb->ipjq", t1, frames)
    return t2.reshape(n * p, n * p)


def quadratic_remainder_check(bundle, functional, s1, s2, lin=None, frames=None):
    """Remainder of the linearization between two sections.

    Returns (remainder, product) with remainder the L2 norm of
    M(u1) - M(u2) - L0 (u1 - u2) and product the C^2-type bound
    (|u1|_{C2} + |u2|_{C2}) * |u1 - u2|_{W 2,2}.
    """
    if frames is None:
        frames = fiber_frames(bundle)
    if lin is None:
        lin, _ = frame_linearization(bundle, functional, None, frames=frames)
    mesh = bundle.mesh
    n, p = bundle.base_map.shape
    q = p - 1
    d = s1.values - s2.values
    coords = np.einsum("npa,np->na", frames, d).reshape(n * q)
    ld = (lin @ coords).reshape(n, q)
    ld_ambient = np.einsum("npa,na->np", frames, ld)
    m1 = general_euler_lagrange(bundle, functional, s1).values
    m2 = general_euler_lagrange(bundle, functional, s2).values
    rem_field = m1 - m2 - ld_ambient
    w = mesh.quad_weights
    remainder = float(np.sqrt(np.sum(w * np.sum(rem_field**2, axis=1))))

    def c2_sup(values):
        a = np.linalg.norm(values, axis=1)
        b = np.linalg.norm(differentiate(mesh, values), axis=1)
        c = np.linalg.norm(laplace_beltrami(mesh, values), axis=1)
        return float(np.max(a + b + c))

    from .bundles import sobolev_norms

    diff = section(bundle, d)
    _, _, w22 = sobolev_norms(diff)
    product = (c2_sup(s1.values) + c2_sup(s2.values)) * w22
    return remainder, product


def ellipticity_check(functional, probes, step=1e-4):
    """Positivity of the eta-Hessian quadratic form over the probe set.

    Probes with a zero frame or fiber component are vacuous for the
    positivity quantifier and are skipped.
    """
    for theta, z, eta, xi, lam in probes:
        lam = np.asarray(lam, dtype=float)
        xin = float(xi)
        ln = float(np.linalg.norm(lam))
        if xin == 0.0 or ln == 0.0:
            continue
        lhat = lam / ln
        z = np.asarray(z, dtype=float)
        eta = np.asarray(eta, dtype=float)
        fp = functional.integrand(theta, z, eta + step * lhat)
        f0 = functional.integrand(theta, z, eta)
        fm = functional.integrand(theta, z, eta - step * lhat)
        quad = (fp - 2.0 * f0 + fm) / (step * step)
        if quad * xin * xin <= 0.0:
            return False
    return True
