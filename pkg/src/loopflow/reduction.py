"""Liapunov-Schmidt reduction: kernel extraction, N = P_K + M_F, Newton
inversion, and the reduced function on the kernel.

The linearization lives on fiber-frame coordinates (p-1 per node), which
quotients out the ambient normal directions; the ambient matrix from the
variational layer factors exactly through these frames, so reducing and
eigendecomposing there sees only the section space. Kernel vectors are
kept when their eigenvalue is below a relative threshold, and a tenfold
spectral gap between kept and discarded eigenvalues is enforced so a
mis-sized kernel fails loudly instead of silently.

All Newton work happens in frame coordinates. The quadrature weight is
uniform, so the L2 inner product of sections is h times the Euclidean
one on coordinates, and the kernel projector is the dense rank-l matrix
h K K^T.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .bundles import l2_norm, section, sobolev_norms
from .variational import (
    _detect_stencil_radius,
    fiber_frames,
    frame_linearization,
    functional_value,
    general_euler_lagrange,
)

__all__ = [
    "ReductionWorkspace",
    "build_reduction_workspace",
    "compute_kernel",
    "project_onto_kernel",
    "kernel_coordinates",
    "kernel_combination",
    "apply_N",
    "invert_N",
    "reduced_section",
    "reduced_function",
    "reduced_gradient",
    "sandwich_check",
    "approximation_check",
    "lipschitz_probe",
    "approximation_sweep",
    "sandwich_sweep",
]

_SYMMETRY_TOL = 1e-5
_GAP_FACTOR = 10.0
_NEWTON_BASIN = 0.1
_NOISE_FLOOR = 1e-9
_SANDWICH_BAND = (0.4, 2.1)


@dataclass(frozen=True)
class ReductionWorkspace:
    bundle: object
    functional: object
    L_matrix: np.ndarray          # ambient (n p, n p), node-major
    frames: np.ndarray            # (n, p, p-1) fiber frames
    frame_matrix: np.ndarray      # (m, m) linearization on frame coords
    kernel_basis: Tuple           # BundleSections, L2-orthonormal
    kernel_eigenvalues: np.ndarray
    kernel_tol: float
    newton_tol: float
    newton_max_iter: int
    xi_radius: float
    spectral_radius: float
    threshold: float
    discarded_min: float
    gap_ratio: float
    stencil_radius: object        # int for banded assembly, None for dense

    @property
    def kernel_dim(self):
        return len(self.kernel_basis)


def _to_coords(frames, values):
    n, p, q = frames.shape
    return np.einsum("npa,np->na", frames, values).reshape(n * q)


def _from_coords(frames, coords):
    n, p, q = frames.shape
    return np.einsum("npa,na->np", frames, coords.reshape(n, q))


def _reduce_matrix(L_ambient, frames):
    n, p, q = frames.shape
    L4 = L_ambient.reshape(n, p, n, p)
    t1 = np.einsum("ipa,ipjq->iajq", frames, L4)
    return np.einsum("iajq,jqb->iajb", t1, frames).reshape(n * q, n * q)


def _spectral_split(L_frame, spacing, kernel_tol):
    """Eigendecompose and split into kernel and complement.

    Returns kept coordinate vectors (L2-orthonormalized), kept
    eigenvalues, and the gap bookkeeping.
    """
    asym = float(np.max(np.abs(L_frame - L_frame.T)))
    if asym > _SYMMETRY_TOL:
        raise ValueError(
            f"linearization asymmetry {asym:.3e} exceeds {_SYMMETRY_TOL:.0e}"
        )
    sym = 0.5 * (L_frame + L_frame.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    mags = np.abs(eigvals)
    radius = float(np.max(mags)) if mags.size else 0.0
    threshold = kernel_tol * radius
    keep = mags < threshold
    kept_vals = eigvals[keep]
    kept_vecs = eigvecs[:, keep]
    kept_max = float(np.max(mags[keep])) if keep.any() else 0.0
    discarded = mags[~keep]
    discarded_min = float(np.min(discarded)) if discarded.size else np.inf
    if keep.any() and discarded.size:
        gap_ratio = discarded_min / kept_max if kept_max > 0.0 else np.inf
        if discarded_min < _GAP_FACTOR * kept_max:
            raise ValueError(
                f"no spectral gap: smallest discarded eigenvalue {discarded_min:.3e} "
                f"is under {_GAP_FACTOR:.0f}x the largest kept one {kept_max:.3e}"
            )
    else:
        gap_ratio = np.inf
    # eigh vectors are Euclidean-orthonormal; the quadrature inner product
    # is h times Euclidean, so a uniform rescale makes them L2-orthonormal.
    kept_vecs = kept_vecs / np.sqrt(spacing)
    order = np.argsort(kept_vals)
    return (
        kept_vecs[:, order],
        kept_vals[order],
        radius,
        threshold,
        discarded_min,
        gap_ratio,
    )


def compute_kernel(L_matrix, bundle, kernel_tol=1e-6):
    """Kernel of the ambient linearization matrix as bundle sections.

    The matrix is reduced to fiber-frame coordinates first: the ambient
    normal directions are annihilated by construction and would otherwise
    masquerade as kernel. Returns (basis, eigenvalues) with the basis an
    array of shape (l, n, p), L2-orthonormal under the mesh quadrature.
    """
    frames = fiber_frames(bundle)
    L_frame = _reduce_matrix(np.asarray(L_matrix, dtype=float), frames)
    vecs, vals, *_ = _spectral_split(L_frame, bundle.mesh.spacing, kernel_tol)
    basis = np.stack(
        [_from_coords(frames, vecs[:, j]) for j in range(vecs.shape[1])], axis=0
    ) if vecs.shape[1] else np.zeros((0,) + bundle.base_map.shape)
    return basis, vals


def build_reduction_workspace(
    bundle,
    functional,
    kernel_tol=1e-6,
    newton_tol=1e-10,
    newton_max_iter=50,
    xi_radius=0.05,
    fd_step=1e-6,
):
    frames = fiber_frames(bundle)
    L_frame, _ = frame_linearization(
        bundle, functional, at_values=None, step=fd_step, frames=frames
    )
    stencil = _detect_stencil_radius(
        bundle, functional, np.zeros_like(bundle.base_map), frames, fd_step
    )
    vecs, vals, radius, threshold, discarded_min, gap_ratio = _spectral_split(
        L_frame, bundle.mesh.spacing, kernel_tol
    )
    basis = tuple(
        section(bundle, _from_coords(frames, vecs[:, j])) for j in range(vecs.shape[1])
    )
    n, p, q = frames.shape
    L_ambient = np.einsum(
        "ipa,iajb,jqb->ipjq", frames, L_frame.reshape(n, q, n, q), frames
    ).reshape(n * p, n * p)
    for arr in (L_ambient, L_frame, frames):
        arr.setflags(write=False)
    vals = vals.copy()
    vals.setflags(write=False)
    return ReductionWorkspace(
        bundle=bundle,
        functional=functional,
        L_matrix=L_ambient,
        frames=frames,
        frame_matrix=L_frame,
        kernel_basis=basis,
        kernel_eigenvalues=vals,
        kernel_tol=float(kernel_tol),
        newton_tol=float(newton_tol),
        newton_max_iter=int(newton_max_iter),
        xi_radius=float(xi_radius),
        spectral_radius=radius,
        threshold=threshold,
        discarded_min=discarded_min,
        gap_ratio=gap_ratio,
        stencil_radius=stencil,
    )


def _check_workspace_section(workspace, sec):
    if sec.bundle is not workspace.bundle and sec.bundle.base_map is not workspace.bundle.base_map:
        if not np.array_equal(sec.bundle.base_map, workspace.bundle.base_map):
            raise ValueError("section belongs to a different bundle")


def kernel_coordinates(workspace, sec):
    """L2 pairings <u, phi_j>, an l-vector."""
    _check_workspace_section(workspace, sec)
    w = workspace.bundle.mesh.quad_weights
    return np.array(
        [
            float(np.sum(w * np.sum(sec.values * phi.values, axis=1)))
            for phi in workspace.kernel_basis
        ]
    )


def kernel_combination(workspace, xi):
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (workspace.kernel_dim,):
        raise ValueError(f"xi must have length {workspace.kernel_dim}")
    values = np.zeros_like(workspace.bundle.base_map)
    for c, phi in zip(xi, workspace.kernel_basis):
        values = values + c * phi.values
    return section(workspace.bundle, values)


def project_onto_kernel(workspace, sec):
    return kernel_combination(workspace, kernel_coordinates(workspace, sec))


def apply_N(workspace, u):
    """N(u) = P_K u + M_F(u)."""
    _check_workspace_section(workspace, u)
    pk = project_onto_kernel(workspace, u)
    mf = general_euler_lagrange(workspace.bundle, workspace.functional, u)
    return section(workspace.bundle, pk.values + mf.values)


def _kernel_coord_matrix(workspace):
    """Frame-coordinate matrix of P_K: h K K^T for L2-orthonormal columns K."""
    m = workspace.frame_matrix.shape[0]
    if workspace.kernel_dim == 0:
        return np.zeros((m, m))
    K = np.stack(
        [_to_coords(workspace.frames, phi.values) for phi in workspace.kernel_basis],
        axis=1,
    )
    return workspace.bundle.mesh.spacing * (K @ K.T)


def invert_N(workspace, f, return_info=False):
    """Solve N(u) = f by full Newton from u0 = f.

    The Jacobian P_K + L(u) is reassembled at every iterate; a residual
    increase triggers step halving (up to 8). Raises RuntimeError when
    the residual tolerance is not met within newton_max_iter iterations,
    which operationally marks f as outside the inversion neighborhood.
    """
    _check_workspace_section(workspace, f)
    bundle = workspace.bundle
    h = bundle.mesh.spacing
    fnorm = l2_norm(f)
    if fnorm >= _NEWTON_BASIN:
        raise ValueError(
            f"right-hand side norm {fnorm:.3f} is outside the inversion basin {_NEWTON_BASIN}"
        )
    frames = workspace.frames
    pk_mat = _kernel_coord_matrix(workspace)
    f_coords = _to_coords(frames, f.values)

    def residual(u_coords):
        u_sec = section(bundle, _from_coords(frames, u_coords))
        n_val = apply_N(workspace, u_sec)
        r = f_coords - _to_coords(frames, n_val.values)
        return r, float(np.sqrt(h) * np.linalg.norm(r))

    u = f_coords.copy()
    r, rnorm = residual(u)
    history = [rnorm]
    converged = rnorm <= workspace.newton_tol
    iters = 0
    while not converged and iters < workspace.newton_max_iter:
        L_u, _ = frame_linearization(
            bundle,
            workspace.functional,
            at_values=_from_coords(frames, u),
            frames=frames,
            stencil_radius=workspace.stencil_radius,
        )
        try:
            delta = np.linalg.solve(pk_mat + L_u, r)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError(f"singular Newton system at iteration {iters}") from exc
        scale = 1.0
        for _ in range(9):
            r_new, rnorm_new = residual(u + scale * delta)
            if rnorm_new < rnorm or rnorm_new <= workspace.newton_tol:
                break
            scale *= 0.5
        else:
            raise RuntimeError(
                f"Newton line search stalled at residual {rnorm:.3e} (iteration {iters})"
            )
        u = u + scale * delta
        r, rnorm = r_new, rnorm_new
        history.append(rnorm)
        iters += 1
        converged = rnorm <= workspace.newton_tol
    if not converged:
        raise RuntimeError(
            f"Newton did not reach tolerance {workspace.newton_tol:.1e} in "
            f"{workspace.newton_max_iter} iterations (residual {rnorm:.3e})"
        )
    result = section(bundle, _from_coords(frames, u))
    if return_info:
        return result, {"residuals": history, "iterations": iters}
    return result


def reduced_section(workspace, xi):
    """Psi applied to the kernel combination of xi."""
    xi = np.asarray(xi, dtype=float)
    if np.linalg.norm(xi) >= workspace.xi_radius:
        raise ValueError(
            f"|xi| = {np.linalg.norm(xi):.3f} outside the reduced-chart radius "
            f"{workspace.xi_radius}"
        )
    return invert_N(workspace, kernel_combination(workspace, xi))


def reduced_function(workspace, xi):
    """f(xi) = F(Psi(sum xi_j phi_j))."""
    u = reduced_section(workspace, xi)
    return functional_value(workspace.bundle, workspace.functional, u)


def reduced_gradient(workspace, xi, step=1e-5):
    xi = np.asarray(xi, dtype=float)
    grad = np.empty_like(xi)
    for j in range(xi.size):
        e = np.zeros_like(xi)
        e[j] = step
        grad[j] = (
            reduced_function(workspace, xi + e) - reduced_function(workspace, xi - e)
        ) / (2.0 * step)
    return grad


def sandwich_check(workspace, xi, noise_floor=_NOISE_FLOOR, band=_SANDWICH_BAND):
    """Ratio ||M_F(Psi(xi.phi))|| / |grad f(xi)| and its band status.

    Status is "indeterminate" when either side sits below the noise
    floor: near an integrable critical manifold both vanish and the
    ratio is meaningless.
    """
    u = reduced_section(workspace, xi)
    mf = general_euler_lagrange(workspace.bundle, workspace.functional, u)
    m_norm = l2_norm(mf)
    g_norm = float(np.linalg.norm(reduced_gradient(workspace, xi)))
    if g_norm < noise_floor or m_norm < noise_floor:
        return np.nan, "indeterminate"
    ratio = m_norm / g_norm
    status = "pass" if band[0] <= ratio <= band[1] else "fail"
    return ratio, status


def approximation_check(workspace, u):
    """lhs = |F(u) - F(Psi(P_K u))| and rhs = ||M_F(u)||^2."""
    _check_workspace_section(workspace, u)
    bundle, functional = workspace.bundle, workspace.functional
    fu = functional_value(bundle, functional, u)
    psi = invert_N(workspace, project_onto_kernel(workspace, u))
    f_psi = functional_value(bundle, functional, psi)
    mf = general_euler_lagrange(bundle, functional, u)
    return abs(fu - f_psi), l2_norm(mf) ** 2


# -- sampled sweeps for reports and acceptance -----------------------------


def _random_smooth_section(bundle, rng, modes=4):
    """Seeded random low-frequency section, L2-normalized."""
    mesh = bundle.mesh
    theta = mesh.node_angles
    p = bundle.target.ambient_dim
    field = np.zeros((mesh.n_nodes, p))
    for m in range(1, modes + 1):
        coef = rng.uniform(-1.0, 1.0, size=(2, p))
        field += np.outer(np.cos(m * theta), coef[0]) + np.outer(
            np.sin(m * theta), coef[1]
        )
    sec = section(bundle, np.einsum("nij,nj->ni", bundle.projectors, field))
    norm = l2_norm(sec)
    if norm < 1e-12:
        raise RuntimeError("degenerate random section draw")
    return section(bundle, sec.values / norm)


def lipschitz_probe(workspace, n_pairs=50, amplitude=0.01, seed=0):
    """Ratios ||Psi(f1)-Psi(f2)||_{W22} / ||f1-f2||_{L2} over random pairs."""
    rng = np.random.default_rng(seed)
    bundle = workspace.bundle
    ratios = []
    for _ in range(n_pairs):
        s1 = _random_smooth_section(bundle, rng)
        s2 = _random_smooth_section(bundle, rng)
        f1 = section(bundle, amplitude * s1.values)
        f2 = section(bundle, amplitude * s2.values)
        u1 = invert_N(workspace, f1)
        u2 = invert_N(workspace, f2)
        diff = section(bundle, u1.values - u2.values)
        _, _, w22 = sobolev_norms(diff)
        denom = l2_norm(section(bundle, f1.values - f2.values))
        if denom < 1e-13:
            continue
        ratios.append(w22 / denom)
    ratios = np.array(ratios)
    return {
        "n_pairs": int(ratios.size),
        "amplitude": float(amplitude),
        "ratio_min": float(np.min(ratios)),
        "ratio_max": float(np.max(ratios)),
        "ratio_spread": float(np.max(ratios) / np.min(ratios)),
    }


def approximation_sweep(
    workspace, amplitudes=(0.04, 0.02, 0.01), n_directions=5, seed=0, floor=1e-14
):
    """Log-log slope of |F(u) - F(Psi(P_K u))| against ||M_F(u)||."""
    rng = np.random.default_rng(seed)
    bundle = workspace.bundle
    lhs_all, m_all = [], []
    for _ in range(n_directions):
        v = _random_smooth_section(bundle, rng)
        for amp in amplitudes:
            u = section(bundle, amp * v.values)
            lhs, rhs = approximation_check(workspace, u)
            m_norm = np.sqrt(rhs)
            if lhs > floor and m_norm > floor:
                lhs_all.append(lhs)
                m_all.append(m_norm)
    lhs_all = np.array(lhs_all)
    m_all = np.array(m_all)
    if lhs_all.size < 3:
        raise ValueError("approximation sweep produced too few usable samples")
    A = np.stack([np.log(m_all), np.ones_like(m_all)], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(lhs_all), rcond=None)
    slope = float(coef[0])
    constant = float(np.max(lhs_all / m_all**2))
    return {
        "amplitudes": [float(a) for a in amplitudes],
        "n_samples": int(lhs_all.size),
        "slope": slope,
        "constant": constant,
        "lhs": lhs_all.tolist(),
        "m_norm": m_all.tolist(),
    }


def sandwich_sweep(workspace, radii=(0.005, 0.01, 0.02), samples_per_radius=20, seed=0):
    """Band membership of the sandwich ratio over seeded kernel samples."""
    rng = np.random.default_rng(seed)
    l = workspace.kernel_dim
    records = []
    for r in radii:
        for _ in range(samples_per_radius):
            direction = rng.standard_normal(l)
            direction /= np.linalg.norm(direction)
            xi = r * direction
            try:
                ratio, status = sandwich_check(workspace, xi)
            except RuntimeError:
                records.append({"radius": float(r), "ratio": None, "status": "newton_failure"})
                continue
            records.append(
                {
                    "radius": float(r),
                    "ratio": None if np.isnan(ratio) else float(ratio),
                    "status": status,
                }
            )
    n_pass = sum(1 for rec in records if rec["status"] == "pass")
    n_fail = sum(1 for rec in records if rec["status"] == "fail")
    n_indet = sum(1 for rec in records if rec["status"] == "indeterminate")
    n_newton = sum(1 for rec in records if rec["status"] == "newton_failure")
    determinate = n_pass + n_fail
    return {
        "radii": [float(r) for r in radii],
        "samples_per_radius": int(samples_per_radius),
        "n_pass": n_pass,
        "n_fail": n_fail,
        "n_indeterminate": n_indet,
        "n_newton_failure": n_newton,
        "determinate_pass_rate": (n_pass / determinate) if determinate else None,
        "records": records,
    }
