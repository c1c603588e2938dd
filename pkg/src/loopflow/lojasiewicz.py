"""Lojasiewicz exponent estimation from sampled data, and brute-force
verification of the classical gradient and distance inequalities for
polynomials.

Section-level clouds pair |F(u) - F(critical)| with a gradient norm and
are fitted by ordinary least squares in log-log space. Finite
dimensional polynomial fits instead use the lower envelope of the
scatter: the inequality |f|^theta <= C |grad f| binds along the worst
direction (think x^2 + y^4 near 0, where the y-axis forces theta = 3/4),
and a plain regression over all directions would average it away.
"""

from dataclasses import dataclass

import numpy as np

from .reduction import reduced_function

__all__ = [
    "ExponentFit",
    "SampleCloud",
    "make_cloud",
    "estimate_gradient_exponent",
    "verify_inequality",
    "finite_dim_gradient_exponent",
    "finite_dim_distance_exponent",
    "integrability_probe",
]

_FLOOR = 1e-13


@dataclass(frozen=True)
class ExponentFit:
    theta: float
    constant: float
    r_squared: float
    sample_count: int
    noise_floor_hits: int

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"fitted exponent {self.theta:.4f} outside (0, 1]")
        if self.constant <= 0.0:
            raise ValueError("fitted constant must be positive")
        if not 0.0 <= self.r_squared <= 1.0 + 1e-12:
            raise ValueError("regression quality outside [0, 1]")


@dataclass(frozen=True)
class SampleCloud:
    pairs: np.ndarray  # (m, 2): value gap, gradient norm
    provenance: str


def make_cloud(value_gaps, gradient_norms, provenance):
    v = np.asarray(value_gaps, dtype=float)
    g = np.asarray(gradient_norms, dtype=float)
    if v.shape != g.shape or v.ndim != 1:
        raise ValueError("value gaps and gradient norms must be matching 1-d arrays")
    if np.any(v < 0.0) or np.any(g < 0.0):
        raise ValueError("cloud entries must be nonnegative")
    pairs = np.stack([v, g], axis=1)
    pairs.setflags(write=False)
    return SampleCloud(pairs=pairs, provenance=str(provenance))


def _usable(cloud):
    v, g = cloud.pairs[:, 0], cloud.pairs[:, 1]
    mask = (v > _FLOOR) & (g > _FLOOR)
    return v[mask], g[mask], int(np.sum(~mask))


def _ols_loglog(x, y):
    lx, ly = np.log(x), np.log(y)
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    fit = A @ coef
    ss_res = float(np.sum((ly - fit) ** 2))
    ss_tot = float(np.sum((ly - np.mean(ly)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return float(coef[0]), float(coef[1]), r2


def _require_span(v, n_min=10, decades=2.0):
    if v.size < n_min:
        raise ValueError(f"need at least {n_min} usable pairs, have {v.size}")
    span = np.log10(np.max(v) / np.min(v))
    if span < decades:
        raise ValueError(
            f"value gaps span {span:.2f} decades, need at least {decades:.0f}"
        )


def estimate_gradient_exponent(cloud):
    """OLS fit of log(gradient) = theta log(gap) + log(1/C)."""
    v, g, dropped = _usable(cloud)
    _require_span(v)
    slope, intercept, r2 = _ols_loglog(v, g)
    return ExponentFit(
        theta=slope,
        constant=float(np.exp(-intercept)),
        r_squared=r2,
        sample_count=int(v.size),
        noise_floor_hits=dropped,
    )


def verify_inequality(cloud, theta_claim):
    """Split-sample validation of |gap|^theta <= C * gradient.

    The constant is calibrated on the first half of the cloud (doubled
    for slack) and checked on the second half. A monotone trend of the
    per-sample constant against the gap flags a diverging C, the
    signature of claiming too small an exponent.
    """
    v, g, dropped = _usable(cloud)
    if v.size == 0:
        raise ValueError("no usable samples above the noise floor")
    c_samples = v**theta_claim / g
    c_min = float(np.max(c_samples))
    half = v.size // 2
    if half == 0:
        raise ValueError("too few samples for split validation")
    c_first = float(np.max(c_samples[:half]))
    holdout = c_samples[half:]
    pass_fraction = float(np.mean(holdout <= 2.0 * c_first))
    trend_slope, _, trend_r2 = _ols_loglog(v, c_samples)
    diverging = bool(trend_slope < -0.05 and trend_r2 > 0.5)
    return {
        "theta_claim": float(theta_claim),
        "c_min": c_min,
        "c_calibration": c_first,
        "holdout_pass_fraction": pass_fraction,
        "diverging_constant": diverging,
        "trend_slope": float(trend_slope),
        "usable_samples": int(v.size),
        "noise_floor_hits": dropped,
    }


# -- finite-dimensional brute force ----------------------------------------


def _sphere_directions(n_vars, count, rng):
    """Quasi-uniform seeded directions plus every signed coordinate axis.

    The axes are appended deterministically: the binding direction of an
    anisotropic polynomial (x^2 + y^4) is an axis, and a random draw of
    modest size can miss its neighborhood entirely.
    """
    dirs = rng.standard_normal((count, n_vars))
    norms = np.linalg.norm(dirs, axis=1)
    keep = norms > 1e-12
    dirs = dirs[keep] / norms[keep][:, None]
    axes = np.concatenate([np.eye(n_vars), -np.eye(n_vars)], axis=0)
    return np.concatenate([dirs, axes], axis=0)


def _lower_envelope(v, g, bins_per_decade=4):
    """Per-bin minima of g over log-spaced bins of v."""
    lv = np.log10(v)
    lo, hi = float(np.min(lv)), float(np.max(lv))
    n_bins = max(1, int(np.ceil((hi - lo) * bins_per_decade)))
    edges = np.linspace(lo, hi, n_bins + 1)
    idx = np.clip(np.digitize(lv, edges) - 1, 0, n_bins - 1)
    keep_v, keep_g = [], []
    for b in range(n_bins):
        mask = idx == b
        if not np.any(mask):
            continue
        j = int(np.argmin(np.where(mask, g, np.inf)))
        keep_v.append(v[j])
        keep_g.append(g[j])
    return np.array(keep_v), np.array(keep_g)


def finite_dim_gradient_exponent(f, critical_point, radii, samples_per_radius=64, seed=0):
    """Brute-force theta for a polynomial near a critical point.

    Samples spheres of the given radii and fits log |grad f| against
    log |f - f(x*)| separately along every direction, reporting the
    maximum of the directional slopes. The inequality must hold along
    its worst direction, and that direction occupies a vanishing
    fraction of a quasi-uniform cloud (x^2 + y^4 needs the y-axis, where
    the ratio of exponents is 3/4 instead of the generic 1/2), so a
    pooled regression would average it away. The constant is the largest
    gap^theta / gradient over the whole cloud, the value the inequality
    actually needs at the reported exponent.
    """
    x0 = np.asarray(critical_point, dtype=float)
    if float(np.linalg.norm(f.gradient(x0))) > 1e-12:
        raise ValueError("critical_point fails |grad f| <= 1e-12")
    f0 = f.value(x0)
    rng = np.random.default_rng(seed)
    dirs = _sphere_directions(f.n_vars, samples_per_radius, rng)
    radii = np.asarray(radii, dtype=float)
    pts = x0 + radii[:, None, None] * dirs[None, :, :]
    v = np.abs(f.value(pts) - f0)  # (n_radii, n_dirs)
    g = np.linalg.norm(f.gradient(pts), axis=-1)
    ok = (v > _FLOOR) & (g > _FLOOR)
    dropped = int(np.sum(~ok))
    if not np.any(ok):
        raise ValueError("all samples below the noise floor; degenerate sampling")
    _require_span(v[ok])
    theta, r2 = -np.inf, 0.0
    for d in range(dirs.shape[0]):
        vd, gd = v[:, d][ok[:, d]], g[:, d][ok[:, d]]
        if vd.size < 3 or np.log10(np.max(vd) / np.min(vd)) < 2.0:
            continue
        slope, _, slope_r2 = _ols_loglog(vd, gd)
        if slope > theta:
            theta, r2 = slope, slope_r2
    if not np.isfinite(theta):
        raise ValueError("no direction yields enough usable radii to fit")
    constant = float(np.max(v[ok] ** theta / g[ok]))
    return ExponentFit(
        theta=theta,
        constant=constant,
        r_squared=r2,
        sample_count=int(np.sum(ok)),
        noise_floor_hits=dropped,
    )


def _polish_zero(f, x, steps=1):
    """Gauss-Newton step(s) toward f = 0 for the scalar equation."""
    y = np.asarray(x, dtype=float).copy()
    for _ in range(steps):
        val = f.value(y)
        grad = f.gradient(y)
        gg = float(np.dot(grad, grad))
        if gg < 1e-30:
            break
        y = y - (val / gg) * grad
    return y


def _grid_points(box, per_axis):
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def finite_dim_distance_exponent(f, box, grid_n, zero_tol=1e-8, refine=4):
    """Brute-force (alpha, C) for dist(x, Z)^alpha <= C |f(x)| on a box.

    The zero set is approximated on a refined grid (cells with |f| below
    zero_tol, each polished by one Gauss-Newton step); distances from
    the coarse grid to that set are binned, the per-bin minimum of |f|
    gives the envelope whose slope is alpha.
    """
    box = [(float(lo), float(hi)) for lo, hi in box]
    if len(box) != f.n_vars:
        raise ValueError("box dimension does not match the polynomial arity")
    fine = _grid_points(box, refine * grid_n + 1)
    fine_vals = np.abs(f.value(fine))
    if float(np.min(fine_vals)) > 1e-10:
        raise ValueError("no zeros of f detected in the box")
    candidates = fine[fine_vals < zero_tol]
    zeros = np.array([_polish_zero(f, c) for c in candidates])
    zeros = zeros[np.abs(f.value(zeros)) <= zero_tol]
    coarse = _grid_points(box, grid_n)
    vals = np.abs(f.value(coarse))
    diffs = coarse[:, None, :] - zeros[None, :, :]
    dists = np.min(np.linalg.norm(diffs, axis=-1), axis=1)
    mask = (dists > _FLOOR) & (vals > _FLOOR)
    dists, vals = dists[mask], vals[mask]
    if dists.size < 4:
        raise ValueError("too few off-zero grid samples to fit")
    env_d, env_f = _lower_envelope(dists, vals, bins_per_decade=6)
    slope, _, _ = _ols_loglog(env_d, env_f)
    alpha = slope
    constant = float(np.max(dists**alpha / vals))
    return alpha, constant


def integrability_probe(workspace, radii, samples_per_radius=20, tolerance=1e-4, seed=0):
    """Check whether the reduced function vanishes identically near 0.

    Samples |f(xi)| on kernel spheres; the verdict is integrable when
    the maximum at every radius r stays below tolerance * r^2, the decay
    a genuinely flat reduced function shows but an isolated-degenerate
    one (quartic well) cannot.
    """
    rng = np.random.default_rng(seed)
    l = workspace.kernel_dim
    per_radius = []
    for r in radii:
        max_abs = 0.0
        failures = 0
        for _ in range(samples_per_radius):
            direction = rng.standard_normal(l)
            norm = np.linalg.norm(direction)
            if norm < 1e-12:
                continue
            xi = (r / norm) * direction if r > 0 else np.zeros(l)
            try:
                val = abs(reduced_function(workspace, xi))
            except RuntimeError:
                failures += 1
                continue
            max_abs = max(max_abs, val)
        per_radius.append(
            {
                "radius": float(r),
                "max_abs_f": max_abs,
                "bound": tolerance * float(r) ** 2,
                "newton_failures": failures,
                "integrable": bool(max_abs <= tolerance * float(r) ** 2),
            }
        )
    verdict = all(rec["integrable"] for rec in per_radius)
    return {
        "tolerance": float(tolerance),
        "samples_per_radius": int(samples_per_radius),
        "per_radius": per_radius,
        "integrable": verdict,
    }
