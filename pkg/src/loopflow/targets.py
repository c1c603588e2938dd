"""Embedded targets: round spheres and axis-aligned ellipsoids in R^p.

The sphere paths are closed form. The ellipsoid nearest-point projection
solves the Lagrange multiplier equation with a safeguarded Newton
iteration; its differential is obtained by central differencing, and the
second fundamental form by differencing the tangent projector field
along curves through the base point. A tube radius bounds the
neighborhood on which projection and chart operations are trusted.
"""

from dataclasses import dataclass

import numpy as np

_PROJ_TOL = 1e-13
_PROJ_MAX_ITER = 200


@dataclass(frozen=True)
class TargetManifold:
    kind: str
    ambient_dim: int
    semi_axes: np.ndarray
    tube_radius: float

    # -- construction ------------------------------------------------------

    @staticmethod
    def sphere(ambient_dim, tube_radius=0.5):
        if ambient_dim < 2:
            raise ValueError("sphere target needs ambient dimension >= 2")
        if not 0.0 < tube_radius < 1.0:
            raise ValueError("sphere tube_radius must lie in (0, 1)")
        axes = np.ones(ambient_dim)
        axes.setflags(write=False)
        return TargetManifold("sphere", int(ambient_dim), axes, float(tube_radius))

    @staticmethod
    def ellipsoid(semi_axes, tube_radius=None):
        axes = np.asarray(semi_axes, dtype=float)
        if axes.ndim != 1 or axes.size < 2:
            raise ValueError("ellipsoid needs at least two semi-axes")
        if np.any(axes <= 0.0):
            raise ValueError("semi-axes must be positive")
        if tube_radius is None:
            tube_radius = 0.25 * float(axes.min())
        if not 0.0 < tube_radius < float(axes.min()):
            raise ValueError("tube_radius must lie in (0, min semi-axis)")
        axes = axes.copy()
        axes.setflags(write=False)
        return TargetManifold("ellipsoid", int(axes.size), axes, float(tube_radius))

    # -- defining equation -------------------------------------------------

    def defining_residual(self, y):
        """|sum y_k^2 / a_k^2 - 1| at each point; zero on the manifold."""
        y = np.asarray(y, dtype=float)
        q = np.sum((y / self.semi_axes) ** 2, axis=-1)
        return np.abs(q - 1.0)

    def require_on_manifold(self, y, tol=1e-10, what="point"):
        r = self.defining_residual(y)
        worst = float(np.max(r))
        if worst > tol:
            raise ValueError(
                f"{what} is off the target manifold: defining residual {worst:.3e} > {tol:.1e}"
            )

    def in_tube(self, x):
        """Conservative check that x is within tube_radius of the manifold."""
        x = np.asarray(x, dtype=float)
        if self.kind == "sphere":
            d = np.abs(np.linalg.norm(x, axis=-1) - 1.0)
            return bool(np.all(d < self.tube_radius))
        m = np.sqrt(np.sum((x / self.semi_axes) ** 2, axis=-1))
        if np.any(m == 0.0):
            return False
        # x/m lies on the ellipsoid, so |x - x/m| bounds the distance above.
        d = np.linalg.norm(x, axis=-1) * np.abs(1.0 - 1.0 / m)
        return bool(np.all(d < self.tube_radius))

    # -- nearest-point projection ------------------------------------------

    def project_nearest(self, x):
        """Nearest point on the target; accepts a point or an (n, p) stack."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.ambient_dim:
            raise ValueError(
                f"point has dimension {x.shape[-1]}, target lives in R^{self.ambient_dim}"
            )
        if not self.in_tube(x):
            raise ValueError("point outside the tube neighborhood of the target")
        if self.kind == "sphere":
            nrm = np.linalg.norm(x, axis=-1, keepdims=True)
            return x / nrm
        if x.ndim == 1:
            return self._project_ellipsoid(x)
        return np.stack([self._project_ellipsoid(row) for row in x])

    def _project_ellipsoid(self, x):
        a2 = self.semi_axes**2

        def g(t):
            return float(np.sum(a2 * x**2 / (a2 + t) ** 2) - 1.0)

        # g is strictly decreasing on (-min a^2, inf); bracket the root.
        t_lo, t_hi = 0.0, 0.0
        g0 = g(0.0)
        if abs(g0) <= _PROJ_TOL:
            t = 0.0
        else:
            step = float(a2.min())
            if g0 > 0.0:
                t_lo = 0.0
                t_hi = step
                while g(t_hi) > 0.0:
                    t_hi += step
                    step *= 2.0
                    if t_hi > 1e8 * float(a2.max()):
                        raise RuntimeError("ellipsoid projection failed to bracket")
            else:
                t_hi = 0.0
                t_lo = -step * 0.5
                floor = -float(a2.min()) * (1.0 - 1e-12)
                while g(t_lo) < 0.0:
                    t_lo = 0.5 * (t_lo + floor)
                    if floor - t_lo > -1e-14:
                        raise RuntimeError("ellipsoid projection failed to bracket")
            t = 0.5 * (t_lo + t_hi)
            for _ in range(_PROJ_MAX_ITER):
                gt = g(t)
                if abs(gt) <= _PROJ_TOL:
                    break
                if gt > 0.0:
                    t_lo = t
                else:
                    t_hi = t
                dg = float(np.sum(-2.0 * a2 * x**2 / (a2 + t) ** 3))
                t_newton = t - gt / dg if dg != 0.0 else None
                if t_newton is not None and t_lo < t_newton < t_hi:
                    t = t_newton
                else:
                    t = 0.5 * (t_lo + t_hi)
            else:
                raise RuntimeError(
                    f"ellipsoid projection did not converge: residual {g(t):.3e}"
                )
        return a2 * x / (a2 + t)

    # -- differential of projection ----------------------------------------

    def differential_of_projection(self, x, v):
        """d Pi_x(v), the derivative of nearest-point projection at x."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if not self.in_tube(x):
            raise ValueError("base point outside the tube neighborhood")
        if self.kind == "sphere":
            r = np.linalg.norm(x)
            xn = x / r
            return (v - np.dot(v, xn) * xn) / r
        eps = 1e-6 * max(1.0, float(np.linalg.norm(x)))
        return (self._project_ellipsoid(x + eps * v) - self._project_ellipsoid(x - eps * v)) / (
            2.0 * eps
        )

    # -- tangent projector and curvature -----------------------------------

    def tangent_projector(self, y):
        """Orthogonal projector onto T_y N for y on the manifold."""
        y = np.asarray(y, dtype=float)
        self.require_on_manifold(y, what="projector base point")
        n = y / self.semi_axes**2
        n = n / np.linalg.norm(n)
        return np.eye(self.ambient_dim) - np.outer(n, n)

    def second_fundamental_form(self, y, X, Y, tol=1e-8):
        """A_y(X, Y): normal part of the derivative of the projector field.

        Sphere targets use the closed form -(X . Y) y. Ellipsoids difference
        the tangent projector along the projected curve y + t X.
        """
        y = np.asarray(y, dtype=float)
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        self.require_on_manifold(y, what="curvature base point")
        P = self.tangent_projector(y)
        scale = max(1.0, float(np.linalg.norm(X)), float(np.linalg.norm(Y)))
        if np.linalg.norm(P @ X - X) > tol * scale or np.linalg.norm(P @ Y - Y) > tol * scale:
            raise ValueError("second_fundamental_form needs tangent input vectors")
        if self.kind == "sphere":
            return -np.dot(X, Y) * y
        nx = float(np.linalg.norm(X))
        if nx == 0.0:
            return np.zeros(self.ambient_dim)
        eps = 1e-6 / nx
        Pp = self.tangent_projector(self._project_ellipsoid(y + eps * X))
        Pm = self.tangent_projector(self._project_ellipsoid(y - eps * X))
        dP = (Pp - Pm) / (2.0 * eps)
        return (np.eye(self.ambient_dim) - P) @ (dP @ Y)


def curvature_contraction(target, y, X):
    """Vectorized A_y(X, X) over stacked rows, via the level-set closed form.

    Agrees with second_fundamental_form (which differences the projector
    field) to the differencing tolerance; used on hot paths.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    a2 = target.semi_axes**2
    grad = 2.0 * y / a2
    gn = np.linalg.norm(grad, axis=-1, keepdims=True)
    nhat = grad / gn
    HX = 2.0 * X / a2
    coeff = np.sum(X * HX, axis=-1, keepdims=True) / gn
    return -coeff * nhat
