"""GP occupancy and distance fields over point sets, homographies, and robust registration.

The occupancy field is the GP posterior mean trained with unit targets at the support
points; its negative logarithm behaves like a distance-to-nearest-point field and is
exactly r²/(2l²) around an isolated point. Homographies between two point sets are
estimated by Levenberg-Marquardt on distance-field residuals under a Cauchy loss,
in both directions (H for the moving set, H⁻¹ for the fixed set).
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .gp import GpModel, SqExpKernel, as_points

DISTANCE_FLOOR = 1e-12
# projective division guard
W_EPS = 1e-12
DET_EPS = 1e-12
# gradient bound per residual under which an unimproved start counts as a minimum
STATIONARY_TOL = 1e-8

# (row, col) of the 8 free homography entries; h33 is pinned to 1
_FREE_ENTRIES = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0), (2, 1)]


class PointAtInfinityError(ValueError):
    """A homography sends a point to the line at infinity."""


def thin_support(points: np.ndarray, limit: int, resolution: float) -> np.ndarray:
    """Keep the first point of every `resolution`-sized bin once there are more than `limit` points."""
    points = as_points(points)
    if len(points) <= limit:
        return points
    keys = np.floor(points / resolution).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    kept = points[np.sort(first)]
    logging.debug(f"Thinned field support from {len(points)} to {len(kept)} points")
    return kept


class OccupancyField:
    def __init__(self, points, kernel: SqExpKernel, noise: float):
        points = as_points(points)
        if len(points) == 0:
            raise ValueError("an occupancy field needs at least one support point")
        self.kernel = kernel
        self.noise = noise
        self.model = GpModel(points, np.ones(len(points)), kernel, noise)

    @property
    def points(self) -> np.ndarray:
        return self.model.X

    @property
    def weights(self) -> np.ndarray:
        return self.model.alpha

    def mean(self, q) -> np.ndarray:
        Q = np.asarray(q, dtype=float).reshape(-1, 2)
        return self.kernel.matrix(Q, self.points) @ self.weights

    def mean_and_gradient(self, q) -> Tuple[np.ndarray, np.ndarray]:
        Q = np.asarray(q, dtype=float).reshape(-1, 2)
        Kq = self.kernel.matrix(Q, self.points)
        Kw = Kq * self.weights
        g = Kw.sum(axis=1)
        # ∇g(q) = −(1/l²) Σ_j w_j k(q, x_j)(q − x_j)
        grad = -(Q * g[:, None] - Kw @ self.points) / self.kernel.lengthscale ** 2
        return g, grad


def build_occupancy(points, kernel: Optional[SqExpKernel] = None, noise: float = 1e-2,
                    support_limit: Optional[int] = None) -> OccupancyField:
    kernel = kernel or SqExpKernel(1.0, 0.25)
    points = as_points(points)
    if support_limit is not None:
        points = thin_support(points, support_limit, kernel.lengthscale / 2)
    return OccupancyField(points, kernel, noise)


@dataclass
class DistanceField:
    occupancy: OccupancyField
    floor: float = DISTANCE_FLOOR

    def __post_init__(self):
        if not self.floor > 0:
            raise ValueError(f"distance floor must be > 0, got {self.floor}")

    def values(self, q) -> np.ndarray:
        g = np.clip(self.occupancy.mean(q), self.floor, 1.0)
        return -np.log(g)

    def values_and_gradients(self, q) -> Tuple[np.ndarray, np.ndarray]:
        g, grad = self.occupancy.mean_and_gradient(q)
        d = -np.log(np.clip(g, self.floor, 1.0))
        live = (g > self.floor) & (g < 1.0)
        out = np.zeros_like(grad)
        out[live] = -grad[live] / g[live, None]
        return d, out


def build_distance_field(points, kernel: Optional[SqExpKernel] = None, noise: float = 1e-2,
                         support_limit: Optional[int] = None, floor: float = DISTANCE_FLOOR) -> DistanceField:
    return DistanceField(build_occupancy(points, kernel, noise, support_limit), floor)


def distance_query(f: DistanceField, q) -> float:
    return float(f.values(q)[0])


def distance_gradient(f: DistanceField, q) -> np.ndarray:
    return f.values_and_gradients(q)[1][0]


def rasterize_field(f: DistanceField, origin, shape: Tuple[int, int], step: float = 1.0) -> np.ndarray:
    """Distance values on a (rows, cols) grid starting at `origin` = (x0, y0)."""
    rows, cols = shape
    xs = origin[0] + step * np.arange(cols)
    ys = origin[1] + step * np.arange(rows)
    gx, gy = np.meshgrid(xs, ys)
    return f.values(np.column_stack([gx.ravel(), gy.ravel()])).reshape(rows, cols)


@dataclass(frozen=True, eq=False)
class Homography:
    H: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        H = np.array(self.H, dtype=float).reshape(3, 3)
        if abs(H[2, 2]) < DET_EPS:
            raise ValueError("homography bottom-right entry is zero and cannot be normalised")
        H = H / H[2, 2]
        if abs(np.linalg.det(H)) <= DET_EPS:
            raise ValueError("homography is not invertible")
        H.setflags(write=False)
        object.__setattr__(self, 'H', H)

    @classmethod
    def identity(cls) -> 'Homography':
        return cls(np.eye(3))

    @classmethod
    def from_params(cls, h: np.ndarray) -> 'Homography':
        return cls(np.append(np.asarray(h, dtype=float), 1.0).reshape(3, 3))

    def params(self) -> np.ndarray:
        return self.H.reshape(-1)[:8].copy()

    def inverse(self) -> 'Homography':
        return Homography(np.linalg.inv(self.H))

    def compose(self, other: 'Homography') -> 'Homography':
        """self · other: apply `other` first."""
        return Homography(self.H @ other.H)

    def project(self, points) -> np.ndarray:
        return project_points(self.H, points)


def project_points(H: np.ndarray, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    v = pts @ H[:2, :2].T + H[:2, 2]
    w = pts @ H[2, :2] + H[2, 2]
    if np.any(np.abs(w) < W_EPS):
        raise PointAtInfinityError("point maps to infinity under the homography")
    return v / w[:, None]


def project(H: Homography, e) -> np.ndarray:
    return H.project(e)[0]


def _projection_jacobian(v: np.ndarray) -> np.ndarray:
    """∂π/∂v for homogeneous rows v, shape (N, 2, 3)."""
    inv_w = 1.0 / v[:, 2]
    J = np.zeros((len(v), 2, 3))
    J[:, 0, 0] = inv_w
    J[:, 1, 1] = inv_w
    J[:, 0, 2] = -v[:, 0] * inv_w ** 2
    J[:, 1, 2] = -v[:, 1] * inv_w ** 2
    return J


def _homogeneous(points: np.ndarray) -> np.ndarray:
    return np.column_stack([points, np.ones(len(points))])


@dataclass
class RegistrationTerm:
    """Residuals of one pair of point sets under H (moving → fixed frame through `pre`·H).

    Forward: moving points mapped by pre·H queried in `fixed_field`.
    Backward: fixed points mapped by (pre·H)⁻¹ queried in `moving_field`.
    """

    moving_points: np.ndarray
    fixed_field: DistanceField
    fixed_points: Optional[np.ndarray] = None
    moving_field: Optional[DistanceField] = None
    pre: Homography = field(default_factory=Homography.identity)
    weight: float = 1.0

    def __post_init__(self):
        self.moving_points = as_points(self.moving_points)
        if len(self.moving_points) == 0:
            raise ValueError("registration needs at least one moving point")
        if self.fixed_points is not None:
            self.fixed_points = as_points(self.fixed_points)
            # fixed points expressed in the frame reached by H alone
            self._fixed_pre = self.pre.inverse().project(self.fixed_points)

    def residuals(self, H: np.ndarray, with_jacobian: bool = True):
        res: List[np.ndarray] = []
        jac: List[np.ndarray] = []

        m = _homogeneous(self.moving_points)
        u = m @ H.T
        v = u @ self.pre.H.T
        if np.any(np.abs(v[:, 2]) < W_EPS):
            raise PointAtInfinityError("moving point maps to infinity")
        q = v[:, :2] / v[:, 2:3]
        d, dg = self.fixed_field.values_and_gradients(q)
        res.append(d)
        if with_jacobian:
            B = _projection_jacobian(v) @ self.pre.H
            dU = np.zeros((len(m), 3, 8))
            for k, (r, c) in enumerate(_FREE_ENTRIES):
                dU[:, r, k] = m[:, c]
            jac.append(np.einsum('ni,nij,njk->nk', dg, B, dU))

        if self.fixed_points is not None and self.moving_field is not None:
            Hinv = np.linalg.inv(H)
            f = _homogeneous(self._fixed_pre)
            w = f @ Hinv.T
            if np.any(np.abs(w[:, 2]) < W_EPS):
                raise PointAtInfinityError("fixed point maps to infinity")
            qb = w[:, :2] / w[:, 2:3]
            db, dgb = self.moving_field.values_and_gradients(qb)
            res.append(db)
            if with_jacobian:
                P = _projection_jacobian(w)
                dW = np.zeros((len(f), 3, 8))
                # ∂(H⁻¹f)/∂H_rc = −H⁻¹[:, r] · (H⁻¹f)_c
                for k, (r, c) in enumerate(_FREE_ENTRIES):
                    dW[:, :, k] = -np.outer(w[:, c], Hinv[:, r])
                jac.append(np.einsum('ni,nij,njk->nk', dgb, P, dW))

        r_all = np.concatenate(res)
        if not with_jacobian:
            return r_all, None
        return r_all, np.vstack(jac)


@dataclass
class RegistrationResult:
    H: Homography
    cost: float
    initial_cost: float
    converged: bool
    iterations: int


def cauchy(s: np.ndarray, scale: float) -> np.ndarray:
    c2 = scale ** 2
    return c2 * np.log1p(s / c2)


def cauchy_weights(r: np.ndarray, term_weights: np.ndarray, scale: float) -> np.ndarray:
    """IRLS weights ρ'(r²) of the Cauchy loss."""
    return term_weights / (1.0 + r ** 2 / scale ** 2)


def _evaluate(terms: Sequence[RegistrationTerm], H: np.ndarray, scale: float, with_jacobian: bool = True):
    residuals, jacobians, weights = [], [], []
    for term in terms:
        r, J = term.residuals(H, with_jacobian)
        residuals.append(r)
        weights.append(np.full(len(r), term.weight))
        if with_jacobian:
            jacobians.append(J)
    r = np.concatenate(residuals)
    tw = np.concatenate(weights)
    cost = float(np.sum(tw * cauchy(r ** 2, scale)))
    J = np.vstack(jacobians) if with_jacobian else None
    return cost, r, J, tw


def register_terms(terms: Sequence[RegistrationTerm], H_init: Optional[Homography] = None,
                   cauchy_scale: float = 1.0, max_iterations: int = 50,
                   initial_lambda: float = 1e-3, tol: float = 1e-12) -> RegistrationResult:
    """Levenberg-Marquardt over the 8 free entries of H with Cauchy-reweighted residuals."""
    if not terms:
        raise ValueError("registration needs at least one term")
    H_init = H_init or Homography.identity()
    h = H_init.params()
    try:
        cost, r, J, tw = _evaluate(terms, H_init.H, cauchy_scale)
    except PointAtInfinityError as e:
        logging.debug(f"Registration start is degenerate: {e}")
        return RegistrationResult(H_init, float('inf'), float('inf'), False, 0)
    initial_cost = cost
    lam = initial_lambda
    accepted = 0
    iterations = 0

    while iterations < max_iterations:
        iterations += 1
        w = cauchy_weights(r, tw, cauchy_scale)
        JtW = J.T * w
        A = JtW @ J
        g = JtW @ r
        if np.max(np.abs(g)) < tol:
            break
        diag = np.diag(A).copy()
        diag[diag <= 0] = 1e-12
        improved = False
        while lam < 1e12:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
                h_new = h + step
                H_new = Homography.from_params(h_new)
                new_cost, r_new, J_new, tw_new = _evaluate(terms, H_new.H, cauchy_scale)
            except (np.linalg.LinAlgError, ValueError):
                lam *= 10
                continue
            if new_cost < cost:
                improved = True
                lam = max(lam / 10, 1e-12)
                break
            lam *= 10
        if not improved:
            break
        accepted += 1
        decrease = cost - new_cost
        h, cost, r, J, tw = h_new, new_cost, r_new, J_new, tw_new
        if decrease <= tol * max(cost, 1.0) or np.max(np.abs(step)) < tol:
            break

    # an unimproved start still converges when it is stationary
    g = J.T @ (cauchy_weights(r, tw, cauchy_scale) * r)
    converged = accepted > 0 or (np.isfinite(cost) and np.max(np.abs(g)) <= STATIONARY_TOL * len(r))
    H = Homography.from_params(h) if accepted else H_init
    logging.debug(
        f"LM registration: cost {initial_cost:.4f} -> {cost:.4f} after {iterations} iterations "
        f"({accepted} accepted, lambda={lam:.1e})"
    )
    return RegistrationResult(H, cost, initial_cost, converged, iterations)


def register_homography(moving, fixed_field: DistanceField, moving_field: DistanceField, fixed_points,
                        H_init: Optional[Homography] = None, **kwargs) -> Tuple[Homography, float, bool]:
    """Bidirectional registration of `moving` onto the fixed set; returns (H, cost, converged)."""
    term = RegistrationTerm(moving, fixed_field, fixed_points, moving_field)
    result = register_terms([term], H_init, **kwargs)
    return result.H, result.cost, result.converged
