"""Gaussian-process regression with squared-exponential kernels.

Follows the Cholesky formulation: the noisy Gram matrix K + σ_y²·I is factorised once
per model and reused for the posterior mean, posterior variance, the log marginal
likelihood and its analytic gradient

    ∂/∂θ log p(y) = ½ tr((α αᵀ − (K + σ_y² I)⁻¹) ∂K/∂θ),   α = (K + σ_y² I)⁻¹ y.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, Union

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

JITTER = 1e-8
# relative pivot size below which a factor is treated as singular
_PIVOT_FLOOR = 1e-13


class SingularModelError(RuntimeError):
    """The noisy Gram matrix could not be factorised."""


@dataclass(frozen=True)
class SqExpKernel:
    scale: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"kernel scale must be > 0, got {self.scale}")
        if not self.lengthscale > 0:
            raise ValueError(f"kernel lengthscale must be > 0, got {self.lengthscale}")

    def __call__(self, a, b) -> float:
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        return float(self.scale * np.exp(-0.5 * np.dot(d, d) / self.lengthscale ** 2))

    def matrix(self, A, B=None) -> np.ndarray:
        A = as_points(A)
        B = A if B is None else as_points(B)
        sq = cdist(A, B, 'sqeuclidean')
        K = self.scale * np.exp(-0.5 * sq / self.lengthscale ** 2)
        if B is A:
            # exact symmetry regardless of cdist rounding
            K = np.triu(K) + np.triu(K, 1).T
        return K

    def gradient_wrt_query(self, q, X) -> np.ndarray:
        """∂k(q, X_j)/∂q for every row X_j, shape (N, d)."""
        q = np.asarray(q, dtype=float).reshape(1, -1)
        X = as_points(X)
        diff = q - X
        k = self.scale * np.exp(-0.5 * np.sum(diff ** 2, axis=1) / self.lengthscale ** 2)
        return -(k[:, None] * diff) / self.lengthscale ** 2

    def gram_derivatives(self, X) -> Sequence[np.ndarray]:
        """Gram-matrix derivatives with respect to (scale, lengthscale)."""
        X = as_points(X)
        K = self.matrix(X)
        sq = cdist(X, X, 'sqeuclidean')
        return [K / self.scale, K * sq / self.lengthscale ** 3]


def kernel_eval(k: SqExpKernel, a, b) -> float:
    return k(a, b)


def as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        return X.reshape(1, 1)
    if X.ndim == 1:
        return X.reshape(-1, 1)
    return X


def _try_cholesky(A: np.ndarray):
    try:
        c, lower = linalg.cho_factor(A, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return None
    diag = np.abs(np.diag(c))
    if not np.all(np.isfinite(diag)) or diag.min() ** 2 <= _PIVOT_FLOOR * diag.max() ** 2:
        return None
    return c, lower


def cholesky(A: np.ndarray, noise: float):
    """Factorise A = K + noise·I; retry once with jitter when noise is positive."""
    factor = _try_cholesky(A)
    if factor is not None:
        return factor
    if noise > 0:
        logging.warning(f"Cholesky factorisation failed for a {A.shape[0]}x{A.shape[0]} system; retrying with jitter {JITTER:g}")
        factor = _try_cholesky(A + JITTER * np.eye(A.shape[0]))
        if factor is not None:
            return factor
    raise SingularModelError(
        f"Gram matrix of size {A.shape[0]} is not positive definite (noise variance {noise:g})"
    )


class GpModel:
    """A fitted GP: inputs, targets, kernel, noise and the cached factorisation."""

    def __init__(self, X, y, kernel: SqExpKernel, noise: float = 0.0):
        X = as_points(X)
        y = np.asarray(y, dtype=float).reshape(-1)
        if len(X) < 1 or len(X) != len(y):
            raise ValueError(f"need matching non-empty inputs and targets, got {len(X)} and {len(y)}")
        if noise < 0:
            raise ValueError(f"noise variance must be >= 0, got {noise}")
        self.X = X
        self.y = y
        self.kernel = kernel
        self.noise = float(noise)
        self.K = kernel.matrix(X)
        self.factor = cholesky(self.K + self.noise * np.eye(len(X)), self.noise)
        self.alpha = linalg.cho_solve(self.factor, y, check_finite=False)

    def __len__(self) -> int:
        return len(self.y)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return linalg.cho_solve(self.factor, b, check_finite=False)

    def interpolation_weights(self, Q) -> np.ndarray:
        """Rows k(q, X)·(K + σ_y² I)⁻¹, so that the mean at q is this times any target vector."""
        Kq = self.kernel.matrix(as_points(Q), self.X)
        return self.solve(Kq.T).T

    def mean(self, q) -> Union[float, np.ndarray]:
        q = np.asarray(q, dtype=float)
        single = q.ndim <= 1 and (q.ndim == 0 or q.shape[0] == self.X.shape[1])
        Q = q.reshape(1, -1) if single else as_points(q)
        m = self.kernel.matrix(Q, self.X) @ self.alpha
        return float(m[0]) if single else m

    def variance(self, q) -> Union[float, np.ndarray]:
        q = np.asarray(q, dtype=float)
        single = q.ndim <= 1 and (q.ndim == 0 or q.shape[0] == self.X.shape[1])
        Q = q.reshape(1, -1) if single else as_points(q)
        Kq = self.kernel.matrix(Q, self.X)
        v = self.kernel.scale - np.sum(Kq * self.solve(Kq.T).T, axis=1)
        v = np.maximum(v, 0.0)
        return float(v[0]) if single else v

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.factor[0]))))

    def log_marginal_likelihood(self) -> float:
        n = len(self.y)
        return float(-0.5 * self.y @ self.alpha - 0.5 * self.log_det() - 0.5 * n * np.log(2 * np.pi))

    def inverse(self) -> np.ndarray:
        """(K + σ_y² I)⁻¹ from the cached Cholesky factor."""
        c, lower = self.factor
        potri, = linalg.get_lapack_funcs(('potri',), (c,))
        inv, info = potri(c, lower=int(lower))
        if info != 0:
            raise SingularModelError(f"inverse from Cholesky factor failed (info={info})")
        tri = np.tril(inv) if lower else np.triu(inv)
        return tri + tri.T - np.diag(np.diag(tri))

    def lml_weight_matrix(self) -> np.ndarray:
        """α αᵀ − (K + σ_y² I)⁻¹; contracting it with ½·∂K/∂θ gives ∂ log p(y)/∂θ."""
        return np.outer(self.alpha, self.alpha) - self.inverse()

    def lml_gradient(self, dK_dtheta: Union[Iterable[np.ndarray], Callable[[], Iterable[np.ndarray]]]) -> np.ndarray:
        if callable(dK_dtheta):
            dK_dtheta = dK_dtheta()
        W = self.lml_weight_matrix()
        return np.array([0.5 * float(np.sum(W * dK)) for dK in dK_dtheta])


def gp_fit(X, y, k: SqExpKernel, noise: float = 0.0) -> GpModel:
    return GpModel(X, y, k, noise)


def gp_mean(m: GpModel, q):
    return m.mean(q)


def gp_variance(m: GpModel, q):
    return m.variance(q)


def log_marginal_likelihood(m: GpModel) -> float:
    return m.log_marginal_likelihood()


def lml_gradient(m: GpModel, dK_dtheta) -> np.ndarray:
    return m.lml_gradient(dK_dtheta)
