"""Gaussian, linear-conditional Gaussian and categorical primitives.

Covariances are stored as lower-triangular Cholesky factors, so positive
definiteness is checked once at construction instead of drifting silently
through downstream updates. All log densities, entropies and KL divergences
are exact up to floating point.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatchError, NotPositiveDefiniteError

LOG_2PI = float(np.log(2.0 * np.pi))


def _as_vector(x, dim: int | None = None, name: str = "x") -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise DimensionMismatchError(f"{name} must be a vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DimensionMismatchError(f"{name} has dimension {v.shape[0]}, expected {dim}")
    return v


def cholesky_of_cov(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a covariance matrix.

    The input is symmetrized first; a failed factorization raises
    :class:`NotPositiveDefiniteError` instead of propagating LinAlgError.
    """
    c = np.asarray(cov, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DimensionMismatchError(f"covariance must be square, got shape {c.shape}")
    c = 0.5 * (c + c.T)
    try:
        return np.linalg.cholesky(c)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"covariance is not positive-definite: {exc}") from exc


class Gaussian:
    """Multivariate normal parameterized by mean and lower Cholesky factor."""

    __slots__ = ("mean", "chol")

    def __init__(self, mean, chol):
        self.mean = _as_vector(mean, name="mean")
        L = np.asarray(chol, dtype=float)
        d = self.mean.shape[0]
        if L.shape != (d, d):
            raise DimensionMismatchError(f"factor shape {L.shape} does not match dimension {d}")
        if np.any(np.diag(L) <= 0.0):
            raise NotPositiveDefiniteError("Cholesky factor must have strictly positive diagonal")
        self.chol = L

    @classmethod
    def from_cov(cls, mean, cov) -> "Gaussian":
        return cls(mean, cholesky_of_cov(cov))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def cov(self) -> np.ndarray:
        return self.chol @ self.chol.T

    @property
    def log_det_cov(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def precision(self) -> np.ndarray:
        inv_l = solve_triangular(self.chol, np.eye(self.dim), lower=True, check_finite=False)
        return inv_l.T @ inv_l

    def log_density(self, x):
        """log N(x; mean, cov) for a single point ``(d,)`` or a batch ``(n, d)``."""
        pts = np.asarray(x, dtype=float)
        single = pts.ndim == 1
        if single:
            pts = pts[None, :]
        if pts.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"point dimension {pts.shape[1]} does not match Gaussian dimension {self.dim}"
            )
        z = solve_triangular(self.chol, (pts - self.mean).T, lower=True, check_finite=False)
        with np.errstate(over="ignore"):  # far-away points overflow to -inf density
            quad = np.sum(z * z, axis=0)
        out = -0.5 * (self.dim * LOG_2PI + self.log_det_cov + quad)
        return float(out[0]) if single else out

    def entropy(self) -> float:
        return 0.5 * self.dim * (1.0 + LOG_2PI) + 0.5 * self.log_det_cov

    def kl(self, other: "Gaussian") -> float:
        """KL(self || other); zero iff the two distributions coincide."""
        if other.dim != self.dim:
            raise DimensionMismatchError(
                f"KL between dimensions {self.dim} and {other.dim}"
            )
        a = solve_triangular(other.chol, self.chol, lower=True, check_finite=False)
        trace = float(np.sum(a * a))
        u = solve_triangular(other.chol, self.mean - other.mean, lower=True, check_finite=False)
        quad = float(u @ u)
        return 0.5 * (trace + quad - self.dim + other.log_det_cov - self.log_det_cov)

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Draw ``mean + chol @ z`` with z standard normal; pure in (self, rng state)."""
        if size is None:
            z = rng.standard_normal(self.dim)
            return self.mean + self.chol @ z
        z = rng.standard_normal((size, self.dim))
        return self.mean + z @ self.chol.T

    def __repr__(self) -> str:
        return f"Gaussian(dim={self.dim}, mean={np.array2string(self.mean, precision=3)})"


class LinCondGaussian:
    """Linear-conditional Gaussian: x | c ~ N(gain @ c + bias, cov).

    The covariance is shared across contexts; only the mean is context
    dependent.
    """

    __slots__ = ("gain", "bias", "chol")

    def __init__(self, gain, bias, chol):
        self.gain = np.atleast_2d(np.asarray(gain, dtype=float))
        self.bias = _as_vector(bias, name="bias")
        d = self.bias.shape[0]
        if self.gain.shape[0] != d:
            raise DimensionMismatchError(
                f"gain has {self.gain.shape[0]} rows, bias has dimension {d}"
            )
        L = np.asarray(chol, dtype=float)
        if L.shape != (d, d):
            raise DimensionMismatchError(f"factor shape {L.shape} does not match dimension {d}")
        if np.any(np.diag(L) <= 0.0):
            raise NotPositiveDefiniteError("Cholesky factor must have strictly positive diagonal")
        self.chol = L

    @classmethod
    def from_cov(cls, gain, bias, cov) -> "LinCondGaussian":
        return cls(gain, bias, cholesky_of_cov(cov))

    @property
    def d_out(self) -> int:
        return self.bias.shape[0]

    @property
    def d_in(self) -> int:
        return self.gain.shape[1]

    @property
    def cov(self) -> np.ndarray:
        return self.chol @ self.chol.T

    def mean_at(self, c):
        """Conditional mean for one context ``(d_in,)`` or a batch ``(n, d_in)``."""
        pts = np.asarray(c, dtype=float)
        if pts.ndim == 1:
            if pts.shape[0] != self.d_in:
                raise DimensionMismatchError(
                    f"context dimension {pts.shape[0]}, expected {self.d_in}"
                )
            return self.gain @ pts + self.bias
        if pts.shape[1] != self.d_in:
            raise DimensionMismatchError(f"context dimension {pts.shape[1]}, expected {self.d_in}")
        return pts @ self.gain.T + self.bias

    def condition(self, c) -> Gaussian:
        return Gaussian(self.mean_at(_as_vector(c, self.d_in, "context")), self.chol)

    def entropy(self) -> float:
        # conditional entropy; independent of the context
        return 0.5 * self.d_out * (1.0 + LOG_2PI) + float(np.sum(np.log(np.diag(self.chol))))

    def sample(self, c, rng: np.random.Generator):
        return self.condition(c).sample(rng)

    def __repr__(self) -> str:
        return f"LinCondGaussian(d_out={self.d_out}, d_in={self.d_in})"


class Categorical:
    """Finite categorical distribution over component indices.

    Entries below 1e-15 are clamped to zero and the vector is renormalized,
    which keeps downstream logs NaN-free without changing any meaningful mass.
    """

    __slots__ = ("probs",)

    CLAMP = 1e-15

    def __init__(self, probs):
        p = _as_vector(probs, name="probs").copy()
        if np.any(p < -1e-9):
            raise ValueError(f"categorical entries must be nonnegative, got min {p.min():g}")
        p[p < self.CLAMP] = 0.0
        total = p.sum()
        if not np.isfinite(total) or total <= 0.0:
            raise ValueError("categorical entries must have positive, finite total mass")
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"categorical entries must sum to ~1, got {total:.12g}")
        self.probs = p / total

    @classmethod
    def uniform(cls, n: int) -> "Categorical":
        return cls(np.full(n, 1.0 / n))

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    def log_probs(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.probs)

    def entropy(self) -> float:
        p = self.probs[self.probs > 0.0]
        return float(-np.sum(p * np.log(p)))

    def kl(self, other: "Categorical") -> float:
        if other.n != self.n:
            raise DimensionMismatchError(f"KL between categoricals of size {self.n} and {other.n}")
        mask = self.probs > 0.0
        if np.any(other.probs[mask] <= 0.0):
            return float("inf")
        p = self.probs[mask]
        return float(np.sum(p * (np.log(p) - np.log(other.probs[mask]))))

    def sample(self, rng: np.random.Generator, size: int | None = None):
        idx = rng.choice(self.n, size=size, p=self.probs)
        return int(idx) if size is None else idx

    def __repr__(self) -> str:
        return f"Categorical({np.array2string(self.probs, precision=4)})"


def logsumexp_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp with max subtraction; tolerates -inf entries."""
    m = np.max(logits, axis=-1)
    safe = np.where(np.isfinite(m), m, 0.0)
    s = np.sum(np.exp(logits - safe[..., None]), axis=-1)
    return np.where(np.isfinite(m), safe + np.log(s), m)
