"""Quadratic reward surrogates and KL-constrained distribution updates.

Three solvers share the same structure: fit a quadratic surrogate to reward
samples, then maximize expected surrogate reward plus an entropy bonus
subject to a KL trust region around the old distribution. The constrained
problem has a closed-form solution parameterized by a single dual
multiplier eta, found by bracketing and bisection in log space on the
exactly evaluated KL constraint (the dual is convex, so the constraint
value is monotone in eta).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import Categorical, Gaussian, LinCondGaussian
from .errors import (
    DualSearchError,
    InsufficientSamplesError,
    TrustRegionInfeasibleError,
)


@dataclass
class QuadModel:
    """Quadratic surrogate R(x) = -0.5 x'Fx + x'f + f0 with F symmetric."""

    F: np.ndarray
    f: np.ndarray
    f0: float

    def __post_init__(self):
        self.F = 0.5 * (np.asarray(self.F, dtype=float) + np.asarray(self.F, dtype=float).T)
        self.f = np.asarray(self.f, dtype=float)
        self.f0 = float(self.f0)

    def value(self, x):
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        vals = -0.5 * np.einsum("ni,ij,nj->n", pts, self.F, pts) + pts @ self.f + self.f0
        return float(vals[0]) if np.asarray(x).ndim == 1 else vals


@dataclass
class CtxQuadModel:
    """Joint surrogate R(theta, c) = -0.5 th'F_tt th + th'(L c + f_t) + g(c).

    The context-only part g(c) = -0.5 c'F_cc c + c'f_c + f0 does not affect
    the conditional update and is retained for diagnostics.
    """

    F_tt: np.ndarray
    L: np.ndarray
    f_t: np.ndarray
    F_cc: np.ndarray
    f_c: np.ndarray
    f0: float

    def __post_init__(self):
        self.F_tt = 0.5 * (np.asarray(self.F_tt, dtype=float) + np.asarray(self.F_tt, dtype=float).T)
        self.L = np.asarray(self.L, dtype=float)
        self.f_t = np.asarray(self.f_t, dtype=float)
        self.F_cc = 0.5 * (np.asarray(self.F_cc, dtype=float) + np.asarray(self.F_cc, dtype=float).T)
        self.f_c = np.asarray(self.f_c, dtype=float)
        self.f0 = float(self.f0)

    def value(self, theta, c):
        TH = np.atleast_2d(np.asarray(theta, dtype=float))
        C = np.atleast_2d(np.asarray(c, dtype=float))
        vals = (
            -0.5 * np.einsum("ni,ij,nj->n", TH, self.F_tt, TH)
            + np.einsum("ni,ij,nj->n", TH, self.L, C)
            + TH @ self.f_t
            - 0.5 * np.einsum("ni,ij,nj->n", C, self.F_cc, C)
            + C @ self.f_c
            + self.f0
        )
        return float(vals[0]) if np.asarray(theta).ndim == 1 else vals


@dataclass
class TrustRegionConfig:
    """Per-solver knobs: KL bound, entropy coefficient, ridge, dual range."""

    epsilon: float
    omega: float = 0.0
    ridge: float = 1e-8
    eta_min: float = 1e-8
    eta_max: float = 1e8
    max_dual_iters: int = field(default=200)

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.omega < 0.0:
            raise ValueError("omega must be nonnegative")
        if self.ridge < 0.0:
            raise ValueError("ridge must be nonnegative")
        if not (0.0 < self.eta_min < self.eta_max):
            raise ValueError("eta range must satisfy 0 < eta_min < eta_max")


# --------------------------------------------------------------------- fitting


def _whiten(X: np.ndarray):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return (X - mean) / std, mean, std


def _triu_features(Z: np.ndarray):
    d = Z.shape[1]
    iu, ju = np.triu_indices(d)
    return Z[:, iu] * Z[:, ju], (iu, ju)


def _solve_ridge(phi: np.ndarray, y: np.ndarray, ridge: float) -> np.ndarray:
    gram = phi.T @ phi + ridge * np.eye(phi.shape[1])
    return np.linalg.solve(gram, phi.T @ y)


def _quad_coeffs_from_weights(w_quad, idx, d):
    """Map upper-triangle feature weights to the -0.5 x'Fx convention."""
    iu, ju = idx
    F = np.zeros((d, d))
    for w, i, j in zip(w_quad, iu, ju):
        if i == j:
            F[i, i] = -2.0 * w
        else:
            F[i, j] = -w
            F[j, i] = -w
    return F


def required_quadratic_samples(d: int) -> int:
    return d * (d + 3) // 2 + 1


def fit_quadratic(xs, ys, ridge: float = 1e-8) -> QuadModel:
    """Ridge least-squares quadratic fit on whitened inputs.

    Inputs are centered and scaled per dimension before building the feature
    matrix [upper triangle of xx', x, 1]; coefficients are mapped back to the
    original scale on output. Raises InsufficientSamplesError below the
    feature count.
    """
    X = np.atleast_2d(np.asarray(xs, dtype=float))
    y = np.asarray(ys, dtype=float)
    n, d = X.shape
    need = required_quadratic_samples(d)
    if n < need:
        raise InsufficientSamplesError(need, n, what=f"{d}-dimensional quadratic fit")
    Z, mean, std = _whiten(X)
    quad, idx = _triu_features(Z)
    phi = np.hstack([quad, Z, np.ones((n, 1))])
    y0 = y.mean()
    w = _solve_ridge(phi, y - y0, ridge)
    n_quad = quad.shape[1]
    F_z = _quad_coeffs_from_weights(w[:n_quad], idx, d)
    f_z = w[n_quad:n_quad + d]
    f0_z = w[-1] + y0
    # undo the whitening: x = mean + std * z
    inv_std = 1.0 / std
    F = inv_std[:, None] * F_z * inv_std[None, :]
    f = F @ mean + inv_std * f_z
    f0 = f0_z - 0.5 * mean @ F @ mean - mean @ (inv_std * f_z)
    return QuadModel(F, f, f0)


def required_contextual_samples(d_theta: int, d_c: int) -> int:
    return (
        d_theta * (d_theta + 1) // 2
        + d_c * (d_c + 1) // 2
        + d_theta * d_c
        + d_theta
        + d_c
        + 1
    )


def fit_contextual_quadratic(cs, thetas, ys, ridge: float = 1e-8) -> CtxQuadModel:
    """Joint quadratic fit over (theta, c) with a full cross term.

    Features: upper triangles of theta theta' and cc', the theta (x) c block,
    both linear parts, and a constant. Same whitening scheme as
    :func:`fit_quadratic`.
    """
    C = np.atleast_2d(np.asarray(cs, dtype=float))
    TH = np.atleast_2d(np.asarray(thetas, dtype=float))
    y = np.asarray(ys, dtype=float)
    n = TH.shape[0]
    d_t, d_c = TH.shape[1], C.shape[1]
    need = required_contextual_samples(d_t, d_c)
    if n < need:
        raise InsufficientSamplesError(need, n, what=f"({d_t},{d_c}) contextual quadratic fit")
    Zt, m_t, s_t = _whiten(TH)
    Zc, m_c, s_c = _whiten(C)
    quad_t, idx_t = _triu_features(Zt)
    quad_c, idx_c = _triu_features(Zc)
    cross = (Zt[:, :, None] * Zc[:, None, :]).reshape(n, d_t * d_c)
    phi = np.hstack([quad_t, quad_c, cross, Zt, Zc, np.ones((n, 1))])
    y0 = y.mean()
    w = _solve_ridge(phi, y - y0, ridge)

    k = 0
    n_qt = quad_t.shape[1]
    F_t = _quad_coeffs_from_weights(w[k:k + n_qt], idx_t, d_t)
    k += n_qt
    n_qc = quad_c.shape[1]
    F_c = _quad_coeffs_from_weights(w[k:k + n_qc], idx_c, d_c)
    k += n_qc
    L_z = w[k:k + d_t * d_c].reshape(d_t, d_c)
    k += d_t * d_c
    a_z = w[k:k + d_t]
    k += d_t
    b_z = w[k:k + d_c]
    f0_z = w[-1] + y0

    inv_t, inv_c = 1.0 / s_t, 1.0 / s_c
    F_tt = inv_t[:, None] * F_t * inv_t[None, :]
    F_cc = inv_c[:, None] * F_c * inv_c[None, :]
    L = inv_t[:, None] * L_z * inv_c[None, :]
    a = inv_t * a_z
    b = inv_c * b_z
    f_t = F_tt @ m_t + a - L @ m_c
    f_c = F_cc @ m_c + b - L.T @ m_t
    f0 = (
        f0_z
        - 0.5 * m_t @ F_tt @ m_t
        - 0.5 * m_c @ F_cc @ m_c
        + m_t @ L @ m_c
        - m_t @ a
        - m_c @ b
    )
    return CtxQuadModel(F_tt, L, f_t, F_cc, f_c, f0)


# ------------------------------------------------------------------ dual search


def _bisect_dual(kl_at, cfg: TrustRegionConfig, eta_lo: float):
    """Smallest feasible eta via log-space bisection on the KL constraint.

    kl_at must be nonincreasing in eta (dual convexity). Returns the feasible
    endpoint of the final bracket, so the returned update always satisfies
    its KL bound up to evaluation round-off.
    """
    eps = cfg.epsilon
    if kl_at(eta_lo) <= eps:
        return eta_lo
    hi = cfg.eta_max
    if kl_at(hi) > eps:
        raise DualSearchError(
            "KL bound unattainable within the dual search range", (eta_lo, hi)
        )
    lo = eta_lo
    for _ in range(cfg.max_dual_iters):
        if hi / lo - 1.0 < 1e-12:
            break
        mid = float(np.sqrt(lo * hi))
        if kl_at(mid) > eps:
            lo = mid
        else:
            hi = mid
    else:
        raise DualSearchError("dual bisection did not converge", (lo, hi))
    return hi


def _spectral_basis(q_chol: np.ndarray, F: np.ndarray):
    """Diagonalize the dual family in coordinates whitened by the old Gaussian.

    With T the old covariance factor and T' F T = U diag(d) U', the candidate
    precision eta * Lam_q + F equals B^-T diag(eta + d) B^-1 for B = T U, so
    feasibility, KL, and the solution all reduce to O(dim) expressions in eta.
    """
    Ft = q_chol.T @ F @ q_chol
    d_vals, U = np.linalg.eigh(0.5 * (Ft + Ft.T))
    return d_vals, q_chol @ U


def _eta_floor(d_vals: np.ndarray, cfg: TrustRegionConfig) -> float:
    """Smallest admissible eta keeping every spectral eigenvalue positive."""
    d_min = float(d_vals[0])
    if d_min >= 0.0:
        return cfg.eta_min
    eta = -d_min * (1.0 + 1e-9) + 1e-300
    if eta > cfg.eta_max:
        raise TrustRegionInfeasibleError(
            f"no eta <= {cfg.eta_max:g} makes the precision positive-definite "
            f"(needs eta > {eta:g})"
        )
    return max(eta, cfg.eta_min)


def _spectral_kl(eta: float, omega: float, d_vals: np.ndarray, quad_num: np.ndarray) -> float:
    """Exact KL(pi_eta || q) from spectral eigenvalues and mean-shift moments."""
    lam = eta + d_vals
    if np.any(lam <= 0.0):
        return float("inf")
    ratio = (eta + omega) / lam
    return 0.5 * float(np.sum(ratio) + np.sum(quad_num / lam**2) - lam.shape[0] - np.sum(np.log(ratio)))


def more_gauss_update(q: Gaussian, quad: QuadModel, cfg: TrustRegionConfig) -> Gaussian:
    """Entropy-regularized trust-region update of a Gaussian.

    Maximizes E_pi[R] + omega * H(pi) subject to KL(pi || q) <= epsilon, where
    R is the quadratic surrogate. For a dual multiplier eta the optimum has
    precision (eta * Lam_q + F) / (eta + omega) and matching mean equation;
    eta is located on the exactly evaluated KL constraint. If the
    unconstrained eta -> 0 solution is positive-definite and already
    feasible, it is returned directly.
    """
    d_vals, B = _spectral_basis(q.chol, quad.F)
    v = B.T @ (quad.f - quad.F @ q.mean)
    v2 = v * v

    def kl_at(eta: float) -> float:
        return _spectral_kl(eta, cfg.omega, d_vals, v2)

    def build(eta: float) -> Gaussian:
        lam = eta + d_vals
        mean = q.mean + B @ (v / lam)
        cov = (eta + cfg.omega) * (B / lam) @ B.T
        return Gaussian.from_cov(mean, cov)

    if cfg.omega > 0.0 and d_vals[0] > 0.0 and kl_at(0.0) <= cfg.epsilon:
        return build(0.0)
    eta = _bisect_dual(kl_at, cfg, _eta_floor(d_vals, cfg))
    return build(eta)


def more_lincond_update(
    q: LinCondGaussian, ctxquad: CtxQuadModel, cs, cfg: TrustRegionConfig
) -> LinCondGaussian:
    """Trust-region update of a linear-conditional Gaussian.

    Maximizes the batch average of E_pi(theta|c)[R(theta, c)] + omega * H
    subject to the average KL over the sample contexts staying within
    epsilon. The precision update matches :func:`more_gauss_update`; the
    conditional-mean map (gain, bias) follows in closed form.
    """
    C = np.atleast_2d(np.asarray(cs, dtype=float))
    if C.shape[0] == 0:
        raise ValueError("need at least one sample context for the averaged KL")
    F = ctxquad.F_tt
    d_vals, B = _spectral_basis(q.chol, F)
    v_gain = B.T @ (ctxquad.L - F @ q.gain)
    v_bias = B.T @ (ctxquad.f_t - F @ q.bias)
    # batch-averaged squared mean shift per spectral direction
    shift = C @ v_gain.T + v_bias
    s = np.mean(shift * shift, axis=0)

    def kl_at(eta: float) -> float:
        return _spectral_kl(eta, cfg.omega, d_vals, s)

    def build(eta: float) -> LinCondGaussian:
        lam = eta + d_vals
        gain = q.gain + (B / lam) @ v_gain
        bias = q.bias + B @ (v_bias / lam)
        cov = (eta + cfg.omega) * (B / lam) @ B.T
        return LinCondGaussian.from_cov(gain, bias, cov)

    if cfg.omega > 0.0 and d_vals[0] > 0.0 and kl_at(0.0) <= cfg.epsilon:
        return build(0.0)
    eta = _bisect_dual(kl_at, cfg, _eta_floor(d_vals, cfg))
    return build(eta)


def reps_categorical_update(
    p_old: Categorical, advantages, cfg: TrustRegionConfig
) -> Categorical:
    """Exponential-reweighting update of the component weights.

    Maximizes sum_o pi(o) A(o) + omega * H(pi) subject to
    KL(pi || p_old) <= epsilon. The solution is
    pi ~ p_old^(eta / (eta + omega)) * exp(A / (eta + omega)); eta = 0
    (the plain omega-softmax) is used whenever it already satisfies the
    bound. The problem is always feasible for categoricals.
    """
    A = np.asarray(advantages, dtype=float)
    if A.shape != (p_old.n,):
        raise ValueError(f"advantages shape {A.shape} does not match {p_old.n} components")
    if not np.all(np.isfinite(A)):
        raise ValueError("advantages must be finite")
    log_p = p_old.log_probs()

    def solution(eta: float) -> Categorical:
        denom = eta + cfg.omega
        with np.errstate(invalid="ignore"):  # 0 * -inf for zero-mass entries
            logits = np.where(np.isneginf(log_p), -np.inf, (eta * log_p + A) / denom)
        m = np.max(logits)
        probs = np.exp(logits - m)
        return Categorical(probs / probs.sum())

    def kl_at(eta: float) -> float:
        return solution(eta).kl(p_old)

    if cfg.omega > 0.0 and kl_at(0.0) <= cfg.epsilon:
        return solution(0.0)
    eta = _bisect_dual(kl_at, cfg, cfg.eta_min)
    return solution(eta)
