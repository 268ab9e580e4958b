"""Mixture-of-experts policy over controller parameters.

The policy factorizes as a categorical prior over components, one Gaussian
per component over contexts, and one linear-conditional Gaussian per
component over parameters. Gating is obtained from the context mixture by
Bayes rule; responsibilities additionally condition on the drawn parameter
vector. All mixture arithmetic runs in log space with log-sum-exp because
context penalties and far-apart components routinely underflow raw
densities.
"""

from __future__ import annotations

import json
import warnings

import numpy as np

from .distributions import Categorical, Gaussian, LinCondGaussian, logsumexp_rows
from .errors import (
    DimensionMismatchError,
    InvalidOperationError,
    NumericalUnderflowWarning,
)

MODEL_SCHEMA_VERSION = 1


class MoEPolicy:
    """Mixture policy pi(theta | c) = sum_o gating(o | c) * N(theta; expert_o(c)).

    Components are kept in three parallel lists (weights, context Gaussians,
    experts). Structural edits return new policies; per-component updates
    mutate in place between training iterations.
    """

    def __init__(self, weights: Categorical, ctx_comps: list[Gaussian],
                 experts: list[LinCondGaussian]):
        if len(ctx_comps) != len(experts) or weights.n != len(ctx_comps):
            raise DimensionMismatchError(
                f"component lists disagree: {weights.n} weights, "
                f"{len(ctx_comps)} context components, {len(experts)} experts"
            )
        if ctx_comps:
            d_c = ctx_comps[0].dim
            d_theta = experts[0].d_out
            for g in ctx_comps:
                if g.dim != d_c:
                    raise DimensionMismatchError("context components disagree on dimension")
            for e in experts:
                if e.d_out != d_theta or e.d_in != d_c:
                    raise DimensionMismatchError("experts disagree on dimensions")
        self.weights = weights
        self.ctx_comps = list(ctx_comps)
        self.experts = list(experts)

    # ------------------------------------------------------------------ shape

    @classmethod
    def empty(cls, d_c: int, d_theta: int) -> "MoEPolicy":
        """Structural shell with no components; only add_component is valid."""
        pol = cls.__new__(cls)
        pol.weights = None
        pol.ctx_comps = []
        pol.experts = []
        pol._empty_dims = (d_c, d_theta)
        return pol

    @property
    def n_components(self) -> int:
        return len(self.ctx_comps)

    @property
    def d_c(self) -> int:
        return self.ctx_comps[0].dim if self.ctx_comps else self._empty_dims[0]

    @property
    def d_theta(self) -> int:
        return self.experts[0].d_out if self.experts else self._empty_dims[1]

    def _require_components(self):
        if not self.ctx_comps:
            raise InvalidOperationError("policy has no components yet")

    # ----------------------------------------------------------- log densities

    def log_gating_batch(self, contexts: np.ndarray) -> np.ndarray:
        """Log gating probabilities, shape (n, O), rows normalized.

        Rows where every context density underflowed fall back to the prior
        weights and flag a :class:`NumericalUnderflowWarning`.
        """
        self._require_components()
        C = np.atleast_2d(np.asarray(contexts, dtype=float))
        logits = np.empty((C.shape[0], self.n_components))
        log_w = self.weights.log_probs()
        for o, g in enumerate(self.ctx_comps):
            logits[:, o] = log_w[o] + g.log_density(C)
        return self._normalize_rows(logits, fallback=log_w, what="gating")

    def log_responsibilities_batch(self, contexts, thetas) -> np.ndarray:
        """Log posterior over components given (c, theta), shape (n, O)."""
        self._require_components()
        C = np.atleast_2d(np.asarray(contexts, dtype=float))
        TH = np.atleast_2d(np.asarray(thetas, dtype=float))
        log_g = self.log_gating_batch(C)
        logits = np.empty_like(log_g)
        for o, e in enumerate(self.experts):
            comp = Gaussian(np.zeros(e.d_out), e.chol)
            logits[:, o] = log_g[:, o] + comp.log_density(TH - e.mean_at(C))
        return self._normalize_rows(logits, fallback_rows=log_g, what="responsibilities")

    def _normalize_rows(self, logits, fallback=None, fallback_rows=None, what=""):
        row_max = np.max(logits, axis=1)
        bad = ~np.isfinite(row_max)
        if np.any(bad):
            warnings.warn(
                f"{what}: densities underflowed for {int(bad.sum())} point(s); "
                "falling back to the conditioning distribution",
                NumericalUnderflowWarning,
                stacklevel=3,
            )
            if fallback_rows is not None:
                logits[bad] = fallback_rows[bad]
            else:
                logits[bad] = fallback
            row_max = np.max(logits, axis=1)
        lse = row_max + np.log(np.sum(np.exp(logits - row_max[:, None]), axis=1))
        return logits - lse[:, None]

    def gating(self, c) -> np.ndarray:
        """Posterior over components given a context; sums to one."""
        return np.exp(self.log_gating_batch(np.asarray(c, dtype=float)[None, :])[0])

    def responsibilities(self, c, theta) -> np.ndarray:
        return np.exp(
            self.log_responsibilities_batch(
                np.asarray(c, dtype=float)[None, :], np.asarray(theta, dtype=float)[None, :]
            )[0]
        )

    def marginal_context_log_density_batch(self, contexts) -> np.ndarray:
        """log pi(c) of the learned context mixture, shape (n,)."""
        self._require_components()
        C = np.atleast_2d(np.asarray(contexts, dtype=float))
        logits = np.empty((C.shape[0], self.n_components))
        log_w = self.weights.log_probs()
        for o, g in enumerate(self.ctx_comps):
            logits[:, o] = log_w[o] + g.log_density(C)
        return logsumexp_rows(logits)

    def marginal_context_log_density(self, c) -> float:
        return float(self.marginal_context_log_density_batch(np.asarray(c, dtype=float)[None, :])[0])

    def conditional_param_log_density_batch(self, contexts, thetas) -> np.ndarray:
        """log pi(theta | c) by log-sum-exp over components, shape (n,)."""
        self._require_components()
        C = np.atleast_2d(np.asarray(contexts, dtype=float))
        TH = np.atleast_2d(np.asarray(thetas, dtype=float))
        log_g = self.log_gating_batch(C)
        logits = np.empty_like(log_g)
        for o, e in enumerate(self.experts):
            comp = Gaussian(np.zeros(e.d_out), e.chol)
            logits[:, o] = log_g[:, o] + comp.log_density(TH - e.mean_at(C))
        return logsumexp_rows(logits)

    # ---------------------------------------------------------------- sampling

    def policy_sample(self, c, rng: np.random.Generator) -> tuple[int, np.ndarray]:
        """Draw a component from the gating, then parameters from its expert."""
        g = self.gating(c)
        o = int(rng.choice(self.n_components, p=g))
        theta = self.experts[o].sample(np.asarray(c, dtype=float), rng)
        return o, theta

    def sample_joint(self, n: int, rng: np.random.Generator):
        """Hierarchical draw (o, c, theta) from the full model, vectorized.

        Returns integer components (n,), contexts (n, d_c) and parameters
        (n, d_theta). Consumes rng in a fixed order so runs are reproducible.
        """
        self._require_components()
        os = self.weights.sample(rng, size=n)
        z_c = rng.standard_normal((n, self.d_c))
        z_t = rng.standard_normal((n, self.d_theta))
        C = np.empty((n, self.d_c))
        TH = np.empty((n, self.d_theta))
        for o in range(self.n_components):
            idx = np.where(os == o)[0]
            if idx.size == 0:
                continue
            g = self.ctx_comps[o]
            C[idx] = g.mean + z_c[idx] @ g.chol.T
            e = self.experts[o]
            TH[idx] = e.mean_at(C[idx]) + z_t[idx] @ e.chol.T
        return os, C, TH

    # ---------------------------------------------------------- structural ops

    def add_component(self, ctx: Gaussian, expert: LinCondGaussian) -> "MoEPolicy":
        """Append a component; weights reset to uniform over the new count."""
        if self.ctx_comps:
            if ctx.dim != self.d_c or expert.d_out != self.d_theta or expert.d_in != self.d_c:
                raise DimensionMismatchError("new component dimensions do not match the policy")
        else:
            d_c, d_theta = self._empty_dims
            if ctx.dim != d_c or expert.d_out != d_theta or expert.d_in != d_c:
                raise DimensionMismatchError("new component dimensions do not match the policy")
        n = self.n_components + 1
        return MoEPolicy(
            Categorical.uniform(n), self.ctx_comps + [ctx], self.experts + [expert]
        )

    def remove_component(self, o: int) -> "MoEPolicy":
        """Drop component ``o``; remaining weights are renormalized."""
        self._require_components()
        if self.n_components < 2:
            raise InvalidOperationError("cannot remove the last component")
        if not 0 <= o < self.n_components:
            raise IndexError(f"component index {o} out of range")
        keep = [i for i in range(self.n_components) if i != o]
        w = self.weights.probs[keep]
        total = w.sum()
        if total <= 0.0:
            w = np.full(len(keep), 1.0 / len(keep))
        else:
            w = w / total
        return MoEPolicy(
            Categorical(w),
            [self.ctx_comps[i] for i in keep],
            [self.experts[i] for i in keep],
        )

    def replace_expert(self, o: int, expert: LinCondGaussian) -> None:
        self.experts[o] = expert

    def replace_ctx(self, o: int, ctx: Gaussian) -> None:
        self.ctx_comps[o] = ctx

    def set_weights(self, weights: Categorical) -> None:
        if weights.n != self.n_components:
            raise DimensionMismatchError("weight vector length does not match component count")
        self.weights = weights

    def copy(self) -> "MoEPolicy":
        if not self.ctx_comps:
            return MoEPolicy.empty(*self._empty_dims)
        return MoEPolicy(
            Categorical(self.weights.probs.copy()),
            [Gaussian(g.mean.copy(), g.chol.copy()) for g in self.ctx_comps],
            [LinCondGaussian(e.gain.copy(), e.bias.copy(), e.chol.copy())
             for e in self.experts],
        )

    def snapshot(self) -> "VariationalSnapshot":
        return VariationalSnapshot(self)

    # ----------------------------------------------------------------- metrics

    def mixture_entropy_per_context(self, contexts, n_samples: int,
                                    rng: np.random.Generator) -> np.ndarray:
        """Monte-Carlo estimate of H[pi(theta | c)] for each context, shape (m,).

        Parameters are drawn from the mixture conditional and the density is
        evaluated by log-sum-exp over components; everything is vectorized
        over contexts and samples.
        """
        self._require_components()
        C = np.atleast_2d(np.asarray(contexts, dtype=float))
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        m = C.shape[0]
        log_g = self.log_gating_batch(C)
        # inverse-CDF categorical draws, one row of uniforms per context
        cdf = np.cumsum(np.exp(log_g), axis=1)
        u = rng.random((m, n_samples))
        os = np.minimum(
            np.sum(u[:, :, None] > cdf[:, None, :], axis=2), self.n_components - 1
        ).reshape(-1)
        z = rng.standard_normal((m * n_samples, self.d_theta))
        C_rep = np.repeat(C, n_samples, axis=0)
        TH = np.empty((m * n_samples, self.d_theta))
        for o in range(self.n_components):
            idx = np.where(os == o)[0]
            if idx.size == 0:
                continue
            e = self.experts[o]
            TH[idx] = e.mean_at(C_rep[idx]) + z[idx] @ e.chol.T
        logits = np.empty((m * n_samples, self.n_components))
        log_g_rep = np.repeat(log_g, n_samples, axis=0)
        for o, e in enumerate(self.experts):
            comp = Gaussian(np.zeros(e.d_out), e.chol)
            logits[:, o] = log_g_rep[:, o] + comp.log_density(TH - e.mean_at(C_rep))
        log_dens = logsumexp_rows(logits).reshape(m, n_samples)
        return -np.mean(log_dens, axis=1)

    def expected_mixture_entropy(self, contexts, n_samples: int,
                                 rng: np.random.Generator) -> float:
        """Average of :meth:`mixture_entropy_per_context` over the contexts."""
        return float(np.mean(self.mixture_entropy_per_context(contexts, n_samples, rng)))

    # ------------------------------------------------------------ serialization

    def to_dict(self, alpha: float, beta: float) -> dict:
        comps = []
        for w, g, e in zip(self.weights.probs, self.ctx_comps, self.experts):
            comps.append(
                {
                    "weight": float(w),
                    "ctx_mean": g.mean.tolist(),
                    "ctx_cov_rowmajor": g.cov.reshape(-1).tolist(),
                    "gain_rowmajor": e.gain.reshape(-1).tolist(),
                    "bias": e.bias.tolist(),
                    "expert_cov_rowmajor": e.cov.reshape(-1).tolist(),
                }
            )
        return {
            "version": MODEL_SCHEMA_VERSION,
            "d_c": self.d_c,
            "d_theta": self.d_theta,
            "alpha": float(alpha),
            "beta": float(beta),
            "components": comps,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> tuple["MoEPolicy", dict]:
        """Rebuild a policy; covariances are re-factorized and validated."""
        if doc.get("version") != MODEL_SCHEMA_VERSION:
            raise ValueError(f"unsupported model schema version {doc.get('version')!r}")
        d_c = int(doc["d_c"])
        d_theta = int(doc["d_theta"])
        weights, ctx_comps, experts = [], [], []
        for comp in doc["components"]:
            weights.append(float(comp["weight"]))
            ctx_cov = np.asarray(comp["ctx_cov_rowmajor"], dtype=float).reshape(d_c, d_c)
            ctx_comps.append(Gaussian.from_cov(np.asarray(comp["ctx_mean"], dtype=float), ctx_cov))
            gain = np.asarray(comp["gain_rowmajor"], dtype=float).reshape(d_theta, d_c)
            exp_cov = np.asarray(comp["expert_cov_rowmajor"], dtype=float).reshape(d_theta, d_theta)
            experts.append(
                LinCondGaussian.from_cov(gain, np.asarray(comp["bias"], dtype=float), exp_cov)
            )
        policy = cls(Categorical(np.asarray(weights)), ctx_comps, experts)
        meta = {"alpha": float(doc["alpha"]), "beta": float(doc["beta"])}
        return policy, meta

    def save(self, path, alpha: float, beta: float) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(alpha, beta), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> tuple["MoEPolicy", dict]:
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


class VariationalSnapshot:
    """Frozen copy of a policy used to evaluate the auxiliary distributions.

    The snapshot owns a deep copy, so later mutation of the live policy
    cannot change what the snapshot reports.
    """

    __slots__ = ("_policy",)

    def __init__(self, policy: MoEPolicy):
        self._policy = policy.copy()

    @property
    def n_components(self) -> int:
        return self._policy.n_components

    def log_gating_batch(self, contexts) -> np.ndarray:
        return self._policy.log_gating_batch(contexts)

    def log_responsibilities_batch(self, contexts, thetas) -> np.ndarray:
        return self._policy.log_responsibilities_batch(contexts, thetas)

    def gating(self, c) -> np.ndarray:
        return self._policy.gating(c)

    def responsibilities(self, c, theta) -> np.ndarray:
        return self._policy.responsibilities(c, theta)
