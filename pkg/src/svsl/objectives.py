"""Augmented-reward targets, lower-bound estimators and the value baseline.

The decomposed training objective replaces the mixture's responsibilities
and gating with frozen copies from a snapshot, which decouples the
per-component updates. On freshly snapshotted models the decomposed
Monte-Carlo estimate coincides with the joint maximum-entropy objective on
the same samples; once the model moves, the joint estimate exceeds the
decomposed one by the expected KL between live and frozen posteriors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .distributions import Gaussian
from .errors import NumericalUnderflowWarning
from .mixture import MoEPolicy, VariationalSnapshot

# floor applied to log posteriors before scaling; exp(-709) is the smallest
# normal double, anything lower would poison the surrogate fits
LOG_FLOOR = -709.0


def expert_targets(rewards, log_resp_snap, alpha: float, zero_aux: bool = False) -> np.ndarray:
    """Per-rollout surrogate targets for an expert update.

    reward + alpha * log of the snapshot responsibility of the component that
    generated the rollout; the log term is floored at -709 before scaling.
    """
    r = np.asarray(rewards, dtype=float)
    if zero_aux or alpha == 0.0:
        return r.copy()
    return r + alpha * np.maximum(np.asarray(log_resp_snap, dtype=float), LOG_FLOOR)


def context_targets(rewards, log_resp_snap, log_gating_snap, expert_entropy: float,
                    alpha: float, beta: float, zero_aux: bool = False) -> np.ndarray:
    """Per-rollout surrogate targets for a context-distribution update.

    Single-sample estimate of the component's expected augmented objective
    (reward, snapshot log responsibility, analytic conditional entropy) plus
    the (beta - alpha)-scaled snapshot log gating.
    """
    r = np.asarray(rewards, dtype=float)
    base = r + alpha * expert_entropy
    if zero_aux:
        return base
    lr = np.maximum(np.asarray(log_resp_snap, dtype=float), LOG_FLOOR)
    lg = np.maximum(np.asarray(log_gating_snap, dtype=float), LOG_FLOOR)
    return base + alpha * lr + (beta - alpha) * lg


# ------------------------------------------------------------ bound estimators


@dataclass
class ObjectiveEstimates:
    """Paired Monte-Carlo estimates of the joint and decomposed objectives."""

    joint_samples: np.ndarray
    decomposed_samples: np.ndarray

    @property
    def joint(self) -> float:
        return float(np.mean(self.joint_samples))

    @property
    def decomposed(self) -> float:
        return float(np.mean(self.decomposed_samples))

    @property
    def gap(self) -> float:
        """Joint minus decomposed; nonnegative in expectation when beta >= alpha."""
        return self.joint - self.decomposed

    @property
    def gap_stderr(self) -> float:
        diff = self.joint_samples - self.decomposed_samples
        return float(np.std(diff, ddof=1) / np.sqrt(diff.shape[0]))


def objective_estimates(policy: MoEPolicy, snapshot: VariationalSnapshot,
                        rewards, os, cs, thetas,
                        alpha: float, beta: float) -> ObjectiveEstimates:
    """Evaluate both objective forms on shared hierarchical samples.

    The entropy terms are estimated with the same samples (negative log
    densities), which is what makes the two estimates cancel exactly on a
    fresh snapshot rather than only in expectation.
    """
    r = np.asarray(rewards, dtype=float)
    os = np.asarray(os, dtype=int)
    C = np.atleast_2d(np.asarray(cs, dtype=float))
    TH = np.atleast_2d(np.asarray(thetas, dtype=float))
    n = r.shape[0]
    rows = np.arange(n)

    log_pi_theta = policy.conditional_param_log_density_batch(C, TH)
    log_pi_c = policy.marginal_context_log_density_batch(C)
    joint = r - alpha * log_pi_theta - beta * log_pi_c

    log_resp_snap = snapshot.log_responsibilities_batch(C, TH)[rows, os]
    log_gating_snap = snapshot.log_gating_batch(C)[rows, os]
    log_w = policy.weights.log_probs()[os]
    log_n_ctx = np.empty(n)
    log_n_theta = np.empty(n)
    for o in range(policy.n_components):
        idx = np.where(os == o)[0]
        if idx.size == 0:
            continue
        log_n_ctx[idx] = policy.ctx_comps[o].log_density(C[idx])
        e = policy.experts[o]
        log_n_theta[idx] = Gaussian(np.zeros(e.d_out), e.chol).log_density(
            TH[idx] - e.mean_at(C[idx])
        )
    decomposed = (
        r
        + alpha * log_resp_snap
        + (beta - alpha) * log_gating_snap
        - alpha * log_n_theta
        - beta * log_n_ctx
        - beta * log_w
    )
    return ObjectiveEstimates(joint, decomposed)


def staleness_kl_estimate(policy: MoEPolicy, snapshot: VariationalSnapshot,
                          cs, thetas, alpha: float, beta: float):
    """Rao-Blackwellized estimate of the expected posterior-KL sum.

    Returns per-sample values of
    alpha * KL(resp || resp~) + (beta - alpha) * KL(gating || gating~)
    evaluated at the sampled (c, theta); their mean matches the joint minus
    decomposed gap in expectation.
    """
    C = np.atleast_2d(np.asarray(cs, dtype=float))
    TH = np.atleast_2d(np.asarray(thetas, dtype=float))
    lr_new = policy.log_responsibilities_batch(C, TH)
    lr_old = snapshot.log_responsibilities_batch(C, TH)
    lg_new = policy.log_gating_batch(C)
    lg_old = snapshot.log_gating_batch(C)
    kl_resp = np.sum(np.exp(lr_new) * (lr_new - lr_old), axis=1)
    kl_gating = np.sum(np.exp(lg_new) * (lg_new - lg_old), axis=1)
    return alpha * kl_resp + (beta - alpha) * kl_gating


# --------------------------------------------------------------- value baseline


class NadarayaWatsonBaseline:
    """Kernel-smoothed context value from importance-weighted returns.

    Targets are rewards scaled by the ratio of current to pre-update gating
    probabilities of the component that produced each sample (ratio clipped
    to [1e-6, 1e6]); queries average the targets under a Gaussian kernel. If
    every kernel weight underflows at a query, the plain target mean is
    returned with a warning.
    """

    RATIO_LO = 1e-6
    RATIO_HI = 1e6

    def __init__(self, contexts, targets, bandwidth: float):
        self.contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
        self.targets = np.asarray(targets, dtype=float)
        if self.contexts.shape[0] != self.targets.shape[0]:
            raise ValueError("contexts and targets disagree in length")
        if self.contexts.shape[0] == 0:
            raise ValueError("need at least one sample")
        if bandwidth <= 0.0:
            raise ValueError("bandwidth must be positive")
        self.bandwidth = float(bandwidth)

    @classmethod
    def from_rollouts(cls, contexts, components, rewards,
                      policy: MoEPolicy, pre_gating: VariationalSnapshot,
                      bandwidth: float) -> "NadarayaWatsonBaseline":
        C = np.atleast_2d(np.asarray(contexts, dtype=float))
        os = np.asarray(components, dtype=int)
        rows = np.arange(C.shape[0])
        log_ratio = (
            policy.log_gating_batch(C)[rows, os]
            - pre_gating.log_gating_batch(C)[rows, os]
        )
        ratio = np.clip(np.exp(log_ratio), cls.RATIO_LO, cls.RATIO_HI)
        return cls(C, ratio * np.asarray(rewards, dtype=float), bandwidth)

    def __call__(self, c) -> float:
        return float(self.evaluate_batch(np.asarray(c, dtype=float)[None, :])[0])

    def evaluate_batch(self, cs) -> np.ndarray:
        C = np.atleast_2d(np.asarray(cs, dtype=float))
        diff = (C[:, None, :] - self.contexts[None, :, :]) / self.bandwidth
        log_k = -0.5 * np.sum(diff * diff, axis=2)
        row_max = np.max(log_k, axis=1)
        out = np.empty(C.shape[0])
        dead = row_max < LOG_FLOOR
        if np.any(dead):
            warnings.warn(
                f"kernel weights underflowed for {int(dead.sum())} query point(s); "
                "returning the mean target",
                NumericalUnderflowWarning,
                stacklevel=2,
            )
            out[dead] = float(np.mean(self.targets))
        alive = ~dead
        if np.any(alive):
            w = np.exp(log_k[alive] - row_max[alive, None])
            out[alive] = (w @ self.targets) / np.sum(w, axis=1)
        return out


def median_pairwise_distance(points, cap: int = 2000) -> float:
    """Median Euclidean pairwise distance, subsampled above ``cap`` points."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] > cap:
        stride = int(np.ceil(P.shape[0] / cap))
        P = P[::stride]
    if P.shape[0] < 2:
        return 1.0
    deltas = P[:, None, :] - P[None, :, :]
    dists = np.sqrt(np.sum(deltas * deltas, axis=2))
    iu = np.triu_indices(P.shape[0], k=1)
    med = float(np.median(dists[iu]))
    return med if med > 0.0 else 1.0
