"""Incremental training loop for the mixture policy.

Components are added one at a time and trained for a fixed number of
iterations while all earlier components stay frozen, except for periodic
fine-tuning rounds that update everyone. Component weights stay uniform
throughout and are optimized only once at the end, against a kernel value
baseline, after all replay buffers have been refilled with fresh rollouts.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .distributions import Categorical, Gaussian, LinCondGaussian
from .envs import Environment, evaluate_batch
from .errors import InvalidOperationError
from .mixture import MoEPolicy, VariationalSnapshot
from .objectives import (
    NadarayaWatsonBaseline,
    context_targets,
    expert_targets,
    median_pairwise_distance,
)
from .solvers import (
    TrustRegionConfig,
    fit_contextual_quadratic,
    fit_quadratic,
    more_gauss_update,
    more_lincond_update,
    reps_categorical_update,
    required_contextual_samples,
    required_quadratic_samples,
)

log = logging.getLogger(__name__)


@dataclass
class Rollout:
    """One environment evaluation attributed to a component."""

    o: int
    c: np.ndarray
    theta: np.ndarray
    reward: float
    executed: bool = True

    def __post_init__(self):
        if not np.isfinite(self.reward):
            raise ValueError(f"rollout reward must be finite, got {self.reward!r}")


class ReplayBuffer:
    """Fixed-capacity ring of rollouts; oldest entries are evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._entries: deque[Rollout] = deque(maxlen=capacity)

    def push(self, rollout: Rollout) -> None:
        self._entries.append(rollout)

    def extend(self, rollouts) -> None:
        for r in rollouts:
            self.push(r)

    def clear(self) -> None:
        self._entries.clear()

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def arrays(self):
        """Stacked (contexts, thetas, rewards) preserving insertion order."""
        C = np.stack([r.c for r in self._entries])
        TH = np.stack([r.theta for r in self._entries])
        R = np.array([r.reward for r in self._entries])
        return C, TH, R


@dataclass
class HyperParams:
    """Scalar coefficients, schedule counts and solver settings for a run."""

    alpha: float = 1e-4
    beta: float = 1.0
    beta_w: float = 1.0
    n_components: int = 60
    iters_per_component: int = 350
    finetune_every: int = 50
    samples_per_iter: int = 50
    buffer_capacity: int = 200
    deletion_weight_threshold: float = 1e-5
    deletion_check_enabled: bool = False
    epsilon_expert: float = 0.1
    epsilon_ctx: float = 0.05
    epsilon_weights: float = 0.5
    ridge: float = 1e-8
    eta_min: float = 1e-8
    eta_max: float = 1e8
    nw_bandwidth_factor: float = 0.5
    entropy_metric_contexts: int = 16
    entropy_metric_samples: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0.0:
            raise ValueError("alpha must be >= 0")
        if self.beta < self.alpha:
            raise ValueError(
                f"beta ({self.beta}) must be >= alpha ({self.alpha}) for the "
                "decomposition to stay a lower bound"
            )
        for name in ("n_components", "iters_per_component", "finetune_every",
                     "samples_per_iter", "buffer_capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def expert_tr(self) -> TrustRegionConfig:
        return TrustRegionConfig(self.epsilon_expert, omega=self.alpha, ridge=self.ridge,
                                 eta_min=self.eta_min, eta_max=self.eta_max)

    def ctx_tr(self) -> TrustRegionConfig:
        return TrustRegionConfig(self.epsilon_ctx, omega=self.beta, ridge=self.ridge,
                                 eta_min=self.eta_min, eta_max=self.eta_max)

    def weights_tr(self) -> TrustRegionConfig:
        return TrustRegionConfig(self.epsilon_weights, omega=self.beta_w, ridge=self.ridge,
                                 eta_min=self.eta_min, eta_max=self.eta_max)


@dataclass
class UpdateRecord:
    """Post-hoc exact KL of one applied trust-region update."""

    kind: str
    component: int
    kl: float
    epsilon: float


@dataclass
class TrainState:
    """Mutable state of one training run."""

    policy: MoEPolicy
    snapshot: VariationalSnapshot | None
    buffers: list[ReplayBuffer]
    hp: HyperParams
    ablation_zero_aux: bool = False
    env_samples: int = 0
    rejected_samples: int = 0
    iteration: int = 0
    metrics: list[dict] = field(default_factory=list)
    update_log: list[UpdateRecord] = field(default_factory=list)
    rng: np.random.Generator = None
    metric_rng: np.random.Generator = None
    kl_cursor: int = 0


METRICS_COLUMNS = [
    "iter", "env_samples", "rejected_samples", "n_components",
    "mean_reward", "expected_entropy", "mean_ctx_kl", "mean_expert_kl",
]


def random_component(env: Environment, rng: np.random.Generator) -> tuple[Gaussian, LinCondGaussian]:
    """Fresh component: broad context Gaussian, conservative expert.

    The context mean is drawn uniformly in the context box with a diagonal
    covariance at 0.3 box widths, so new components can discover any context
    region. The expert starts with zero gain and a deterministic bias nudge
    of 0.6 scale hints: every component shares the same inductive tilt, so
    any diversification of the mixture is attributable to the augmented
    rewards rather than to luck of the initialization draw.
    """
    lo, hi = env.context_box
    width = hi - lo
    ctx_mean = rng.uniform(lo, hi)
    ctx_cov = np.diag((0.3 * width) ** 2)
    hint = env.parameter_scale_hint
    gain = np.zeros((env.d_theta, env.d_c))
    bias = np.full(env.d_theta, 0.6 * hint)
    expert_cov = hint**2 * np.eye(env.d_theta)
    return Gaussian.from_cov(ctx_mean, ctx_cov), LinCondGaussian.from_cov(gain, bias, expert_cov)


def collect_rollouts(state: TrainState, o: int, env: Environment, n: int) -> np.ndarray:
    """Sample n rollouts from component o, push them into its buffer.

    Contexts come from the component's learned context distribution and
    parameters from its expert. Returns the rewards. Samples rejected by the
    environment are still buffered with their penalty reward but counted
    separately.
    """
    C = state.policy.ctx_comps[o].sample(state.rng, size=n)
    e = state.policy.experts[o]
    TH = e.mean_at(C) + state.rng.standard_normal((n, e.d_out)) @ e.chol.T
    rewards, executed = evaluate_batch(env, TH, C)
    state.env_samples += int(np.sum(executed))
    state.rejected_samples += int(np.sum(~executed))
    state.buffers[o].extend(
        Rollout(o, C[i].copy(), TH[i].copy(), float(rewards[i]), bool(executed[i]))
        for i in range(n)
    )
    return rewards


def augmented_expert_target(r: Rollout, snap: VariationalSnapshot, alpha: float,
                            zero_aux: bool = False) -> float:
    """Augmented reward of a single rollout for its component's update."""
    lr = snap.log_responsibilities_batch(r.c[None, :], r.theta[None, :])[0, r.o]
    return float(expert_targets(np.array([r.reward]), np.array([lr]), alpha, zero_aux)[0])


def context_target(r: Rollout, policy: MoEPolicy, snap: VariationalSnapshot,
                   alpha: float, beta: float, zero_aux: bool = False) -> float:
    """Single-sample context-distribution target for one rollout."""
    lr = snap.log_responsibilities_batch(r.c[None, :], r.theta[None, :])[0, r.o]
    lg = snap.log_gating_batch(r.c[None, :])[0, r.o]
    ent = policy.experts[r.o].entropy()
    return float(
        context_targets(np.array([r.reward]), np.array([lr]), np.array([lg]),
                        ent, alpha, beta, zero_aux)[0]
    )


def _buffer_expert_targets(state: TrainState, o: int):
    C, TH, R = state.buffers[o].arrays()
    lr = state.snapshot.log_responsibilities_batch(C, TH)[:, o]
    return C, TH, expert_targets(R, lr, state.hp.alpha, state.ablation_zero_aux)


def _buffer_context_targets(state: TrainState, o: int):
    C, TH, R = state.buffers[o].arrays()
    lr = state.snapshot.log_responsibilities_batch(C, TH)[:, o]
    lg = state.snapshot.log_gating_batch(C)[:, o]
    ent = state.policy.experts[o].entropy()
    return C, context_targets(R, lr, lg, ent, state.hp.alpha, state.hp.beta,
                              state.ablation_zero_aux)


def update_expert(state: TrainState, o: int, env: Environment) -> np.ndarray:
    """Draw a batch from component o, refit its surrogate, apply the update.

    Returns the fresh rewards. While the buffer is still too small for the
    joint quadratic fit the update itself is skipped (warm-up, logged).
    """
    hp = state.hp
    rewards = collect_rollouts(state, o, env, hp.samples_per_iter)
    need = required_contextual_samples(state.policy.d_theta, state.policy.d_c)
    if len(state.buffers[o]) < need:
        log.debug("component %d warm-up: %d/%d samples buffered",
                  o, len(state.buffers[o]), need)
        return rewards
    C, TH, targets = _buffer_expert_targets(state, o)
    quad = fit_contextual_quadratic(C, TH, targets, hp.ridge)
    old = state.policy.experts[o]
    new = more_lincond_update(old, quad, C, hp.expert_tr())
    state.policy.replace_expert(o, new)
    state.update_log.append(
        UpdateRecord("expert", o, _lincond_avg_kl(new, old, C), hp.epsilon_expert)
    )
    return rewards


def update_context_dist(state: TrainState, o: int) -> None:
    """Refit the context surrogate of component o and apply the update."""
    hp = state.hp
    need = required_quadratic_samples(state.policy.d_c)
    if len(state.buffers[o]) < need:
        log.debug("component %d context warm-up: %d/%d samples buffered",
                  o, len(state.buffers[o]), need)
        return
    C, targets = _buffer_context_targets(state, o)
    quad = fit_quadratic(C, targets, hp.ridge)
    old = state.policy.ctx_comps[o]
    new = more_gauss_update(old, quad, hp.ctx_tr())
    state.policy.replace_ctx(o, new)
    state.update_log.append(UpdateRecord("context", o, new.kl(old), hp.epsilon_ctx))


def _lincond_avg_kl(new: LinCondGaussian, old: LinCondGaussian, cs: np.ndarray) -> float:
    base = Gaussian(new.bias, new.chol).kl(Gaussian(new.bias, old.chol))
    delta = cs @ (new.gain - old.gain).T + (new.bias - old.bias)
    u = np.linalg.solve(old.chol, delta.T)
    return float(base + 0.5 * np.mean(np.sum(u * u, axis=0)))


def tighten(state: TrainState) -> VariationalSnapshot:
    """Refresh the frozen auxiliary distributions from the live policy."""
    state.snapshot = state.policy.snapshot()
    return state.snapshot


def value_baseline(state: TrainState, pre_gating: VariationalSnapshot) -> NadarayaWatsonBaseline:
    """Kernel value baseline over all buffered rollouts."""
    C = np.concatenate([buf.arrays()[0] for buf in state.buffers if len(buf)])
    os = np.concatenate([[r.o for r in buf] for buf in state.buffers if len(buf)])
    R = np.concatenate([buf.arrays()[2] for buf in state.buffers if len(buf)])
    bandwidth = state.hp.nw_bandwidth_factor * median_pairwise_distance(C)
    return NadarayaWatsonBaseline.from_rollouts(C, os, R, state.policy, pre_gating, bandwidth)


def update_weights(state: TrainState, baseline: NadarayaWatsonBaseline) -> Categorical:
    """REPS update of the component weights from baselined advantages."""
    hp = state.hp
    advantages = np.empty(state.policy.n_components)
    for o in range(state.policy.n_components):
        if len(state.buffers[o]) == 0:
            raise InvalidOperationError(
                f"weight update requires a freshly resampled buffer for component {o}"
            )
        C, targets = _buffer_context_targets(state, o)
        advantages[o] = float(np.mean(targets - baseline.evaluate_batch(C)))
        advantages[o] += hp.beta * state.policy.ctx_comps[o].entropy()
    old = state.policy.weights
    new = reps_categorical_update(old, advantages, hp.weights_tr())
    state.policy.set_weights(new)
    state.update_log.append(UpdateRecord("weights", -1, new.kl(old), hp.epsilon_weights))
    return new


def deletion_check(state: TrainState, o: int) -> bool:
    """True when component o should be deleted as a stuck local optimum.

    A component is deleted only when its expected augmented reward falls
    below the 10th percentile of the other components' and its expert
    entropy has collapsed at least 2 nats under the component median.
    """
    if not state.hp.deletion_check_enabled or state.policy.n_components < 2:
        return False
    means = []
    for i in range(state.policy.n_components):
        if len(state.buffers[i]) == 0:
            return False
        _, _, targets = _buffer_expert_targets(state, i)
        means.append(float(np.mean(targets)))
    others = [m for i, m in enumerate(means) if i != o]
    reward_cut = float(np.percentile(others, 10.0))
    entropies = [e.entropy() for e in state.policy.experts]
    entropy_cut = float(np.median(entropies)) - 2.0
    return means[o] < reward_cut and entropies[o] < entropy_cut


def final_prune(state: TrainState) -> MoEPolicy:
    """Drop components whose weight fell below the deletion threshold."""
    thr = state.hp.deletion_weight_threshold
    w = state.policy.weights.probs
    keep = np.where(w >= thr)[0]
    if keep.size == 0:
        log.warning("all component weights below %g; keeping the argmax", thr)
        keep = np.array([int(np.argmax(w))])
    if keep.size == state.policy.n_components:
        return state.policy
    policy = state.policy
    for o in sorted(set(range(policy.n_components)) - set(keep.tolist()), reverse=True):
        policy = policy.remove_component(o)
        state.buffers.pop(o)
    state.policy = policy
    tighten(state)
    return policy


def _log_iteration(state: TrainState, env: Environment, rewards: list[np.ndarray]) -> None:
    hp = state.hp
    state.iteration += 1
    lo, hi = env.context_box
    grid = lo + (hi - lo) * state.metric_rng.random((hp.entropy_metric_contexts, env.d_c))
    entropy = state.policy.expected_mixture_entropy(
        grid, hp.entropy_metric_samples, state.metric_rng
    )
    mean_reward = float(np.mean(np.concatenate(rewards))) if rewards else float("nan")
    row = {
        "iter": state.iteration,
        "env_samples": state.env_samples,
        "rejected_samples": state.rejected_samples,
        "n_components": state.policy.n_components,
        "mean_reward": mean_reward,
        "expected_entropy": entropy,
        "mean_ctx_kl": _mean_recent_kl(state, "context"),
        "mean_expert_kl": _mean_recent_kl(state, "expert"),
    }
    state.metrics.append(row)


def _mean_recent_kl(state: TrainState, kind: str) -> float:
    recent = [u.kl for u in state.update_log[state.kl_cursor:] if u.kind == kind]
    return float(np.mean(recent)) if recent else float("nan")


@dataclass
class TrainResult:
    policy: MoEPolicy
    metrics: list[dict]
    update_log: list[UpdateRecord]
    env_samples: int
    rejected_samples: int


def run(hp: HyperParams, env: Environment, ablation_zero_aux: bool = False) -> TrainResult:
    """Full training run: incremental addition, fine-tuning, final weighting.

    Deterministic in (hp, env, seed): the master generator drives all
    sampling in a fixed order and the metric estimates use a separate
    stream, so the returned policy serializes identically across repeats.
    """
    rng = np.random.default_rng(hp.seed)
    metric_rng = np.random.default_rng((hp.seed, 0x5EED))
    state = TrainState(
        policy=MoEPolicy.empty(env.d_c, env.d_theta),
        snapshot=None,
        buffers=[],
        hp=hp,
        ablation_zero_aux=ablation_zero_aux,
        rng=rng,
        metric_rng=metric_rng,
    )

    for k in range(1, hp.n_components + 1):
        ctx, expert = random_component(env, rng)
        state.policy = state.policy.add_component(ctx, expert)
        state.buffers.append(ReplayBuffer(hp.buffer_capacity))
        tighten(state)
        newest = state.policy.n_components - 1
        for i in range(1, hp.iters_per_component + 1):
            state.kl_cursor = len(state.update_log)
            rewards = []
            try:
                if i % hp.finetune_every == 0 and state.policy.n_components > 1:
                    for o in range(state.policy.n_components):
                        rewards.append(update_expert(state, o, env))
                    for o in range(state.policy.n_components):
                        update_context_dist(state, o)
                else:
                    rewards.append(update_expert(state, newest, env))
                    update_context_dist(state, newest)
            except Exception as exc:
                raise RuntimeError(
                    f"update failed at component {k}, iteration {i} "
                    f"(global iteration {state.iteration + 1}): {exc}"
                ) from exc
            tighten(state)
            _log_iteration(state, env, rewards)
        if deletion_check(state, newest):
            log.info("deleting component %d after its training phase", newest)
            state.policy = state.policy.remove_component(newest)
            state.buffers.pop(newest)
            tighten(state)

    # final weight optimization on completely resampled buffers
    for o in range(state.policy.n_components):
        state.buffers[o].clear()
        collect_rollouts(state, o, env, hp.buffer_capacity)
    pre_gating = state.policy.snapshot()
    tighten(state)
    baseline = value_baseline(state, pre_gating)
    update_weights(state, baseline)
    final_prune(state)

    return TrainResult(
        policy=state.policy,
        metrics=state.metrics,
        update_log=state.update_log,
        env_samples=state.env_samples,
        rejected_samples=state.rejected_samples,
    )
