"""Analytic episodic environments.

Each environment is a pure reward function R(theta, c) over controller
parameters and a task context, plus a success predicate and a context box
that defines the valid task region. The shared convention is a fixed
penalty for contexts sampled outside the box; environments may instead
reject such samples without executing them (``rejects_invalid``), in which
case the caller counts them separately.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError

CONTEXT_PENALTY = 10.0


def normalize_angles(theta: np.ndarray) -> np.ndarray:
    """Wrap angles into [-pi, pi)."""
    return np.mod(np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi) - np.pi


class Environment:
    """Common contract: dimensions, context box, reward, success."""

    name: str = "environment"
    rejects_invalid: bool = False

    def __init__(self, d_c: int, d_theta: int, context_lo, context_hi,
                 parameter_scale_hint: float):
        self.d_c = d_c
        self.d_theta = d_theta
        self.context_lo = np.asarray(context_lo, dtype=float)
        self.context_hi = np.asarray(context_hi, dtype=float)
        if self.context_lo.shape != (d_c,) or self.context_hi.shape != (d_c,):
            raise DimensionMismatchError("context box bounds must have shape (d_c,)")
        if np.any(self.context_lo >= self.context_hi):
            raise ValueError("context box must satisfy lower < upper per dimension")
        self.parameter_scale_hint = float(parameter_scale_hint)

    @property
    def context_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.context_lo, self.context_hi

    def context_valid(self, c) -> bool:
        c = np.asarray(c, dtype=float)
        return bool(np.all(c >= self.context_lo) and np.all(c <= self.context_hi))

    def context_valid_batch(self, C) -> np.ndarray:
        C = np.atleast_2d(np.asarray(C, dtype=float))
        return np.all((C >= self.context_lo) & (C <= self.context_hi), axis=1)

    def reward(self, theta, c) -> float:
        raise NotImplementedError

    def reward_batch(self, thetas, cs) -> np.ndarray:
        TH = np.atleast_2d(np.asarray(thetas, dtype=float))
        C = np.atleast_2d(np.asarray(cs, dtype=float))
        return np.array([self.reward(t, c) for t, c in zip(TH, C)])

    def success(self, theta, c) -> bool:
        raise NotImplementedError


def evaluate_batch(env: Environment, thetas, cs) -> tuple[np.ndarray, np.ndarray]:
    """Rewards and executed flags for a batch of rollouts.

    Invalid contexts on a rejecting environment still produce their penalty
    reward but are flagged as not executed. SVSL_THREADS caps the worker
    threads used for environments without a vectorized reward (0 = auto);
    results are committed in sample order either way, so the output never
    depends on scheduling.
    """
    TH = np.atleast_2d(np.asarray(thetas, dtype=float))
    C = np.atleast_2d(np.asarray(cs, dtype=float))
    batch_impl = type(env).reward_batch is not Environment.reward_batch
    if batch_impl:
        rewards = np.asarray(env.reward_batch(TH, C), dtype=float)
    else:
        threads = int(os.environ.get("SVSL_THREADS", "0") or "0")
        if threads == 0:
            threads = min(8, os.cpu_count() or 1)
        if threads > 1 and TH.shape[0] > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                rewards = np.fromiter(
                    pool.map(env.reward, TH, C), dtype=float, count=TH.shape[0]
                )
        else:
            rewards = np.array([env.reward(t, c) for t, c in zip(TH, C)])
    if env.rejects_invalid:
        executed = env.context_valid_batch(C)
    else:
        executed = np.ones(TH.shape[0], dtype=bool)
    return rewards, executed


# ------------------------------------------------------------- planar reacher


@dataclass
class Rectangle:
    """Axis-aligned obstacle given by center and half extents."""

    center: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.half_extents = np.asarray(self.half_extents, dtype=float)

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.half_extents

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.half_extents


def forward_kinematics(theta, link_lengths) -> np.ndarray:
    """Joint positions of a planar chain, base at the origin.

    Returns an (n_links + 1, 2) array; the last row is the tip. Angles are
    relative to the previous link and wrapped to [-pi, pi) first.
    """
    th = normalize_angles(np.asarray(theta, dtype=float))
    lengths = np.asarray(link_lengths, dtype=float)
    if th.shape[0] != lengths.shape[0]:
        raise DimensionMismatchError(
            f"{th.shape[0]} angles for {lengths.shape[0]} links"
        )
    ang = np.cumsum(th)
    steps = lengths[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return np.vstack([np.zeros((1, 2)), np.cumsum(steps, axis=0)])


def forward_kinematics_batch(thetas, link_lengths) -> np.ndarray:
    """Vectorized joint positions, shape (n, n_links + 1, 2)."""
    TH = normalize_angles(np.atleast_2d(np.asarray(thetas, dtype=float)))
    lengths = np.asarray(link_lengths, dtype=float)
    ang = np.cumsum(TH, axis=1)
    steps = lengths[None, :, None] * np.stack([np.cos(ang), np.sin(ang)], axis=2)
    joints = np.concatenate(
        [np.zeros((TH.shape[0], 1, 2)), np.cumsum(steps, axis=1)], axis=1
    )
    return joints


def _segments_hit_box(p0: np.ndarray, p1: np.ndarray, lo, hi) -> np.ndarray:
    """Slab test of segments (..., 2) against one axis-aligned box.

    Touching counts as a hit. Returns a boolean array over the leading axes.
    """
    d = p1 - p0
    t0 = np.zeros(p0.shape[:-1])
    t1 = np.ones(p0.shape[:-1])
    ok = np.ones(p0.shape[:-1], dtype=bool)
    for a in range(2):
        da = d[..., a]
        pa = p0[..., a]
        parallel = np.abs(da) < 1e-300
        # parallel segments miss unless they lie inside the slab
        ok &= ~(parallel & ((pa < lo[a]) | (pa > hi[a])))
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo[a] - pa) / da
            tb = (hi[a] - pa) / da
        tmin = np.where(parallel, 0.0, np.minimum(ta, tb))
        tmax = np.where(parallel, 1.0, np.maximum(ta, tb))
        t0 = np.maximum(t0, tmin)
        t1 = np.minimum(t1, tmax)
    return ok & (t0 <= t1)


@dataclass
class PlanarReacherConfig:
    """Geometry and penalties of the planar reaching task."""

    link_lengths: np.ndarray = field(default_factory=lambda: np.ones(10))
    obstacles: list[Rectangle] = field(
        default_factory=lambda: [
            Rectangle(np.array([5.5, 3.5]), np.array([0.6, 1.2])),
            Rectangle(np.array([5.5, -3.5]), np.array([0.6, 1.2])),
        ]
    )
    context_lo: np.ndarray = field(default_factory=lambda: np.array([4.5, -6.0]))
    context_hi: np.ndarray = field(default_factory=lambda: np.array([7.0, 6.0]))
    goal_weight: float = 2.0
    context_penalty: float = CONTEXT_PENALTY
    obstacle_penalty: float = 3.0
    success_tolerance: float = 0.25
    parameter_scale_hint: float = 0.5

    def __post_init__(self):
        self.link_lengths = np.asarray(self.link_lengths, dtype=float)

    @property
    def n_links(self) -> int:
        return self.link_lengths.shape[0]


class PlanarReacher(Environment):
    """N-link planar arm reaching a 2-D goal while avoiding rectangles.

    Parameters are the joint angles themselves; the reward penalizes the
    squared (wrapped) angles, the squared tip-to-goal distance, invalid
    contexts and obstacle collisions.
    """

    name = "planar_reacher"

    def __init__(self, config: PlanarReacherConfig | None = None):
        self.config = config or PlanarReacherConfig()
        super().__init__(
            d_c=2,
            d_theta=self.config.n_links,
            context_lo=self.config.context_lo,
            context_hi=self.config.context_hi,
            parameter_scale_hint=self.config.parameter_scale_hint,
        )

    def collides(self, theta) -> bool:
        if not self.config.obstacles:
            return False
        joints = forward_kinematics(theta, self.config.link_lengths)
        p0, p1 = joints[:-1], joints[1:]
        return any(
            bool(np.any(_segments_hit_box(p0, p1, rect.lo, rect.hi)))
            for rect in self.config.obstacles
        )

    def collides_batch(self, thetas) -> np.ndarray:
        TH = np.atleast_2d(np.asarray(thetas, dtype=float))
        if not self.config.obstacles:
            return np.zeros(TH.shape[0], dtype=bool)
        joints = forward_kinematics_batch(TH, self.config.link_lengths)
        p0, p1 = joints[:, :-1, :], joints[:, 1:, :]
        hit = np.zeros(TH.shape[0], dtype=bool)
        for rect in self.config.obstacles:
            hit |= np.any(_segments_hit_box(p0, p1, rect.lo, rect.hi), axis=1)
        return hit

    def tip(self, theta) -> np.ndarray:
        return forward_kinematics(theta, self.config.link_lengths)[-1]

    def reward(self, theta, c) -> float:
        return float(self.reward_batch(np.asarray(theta)[None, :], np.asarray(c)[None, :])[0])

    def reward_batch(self, thetas, cs) -> np.ndarray:
        TH = np.atleast_2d(np.asarray(thetas, dtype=float))
        C = np.atleast_2d(np.asarray(cs, dtype=float))
        th_norm = normalize_angles(TH)
        tips = forward_kinematics_batch(TH, self.config.link_lengths)[:, -1, :]
        r = -np.sum(th_norm**2, axis=1)
        r -= self.config.goal_weight * np.sum((tips - C) ** 2, axis=1)
        r -= self.config.context_penalty * (~self.context_valid_batch(C))
        r -= self.config.obstacle_penalty * self.collides_batch(TH)
        return r

    def success(self, theta, c) -> bool:
        c = np.asarray(c, dtype=float)
        dist = float(np.linalg.norm(self.tip(theta) - c))
        return (
            dist <= self.config.success_tolerance
            and not self.collides(theta)
            and self.context_valid(c)
        )


# ----------------------------------------------------------------- toy tasks


class BimodalToy(Environment):
    """1-D task with two mirror-image optimal branches theta = +-(c + 2).

    Both branches achieve reward zero, which makes the task a clean probe of
    whether a mixture discovers one solution mode or both.
    """

    name = "bimodal"

    def __init__(self, success_tolerance: float = 0.2,
                 parameter_scale_hint: float = 2.0,
                 context_penalty: float = CONTEXT_PENALTY):
        super().__init__(
            d_c=1, d_theta=1, context_lo=[-1.0], context_hi=[1.0],
            parameter_scale_hint=parameter_scale_hint,
        )
        self.success_tolerance = float(success_tolerance)
        self.context_penalty = float(context_penalty)

    def branch_positions(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float).reshape(-1)
        return np.array([c[0] + 2.0, -(c[0] + 2.0)])

    def reward_batch(self, thetas, cs) -> np.ndarray:
        TH = np.atleast_2d(np.asarray(thetas, dtype=float))[:, 0]
        C = np.atleast_2d(np.asarray(cs, dtype=float))
        target = C[:, 0] + 2.0
        r = np.maximum(-((TH - target) ** 2), -((TH + target) ** 2))
        r -= self.context_penalty * (~self.context_valid_batch(C))
        return r

    def reward(self, theta, c) -> float:
        return float(self.reward_batch(np.asarray(theta)[None, :], np.asarray(c)[None, :])[0])

    def success(self, theta, c) -> bool:
        th = float(np.asarray(theta, dtype=float).reshape(-1)[0])
        dist = float(np.min(np.abs(th - self.branch_positions(c))))
        return dist <= self.success_tolerance and self.context_valid(c)


class QuadraticToy(Environment):
    """Exact quadratic reward around a linear optimum map theta*(c) = A c + a."""

    name = "quadratic_toy"

    def __init__(self, gain=None, offset=None, curvature=None,
                 context_lo=None, context_hi=None,
                 success_tolerance: float = 0.1,
                 parameter_scale_hint: float = 1.0,
                 context_penalty: float = CONTEXT_PENALTY):
        A = np.atleast_2d(np.asarray(gain if gain is not None else 0.8 * np.eye(2), dtype=float))
        a = np.asarray(offset if offset is not None else [0.3, -0.2], dtype=float)
        d_theta, d_c = A.shape
        Q = np.asarray(curvature if curvature is not None else 2.0 * np.eye(d_theta), dtype=float)
        lo = np.asarray(context_lo if context_lo is not None else -np.ones(d_c), dtype=float)
        hi = np.asarray(context_hi if context_hi is not None else np.ones(d_c), dtype=float)
        super().__init__(d_c=d_c, d_theta=d_theta, context_lo=lo, context_hi=hi,
                         parameter_scale_hint=parameter_scale_hint)
        self.gain = A
        self.offset = a
        self.curvature = 0.5 * (Q + Q.T)
        self.success_tolerance = float(success_tolerance)
        self.context_penalty = float(context_penalty)

    def optimum_at(self, cs) -> np.ndarray:
        C = np.atleast_2d(np.asarray(cs, dtype=float))
        return C @ self.gain.T + self.offset

    def reward_batch(self, thetas, cs) -> np.ndarray:
        TH = np.atleast_2d(np.asarray(thetas, dtype=float))
        C = np.atleast_2d(np.asarray(cs, dtype=float))
        delta = TH - self.optimum_at(C)
        r = -0.5 * np.einsum("ni,ij,nj->n", delta, self.curvature, delta)
        r -= self.context_penalty * (~self.context_valid_batch(C))
        return r

    def reward(self, theta, c) -> float:
        return float(self.reward_batch(np.asarray(theta)[None, :], np.asarray(c)[None, :])[0])

    def success(self, theta, c) -> bool:
        delta = np.asarray(theta, dtype=float) - self.optimum_at(c)[0]
        return float(np.linalg.norm(delta)) <= self.success_tolerance and self.context_valid(c)


# ------------------------------------------------------------------- registry


def make_env(name: str, **params) -> Environment:
    """Instantiate an environment by registry name."""
    if name == "planar_reacher":
        cfg_kwargs = {}
        if "n_links" in params and "link_lengths" not in params:
            n = int(params.pop("n_links"))
            length = float(params.pop("link_length", 1.0))
            cfg_kwargs["link_lengths"] = np.full(n, length)
        elif "link_lengths" in params:
            params.pop("n_links", None)
            params.pop("link_length", None)
            cfg_kwargs["link_lengths"] = np.asarray(params.pop("link_lengths"), dtype=float)
        if "obstacles" in params:
            cfg_kwargs["obstacles"] = [
                Rectangle(np.asarray(ob["center"], dtype=float),
                          np.asarray(ob["half_extents"], dtype=float))
                for ob in params.pop("obstacles")
            ]
        for key in ("context_lo", "context_hi"):
            if key in params:
                cfg_kwargs[key] = np.asarray(params.pop(key), dtype=float)
        for key in ("goal_weight", "context_penalty", "obstacle_penalty",
                    "success_tolerance", "parameter_scale_hint"):
            if key in params:
                cfg_kwargs[key] = float(params.pop(key))
        if params:
            raise ValueError(f"unknown planar_reacher parameters: {sorted(params)}")
        return PlanarReacher(PlanarReacherConfig(**cfg_kwargs))
    if name == "bimodal":
        return BimodalToy(**params)
    if name == "quadratic_toy":
        return QuadraticToy(**params)
    raise ValueError(f"unknown environment {name!r} "
                     "(expected planar_reacher, bimodal, or quadratic_toy)")
