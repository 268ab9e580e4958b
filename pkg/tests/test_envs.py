import numpy as np
import pytest

from svsl.envs import (
    BimodalToy,
    PlanarReacher,
    PlanarReacherConfig,
    QuadraticToy,
    Rectangle,
    evaluate_batch,
    forward_kinematics,
    forward_kinematics_batch,
    make_env,
    normalize_angles,
)


def fk_complex_oracle(theta, lengths):
    """Tip position via a sum of complex exponentials."""
    phases = np.cumsum(normalize_angles(np.asarray(theta, dtype=float)))
    z = np.sum(np.asarray(lengths) * np.exp(1j * phases))
    return np.array([z.real, z.imag])


def collides_sampling_oracle(env, theta, samples_per_segment=4000):
    joints = forward_kinematics(theta, env.config.link_lengths)
    ts = np.linspace(0.0, 1.0, samples_per_segment)[:, None]
    for p0, p1 in zip(joints[:-1], joints[1:]):
        pts = p0 + ts * (p1 - p0)
        for rect in env.config.obstacles:
            inside = np.all((pts >= rect.lo) & (pts <= rect.hi), axis=1)
            if np.any(inside):
                return True
    return False


def ten_link(obstacles=()):
    return PlanarReacher(PlanarReacherConfig(
        link_lengths=np.ones(10), obstacles=list(obstacles),
    ))


class TestForwardKinematics:
    def test_straight_arm(self):
        joints = forward_kinematics(np.zeros(10), np.ones(10))
        np.testing.assert_allclose(joints[-1], [10.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(joints[0], [0.0, 0.0])

    def test_quarter_turn(self):
        theta = np.zeros(10)
        theta[0] = np.pi / 2
        joints = forward_kinematics(theta, np.ones(10))
        np.testing.assert_allclose(joints[-1], [0.0, 10.0], atol=1e-12)

    def test_matches_complex_exponential_oracle(self):
        rng = np.random.default_rng(0)
        lengths = rng.uniform(0.5, 1.5, size=6)
        for _ in range(50):
            theta = rng.uniform(-2 * np.pi, 2 * np.pi, size=6)
            tip = forward_kinematics(theta, lengths)[-1]
            np.testing.assert_allclose(tip, fk_complex_oracle(theta, lengths), atol=1e-12)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(1)
        thetas = rng.normal(size=(20, 5))
        lengths = np.full(5, 0.5)
        batch = forward_kinematics_batch(thetas, lengths)
        for i in range(20):
            np.testing.assert_allclose(batch[i], forward_kinematics(thetas[i], lengths))

    def test_reachability_bound(self):
        rng = np.random.default_rng(2)
        lengths = rng.uniform(0.2, 2.0, size=7)
        for _ in range(100):
            tip = forward_kinematics(rng.normal(scale=2.0, size=7), lengths)[-1]
            assert np.linalg.norm(tip) <= lengths.sum() + 1e-12


class TestCollision:
    def test_no_obstacles(self):
        env = ten_link()
        env.config.obstacles = []
        rng = np.random.default_rng(3)
        assert not any(env.collides(rng.normal(size=10)) for _ in range(20))

    def test_straight_arm_through_rectangle(self):
        env = ten_link([Rectangle(np.array([5.0, 0.0]), np.array([0.5, 0.5]))])
        assert env.collides(np.zeros(10))

    def test_matches_dense_sampling_oracle(self):
        env = ten_link([
            Rectangle(np.array([5.5, 3.5]), np.array([0.6, 1.2])),
            Rectangle(np.array([5.5, -3.5]), np.array([0.6, 1.2])),
        ])
        rng = np.random.default_rng(4)
        disagreements = 0
        for _ in range(1000):
            theta = rng.normal(scale=0.8, size=10)
            if env.collides(theta) != collides_sampling_oracle(env, theta):
                disagreements += 1
        # only boundary-grazing segments can disagree; random draws should not
        assert disagreements == 0

    def test_batch_matches_single(self):
        env = ten_link([Rectangle(np.array([4.0, 1.0]), np.array([1.0, 0.8]))])
        rng = np.random.default_rng(5)
        thetas = rng.normal(scale=0.6, size=(50, 10))
        batch = env.collides_batch(thetas)
        singles = np.array([env.collides(t) for t in thetas])
        np.testing.assert_array_equal(batch, singles)

    def test_touching_counts(self):
        # segment ends exactly on the box edge
        env = PlanarReacher(PlanarReacherConfig(
            link_lengths=np.array([1.0]),
            obstacles=[Rectangle(np.array([1.5, 0.0]), np.array([0.5, 0.5]))],
        ))
        assert env.collides(np.zeros(1))


class TestReacherReward:
    def test_goal_term_only(self):
        env = ten_link()
        env.config.obstacles = []
        r = env.reward(np.zeros(10), np.array([4.5, 0.0]))
        assert r == pytest.approx(-60.5, abs=1e-12)

    def test_context_penalty_outside_box(self):
        env = ten_link()
        env.config.obstacles = []
        r = env.reward(np.zeros(10), np.array([8.0, 0.0]))
        assert r == pytest.approx(-18.0, abs=1e-12)

    def test_reward_at_goal_is_action_cost(self):
        env = PlanarReacher(PlanarReacherConfig(link_lengths=np.ones(2), obstacles=[],
                                                context_lo=np.array([0.0, 0.0]),
                                                context_hi=np.array([2.0, 2.0])))
        theta = np.array([np.pi / 2, -np.pi / 2])
        tip = forward_kinematics(theta, np.ones(2))[-1]
        r = env.reward(theta, tip)
        assert r == pytest.approx(-float(theta @ theta), abs=1e-12)

    def test_never_positive(self):
        env = ten_link()
        rng = np.random.default_rng(6)
        thetas = rng.normal(scale=1.5, size=(200, 10))
        cs = rng.uniform(-8, 8, size=(200, 2))
        assert np.all(env.reward_batch(thetas, cs) <= 0.0)

    def test_invariant_to_adding_two_pi(self):
        env = ten_link()
        rng = np.random.default_rng(7)
        theta = rng.normal(size=10)
        c = np.array([5.0, 1.0])
        shifted = theta.copy()
        shifted[3] += 2 * np.pi
        assert env.reward(theta, c) == pytest.approx(env.reward(shifted, c), abs=1e-9)

    def test_collision_penalty_applied(self):
        blocked = ten_link([Rectangle(np.array([5.0, 0.0]), np.array([0.5, 0.5]))])
        free = ten_link()
        free.config.obstacles = []
        c = np.array([6.0, 0.0])
        assert blocked.reward(np.zeros(10), c) == pytest.approx(
            free.reward(np.zeros(10), c) - 3.0, abs=1e-12
        )


class TestReacherSuccess:
    def test_tip_on_goal(self):
        env = ten_link()
        env.config.obstacles = []
        c = np.array([6.0, 0.0])
        theta = np.zeros(10)
        # bend two joints to land the tip near (6, 0) is fiddly; use the tip itself
        tip = forward_kinematics(theta, env.config.link_lengths)[-1]
        env2 = PlanarReacher(PlanarReacherConfig(
            link_lengths=np.ones(10), obstacles=[],
            context_lo=np.array([4.5, -6.0]), context_hi=np.array([11.0, 6.0]),
        ))
        assert env2.success(theta, tip)
        assert not env.success(theta, c)

    def test_zero_tolerance(self):
        env = ten_link()
        env.config.obstacles = []
        env.config.success_tolerance = 0.0
        assert not env.success(np.zeros(10), np.array([5.0, 0.0]))

    def test_boundary_is_closed(self):
        env = PlanarReacher(PlanarReacherConfig(
            link_lengths=np.ones(10), obstacles=[], success_tolerance=0.25,
            context_lo=np.array([4.5, -6.0]), context_hi=np.array([11.0, 6.0]),
        ))
        tip = forward_kinematics(np.zeros(10), env.config.link_lengths)[-1]
        goal = tip + np.array([0.25, 0.0])
        assert env.success(np.zeros(10), goal)


class TestBimodalToy:
    def test_on_branch_optima(self):
        env = BimodalToy()
        for c in (-0.5, 0.0, 0.8):
            assert env.reward(np.array([c + 2.0]), np.array([c])) == pytest.approx(0.0)
            assert env.reward(np.array([-(c + 2.0)]), np.array([c])) == pytest.approx(0.0)

    def test_symmetric_midpoint(self):
        env = BimodalToy()
        assert env.reward(np.zeros(1), np.zeros(1)) == pytest.approx(-4.0)

    def test_theta_sign_symmetry(self):
        env = BimodalToy()
        rng = np.random.default_rng(8)
        for _ in range(50):
            th, c = rng.normal(scale=2.0, size=1), rng.uniform(-1, 1, size=1)
            assert env.reward(th, c) == pytest.approx(env.reward(-th, c), abs=1e-12)

    def test_context_penalty_outside_box(self):
        env = BimodalToy()
        inside = env.reward(np.array([4.0]), np.array([1.0]))
        outside = env.reward(np.array([4.0]), np.array([2.0]))
        # same distance-to-branch at c=2 gives -1 (theta 4 on branch); penalty shifts it
        assert outside == pytest.approx(-10.0, abs=1e-12)
        assert inside == pytest.approx(-1.0, abs=1e-12)

    def test_success_near_either_branch(self):
        env = BimodalToy(success_tolerance=0.2)
        assert env.success(np.array([2.1]), np.array([0.0]))
        assert env.success(np.array([-1.9]), np.array([0.0]))
        assert not env.success(np.array([0.0]), np.array([0.0]))


class TestQuadraticToy:
    def test_optimum_map(self):
        env = QuadraticToy()
        rng = np.random.default_rng(9)
        for _ in range(10):
            c = rng.uniform(-1, 1, size=2)
            theta = env.optimum_at(c)[0]
            assert env.reward(theta, c) == pytest.approx(0.0, abs=1e-12)
            assert env.reward(theta + 0.5, c) < 0.0

    def test_success_tolerance(self):
        env = QuadraticToy(success_tolerance=0.1)
        c = np.zeros(2)
        theta = env.optimum_at(c)[0]
        assert env.success(theta, c)
        assert not env.success(theta + np.array([0.2, 0.0]), c)


class TestRegistryAndBatch:
    def test_make_env_names(self):
        assert make_env("bimodal").name == "bimodal"
        assert make_env("quadratic_toy").name == "quadratic_toy"
        env = make_env("planar_reacher", n_links=5, link_length=0.5, obstacles=[])
        assert env.d_theta == 5
        with pytest.raises(ValueError):
            make_env("mujoco_table_tennis")

    def test_unknown_reacher_parameter(self):
        with pytest.raises(ValueError):
            make_env("planar_reacher", wind_speed=3.0)

    def test_evaluate_batch_counts_everything_executed(self):
        env = BimodalToy()
        rng = np.random.default_rng(10)
        thetas, cs = rng.normal(size=(30, 1)), rng.uniform(-1, 1, size=(30, 1))
        rewards, executed = evaluate_batch(env, thetas, cs)
        np.testing.assert_allclose(rewards, env.reward_batch(thetas, cs))
        assert executed.all()

    def test_evaluate_batch_flags_rejections(self):
        env = BimodalToy()
        env.rejects_invalid = True
        thetas = np.zeros((4, 1))
        cs = np.array([[0.0], [2.0], [-0.5], [-3.0]])
        rewards, executed = evaluate_batch(env, thetas, cs)
        np.testing.assert_array_equal(executed, [True, False, True, False])
        assert np.all(np.isfinite(rewards))

    def test_threaded_fallback_is_deterministic(self, monkeypatch):
        from svsl.envs import Environment

        class ScalarOnly(Environment):
            name = "scalar_only"

            def __init__(self):
                super().__init__(1, 1, [-1.0], [1.0], 1.0)

            def reward(self, theta, c):
                return -float((theta[0] - c[0]) ** 2)

        env = ScalarOnly()
        monkeypatch.setenv("SVSL_THREADS", "4")
        rng = np.random.default_rng(11)
        thetas, cs = rng.normal(size=(40, 1)), rng.uniform(-1, 1, size=(40, 1))
        a, _ = evaluate_batch(env, thetas, cs)
        b, _ = evaluate_batch(env, thetas, cs)
        oracle = np.array([env.reward(t, c) for t, c in zip(thetas, cs)])
        np.testing.assert_array_equal(a, b)
        np.testing.assert_allclose(a, oracle)
