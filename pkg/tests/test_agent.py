"""Hemisphere/gating composition algebra, penalty, policies, baselines."""

import numpy as np
import pytest
from scipy import stats

from hemirl import autodiff as ad
from hemirl.autodiff import Tensor, backward, no_grad
from hemirl.agent import (
    ACTION_DIM,
    BASELINE_GRU,
    GATE_BOOTSTRAP,
    HEAD_WIDTH,
    BiHemisphericAgent,
    GatingNetwork,
    GaussianPolicy,
    HemisphereNetwork,
    PenaltyConfig,
    RandomAgent,
    SingleHemisphereAgent,
    compose_mean,
    compose_value,
    hemisphere_param_count,
    hemispheric_penalty,
    make_baseline,
)
from hemirl.errors import ConfigurationError
from hemirl.nn import params_hash, save_checkpoint, load_checkpoint


def penalty_value(p_right: float, cfg: PenaltyConfig) -> float:
    pr = Tensor(np.array([[p_right]]))
    pl = Tensor(np.array([[1.0 - p_right]]))
    return hemispheric_penalty(pr, pl, cfg).item()


class TestPenalty:
    def test_reference_values(self):
        cfg = PenaltyConfig(alpha=0.75, beta=5.0)
        assert penalty_value(0.0, cfg) == pytest.approx(0.0, abs=1e-9)
        assert penalty_value(0.5, cfg) == pytest.approx(5.0, abs=1e-9)
        assert penalty_value(0.8, cfg) == pytest.approx(5.0 * 2.0**1.5, abs=1e-9)

    def test_door_open_alpha_one(self):
        cfg = PenaltyConfig(alpha=1.0, beta=5.0)
        assert penalty_value(0.8, cfg) == pytest.approx(20.0, rel=1e-12)

    def test_monotone_in_p_right(self):
        cfg = PenaltyConfig()
        grid = np.linspace(0.0, 0.999, 400)  # ratio stays below the cap
        vals = [penalty_value(p, cfg) for p in grid]
        assert vals[0] == 0.0
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_ratio_cap_bounds_penalty(self):
        cfg = PenaltyConfig(alpha=0.75, beta=5.0, ratio_cap=1e3)
        v = penalty_value(1.0 - 1e-12, cfg)
        assert v == pytest.approx(5.0 * 1e3**0.75, rel=1e-9)

    def test_gradient_matches_finite_differences(self):
        # d(penalty)/d(gate head output) through sigmoid and the complement split
        cfg = PenaltyConfig()

        def penalty_of_head(z_val):
            z = Tensor(np.array([[z_val]]), requires_grad=True)
            p_left = ad.sigmoid(z)
            p_right = 1.0 - p_left
            return z, hemispheric_penalty(p_right, p_left, cfg)

        for z0 in (-2.0, -0.5, 0.0, 0.7, 2.0):
            z, pen = penalty_of_head(z0)
            backward(pen.sum())
            eps = 1e-5
            with no_grad():
                hi = penalty_of_head(z0 + eps)[1].item()
                lo = penalty_of_head(z0 - eps)[1].item()
            fd = (hi - lo) / (2 * eps)
            assert z.grad[0, 0] == pytest.approx(fd, rel=1e-4)

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            PenaltyConfig(alpha=0.0)
        with pytest.raises(ConfigurationError):
            PenaltyConfig(beta=-1.0)

    def test_defaults(self):
        cfg = PenaltyConfig()
        assert cfg.alpha == 0.75 and cfg.beta == 5.0


class TestComposition:
    def test_value_endpoints_and_arithmetic(self):
        v_r, v_l = Tensor(np.array([[10.0]])), Tensor(np.array([[0.0]]))
        assert compose_value(Tensor(np.array([[0.0]])), v_r, v_l).item() == 0.0
        assert compose_value(Tensor(np.array([[1.0]])), v_r, v_l).item() == 10.0
        assert compose_value(Tensor(np.array([[0.3]])), v_r, v_l).item() == pytest.approx(3.0)

    def test_mean_symmetry_and_endpoint(self):
        mu_r = Tensor(np.ones((1, 3)))
        mu_l = Tensor(-np.ones((1, 3)))
        mid = compose_mean(Tensor(np.array([[0.5]])), mu_r, mu_l)
        np.testing.assert_array_equal(mid.data, np.zeros((1, 3)))
        top = compose_mean(Tensor(np.array([[1.0]])), mu_r, mu_l)
        np.testing.assert_array_equal(top.data, mu_r.data)

    def test_degenerate_gate_identity(self):
        # P_left forced to 1: composed outputs equal the left hemisphere's
        rng = np.random.default_rng(0)
        mu_r, mu_l = Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(4, 3)))
        v_r, v_l = Tensor(rng.normal(size=(4, 1))), Tensor(rng.normal(size=(4, 1)))
        p_right = Tensor(np.zeros((4, 1)))
        assert np.max(np.abs(compose_mean(p_right, mu_r, mu_l).data - mu_l.data)) < 1e-12
        assert np.max(np.abs(compose_value(p_right, v_r, v_l).data - v_l.data)) < 1e-12
        p_right = Tensor(np.ones((4, 1)))
        assert np.max(np.abs(compose_mean(p_right, mu_r, mu_l).data - mu_r.data)) < 1e-12
        assert np.max(np.abs(compose_value(p_right, v_r, v_l).data - v_r.data)) < 1e-12


class TestGating:
    def test_zero_head_gives_half(self):
        g = GatingNetwork(np.random.default_rng(1))
        g.head.w.data = np.zeros_like(g.head.w.data)
        g.head.b.data = np.zeros_like(g.head.b.data)
        p_r, p_l, _ = g.forward(Tensor(g.bootstrap_input(2)), g.initial_hidden(2))
        np.testing.assert_array_equal(p_l.data, np.full((2, 1), 0.5))
        np.testing.assert_array_equal(p_r.data, np.full((2, 1), 0.5))

    def test_large_head_output_saturates_left(self):
        g = GatingNetwork(np.random.default_rng(1))
        g.head.w.data = np.zeros_like(g.head.w.data)
        g.head.b.data = np.full_like(g.head.b.data, 50.0)
        _, p_l, _ = g.forward(Tensor(g.bootstrap_input(1)), g.initial_hidden(1))
        assert p_l.data[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_gates_sum_to_one_exactly(self):
        rng = np.random.default_rng(2)
        g = GatingNetwork(rng)
        h = g.initial_hidden(64)
        x = Tensor(rng.normal(size=(64, 4)))
        for _ in range(5):
            p_r, p_l, h = g.forward(x, h)
            assert np.all(p_r.data + p_l.data == 1.0)
            assert np.all((p_l.data >= 0) & (p_l.data <= 1))

    def test_bootstrap_input(self):
        np.testing.assert_array_equal(
            GatingNetwork.bootstrap_input(3),
            np.tile([0.5, 0.5, 0.0, 0.0], (3, 1)),
        )
        assert GATE_BOOTSTRAP == (0.5, 0.5, 0.0, 0.0)


class TestHemisphereForward:
    def test_zero_params_zero_outputs(self):
        net = HemisphereNetwork(np.random.default_rng(3), 7, 3, 16)
        for t in net.params("n").values():
            t.data = np.zeros_like(t.data)
        mu, v, _ = net.forward(Tensor(np.ones((2, 7))), net.initial_hidden(2))
        np.testing.assert_array_equal(mu.data, np.zeros((2, 3)))
        np.testing.assert_array_equal(v.data, np.zeros((2, 1)))

    def test_deterministic_repeat(self):
        rng = np.random.default_rng(4)
        net = HemisphereNetwork(rng, 7, 3, 32)
        obs = Tensor(rng.normal(size=(5, 7)))
        h = Tensor(rng.normal(size=(5, 32)))
        a = net.forward(obs, h)
        b = net.forward(obs, h)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.data, y.data)

    def test_matches_plain_numpy_reimplementation(self):
        rng = np.random.default_rng(5)
        net = HemisphereNetwork(rng, 4, 2, 8)
        obs = rng.normal(size=(3, 4))
        h0 = rng.normal(size=(3, 8))

        def sig(x):
            return 1.0 / (1.0 + np.exp(-x))

        c = net.gru
        z = sig(obs @ c.w_zx.data + h0 @ c.w_zh.data + c.b_z.data)
        r = sig(obs @ c.w_rx.data + h0 @ c.w_rh.data + c.b_r.data)
        n = np.tanh(obs @ c.w_nx.data + r * (h0 @ c.w_nh.data) + c.b_n.data)
        h1 = (1.0 - z) * h0 + z * n
        mu = np.tanh(h1 @ net.policy_hidden.w.data + net.policy_hidden.b.data) \
            @ net.policy_out.w.data + net.policy_out.b.data
        v = np.tanh(h1 @ net.value_hidden.w.data + net.value_hidden.b.data) \
            @ net.value_out.w.data + net.value_out.b.data

        got_mu, got_v, got_h = net.forward(Tensor(obs), Tensor(h0))
        np.testing.assert_allclose(got_h.data, h1, rtol=1e-12)
        np.testing.assert_allclose(got_mu.data, mu, rtol=1e-12)
        np.testing.assert_allclose(got_v.data, v, rtol=1e-12)

    def test_dim_mismatch(self):
        net = HemisphereNetwork(np.random.default_rng(6), 7, 3, 16)
        with pytest.raises(ConfigurationError):
            net.forward(Tensor(np.zeros((1, 9))), net.initial_hidden(1))

    def test_param_count_formula(self):
        for obs_dim, hidden in ((12, 128), (12, 256), (7, 64)):
            net = HemisphereNetwork(np.random.default_rng(7), obs_dim, 3, hidden)
            assert net.param_count() == hemisphere_param_count(obs_dim, 3, hidden)


class TestGaussianPolicy:
    def test_log_prob_matches_scipy(self):
        rng = np.random.default_rng(8)
        mean = rng.normal(size=(6, 3))
        log_std = rng.normal(size=3) * 0.5
        pol = GaussianPolicy(Tensor(mean), Tensor(log_std))
        acts = rng.normal(size=(6, 3))
        got = pol.log_prob(acts).data[:, 0]
        want = stats.norm.logpdf(acts, loc=mean, scale=np.exp(log_std)).sum(axis=1)
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_entropy_matches_scipy(self):
        log_std = np.array([-0.5, 0.2, 0.0])
        pol = GaussianPolicy(Tensor(np.zeros((1, 3))), Tensor(log_std))
        want = sum(stats.norm.entropy(loc=0.0, scale=np.exp(s)) for s in log_std)
        assert pol.entropy().item() == pytest.approx(want, rel=1e-12)

    def test_sample_statistics(self):
        rng = np.random.default_rng(9)
        mean = np.array([[0.3, -0.2, 0.0]])
        log_std = np.array([-0.5, 0.0, 0.5])
        pol = GaussianPolicy(Tensor(np.repeat(mean, 20000, axis=0)), Tensor(log_std))
        draws = pol.sample(rng)
        np.testing.assert_allclose(draws.mean(axis=0), mean[0], atol=0.02)
        np.testing.assert_allclose(draws.std(axis=0), np.exp(log_std), rtol=0.03)

    def test_log_std_init(self):
        agent = SingleHemisphereAgent(np.random.default_rng(10), 7)
        np.testing.assert_array_equal(agent.log_std.data, np.full(3, -0.5))


class TestBaselines:
    def test_left_only_sizes(self):
        agent = make_baseline("left_only", np.random.default_rng(11), obs_dim=12)
        assert agent.net.hidden == BASELINE_GRU
        assert agent.net.param_count() == hemisphere_param_count(12, ACTION_DIM, 256)

    def test_random_action_statistics(self):
        agent = make_baseline("random", np.random.default_rng(12), obs_dim=12)
        acts = agent.act(np.random.default_rng(13), 10_000)
        assert acts.shape == (10_000, 3)
        assert np.all(np.abs(acts) <= 1.0)
        # uniform on [-1,1]: var 1/3, so 3 sigma of the mean is 3/sqrt(3n)
        assert np.all(np.abs(acts.mean(axis=0)) <= 3.0 / np.sqrt(3 * 10_000))

    def test_right_only_requires_checkpoint(self):
        with pytest.raises(ConfigurationError):
            make_baseline("right_only", np.random.default_rng(14), obs_dim=12)

    def test_right_only_restores_identically(self, tmp_path):
        rng = np.random.default_rng(15)
        trained = SingleHemisphereAgent(rng, obs_dim=12)
        save_checkpoint(tmp_path / "right.npz", trained.params(), {})
        values, _ = load_checkpoint(tmp_path / "right.npz")
        a = make_baseline("right_only", np.random.default_rng(16), 12, right_checkpoint=values)
        b = make_baseline("right_only", np.random.default_rng(17), 12, right_checkpoint=values)
        obs = Tensor(np.random.default_rng(18).normal(size=(4, 12)))
        mu_a, _, _ = a.net.forward(obs, a.net.initial_hidden(4))
        mu_b, _, _ = b.net.forward(obs, b.net.initial_hidden(4))
        np.testing.assert_array_equal(mu_a.data, mu_b.data)

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            make_baseline("center_only", np.random.default_rng(19), 12)


class TestBiHemisphericAgent:
    def make_agent(self):
        rng = np.random.default_rng(20)
        donor = BiHemisphericAgent(np.random.default_rng(21), obs_dim=12)
        agent = BiHemisphericAgent(rng, obs_dim=12)
        weights = {k: t.data.copy() for k, t in donor.right.params("right").items()}
        agent.load_right(weights)
        return agent

    def test_load_right_freezes(self):
        agent = self.make_agent()
        assert all(not t.requires_grad for t in agent.right.params("right").values())
        assert all(t.requires_grad for t in agent.trainable_params().values())

    def test_right_hash_detects_tamper(self):
        agent = self.make_agent()
        agent.check_right_frozen()
        agent.right.gru.w_zx.data = agent.right.gru.w_zx.data + 1e-9
        with pytest.raises(AssertionError):
            agent.check_right_frozen()

    def test_trainable_excludes_right(self):
        agent = self.make_agent()
        names = set(agent.trainable_params())
        assert not any(n.startswith("right.") for n in names)
        assert "log_std" in names
        assert any(n.startswith("left.") for n in names)
        assert any(n.startswith("gating.") for n in names)

    def test_hidden_sizes(self):
        agent = self.make_agent()
        assert agent.right.hidden == 128
        assert agent.left.hidden == 128
        assert agent.gating.hidden == 64
        assert agent.left.policy_hidden.w.data.shape == (128, HEAD_WIDTH)
