import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hetsnn.bptt import (
    DETACHED,
    FULL,
    Episode,
    backward,
    path_sum_oracle,
    reinforce_batch_gradient,
    reinforce_update,
    sample_episode,
    softmax,
    stability_report,
    step_jacobian,
)
from hetsnn.envs.cartpole import CartPoleEnv
from hetsnn.gradcheck import check_case, random_case, run_gradcheck
from hetsnn.neuron import (
    NetworkSpec,
    NeuronParams,
    build_network,
    forward,
    genome_layout,
    genome_length,
    genome_pack,
    genome_unpack,
)
from hetsnn.surrogate import ARCTAN, KINDS, LOG_NONZERO_SIGN, RECTANGULAR, SurrogateSpec, nonzero_sign
from hetsnn.tasks import CartPoleTask


class TestSurrogates:
    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0, 4.0])
    def test_derivative_matches_primitive(self, kind, alpha):
        sg = SurrogateSpec(kind, alpha)
        x = np.linspace(-2.0, 2.0, 401)
        v_th = 0.5
        if kind == RECTANGULAR:
            # skip the kinks at -v_th, 0 and v_th
            x = x[np.min(np.abs(x[:, None] - np.array([-v_th, 0.0, v_th])[None]), axis=1) > 1e-3]
        if kind == LOG_NONZERO_SIGN:
            x = x[np.abs(x) > 1e-3]
        h = 1e-6
        fd = (sg.primitive(x + h, v_th) - sg.primitive(x - h, v_th)) / (2 * h)
        np.testing.assert_allclose(sg.derivative(x, v_th), fd, atol=1e-5, rtol=0)

    def test_rectangular_support_and_sign(self):
        sg = SurrogateSpec(RECTANGULAR)
        x = np.linspace(-1.5, 1.5, 301)
        d = sg.derivative(x, 0.5)
        assert np.all(d >= 0)
        assert np.all(d[np.abs(x) >= 0.5] == 0)
        np.testing.assert_allclose(sg.derivative(-0.25, 0.5), 1.0)

    def test_arctan_positive_symmetric(self):
        sg = SurrogateSpec(ARCTAN, 2.0)
        x = np.linspace(-5, 5, 101)
        assert np.all(sg.derivative(x) > 0)
        np.testing.assert_allclose(sg.derivative(x), sg.derivative(-x))

    def test_nonzero_sign_at_zero(self):
        assert nonzero_sign(0.0) == 1.0
        assert nonzero_sign(-0.0) == 1.0

    def test_rejects_unknown(self):
        with pytest.raises(ValueError):
            SurrogateSpec("sigmoid")
        with pytest.raises(ValueError):
            SurrogateSpec(ARCTAN, 0.0)


class TestStepJacobian:
    p = NeuronParams.defaults(1)

    def test_full_mode_value(self):
        j = step_jacobian(np.array([0.25]), np.array([0.0]), self.p, SurrogateSpec(), FULL)
        np.testing.assert_allclose(j, [0.5625], rtol=1e-15)

    def test_detached_spike_is_zero(self):
        j = step_jacobian(np.array([0.7]), np.array([1.0]), self.p, SurrogateSpec(), DETACHED)
        assert j[0] == 0.0

    def test_far_below_threshold(self):
        for mode in (FULL, DETACHED):
            j = step_jacobian(np.array([-10.0]), np.array([0.0]), self.p, SurrogateSpec(), mode)
            np.testing.assert_allclose(j, [0.75], rtol=1e-15)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            step_jacobian(np.zeros(1), np.zeros(1), self.p, SurrogateSpec(), "truncated")


def _single_neuron(v_th=0.5, r_mem=1.0):
    p = NeuronParams.defaults(1, v_th=v_th, r_mem=r_mem)
    return NetworkSpec((1, 1), (np.array([[1.0]]),), (p,), readout_mode="spike_count")


class TestBackward:
    def test_zero_loss_gives_zero(self, rng):
        net = build_network((2, 3, 2), seed=0, train_weights=True, input_gain=3.0)
        _, traj = forward(net, rng.uniform(0, 1, (6, 2)))
        g = backward(net, traj, np.zeros((6, 2)))
        assert g.shape == (genome_length(net),)
        assert np.all(g == 0)

    @pytest.mark.parametrize("mode", [FULL, DETACHED])
    def test_single_neuron_three_steps(self, mode):
        net = _single_neuron()
        x = np.array([[0.9], [0.8], [1.2]])
        _, traj = forward(net, x)
        lg = [np.array([[0.0], [0.0], [1.0]])]
        fast = backward(net, traj, lg, SurrogateSpec(), mode)
        ref = path_sum_oracle(net, traj, lg, SurrogateSpec(), mode)
        np.testing.assert_allclose(fast, ref, rtol=1e-10, atol=1e-14)

    def test_single_step_is_local_derivative(self):
        # T = 1 from v(-1) = v_rest: v = v_rest + k R I, so dv/dR = k I, dv/dv_rest = 1,
        # dv/dtau_raw = k (1 - k) R I and dv/dv_th = 0 (no spike can matter without reset)
        net = _single_neuron()
        net = net.replace(readout_mode="membrane_potential")
        _, traj = forward(net, np.array([[0.6]]))
        g = backward(net, traj, np.array([[1.0]]))
        k = 0.25
        np.testing.assert_allclose(g, [k * (1 - k) * 0.6, 0.0, 1.0, k * 0.6], rtol=1e-14)
        np.testing.assert_allclose(path_sum_oracle(net, traj, np.array([[1.0]])), g, rtol=1e-14)

    def test_random_four_neuron_net(self, rng):
        sizes = (3, 3, 1)
        net = build_network(sizes, seed=4, train_weights=True, input_gain=3.0)
        g0 = genome_pack(net)
        net = genome_unpack(net, g0 + 0.1 * rng.normal(size=g0.size))
        _, traj = forward(net, rng.uniform(0, 1, (10, 3)))
        lg = [rng.normal(size=(10, 3)), rng.normal(size=(10, 1))]
        for mode in (FULL, DETACHED):
            fast = backward(net, traj, lg, SurrogateSpec(ARCTAN, 2.0), mode)
            ref = path_sum_oracle(net, traj, lg, SurrogateSpec(ARCTAN, 2.0), mode)
            assert np.max(np.abs(fast - ref)) <= 1e-10 * np.max(np.abs(ref))

    def test_readout_gradient_matches_finite_differences(self, rng):
        # the non-spiking readout is smooth in its own properties, so there the
        # reverse sweep must equal the true derivative
        net = build_network((2, 3, 2), seed=9, input_gain=3.0)
        x = rng.uniform(0, 1, (8, 2))
        w = rng.normal(size=(8, 2))
        _, traj = forward(net, x)
        g = backward(net, traj, w, SurrogateSpec(), FULL)
        g0 = genome_pack(net)
        readout = [i for i in range(g0.size) if i >= 4 * 3]
        assert [b[1] for b in genome_layout(net)][-4:] == [1, 1, 1, 1]
        h = 1e-6
        for i in readout:
            e = np.zeros_like(g0)
            e[i] = h
            lp = np.sum(forward(genome_unpack(net, g0 + e), x)[0] * w)
            lm = np.sum(forward(genome_unpack(net, g0 - e), x)[0] * w)
            np.testing.assert_allclose(g[i], (lp - lm) / (2 * h), atol=1e-7)

    def test_silent_neuron_threshold_gradient(self):
        # v_th of a silent hidden neuron only reaches the loss through the surrogate
        # of its own spike output: in detached mode loss placed on its membrane
        # potential cannot change that gradient, in full mode it does
        net = NetworkSpec((1, 1, 1), (np.array([[1.0]]), np.array([[1.0]])),
                          (NeuronParams.defaults(1, v_th=5.0), NeuronParams.defaults(1)))
        _, traj = forward(net, np.full((12, 1), 1.0))
        assert traj.stacked("s", 0).sum() == 0
        sg = SurrogateSpec(ARCTAN, 2.0)
        with_own = [np.ones((12, 1)), np.ones((12, 1))]
        without = [np.zeros((12, 1)), np.ones((12, 1))]
        v_th_index = 1
        det_a = backward(net, traj, with_own, sg, DETACHED)[v_th_index]
        det_b = backward(net, traj, without, sg, DETACHED)[v_th_index]
        full_a = backward(net, traj, with_own, sg, FULL)[v_th_index]
        full_b = backward(net, traj, without, sg, FULL)[v_th_index]
        assert det_a == det_b
        assert full_a != full_b

    def test_silent_neuron_threshold_perturbation(self):
        # moving v_th of a silent neuron leaves its detached-mode gradient unchanged
        def grads(v_th):
            net = NetworkSpec((1, 1), (np.array([[1.0]]),), (NeuronParams.defaults(1, v_th=v_th),),
                              readout_mode="spike_count")
            _, traj = forward(net, np.full((10, 1), 0.8))
            assert traj.stacked("s", 0).sum() == 0
            return backward(net, traj, np.ones((10, 1)), SurrogateSpec(), DETACHED)

        a, b = grads(3.0), grads(4.0)
        assert a[1] == 0.0 and b[1] == 0.0
        np.testing.assert_allclose(a[[0, 2, 3]], b[[0, 2, 3]], rtol=1e-12)

    def test_rejects_mismatched_loss(self, rng):
        net = build_network((2, 3, 2), seed=0)
        _, traj = forward(net, rng.uniform(0, 1, (4, 2)))
        with pytest.raises(ValueError):
            backward(net, traj, np.zeros((5, 2)))

    def test_batch_gradient_is_sum(self, rng):
        net = build_network((2, 4, 2), seed=1, input_gain=3.0)
        x = rng.uniform(0, 1, (6, 3, 2))
        lg = rng.normal(size=(6, 3, 2))
        _, traj = forward(net, x)
        total = backward(net, traj, lg)
        parts = sum(backward(net, forward(net, x[:, b])[1], lg[:, b]) for b in range(3))
        np.testing.assert_allclose(total, parts, rtol=1e-12, atol=1e-15)


class TestOracle:
    def test_size_guard(self, rng):
        net = build_network((2, 40, 2), seed=0)
        _, traj = forward(net, rng.uniform(0, 1, (3, 2)))
        with pytest.raises(ValueError):
            path_sum_oracle(net, traj, np.zeros((3, 2)))

    @given(seed=st.integers(0, 10**6), mode=st.sampled_from([FULL, DETACHED]), kind=st.sampled_from(KINDS))
    def test_random_cases(self, seed, mode, kind):
        rel, bad = check_case(random_case(np.random.default_rng(seed), mode, kind))
        assert rel <= 1e-8
        assert bad == 0

    def test_gradcheck_suite_cycles_modes(self):
        res = run_gradcheck(12, seed=3)
        assert {(r.mode, r.surrogate) for r in res} == {(m, k) for m in (FULL, DETACHED) for k in KINDS}


class TestStability:
    def test_detached_never_flagged(self, rng):
        net = build_network((2, 5, 2), seed=0, input_gain=4.0)
        _, traj = forward(net, rng.uniform(0, 2, (30, 2)))
        rep = stability_report(net, traj, SurrogateSpec(ARCTAN, 4.0), DETACHED)
        assert rep.flagged_steps.size == 0
        assert rep.max_magnitude <= 0.75
        diffs = np.diff(rep.running_product, axis=0)
        assert np.all(diffs <= 0)

    def test_full_mode_can_exceed_one(self):
        # large pre-reset potential at threshold crossing with a steep surrogate
        p = NeuronParams.defaults(1, v_th=5.0)
        net = NetworkSpec((1, 1), (np.array([[1.0]]),), (p,), readout_mode="spike_count")
        _, traj = forward(net, np.array([[20.0]]))
        np.testing.assert_allclose(traj.u[0][0], [5.0])
        rep = stability_report(net, traj, SurrogateSpec(ARCTAN, 2.0), FULL)
        np.testing.assert_allclose(rep.jacobian[0, 0], -3.75)
        assert rep.flagged_steps.tolist() == [0]

    def test_full_mode_rectangular_with_low_rest(self):
        # from v = -4, u = -4 + 0.25 * 18.4 = 0.6: J = (0 + (-4 - 0.6) * 1.6) * 0.75
        p = NeuronParams.defaults(1, v_rest=-4.0)
        net = NetworkSpec((1, 1), (np.array([[1.0]]),), (p,), readout_mode="spike_count")
        _, traj = forward(net, np.array([[18.4]]))
        rep = stability_report(net, traj, SurrogateSpec(RECTANGULAR), FULL)
        np.testing.assert_allclose(rep.jacobian[0, 0], -5.52, rtol=1e-12)
        assert rep.max_magnitude > 1.0

    def test_silent_zero_input(self):
        net = build_network((2, 3, 2), seed=0)
        _, traj = forward(net, np.zeros((5, 2)))
        rep = stability_report(net, traj, SurrogateSpec(), FULL)
        np.testing.assert_allclose(rep.jacobian, 0.75)


class TestReinforce:
    def test_equal_returns_cancel(self, rng):
        net = build_network((4, 3, 2), seed=0, input_gain=5.0)
        env = CartPoleEnv(20)
        eps = [sample_episode(net, env, s, rng) for s in range(4)]
        eps = [Episode(e.trajectory, e.actions, 7.0) for e in eps]
        assert np.all(reinforce_update(net, eps) == 0)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            reinforce_update(build_network((4, 3, 2)), [])

    def test_single_step_two_actions_by_hand(self):
        # output layer only, weights trainable: v = k R w.x, log pi(a) = v_a - logsumexp(v)
        k, x = 0.25, np.array([1.0, -0.5, 2.0])
        w = np.array([[0.3, 0.1, -0.2], [0.5, -0.4, 0.25]])
        net = NetworkSpec((3, 2), (w,), (NeuronParams.defaults(2),), trainable_mask=(False,) * 4,
                          train_weights=True)
        _, traj = forward(net, x[None, :])
        v = k * (w @ x)
        np.testing.assert_allclose(traj.v[0][0], v)
        p = np.exp(v) / np.exp(v).sum()
        ret, action = 3.0, 1
        expected = np.outer(np.eye(2)[action] - p, k * x).ravel() * ret
        got = reinforce_update(net, [Episode(traj, np.array([action]), ret)], baseline=0.0)
        np.testing.assert_allclose(got, expected, rtol=1e-14)

    def test_masked_properties_absent(self):
        net = build_network((4, 3, 2), seed=0, trainable_mask=(True, False, False, False))
        traj = forward(net, np.ones((2, 4)))[1]
        g = reinforce_update(net, [Episode(traj, np.array([0, 1]), 1.0)], baseline=0.0)
        assert g.shape == (5,)

    def test_batched_rollouts_equal_per_episode_sum(self):
        net = build_network((4, 6, 2), seed=3, input_gain=5.0)
        task = CartPoleTask(net, max_steps=40)
        traj, actions, alive, returns = task.sample_batch(net, np.arange(5), np.random.default_rng(0))
        batched = reinforce_batch_gradient(net, traj, actions, alive, returns)
        episodes = []
        for b in range(5):
            n = int(alive[:, b].sum())
            sub = forward(net, np.stack(traj.inputs)[:n, b])[1]
            episodes.append(Episode(sub, actions[:n, b], float(returns[b])))
        np.testing.assert_allclose(batched, reinforce_update(net, episodes), rtol=1e-10, atol=1e-13)

    def test_softmax_normalized(self, rng):
        p = softmax(rng.normal(size=(5, 3)) * 100)
        np.testing.assert_allclose(p.sum(axis=-1), 1.0)
