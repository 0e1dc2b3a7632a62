import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hetsnn.neuron import (
    SPIKE_COUNT,
    LayerState,
    NetworkSpec,
    NeuronParams,
    build_network,
    forward,
    genome_length,
    genome_pack,
    genome_unpack,
    init_weights,
    lif_step,
    neuron_table,
    sigmoid,
    tau_to_raw,
)


def defaults(n=1):
    return NeuronParams.defaults(n)


class TestLifStep:
    def test_rest_is_fixed_point(self):
        state, u = lif_step(LayerState(np.zeros(1), np.zeros(1)), np.zeros(1), defaults())
        assert u[0] == 0.0 and state.s[0] == 0.0 and state.v[0] == 0.0

    def test_subthreshold_step(self):
        state, u = lif_step(LayerState(np.zeros(1), np.zeros(1)), np.ones(1), defaults())
        np.testing.assert_allclose(u, [0.25], rtol=0, atol=1e-15)
        assert state.s[0] == 0.0
        np.testing.assert_allclose(state.v, [0.25], atol=1e-15)

    def test_spike_and_reset(self):
        state, u = lif_step(LayerState(np.array([0.4]), np.zeros(1)), np.ones(1), defaults())
        np.testing.assert_allclose(u, [0.55], atol=1e-15)
        assert state.s[0] == 1.0
        assert state.v[0] == 0.0

    def test_reset_goes_to_own_rest_potential(self):
        p = defaults(2).replace(v_rest=np.array([-0.2, 0.1]), v_th=np.array([0.3, 0.3]))
        state, _ = lif_step(LayerState(np.array([0.29, 0.29]), np.zeros(2)), np.full(2, 5.0), p)
        assert np.all(state.s == 1.0)
        np.testing.assert_array_equal(state.v, [-0.2, 0.1])

    def test_resistance_scales_current(self):
        p = defaults(1).replace(r_mem=np.array([2.0]))
        _, u = lif_step(LayerState(np.zeros(1), np.zeros(1)), np.array([0.5]), p)
        np.testing.assert_allclose(u, [0.25])

    def test_rejects_non_finite_input_naming_neuron(self):
        with pytest.raises(ValueError, match="neuron 2"):
            lif_step(LayerState(np.zeros(3), np.zeros(3)), np.array([0.0, 1.0, np.nan]), defaults(3))

    def test_rejects_non_finite_parameter(self):
        p = defaults(3).replace(v_th=np.array([0.5, np.inf, 0.5]))
        with pytest.raises(ValueError, match="v_th at neuron 1"):
            lif_step(LayerState(np.zeros(3), np.zeros(3)), np.zeros(3), p)

    def test_rejects_wrong_width(self):
        with pytest.raises(ValueError):
            lif_step(LayerState(np.zeros(2), np.zeros(2)), np.zeros(3), defaults(2))

    @given(
        v=st.floats(-2, 2), i=st.floats(-5, 5), v_th=st.floats(0.05, 2),
        v_rest=st.floats(-0.5, 0.0), raw=st.floats(-6, 6),
    )
    def test_spike_reset_coupling(self, v, i, v_th, v_rest, raw):
        p = NeuronParams(np.array([raw]), np.array([v_th]), np.array([v_rest]), np.ones(1))
        state, u = lif_step(LayerState(np.array([v]), np.zeros(1)), np.array([i]), p)
        assert state.s[0] in (0.0, 1.0)
        assert (state.s[0] == 1.0) == (u[0] >= v_th)
        if state.s[0] == 1.0:
            assert state.v[0] == v_rest
        else:
            assert state.v[0] == u[0]

    @given(v0=st.floats(-3, 3).filter(lambda x: abs(x) > 1e-6), raw=st.floats(-8, 8),
           v_rest=st.floats(-0.5, 0.2))
    def test_leak_contraction(self, v0, raw, v_rest):
        p = NeuronParams(np.array([raw]), np.array([1e6]), np.array([v_rest]), np.ones(1))
        k = float(sigmoid(raw))
        start = np.array([v_rest + v0])
        state, _ = lif_step(LayerState(start, np.zeros(1)), np.zeros(1), p)
        np.testing.assert_allclose(abs(state.v[0] - v_rest), (1 - k) * abs(v0), rtol=1e-9, atol=1e-15)
        assert abs(state.v[0] - v_rest) < abs(v0)


class TestReparameterization:
    def test_default_tau_raw(self):
        np.testing.assert_allclose(tau_to_raw(20e-3, 5e-3), math.log(1 / 3), rtol=1e-15)
        np.testing.assert_allclose(defaults().decay, [0.25], rtol=1e-15)
        np.testing.assert_allclose(defaults().tau_m, [20e-3], rtol=1e-14)

    @given(st.floats(-700, 700))
    def test_decay_in_open_interval(self, raw):
        k = float(sigmoid(raw))
        assert 0.0 <= k <= 1.0
        if abs(raw) < 30:
            assert 0.0 < k < 1.0
            assert 5e-3 / k > 5e-3

    def test_tau_must_exceed_step(self):
        with pytest.raises(ValueError):
            tau_to_raw(5e-3, 5e-3)


def _hand_net():
    w1 = np.array([[1.0, 0.5], [-0.5, 2.0]])
    w2 = np.array([[1.0, 1.0]])
    return NetworkSpec(
        layer_sizes=(2, 2, 1),
        weights=(w1, w2),
        neuron_params=(defaults(2), defaults(1)),
    )


class TestForward:
    def test_hand_unrolled_two_layer_net(self):
        # decay 0.25, threshold 0.5, readout never spikes:
        # t0: hidden u = (0.5, -0.25) -> spike (1, 0); out u = 0.25
        # t1: hidden u = (0.125, 0.3125); out u = 0.1875
        # t2: hidden u = (0.46875, 0.609375) -> spike (0, 1); out u = 0.390625
        x = np.array([[2.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        out, traj = forward(_hand_net(), x)
        np.testing.assert_array_equal(out[:, 0], [0.25, 0.1875, 0.390625])
        np.testing.assert_array_equal(traj.stacked("s", 0), [[1, 0], [0, 0], [0, 1]])
        np.testing.assert_array_equal(traj.stacked("u", 0)[2], [0.46875, 0.609375])
        np.testing.assert_array_equal(traj.stacked("v", 0)[2], [0.46875, 0.0])

    def test_matches_manual_lif_steps(self, rng):
        net = build_network((3, 5, 2), seed=3, input_gain=2.0)
        x = rng.uniform(0, 1, (12, 3))
        out, traj = forward(net, x)
        s0 = LayerState(np.zeros(5), np.zeros(5))
        s1 = LayerState(np.zeros(2), np.zeros(2))
        for t in range(12):
            s0, u0 = lif_step(s0, net.weights[0] @ (2.0 * x[t]), net.neuron_params[0])
            s1, u1 = lif_step(s1, net.weights[1] @ s0.s, net.neuron_params[1], spiking=False)
            np.testing.assert_array_equal(traj.u[0][t], u0)
            np.testing.assert_array_equal(traj.s[0][t], s0.s)
            np.testing.assert_array_equal(out[t], s1.v)

    def test_zero_weights_output_stays_at_rest(self, rng):
        net = _hand_net()
        net = net.replace(weights=tuple(np.zeros_like(w) for w in net.weights),
                          neuron_params=(defaults(2), defaults(1).replace(v_rest=np.array([-0.1]))))
        out, _ = forward(net, rng.normal(size=(7, 2)))
        np.testing.assert_array_equal(out, -0.1)

    def test_deterministic(self, rng):
        net = build_network((4, 6, 2), seed=1)
        x = rng.normal(size=(20, 4))
        a, _ = forward(net, x)
        b, _ = forward(net, x)
        assert a.tobytes() == b.tobytes()

    def test_empty_sequence(self):
        out, traj = forward(_hand_net(), np.zeros((0, 2)))
        assert out.shape == (0, 1) and len(traj) == 0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="input width"):
            forward(_hand_net(), np.zeros((3, 4)))

    def test_trajectory_replay_and_length(self, rng):
        net = build_network((2, 4, 3), seed=5, input_gain=3.0)
        x = rng.uniform(-1, 2, (15, 2))
        _, traj = forward(net, x)
        assert len(traj) == 15
        s = LayerState.at_rest(net.neuron_params[0])
        for t in range(15):
            s, u = lif_step(s, traj.currents[0][t], net.neuron_params[0])
            np.testing.assert_array_equal(u, traj.u[0][t])
            np.testing.assert_array_equal(s.v, traj.v[0][t])

    def test_spike_count_readout_spikes(self, rng):
        net = build_network((2, 3, 2), seed=0, readout_mode=SPIKE_COUNT, input_gain=5.0)
        out, traj = forward(net, rng.uniform(0, 1, (10, 2)))
        np.testing.assert_array_equal(out, traj.stacked("s", 1))
        assert set(np.unique(out)) <= {0.0, 1.0}

    def test_population_axes_match_individual_runs(self, rng):
        net = build_network((3, 4, 2), seed=2, train_weights=True)
        genomes = genome_pack(net) + 0.3 * rng.normal(size=(5, genome_length(net)))
        x = rng.uniform(0, 2, (8, 3))
        batched, _ = forward(genome_unpack(net, genomes), x[:, None, :])
        for j in range(5):
            single, _ = forward(genome_unpack(net, genomes[j]), x)
            np.testing.assert_allclose(batched[:, j], single, rtol=0, atol=1e-14)


class TestInitWeights:
    def test_lecun_variance(self):
        (w,) = init_weights((100, 10_000), seed=0)
        assert w.size == 10**6
        assert abs(w.var() / 0.01 - 1) < 0.05
        assert abs(w.mean()) < 1e-3

    def test_seeded(self):
        a = init_weights((5, 4, 3), 11)
        b = init_weights((5, 4, 3), 11)
        c = init_weights((5, 4, 3), 12)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert not np.array_equal(a[0], c[0])

    def test_shapes(self):
        ws = init_weights((5, 4, 3), 0)
        assert [w.shape for w in ws] == [(4, 5), (3, 4)]


class TestGenome:
    def test_lengths(self):
        assert genome_length(build_network((3, 10, 2))) == 4 * 12
        assert genome_length(build_network((3, 10, 2), trainable_mask=(True, False, False, False))) == 12
        assert genome_length(build_network((3, 10, 2), trainable_mask=(False,) * 4)) == 0
        assert genome_length(build_network((3, 10, 2), trainable_mask=(False,) * 4, train_weights=True)) == 50

    @given(mask=st.tuples(*[st.booleans()] * 4), weights=st.booleans(), seed=st.integers(0, 1000))
    def test_round_trip(self, mask, weights, seed):
        net = build_network((3, 4, 2), seed=1, trainable_mask=mask, train_weights=weights)
        g = np.random.default_rng(seed).normal(size=genome_length(net))
        back = genome_pack(genome_unpack(net, g))
        np.testing.assert_array_equal(back, g)

    def test_fixed_properties_untouched(self, rng):
        net = build_network((3, 4, 2), trainable_mask=(True, False, True, False))
        new = genome_unpack(net, rng.normal(size=genome_length(net)))
        for a, b in zip(net.neuron_params, new.neuron_params):
            np.testing.assert_array_equal(a.v_th, b.v_th)
            np.testing.assert_array_equal(a.r_mem, b.r_mem)
            assert not np.array_equal(a.tau_raw, b.tau_raw)
        for a, b in zip(net.weights, new.weights):
            np.testing.assert_array_equal(a, b)

    def test_length_mismatch(self):
        net = build_network((3, 4, 2))
        with pytest.raises(ValueError, match="genome length"):
            genome_unpack(net, np.zeros(genome_length(net) + 1))

    def test_neuron_table_in_ms(self):
        rows = neuron_table(build_network((2, 3, 1)))
        assert len(rows) == 4
        assert all(abs(r["tau_m_ms"] - 20.0) < 1e-9 for r in rows)


class TestNetworkSpec:
    def test_rejects_shape_chain_mismatch(self):
        with pytest.raises(ValueError, match="weights"):
            NetworkSpec((2, 3, 1), (np.zeros((3, 2)), np.zeros((1, 2))), (defaults(3), defaults(1)))

    def test_rejects_bad_mask(self):
        with pytest.raises(ValueError):
            NetworkSpec((2, 1), (np.zeros((1, 2)),), (defaults(1),), trainable_mask=(True,))
