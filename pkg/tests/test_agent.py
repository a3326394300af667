import json

import numpy as np
import pytest

from specmart.agent import (
    ACTION_DELTAS,
    Action,
    AgentHyperparams,
    AgentState,
    ReplayBuffer,
    RewardParams,
    TradingAgent,
    Transition,
    action_from_index,
    allowed_action_mask,
    build_state,
    compute_reward,
    ddqn_update,
    epsilon_at,
    select_action,
)
from specmart.neural import Adam, DenseNet


def constant_q_net(q_values, sizes=(4, 8, 5), seed=0):
    """Net whose output equals q_values for every input (zero weights)."""
    net = DenseNet(list(sizes), seed=seed)
    for w in net.weights:
        w[:] = 0.0
    for b in net.biases:
        b[:] = 0.0
    net.biases[-1][:] = q_values
    return net


def some_state(alloc=24.0, forecast=26.0):
    return build_state(alloc, forecast, [1.5], [25.0], n=24, threshold=24.0)


class TestActions:
    def test_table_is_fixed_and_ascending(self):
        assert ACTION_DELTAS == (-3.0, -1.5, 0.0, 1.5, 3.0)
        assert list(ACTION_DELTAS) == sorted(ACTION_DELTAS)

    def test_index_delta_bijection(self):
        deltas = [action_from_index(i).delta_srus for i in range(5)]
        assert deltas == list(ACTION_DELTAS)
        assert len(set(deltas)) == 5

    def test_invalid_index(self):
        with pytest.raises(ValueError):
            action_from_index(5)


class TestEpsilonSchedule:
    def test_starts_at_one(self):
        assert epsilon_at(0) == 1.0

    def test_decay_after_100_steps(self):
        assert epsilon_at(100) == pytest.approx(0.60577, abs=1e-4)

    def test_floor_first_reached_at_919(self):
        assert epsilon_at(918) > 0.01
        assert epsilon_at(919) == 0.01
        assert epsilon_at(5000) == 0.01

    def test_monotone_non_increasing_and_bounded(self):
        values = [epsilon_at(s) for s in range(0, 2000, 7)]
        assert all(0.01 <= v <= 1.0 for v in values)
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_negative_step(self):
        with pytest.raises(ValueError):
            epsilon_at(-1)


class TestReward:
    def test_neutral_step_is_zero(self):
        assert compute_reward(0, 0, 0.0, False, RewardParams()) == 0.0

    def test_deficit_purchase_case(self):
        r = compute_reward(2.0, 0.0, 4.8, True, RewardParams())
        assert r == pytest.approx(-18.45, abs=1e-12)

    def test_surplus_sale_case(self):
        r = compute_reward(0.0, 4.0, -3.6, True, RewardParams())
        assert r == pytest.approx(-6.25, abs=1e-12)

    def test_linear_in_each_term(self):
        params = RewardParams()

        def r(d=0.0, s=0.0, p=0.0):
            return compute_reward(d, s, p, False, params)

        assert r(d=2) - r(d=1) == pytest.approx(r(d=1) - r(d=0), abs=1e-12)
        assert r(s=6) - r(s=3) == pytest.approx(r(s=3) - r(s=0), abs=1e-12)
        assert r(p=8) - r(p=4) == pytest.approx(r(p=4) - r(p=0), abs=1e-12)

    def test_exclusive_deficit_surplus(self):
        with pytest.raises(ValueError):
            compute_reward(1.0, 1.0, 0.0, False, RewardParams())
        with pytest.raises(ValueError):
            compute_reward(-1.0, 0.0, 0.0, False, RewardParams())

    def test_param_validation(self):
        with pytest.raises(ValueError):
            RewardParams(alpha=-1)


class TestBuildState:
    def test_normalization_example(self):
        state = build_state(24.0, 26.0, [1.5], [25.0], n=24, threshold=24.0)
        assert state.normalized() == pytest.approx(
            [1.0, 1.08333, 0.0625, 1.04167], abs=1e-5)

    def test_all_components_at_threshold(self):
        state = build_state(24.0, 24.0, [24.0], [24.0], n=24, threshold=24.0)
        assert state.normalized() == pytest.approx([1, 1, 1, 1], abs=1e-12)

    def test_n_one_takes_last_entries(self):
        state = build_state(24.0, 24.0, [5.0, 1.5], [30.0, 25.0], n=1,
                            threshold=24.0)
        assert state.forecast_error_ma == 1.5
        assert state.demand_ma == 25.0

    def test_window_longer_than_n(self):
        state = build_state(24.0, 24.0, [9.0, 1.0, 3.0], [1.0, 2.0, 4.0], n=2,
                            threshold=24.0)
        assert state.forecast_error_ma == 2.0
        assert state.demand_ma == 3.0

    def test_empty_windows(self):
        with pytest.raises(ValueError):
            build_state(24.0, 24.0, [], [25.0], n=24, threshold=24.0)

    def test_normalized_length_four(self):
        assert some_state().normalized().shape == (4,)


class TestSelectAction:
    def test_greedy_argmax(self):
        net = constant_q_net([1.0, 2.0, 9.0, 0.0, 3.0])
        rng = np.random.default_rng(0)
        action = select_action(net, some_state(), 0.0, np.ones(5, bool), rng)
        assert action.index == 2

    def test_tie_breaks_to_lowest_index(self):
        net = constant_q_net([5.0, 5.0, 0.0, 0.0, 0.0])
        rng = np.random.default_rng(0)
        action = select_action(net, some_state(), 0.0, np.ones(5, bool), rng)
        assert action.index == 0

    def test_masked_sells_never_selected(self):
        # allocation 1.0: both sell actions would go negative
        mask = allowed_action_mask(1.0, 24.0)
        assert mask.tolist() == [False, False, True, True, True]
        net = constant_q_net([99.0, 98.0, 0.0, 0.0, 0.0])
        rng = np.random.default_rng(42)
        state = some_state(alloc=1.0)
        seen = {select_action(net, state, 1.0, mask, rng).index
                for _ in range(10_000)}
        assert seen == {2, 3, 4}

    def test_greedy_is_pure_and_skips_rng(self):
        net = constant_q_net([0.0, 1.0, 0.0, 0.0, 0.0])
        rng = np.random.default_rng(7)
        state_before = rng.bit_generator.state
        a = select_action(net, some_state(), 0.0, np.ones(5, bool), rng)
        b = select_action(net, some_state(), 0.0, np.ones(5, bool), rng)
        assert a == b
        assert rng.bit_generator.state == state_before

    def test_all_masked_rejected(self):
        net = constant_q_net([0.0] * 5)
        with pytest.raises(ValueError):
            select_action(net, some_state(), 0.0, np.zeros(5, bool),
                          np.random.default_rng(0))

    def test_hold_always_allowed(self):
        mask = allowed_action_mask(0.0, 24.0)
        assert mask[2]
        mask = allowed_action_mask(48.0, 24.0)
        assert mask[2]
        assert mask.tolist() == [True, True, True, False, False]


class TestReplayBuffer:
    @staticmethod
    def transition(i):
        return Transition(np.full(4, float(i)), i % 5, float(-i),
                          np.full(4, float(i + 1)), False)

    def test_fifo_eviction(self):
        buffer = ReplayBuffer(capacity=3, seed=0)
        items = [self.transition(i) for i in range(4)]
        for item in items:
            buffer.push(item)
        assert len(buffer) == 3
        stored = [buffer._store[i] for i in range(3)]
        assert items[0] not in stored
        assert stored == items[1:]

    def test_uniform_sampling(self):
        buffer = ReplayBuffer(capacity=10, seed=123)
        for i in range(10):
            buffer.push(self.transition(i))
        counts = np.zeros(10)
        for _ in range(10_000):
            for t in buffer.sample(10):
                counts[int(t.state[0])] += 1
        # 3 sigma of Binomial(1e5, 0.1)
        assert np.all(np.abs(counts - 10_000) < 3 * np.sqrt(1e5 * 0.1 * 0.9))

    def test_seeded_sampling_reproducible(self):
        def build():
            buffer = ReplayBuffer(capacity=10, seed=77)
            for i in range(10):
                buffer.push(self.transition(i))
            return buffer

        a, b = build(), build()
        for _ in range(5):
            sa = [t.state[0] for t in a.sample(4)]
            sb = [t.state[0] for t in b.sample(4)]
            assert sa == sb

    def test_underfilled_sampling_rejected(self):
        buffer = ReplayBuffer(capacity=10, seed=0)
        buffer.push(self.transition(0))
        with pytest.raises(ValueError):
            buffer.sample(2)


class TestDdqnUpdate:
    def test_terminal_target_ignores_next_state(self):
        online = constant_q_net([0.0] * 5)
        target = constant_q_net([123.0] * 5)
        batch = [Transition(np.zeros(4), 1, -5.0, np.ones(4), True)]
        loss = ddqn_update(online, target, batch, 0.99, Adam())
        assert loss == pytest.approx(25.0, abs=1e-12)

    def test_double_q_target_formula(self):
        # online argmax at s' is action 3; target net values it at 2.0
        online = constant_q_net([0.0, 0.0, 0.0, 10.0, 0.0])
        target = constant_q_net([0.0, 0.0, 0.0, 2.0, 0.0])
        batch = [Transition(np.zeros(4), 0, -1.0, np.ones(4), False)]
        # y = -1 + 0.99 * 2.0 = 0.98; online Q(s, 0) = 0
        loss = ddqn_update(online, target, batch, 0.99, Adam())
        assert loss == pytest.approx(0.98 ** 2, abs=1e-12)

    def test_fixed_point_leaves_parameters(self):
        online = constant_q_net([0.0] * 5)
        target = constant_q_net([0.0] * 5)
        snapshot = [p.copy() for p in online.parameters]
        batch = [Transition(np.zeros(4), 2, 0.0, np.zeros(4), False)]
        loss = ddqn_update(online, target, batch, 0.99, Adam())
        assert loss == 0.0
        for p, s in zip(online.parameters, snapshot):
            assert np.array_equal(p, s)

    def test_target_net_untouched(self):
        online = DenseNet([4, 8, 5], seed=1)
        target = DenseNet([4, 8, 5], seed=2)
        snapshot = [p.copy() for p in target.parameters]
        batch = [Transition(np.full(4, 0.5), 0, -2.0, np.full(4, 0.6), False)]
        ddqn_update(online, target, batch, 0.99, Adam())
        for p, s in zip(target.parameters, snapshot):
            assert np.array_equal(p, s)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            ddqn_update(constant_q_net([0.0] * 5), constant_q_net([0.0] * 5),
                        [], 0.99, Adam())

    def test_non_finite_loss_signals_divergence(self):
        from specmart.agent import DivergenceError
        online = constant_q_net([0.0] * 5)
        target = constant_q_net([0.0] * 5)
        batch = [Transition(np.zeros(4), 0, 1e308, np.zeros(4), True)]
        with pytest.raises(DivergenceError):
            ddqn_update(online, target, batch, 0.99, Adam())

    def test_architecture_mismatch(self):
        online = DenseNet([4, 8, 5], seed=0)
        target = DenseNet([4, 16, 5], seed=0)
        batch = [Transition(np.zeros(4), 0, 0.0, np.zeros(4), False)]
        with pytest.raises(ValueError):
            ddqn_update(online, target, batch, 0.99, Adam())


class TestTradingAgentCheckpoint:
    def test_round_trip(self, tmp_path):
        agent = TradingAgent(seed=3)
        agent.epsilon_step = 250
        prefix = tmp_path / "agent"
        agent.save(prefix)
        loaded = TradingAgent.load(prefix)
        assert loaded.epsilon_step == 250
        for pa, pb in zip(agent.online.parameters, loaded.online.parameters):
            assert np.array_equal(pa, pb)
        for pa, pb in zip(agent.target.parameters, loaded.target.parameters):
            assert np.array_equal(pa, pb)
        assert loaded.hyper == agent.hyper

    def test_json_path_accepted(self, tmp_path):
        agent = TradingAgent(seed=1)
        agent.save(tmp_path / "ckpt")
        loaded = TradingAgent.load(tmp_path / "ckpt.json")
        assert loaded.hyper == agent.hyper

    def test_action_table_validated(self, tmp_path):
        agent = TradingAgent(seed=1)
        prefix = tmp_path / "agent"
        agent.save(prefix)
        sidecar = json.loads((tmp_path / "agent.json").read_text())
        sidecar["action_table"] = [-5.0, -1.5, 0.0, 1.5, 3.0]
        (tmp_path / "agent.json").write_text(json.dumps(sidecar))
        with pytest.raises(ValueError, match="action table"):
            TradingAgent.load(prefix)

    def test_architecture_must_match_nets(self, tmp_path):
        agent = TradingAgent(seed=1)
        prefix = tmp_path / "agent"
        agent.save(prefix)
        small = TradingAgent(AgentHyperparams(layer_sizes=(4, 8, 8, 5)), seed=1)
        small.online.save(tmp_path / "agent.online.npz")
        with pytest.raises(ValueError, match="architecture"):
            TradingAgent.load(prefix)

    def test_hyperparams_validated(self):
        with pytest.raises(ValueError):
            AgentHyperparams(layer_sizes=(3, 8, 5))
        with pytest.raises(ValueError):
            AgentHyperparams(layer_sizes=(4, 8, 4))


class TestAgentStateValidation:
    def test_negative_components_rejected(self):
        with pytest.raises(ValueError):
            AgentState(-1.0, 24.0, 0.0, 24.0, 24.0)
        with pytest.raises(ValueError):
            AgentState(24.0, 24.0, 0.0, 24.0, 0.0)

    def test_action_value_object(self):
        action = Action(index=4, delta_srus=3.0)
        assert action.delta_srus == 3.0
