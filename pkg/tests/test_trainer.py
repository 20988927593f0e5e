import math

import numpy as np
import pytest

from gnnpath import autodiff as ad
from gnnpath.autodiff import ContractError
from gnnpath.corpus import Corpus, FeatureProvider, build_graph, keyword_features
from gnnpath.env import Feedback, LinearLearnerEnv
from gnnpath.policy import PolicyDims, SessionState, forward, init_policy
from gnnpath.trainer import (
    EpisodeBuffer,
    NumericalError,
    TrainConfig,
    Transition,
    aggregate_seeds,
    collect_episode,
    compute_returns,
    reinforce_update,
    run_random_baseline,
    run_training,
    train_seed,
)

from conftest import central_diff, rel_err

CHAIN = [["a", "b"], ["b", "c"], ["c", "d", "e"]]


@pytest.fixture
def setup():
    graph = build_graph(Corpus.from_lists(CHAIN))
    feats = keyword_features(FeatureProvider("one_hot"), graph)
    params = init_policy(PolicyDims(kw_dim=5, hidden=6), 3)
    # zero biases put some ReLUs exactly on their kink; move off it for finite differences
    rng = np.random.default_rng(11)
    for name in params:
        if name.endswith((".B", ".B1", ".B2")):
            params[name].data = rng.uniform(-0.3, 0.3, params[name].shape)
    return graph, feats, params


def _buffer(params, session, action, reward, copies=1):
    tr = Transition(session.step, action, ad.constant(0.0), reward, session)
    return EpisodeBuffer([tr] * copies, params_version=params.version)


@pytest.mark.parametrize(
    "rewards,gamma,expected",
    [([0, 1, 1], 0.0, [0, 1, 1]), ([0, 1, 1], 1.0, [2, 2, 1]), ([1, 0, 1], 0.5, [1.25, 0.5, 1]), ([], 0.0, [])],
)
def test_compute_returns(rewards, gamma, expected):
    assert compute_returns(rewards, gamma) == expected


class TestCollect:
    def test_oracle_policy_reaches_doc_count(self, setup):
        graph, feats, params = setup
        buf = collect_episode(params, graph, feats, LinearLearnerEnv(3), np.random.default_rng(0),
                              action_fn=lambda s: s.step)
        assert buf.episode_return == 3

    def test_buffer_length_is_horizon(self, setup):
        graph, feats, params = setup
        buf = collect_episode(params, graph, feats, LinearLearnerEnv(3), np.random.default_rng(0))
        assert len(buf) == 3
        assert [tr.step for tr in buf.transitions] == [0, 1, 2]
        assert buf.params_version == params.version

    def test_session_updated_before_next_decision(self, setup):
        graph, feats, params = setup
        buf = collect_episode(params, graph, feats, LinearLearnerEnv(3), np.random.default_rng(1))
        first = buf.transitions[0]
        second = buf.transitions[1].session
        assert second.feedback[first.action] != int(Feedback.NOT_VISITED)
        assert (buf.transitions[0].session.feedback == int(Feedback.NOT_VISITED)).all()

    def test_deterministic(self, setup):
        graph, feats, params = setup
        runs = [collect_episode(params, graph, feats, LinearLearnerEnv(3), np.random.default_rng(5)) for _ in range(2)]
        assert [t.action for t in runs[0].transitions] == [t.action for t in runs[1].transitions]
        assert [t.log_prob.item() for t in runs[0].transitions] == [t.log_prob.item() for t in runs[1].transitions]


class TestReinforceUpdate:
    def test_zero_returns_leave_params_unchanged(self, setup):
        graph, feats, params = setup
        before = params.flat().copy()
        buf = collect_episode(params, graph, feats, LinearLearnerEnv(3), np.random.default_rng(0),
                              action_fn=lambda s: 2)
        assert buf.episode_return == 0
        reinforce_update(params, [buf], TrainConfig(optimizer="sgd"), graph, feats, np.random.default_rng(0))
        assert params.flat().tobytes() == before.tobytes()

    def test_single_transition_delta_is_lr_times_grad_log_prob(self, setup):
        graph, feats, params = setup
        session = SessionState(3, 3)
        session.observe(1, Feedback.TOO_HARD)
        action, lr = 0, 0.5
        # finite-difference oracle of grad log pi(a|s)
        expected = {}
        for name in params:
            expected[name] = lr * central_diff(
                lambda: float(forward(params, graph, feats, session).log_probs.data[action]), params[name].data
            )
        before = {name: params[name].data.copy() for name in params}
        cfg = TrainConfig(learning_rate=lr, repeat_per_collect=1, optimizer="sgd")
        reinforce_update(params, [_buffer(params, session, action, 1.0)], cfg, graph, feats, np.random.default_rng(0))
        for name in params:
            delta = params[name].data - before[name]
            assert rel_err(delta, expected[name], floor=lr * 1e-6) < 1e-4, name

    def test_two_identical_transitions_double_the_step(self, setup):
        graph, feats, params = setup
        session = SessionState(3, 3)
        # both copies land in one minibatch, so the relation is exact up to rounding
        cfg = TrainConfig(learning_rate=1e-2, repeat_per_collect=1, optimizer="sgd")
        start = params.copy()
        deltas = []
        for copies in (1, 2):
            p = start.copy()
            reinforce_update(p, [_buffer(p, session, 0, 1.0, copies)], cfg, graph, feats, np.random.default_rng(0))
            deltas.append(p.flat() - start.flat())
        np.testing.assert_allclose(deltas[1], 2 * deltas[0], rtol=1e-9, atol=1e-15)

    def test_zero_reward_transition_has_zero_gradient(self, setup):
        graph, feats, params = setup
        session = SessionState(3, 3)
        cfg = TrainConfig(learning_rate=1e-3, repeat_per_collect=1, optimizer="sgd")
        a, b = params.copy(), params.copy()
        rewarded = _buffer(a, session, 0, 1.0)
        reinforce_update(a, [rewarded], cfg, graph, feats, np.random.default_rng(0))
        mixed = _buffer(b, session, 0, 1.0)
        mixed.transitions.append(Transition(0, 2, ad.constant(0.0), 0.0, session))
        reinforce_update(b, [mixed], cfg, graph, feats, np.random.default_rng(0))
        assert a.flat().tobytes() == b.flat().tobytes()

    def test_loss_is_minus_reward_log_prob(self, setup):
        # the gradient the update applies equals that of -r * log pi(a|s), computed directly
        graph, feats, params = setup
        session = SessionState(3, 3)
        direct = params.copy()
        direct.zero_grads()
        ad.backward(ad.scale(ad.pick(forward(direct, graph, feats, session).log_probs, 1), -1.0))
        ad.sgd_step(direct, 1e-3)
        cfg = TrainConfig(learning_rate=1e-3, repeat_per_collect=1, optimizer="sgd")
        reinforce_update(params, [_buffer(params, session, 1, 1.0)], cfg, graph, feats, np.random.default_rng(0))
        np.testing.assert_allclose(params.flat(), direct.flat(), rtol=0, atol=1e-15)

    def test_consumed_buffer_rejected(self, setup):
        graph, feats, params = setup
        buf = _buffer(params, SessionState(3, 3), 0, 0.0)
        reinforce_update(params, [buf], TrainConfig(), graph, feats, np.random.default_rng(0))
        with pytest.raises(ContractError):
            reinforce_update(params, [buf], TrainConfig(), graph, feats, np.random.default_rng(0))

    def test_stale_buffer_rejected(self, setup):
        graph, feats, params = setup
        stale = _buffer(params, SessionState(3, 3), 0, 1.0)
        fresh = _buffer(params, SessionState(3, 3), 0, 1.0)
        reinforce_update(params, [fresh], TrainConfig(), graph, feats, np.random.default_rng(0),
                         optimizer=ad.Adam(params, 5e-4))
        with pytest.raises(ContractError):
            reinforce_update(params, [stale], TrainConfig(), graph, feats, np.random.default_rng(0))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nan_gate(self, setup):
        graph, feats, params = setup
        cfg = TrainConfig(learning_rate=math.inf, repeat_per_collect=1, optimizer="sgd")
        with pytest.raises(NumericalError):
            reinforce_update(params, [_buffer(params, SessionState(3, 3), 0, 1.0)], cfg, graph, feats,
                             np.random.default_rng(0))


class TestTraining:
    def test_zero_episodes(self):
        graph = build_graph(Corpus.from_lists(CHAIN))
        assert run_training(TrainConfig(episodes=0), graph, FeatureProvider("one_hot")) == [[]]

    def test_bit_identical_rerun(self):
        graph = build_graph(Corpus.from_lists(CHAIN))
        cfg = TrainConfig(episodes=4, seeds=(0, 1), hidden_dim=8)
        a = run_training(cfg, graph, FeatureProvider("one_hot"))
        b = run_training(cfg, graph, FeatureProvider("one_hot"))
        assert a == b and len(a) == 2 and len(a[0]) == 4

    def test_workers_do_not_change_results(self):
        graph = build_graph(Corpus.from_lists(CHAIN))
        cfg = TrainConfig(episodes=3, seeds=(2, 0, 1), hidden_dim=8)
        serial = run_training(cfg, graph, FeatureProvider("one_hot"))
        threaded = run_training(TrainConfig(episodes=3, seeds=(2, 0, 1), hidden_dim=8, workers=3), graph,
                                FeatureProvider("one_hot"))
        assert serial == threaded

    def test_episodes_per_collect(self):
        graph = build_graph(Corpus.from_lists(CHAIN))
        feats = keyword_features(FeatureProvider("one_hot"), graph)
        curve, params = train_seed(TrainConfig(episodes=5, episodes_per_collect=2, hidden_dim=8), graph, feats, 0)
        assert len(curve) == 5 and params.all_finite()

    @pytest.mark.parametrize("kwargs", [dict(gamma=1.5), dict(batch_size=0), dict(seeds=()), dict(optimizer="rmsprop")])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs).validate()


class TestRandomBaseline:
    def test_single_document(self):
        assert run_random_baseline(1, 50, seed=3) == [1.0] * 50

    def test_seeded(self):
        assert run_random_baseline(11, 200, seed=9) == run_random_baseline(11, 200, seed=9)

    def test_mean_near_one(self):
        assert 0.8 <= np.mean(run_random_baseline(11, 10_000, seed=0)) <= 1.2

    def test_25_seed_final_mean(self):
        # final-episode mean over 25 seeds, against the exact expectation of the chain learner
        curves = [run_random_baseline(11, 1, seed=s) for s in range(25)]
        summary = aggregate_seeds(curves)
        assert abs(summary.final_mean - _exact_random_return(11)) < 3 * summary.final_stderr + 1e-9


def _exact_random_return(n):
    # dynamic programme over the number of understood documents
    dist = np.zeros(n + 1)
    dist[0] = 1.0
    expected = 0.0
    for _ in range(n):
        new = np.zeros_like(dist)
        for k, pk in enumerate(dist):
            if pk == 0:
                continue
            if k < n:
                expected += pk / n
                new[k + 1] += pk / n
                new[k] += pk * (n - 1) / n
            else:
                new[k] += pk
        dist = new
    return expected


def test_exact_random_return_matches_binomial_idealisation():
    # each step succeeds with probability 1/n, so the expected return is exactly 1
    assert abs(_exact_random_return(11) - 1.0) < 1e-12


class TestAggregate:
    def test_identical_curves(self):
        s = aggregate_seeds([[1.0, 2.0], [1.0, 2.0]])
        assert s.stddev == [0.0, 0.0] and s.final_mean == 2.0

    def test_two_curves(self):
        s = aggregate_seeds([[0.0], [2.0]])
        assert s.mean == [1.0]
        assert abs(s.stddev[0] - math.sqrt(2)) < 1e-15
        assert abs(s.final_stderr - 1.0) < 1e-15
        assert s.final_str() == "1.00 ± 1.41"

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate_seeds([])

    def test_unequal_lengths(self):
        with pytest.raises(ValueError):
            aggregate_seeds([[1.0], [1.0, 2.0]])
