"""REINFORCE training of the graph policy against simulated learners."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, ParameterSet, Tensor
from .corpus import BipartiteGraph, FeatureProvider, keyword_features
from .env import LinearLearnerEnv, episode_return
from .policy import PolicyDims, SessionState, forward, forward_batch, init_policy, sample_action

logger = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    """A parameter or probability became NaN/Inf."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.0005
    gamma: float = 0.0
    episodes: int = 50
    batch_size: int = 16
    repeat_per_collect: int = 15
    episodes_per_collect: int = 1
    seeds: tuple[int, ...] = (0,)
    hidden_dim: int = 32
    heads: int = 2
    optimizer: str = "adam"  # adam | sgd
    workers: int = 1

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        for name in ("batch_size", "repeat_per_collect", "episodes_per_collect", "hidden_dim", "heads", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def compute_returns(rewards, gamma: float) -> list[float]:
    """Discounted return from each step to the end of the episode."""
    out = [0.0] * len(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


@dataclass
class Transition:
    step: int
    action: int
    log_prob: Tensor
    reward: float
    session: SessionState  # policy input at decision time


@dataclass
class EpisodeBuffer:
    transitions: list[Transition] = field(default_factory=list)
    params_version: int = 0
    consumed: bool = False

    @property
    def rewards(self) -> list[float]:
        return [tr.reward for tr in self.transitions]

    @property
    def episode_return(self) -> float:
        return episode_return(self.rewards)

    def __len__(self) -> int:
        return len(self.transitions)


def collect_episode(
    params: ParameterSet,
    graph: BipartiteGraph,
    features: Tensor,
    env: LinearLearnerEnv,
    rng: np.random.Generator,
    action_fn=None,
) -> EpisodeBuffer:
    """Run one learning path with the sampled policy.

    ``action_fn(session) -> doc`` replaces the network, e.g. for oracle or
    random policies; the recorded log-probabilities are then zero constants.
    """
    env.reset()
    session = SessionState(env.n_docs, env.horizon)
    buf = EpisodeBuffer(params_version=params.version if params is not None else 0)
    done = False
    while not done:
        snapshot = session.copy()
        if action_fn is None:
            dist = forward(params, graph, features, session)
            if not np.all(np.isfinite(dist.probs)):
                raise NumericalError("policy produced non-finite probabilities")
            action, log_prob = sample_action(dist, rng)
        else:
            action, log_prob = int(action_fn(session)), ad.constant(0.0)
        result = env.step(action)
        session.observe(action, result.feedback)
        buf.transitions.append(Transition(snapshot.step, action, log_prob, result.reward, snapshot))
        done = result.done
    return buf


def make_optimizer(params: ParameterSet, config: TrainConfig):
    if config.optimizer == "adam":
        return ad.Adam(params, config.learning_rate)
    return None


def reinforce_update(
    params: ParameterSet,
    buffers: list[EpisodeBuffer],
    config: TrainConfig,
    graph: BipartiteGraph,
    features: Tensor,
    rng: np.random.Generator,
    optimizer=None,
) -> None:
    """Several passes of minibatch REINFORCE over freshly collected episodes.

    Each minibatch minimizes ``-sum log pi(a_t | session_t) * v_t`` with the
    forward pass re-run under the current parameters. Buffers are consumed.
    """
    for buf in buffers:
        if buf.consumed:
            raise ContractError("episode buffer was already used for an update")
        if buf.params_version != params.version:
            raise ContractError("episode buffer was collected with older parameters")
    items: list[tuple[Transition, float]] = []
    for buf in buffers:
        for tr, v in zip(buf.transitions, compute_returns(buf.rewards, config.gamma)):
            items.append((tr, v))
    for buf in buffers:
        buf.consumed = True

    n_docs = graph.doc_count
    for _ in range(config.repeat_per_collect):
        order = rng.permutation(len(items))
        for start in range(0, len(order), config.batch_size):
            # Zero-return transitions contribute exactly zero gradient.
            batch = [items[i] for i in order[start:start + config.batch_size] if items[i][1] != 0.0]
            if not batch:
                continue
            out = forward_batch(params, graph, features, [tr.session for tr, _ in batch])
            weights = np.zeros(len(batch) * n_docs)
            for b, (tr, v) in enumerate(batch):
                weights[b * n_docs + tr.action] = -v
            loss = ad.sum_all(ad.hadamard(out.log_probs, ad.constant(weights)))
            params.zero_grads()
            ad.backward(loss)
            if optimizer is None:
                ad.sgd_step(params, config.learning_rate)
            else:
                optimizer.step()
    if not params.all_finite():
        raise NumericalError("non-finite parameter after update")


def _seed_streams(seed: int) -> tuple[int, np.random.Generator, np.random.Generator]:
    init_ss, sample_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(3)
    init_seed = int(init_ss.generate_state(1)[0])
    return init_seed, np.random.default_rng(sample_ss), np.random.default_rng(shuffle_ss)


def train_seed(
    config: TrainConfig, graph: BipartiteGraph, features: Tensor, seed: int
) -> tuple[list[float], ParameterSet]:
    """Train one policy from scratch; returns the per-episode returns and final parameters."""
    init_seed, sample_rng, shuffle_rng = _seed_streams(seed)
    dims = PolicyDims(kw_dim=features.shape[1], hidden=config.hidden_dim, heads=config.heads)
    params = init_policy(dims, init_seed)
    optimizer = make_optimizer(params, config)
    env = LinearLearnerEnv(graph.doc_count)
    curve: list[float] = []
    while len(curve) < config.episodes:
        n_collect = min(config.episodes_per_collect, config.episodes - len(curve))
        buffers = [collect_episode(params, graph, features, env, sample_rng) for _ in range(n_collect)]
        curve.extend(b.episode_return for b in buffers)
        reinforce_update(params, buffers, config, graph, features, shuffle_rng, optimizer)
    logger.debug("seed %d returns %s", seed, curve)
    return curve, params


def run_training(config: TrainConfig, graph: BipartiteGraph, provider: FeatureProvider) -> list[list[float]]:
    """One learning curve per seed, in the order of ``config.seeds``."""
    config.validate()
    features = keyword_features(provider, graph)
    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            results = list(pool.map(lambda s: train_seed(config, graph, features, s)[0], config.seeds))
        return results
    return [train_seed(config, graph, features, s)[0] for s in config.seeds]


def run_random_baseline(n_docs: int, episodes: int, seed: int = 0, horizon: int | None = None) -> list[float]:
    """Returns of the uniform random policy."""
    rng = np.random.default_rng(seed)
    env = LinearLearnerEnv(n_docs, horizon)
    curve = []
    for _ in range(episodes):
        env.reset()
        total = 0.0
        done = False
        while not done:
            res = env.step(int(rng.integers(n_docs)))
            total += res.reward
            done = res.done
        curve.append(total)
    return curve


@dataclass(frozen=True)
class SeedSummary:
    mean: list[float]
    stddev: list[float]
    final_mean: float
    final_stddev: float
    final_stderr: float
    n_seeds: int

    def final_str(self) -> str:
        return f"{self.final_mean:.2f} ± {self.final_stddev:.2f}"


def aggregate_seeds(curves: list[list[float]]) -> SeedSummary:
    """Per-episode sample mean and standard deviation across seeds."""
    if not curves:
        raise ValueError("no curves to aggregate")
    lengths = {len(c) for c in curves}
    if len(lengths) != 1:
        raise ValueError(f"curves have different lengths: {sorted(lengths)}")
    arr = np.asarray(curves, dtype=np.float64)
    n = arr.shape[0]
    mean = arr.mean(axis=0)
    std = arr.std(axis=0, ddof=1) if n > 1 else np.zeros(arr.shape[1])
    if arr.shape[1] == 0:
        return SeedSummary([], [], math.nan, math.nan, math.nan, n)
    return SeedSummary(
        mean.tolist(),
        std.tolist(),
        float(mean[-1]),
        float(std[-1]),
        float(std[-1] / math.sqrt(n)),
        n,
    )
