"""
Path-selection policies: the epsilon-greedy DQN agent and the uniform random baseline.

One decision step reads the latest per-TEID delay from the shared maps,
picks an interface, writes it to the action map, pushes one echo
request/response through the datapath and learns from the outcome.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from eupf import qnet
from eupf.datapath import Datapath, Direction, PacketEvent, build_gtpu_header
from eupf.env import DegradationEnv, Interface

N_ACTIONS = 2
ECHO_PAYLOAD = 64


@dataclass(frozen=True)
class DQNConfig:
    gamma: float = 0.99
    learning_rate: float = 5e-4
    batch_size: int = 32
    replay_capacity: int = 2000
    eps_start: float = 0.9
    eps_end: float = 0.01
    eps_decay: float = 0.990
    target_update_episodes: int = 5
    hidden_units: int = 64

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.replay_capacity < self.batch_size:
            raise ValueError("need 1 <= batch_size <= replay_capacity")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")
        if not 0.0 < self.eps_decay <= 1.0:
            raise ValueError("eps_decay must be in (0, 1]")
        if self.target_update_episodes < 1 or self.hidden_units < 1:
            raise ValueError("target_update_episodes and hidden_units must be >= 1")


@dataclass(frozen=True)
class ExplorationSchedule:
    eps_start: float = 0.9
    eps_end: float = 0.01
    decay: float = 0.990

    def epsilon_at(self, episode_index: int) -> float:
        if episode_index < 0:
            raise ValueError(f"episode_index must be >= 0, got {episode_index}")
        return max(self.eps_end, self.eps_start * self.decay**episode_index)


@dataclass(frozen=True)
class RewardNormalizer:
    """Min-max scaling of delay onto [0, 1]; also used to scale the observed state."""

    rtt_floor_ms: float = 0.0
    rtt_ceiling_ms: float = 803.0

    def __post_init__(self):
        if not self.rtt_ceiling_ms > self.rtt_floor_ms:
            raise ValueError("rtt_ceiling_ms must exceed rtt_floor_ms")

    def reward(self, rtt_ms: float) -> float:
        return normalize_reward(self, rtt_ms)

    def state(self, rtt_ms: Optional[float]) -> float:
        # cold start: no measurement yet reads as zero delay
        if rtt_ms is None:
            return 0.0
        span = self.rtt_ceiling_ms - self.rtt_floor_ms
        return min(1.0, max(0.0, (rtt_ms - self.rtt_floor_ms) / span))


def normalize_reward(normalizer: RewardNormalizer, rtt_ms: float) -> float:
    if not np.isfinite(rtt_ms):
        raise ValueError(f"rtt_ms must be finite, got {rtt_ms}")
    span = normalizer.rtt_ceiling_ms - normalizer.rtt_floor_ms
    return min(1.0, max(0.0, 1.0 - (rtt_ms - normalizer.rtt_floor_ms) / span))


@dataclass(frozen=True)
class Transition:
    state: float
    action: int
    reward: float
    next_state: float

    def __post_init__(self):
        if self.action not in (0, 1):
            raise ValueError(f"action must be 0 or 1, got {self.action}")
        for name in ("state", "reward", "next_state"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions backed by numpy ring arrays."""

    def __init__(self, capacity: int = 2000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros(capacity)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros(capacity)
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def push(self, t: Transition):
        i = self._next
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _order(self) -> np.ndarray:
        start = (self._next - self._size) % self.capacity
        return (start + np.arange(self._size)) % self.capacity

    def __iter__(self) -> Iterator[Transition]:
        """Oldest first."""
        for i in self._order():
            yield Transition(
                float(self.states[i]), int(self.actions[i]), float(self.rewards[i]), float(self.next_states[i])
            )

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        """Positions (0 = oldest) of a uniform sample without replacement."""
        return rng.choice(self._size, size=batch_size, replace=False)

    def sample(self, batch_size: int, rng: np.random.Generator):
        """(states, actions, rewards, next_states) arrays for a uniform minibatch."""
        idx = self._order()[self.sample_indices(batch_size, rng)]
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx]


def push_and_sample(buffer: ReplayBuffer, transition: Transition, batch_size: int, rng: np.random.Generator):
    buffer.push(transition)
    if len(buffer) < batch_size:
        return None
    return buffer.sample(batch_size, rng)


def greedy_action(q_values) -> int:
    # ties go to n6a
    return 0 if q_values[0] >= q_values[1] else 1


def select_action(params: qnet.QNetParams, state: float, epsilon: float, rng: np.random.Generator) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    # always consume the same draws so exploration never shifts the stream
    explore = rng.random() < epsilon
    random_action = int(rng.integers(N_ACTIONS))
    if explore:
        return random_action
    return greedy_action(qnet.forward(params, state))


def select_action_random(rng: np.random.Generator) -> int:
    return int(rng.integers(N_ACTIONS))


# -- the decision cycle ---------------------------------------------------

@dataclass
class StepResult:
    action: int
    interface: Interface
    rtt_ms: float
    reward: float
    transition: Transition
    loss: Optional[float] = None


def echo_exchange(datapath: Datapath, env: DegradationEnv, teid: int) -> Tuple[Interface, float]:
    """Push one uplink echo request and its reply through the datapath.

    Advances the environment by one step. The request is stamped at the new
    clock, forwarded per the action map, and its traversal may trigger a
    degradation; the reply arrives one observed delay later. Returns the
    egress interface and the datapath-measured round trip in ms.
    """
    step_ms = env.config.step_ms
    header = build_gtpu_header(teid, ECHO_PAYLOAD)
    t_req = int(round((env.clock_ms + step_ms) * 1e6))
    iface, _ = datapath.handle(PacketEvent(header, t_req, Direction.REQUEST))
    env.advance(step_ms, traversed=iface)
    delay_ms = env.observe_rtt(iface)
    t_resp = t_req + int(round(delay_ms * 1e6))
    _, rtt_ns = datapath.handle(PacketEvent(header, t_resp, Direction.RESPONSE))
    if rtt_ns is None:
        raise RuntimeError(f"TEID {teid}: reply did not close a measurement")
    return iface, rtt_ns / 1e6


def _observed_state(datapath: Datapath, teid: int, normalizer: RewardNormalizer) -> float:
    obs = datapath.maps.read_observation(teid)
    return normalizer.state(None if obs is None else obs[0] / 1e6)


class DQNAgent:
    """Online and target Q-networks, Adam state, replay memory and exploration schedule."""

    def __init__(
        self,
        config: DQNConfig,
        normalizer: RewardNormalizer,
        init_rng: np.random.Generator,
        explore_rng: np.random.Generator,
        replay_rng: np.random.Generator,
    ):
        self.config = config
        self.normalizer = normalizer
        self.schedule = ExplorationSchedule(config.eps_start, config.eps_end, config.eps_decay)
        h = config.hidden_units
        self.params = qnet.init_params(init_rng, (1, h, h, N_ACTIONS))
        self.target = qnet.sync_target(self.params)
        self.adam = qnet.AdamState.for_params(self.params, config.learning_rate)
        self.buffer = ReplayBuffer(config.replay_capacity)
        self.explore_rng = explore_rng
        self.replay_rng = replay_rng
        self.episode = 0
        self.epsilon = self.schedule.epsilon_at(0)

    def begin_episode(self, episode_index: int):
        self.episode = episode_index
        self.epsilon = self.schedule.epsilon_at(episode_index)

    def end_episode(self, episode_index: int) -> bool:
        """Sync the target network after every ``target_update_episodes`` episodes."""
        if (episode_index + 1) % self.config.target_update_episodes == 0:
            self.target = qnet.sync_target(self.params)
            return True
        return False

    def learn(self, transition: Transition) -> Optional[float]:
        sample = push_and_sample(self.buffer, transition, self.config.batch_size, self.replay_rng)
        if sample is None:
            return None
        states, actions, rewards, next_states = sample
        targets = qnet.td_targets(rewards, next_states, self.target, self.config.gamma)
        batch = qnet.TrainBatch(states, actions, targets)
        self.params, self.adam, loss = qnet.train_step(self.params, self.adam, batch)
        return loss

    def save(self, path):
        qnet.save_params(self.params, path, episode=self.episode, epsilon=self.epsilon)


def agent_step(agent: DQNAgent, datapath: Datapath, env: DegradationEnv, teid: int) -> StepResult:
    state = _observed_state(datapath, teid, agent.normalizer)
    action = select_action(agent.params, state, agent.epsilon, agent.explore_rng)
    datapath.maps.write_action(teid, Interface.from_index(action))
    iface, rtt_ms = echo_exchange(datapath, env, teid)
    reward = agent.normalizer.reward(rtt_ms)
    next_state = _observed_state(datapath, teid, agent.normalizer)
    transition = Transition(state, action, reward, next_state)
    loss = agent.learn(transition)
    return StepResult(action, iface, rtt_ms, reward, transition, loss)


def random_step(
    rng: np.random.Generator, normalizer: RewardNormalizer, datapath: Datapath, env: DegradationEnv, teid: int
) -> StepResult:
    state = _observed_state(datapath, teid, normalizer)
    action = select_action_random(rng)
    datapath.maps.write_action(teid, Interface.from_index(action))
    iface, rtt_ms = echo_exchange(datapath, env, teid)
    reward = normalizer.reward(rtt_ms)
    transition = Transition(state, action, reward, _observed_state(datapath, teid, normalizer))
    return StepResult(action, iface, rtt_ms, reward, transition)
