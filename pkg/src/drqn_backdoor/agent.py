"""DRQN training: epsilon-greedy acting, episode-aware sequential replay,
target computation with a periodically synchronized target network."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import nn
from .env import CloudSchedulingEnv, EnvConfig, generate_jobs


@dataclass(frozen=True)
class Transition:
    observation: np.ndarray
    action: int
    reward: float
    terminal: bool
    next_observation: np.ndarray
    episode_id: int
    step_index: int


class ReplayMemory:
    """Ring buffer of transitions; oldest-first eviction.

    Transitions are appended in temporal order, so a contiguous slice of the
    buffer that stays within one episode_id is a valid sequential window.
    """

    def __init__(self, capacity: int = 10000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._buf: list[Transition] = []
        self._eids: list[int] = []

    def __len__(self):
        return len(self._buf)

    def __getitem__(self, i):
        return self._buf[i]

    def push(self, transition: Transition) -> None:
        self._buf.append(transition)
        self._eids.append(transition.episode_id)
        if len(self._buf) > self.capacity:
            excess = len(self._buf) - self.capacity
            del self._buf[:excess]
            del self._eids[:excess]

    def admissible_starts(self, batch_len: int) -> np.ndarray:
        n = len(self._buf)
        if n < batch_len:
            return np.empty(0, dtype=int)
        eids = np.asarray(self._eids)
        # a window is valid iff its first and last transition share an episode
        return np.flatnonzero(eids[:n - batch_len + 1] == eids[batch_len - 1:])

    def has_batch(self, batch_len: int) -> bool:
        return self.admissible_starts(batch_len).size > 0


def sample_sequential_batch(memory: ReplayMemory, batch_len: int,
                            rng) -> list[Transition]:
    """A uniformly chosen contiguous window of batch_len transitions that
    lies entirely within one episode."""
    starts = memory.admissible_starts(batch_len)
    if starts.size == 0:
        raise ValueError(
            f"no stored episode holds {batch_len} consecutive transitions")
    start = starts[int(rng.integers(len(starts)))]
    return memory._buf[start:start + batch_len]


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.9
    batch_len: int = 64
    target_sync_period: int = 50
    epsilon_start: float = 0.9
    epsilon_decrement: float = 0.002
    epsilon_floor: float = 0.01
    max_training_episodes: int = 500
    memory_capacity: int = 10000
    hidden_size: int = 64
    lstm_layers: int = 2
    learning_rate: float = 0.001
    grad_clip: float = 0.0  # 0 disables clipping

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.batch_len > self.memory_capacity:
            raise ValueError("batch_len exceeds memory capacity")

    def epsilon_at(self, iteration: int) -> float:
        return max(self.epsilon_floor,
                   self.epsilon_start - self.epsilon_decrement * iteration)


@dataclass
class ActorState:
    recurrent: nn.RecurrentState
    epsilon: float


def select_action(q_params: nn.NetworkParams, actor_state: ActorState,
                  observation: np.ndarray, rng) -> int:
    """Epsilon-greedy action; the forward pass always runs so the recurrent
    history stays consistent.  Ties break toward the lowest action index."""
    q, state, _ = nn.forward(q_params, observation[None, :],
                             actor_state.recurrent)
    actor_state.recurrent = state
    n_actions = q_params.layout.actions
    if rng.random() < actor_state.epsilon:
        return int(rng.integers(n_actions))
    return int(np.argmax(q[0]))


def compute_targets(target_params: nn.NetworkParams,
                    batch: Sequence[Transition], gamma: float) -> np.ndarray:
    """y_i = r_i + gamma * max_a Qhat(s_{i+1}, a), bootstrap dropped at
    terminal steps; the target net runs over the batch's next observations
    from a zero initial state."""
    next_obs = np.stack([t.next_observation for t in batch])
    q_next, _, _ = nn.forward(target_params, next_obs)
    max_next = q_next.max(axis=1)
    rewards = np.array([t.reward for t in batch])
    nonterminal = np.array([0.0 if t.terminal else 1.0 for t in batch])
    return rewards + gamma * nonterminal * max_next


class DRQNTrainer:
    """Owns the online net, target net, replay memory and optimizer."""

    def __init__(self, layout: nn.NetLayout, config: AgentConfig, rng):
        self.layout = layout
        self.config = config
        self.rng = rng
        self.q = nn.init_params(layout, rng)
        self.target = nn.copy_params(self.q)
        self.memory = ReplayMemory(config.memory_capacity)
        self.adam = nn.AdamState(self.q, lr=config.learning_rate)
        self.updates = 0

    def train_step(self) -> float:
        cfg = self.config
        batch = sample_sequential_batch(self.memory, cfg.batch_len, self.rng)
        targets = compute_targets(self.target, batch, cfg.gamma)
        obs = np.stack([t.observation for t in batch])
        actions = np.array([t.action for t in batch])
        q, _, cache = nn.forward(self.q, obs)
        idx = np.arange(len(batch))
        loss, dq_taken = nn.mse_loss(q[idx, actions], targets)
        dQ = np.zeros_like(q)
        dQ[idx, actions] = dq_taken
        grads = nn.bptt(self.q, cache, dQ)
        if cfg.grad_clip > 0:
            nn.clip_grads(grads, cfg.grad_clip)
        nn.adam_step(self.q, grads, self.adam)
        self.updates += 1
        if self.updates % cfg.target_sync_period == 0:
            self.target = nn.copy_params(self.q)
        return loss


@dataclass
class TrainingResult:
    params: nn.NetworkParams
    curve: list  # rows: (episode, cumulative_reward, epsilon, loss_mean)
    trainer: Optional[DRQNTrainer] = None


def layout_for(env_config: EnvConfig, agent_config: AgentConfig) -> nn.NetLayout:
    return nn.NetLayout(obs_dim=env_config.obs_dim,
                        hidden=agent_config.hidden_size,
                        lstm_layers=agent_config.lstm_layers,
                        actions=env_config.vm_count)


def run_clean_training(env_config: EnvConfig, agent_config: AgentConfig,
                       rngs: dict, episodes: Optional[int] = None,
                       reward_hook=None, episode_hook=None) -> TrainingResult:
    """Train on clean episodes.  ``rngs`` holds named substreams: 'weights',
    'jobs', 'epsilon'.  ``reward_hook(t, reward, info)`` may transform the
    reward before it is stored and trained on (used by poisoned training);
    ``episode_hook(episode, jobs)`` may rewrite the job stream."""
    episodes = episodes if episodes is not None else agent_config.max_training_episodes
    env = CloudSchedulingEnv(env_config)
    layout = layout_for(env_config, agent_config)
    trainer = DRQNTrainer(layout, agent_config, rngs["weights"])
    scale = env_config.size_mean
    curve = []
    for episode in range(episodes):
        jobs = generate_jobs(env_config, rngs["jobs"])
        hook = None
        if episode_hook is not None:
            jobs, hook = episode_hook(episode, jobs)
        obs = env.reset(jobs=jobs).as_vector(scale)
        actor = ActorState(recurrent=nn.zero_state(layout),
                           epsilon=agent_config.epsilon_at(episode))
        cum_reward = 0.0
        losses = []
        t = 0
        warm = episode >= 1  # sequential sampling needs a full stored episode
        while True:
            action = select_action(trainer.q, actor, obs, rngs["epsilon"])
            result = env.step(action)
            reward = result.reward
            if hook is not None:
                reward = hook(t, reward, result.info)
            elif reward_hook is not None:
                reward = reward_hook(t, reward, result.info)
            next_obs = (result.next_observation.as_vector(scale)
                        if result.next_observation is not None
                        else np.zeros(layout.obs_dim))
            trainer.memory.push(Transition(obs, action, reward, result.done,
                                           next_obs, episode, t))
            cum_reward += reward
            if warm:
                losses.append(trainer.train_step())
            if result.done:
                break
            obs = next_obs
            t += 1
        loss_mean = float(np.mean(losses)) if losses else float("nan")
        curve.append((episode, cum_reward, actor.epsilon, loss_mean))
    return TrainingResult(params=trainer.q, curve=curve, trainer=trainer)


def rollout_greedy(params: nn.NetworkParams, env_config: EnvConfig,
                   jobs) -> dict:
    """One greedy episode; returns per-step arrays of true rewards, actions,
    response times and job sizes."""
    env = CloudSchedulingEnv(env_config)
    layout = params.layout
    scale = env_config.size_mean
    obs = env.reset(jobs=jobs).as_vector(scale)
    state = nn.zero_state(layout)
    rewards, actions, rts, sizes = [], [], [], []
    while True:
        q, state, _ = nn.forward(params, obs[None, :], state)
        action = int(np.argmax(q[0]))
        result = env.step(action)
        rewards.append(result.reward)
        actions.append(action)
        rts.append(result.info["response_time"])
        sizes.append(result.info["job"].size)
        if result.done:
            break
        obs = result.next_observation.as_vector(scale)
    return {"rewards": np.array(rewards), "actions": np.array(actions),
            "response_times": np.array(rts), "sizes": np.array(sizes)}
