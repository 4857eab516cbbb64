"""Deep deterministic policy gradient learner: replay buffer, exploration noise and updates."""

import logging
import threading
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import BufferNotReadyError, ConfigurationError, DimensionError, UsageError
from .nn_core import (AdamState, GradientSet, MlpNetwork, adam_step, backward, forward, mlp_init,
                      parameter_hash, polyak_update)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Transition:
    """One (s, a, s', r, done) record."""

    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    reward: float
    terminal: bool

    def __post_init__(self):
        if np.shape(self.state) != np.shape(self.next_state):
            raise DimensionError(
                f"State and next state lengths differ: {np.shape(self.state)} vs {np.shape(self.next_state)}")


@dataclass
class Hyperparams:
    """DDPG hyperparameters; defaults reproduce the published configuration."""

    num_hidden_layers: int = 3
    hidden_size: int = 256
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    buffer_capacity: int = 50_000
    batch_size: int = 128
    gamma: float = 0.99
    tau: float = 0.01
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    ou_dt: float = 1.0

    def validate(self) -> "Hyperparams":
        for name in ("num_hidden_layers", "hidden_size", "buffer_capacity", "batch_size"):
            value = getattr(self, name)
            if int(value) != value or value <= 0:
                raise ConfigurationError(f"{name} must be a positive integer, got {value}")
        for name in ("actor_lr", "critic_lr", "ou_theta", "ou_dt"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.ou_sigma < 0:
            raise ConfigurationError(f"ou_sigma must be non-negative, got {self.ou_sigma}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigurationError(f"tau must lie in (0, 1), got {self.tau}")
        if self.batch_size > self.buffer_capacity:
            raise ConfigurationError("batch_size cannot exceed buffer_capacity")
        return self

    def hidden_layers(self) -> List[int]:
        return [self.hidden_size] * self.num_hidden_layers

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class ReplayBuffer:
    """Bounded FIFO of transitions with uniform sampling without replacement."""

    def __init__(self, capacity: int, seed: int = 0, state_dim: Optional[int] = None,
                 action_dim: Optional[int] = None):
        """
        Initialize replay buffer.

        Args:
            capacity: Maximum number of stored transitions
            seed: Seed of the sampling generator
            state_dim: Expected state length (fixed by the first stored transition if omitted)
            action_dim: Expected action length (fixed by the first stored transition if omitted)
        """
        if capacity <= 0:
            raise ConfigurationError(f"Replay buffer capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.state_dim = state_dim
        self.action_dim = action_dim
        self._storage: List[Transition] = []
        self._next = 0
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()
        self.total_inserted = 0

    def __len__(self) -> int:
        return len(self._storage)

    def _check_dimensions(self, transition: Transition) -> None:
        state_len, action_len = np.size(transition.state), np.size(transition.action)
        if self.state_dim is None:
            self.state_dim = state_len
        if self.action_dim is None:
            self.action_dim = action_len
        if state_len != self.state_dim:
            raise DimensionError(f"Expected state of length {self.state_dim}, got {state_len}")
        if action_len != self.action_dim:
            raise DimensionError(f"Expected action of length {self.action_dim}, got {action_len}")

    def store(self, transition: Transition) -> None:
        """Append a transition, overwriting the oldest one at capacity."""
        with self._lock:
            self._check_dimensions(transition)
            if len(self._storage) < self.capacity:
                self._storage.append(transition)
            else:
                self._storage[self._next] = transition
            self._next = (self._next + 1) % self.capacity
            self.total_inserted += 1

    def is_ready(self, n: int) -> bool:
        return len(self._storage) >= n

    def sample(self, n: int) -> List[Transition]:
        """Draw n distinct transitions uniformly."""
        if n <= 0:
            raise UsageError(f"Sample size must be positive, got {n}")
        with self._lock:
            if len(self._storage) < n:
                raise BufferNotReadyError(len(self._storage), n)
            indices = self._rng.choice(len(self._storage), size=n, replace=False)
            return [self._storage[i] for i in indices]


class OuNoiseProcess:
    """Ornstein-Uhlenbeck process: x <- x + theta (mu - x) dt + sigma sqrt(dt) N(0, 1)."""

    def __init__(self, size: int, theta: float = 0.15, sigma: float = 0.2, dt: float = 1.0,
                 mu: Optional[Sequence[float]] = None, seed: int = 0):
        self.size = size
        self.theta = theta
        self.sigma = sigma
        self.dt = dt
        self.mu = np.zeros(size) if mu is None else np.asarray(mu, dtype=np.float64)
        if self.mu.shape != (size,):
            raise DimensionError(f"OU mean must have length {size}, got {self.mu.shape}")
        self._rng = np.random.default_rng(seed)
        self.state = self.mu.copy()

    def reset(self) -> None:
        self.state = self.mu.copy()

    def sample(self) -> np.ndarray:
        x = self.state
        dx = self.theta * (self.mu - x) * self.dt + self.sigma * np.sqrt(self.dt) * self._rng.standard_normal(self.size)
        self.state = x + dx
        return self.state.copy()


def bellman_target(reward: Any, terminal: Any, next_q: Any, gamma: float) -> Any:
    """Q_B = r + gamma * Q'(s', a'), with the bootstrap masked on terminal transitions."""
    reward = np.asarray(reward, dtype=np.float64)
    mask = 1.0 - np.asarray(terminal, dtype=np.float64)
    target = reward + gamma * mask * np.asarray(next_q, dtype=np.float64)
    return float(target) if target.ndim == 0 else target


class ActorPolicy:
    """Read-only actor snapshot with its own exploration process (what a rollout worker holds)."""

    def __init__(self, actor: MlpNetwork, noise: OuNoiseProcess):
        self.actor = actor
        self.noise = noise

    @property
    def state_dim(self) -> int:
        return self.actor.input_size

    @property
    def action_dim(self) -> int:
        return self.actor.output_size

    def reset_noise(self) -> None:
        self.noise.reset()

    def select_action(self, state: Any, explore: bool = False) -> np.ndarray:
        return _select_action(self.actor, self.noise, state, explore)


def _select_action(actor: MlpNetwork, noise: OuNoiseProcess, state: Any, explore: bool) -> np.ndarray:
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (actor.input_size,):
        raise DimensionError(f"Expected state of length {actor.input_size}, got shape {state.shape}")
    action = forward(actor, state)
    if explore:
        action = np.clip(action + noise.sample(), -1.0, 1.0)
    return action


def _stack(batch: Sequence[Transition]) -> Tuple[np.ndarray, ...]:
    if not batch:
        raise UsageError("Cannot update from an empty batch")
    states = np.stack([t.state for t in batch]).astype(np.float64)
    actions = np.stack([t.action for t in batch]).astype(np.float64)
    next_states = np.stack([t.next_state for t in batch]).astype(np.float64)
    rewards = np.array([t.reward for t in batch], dtype=np.float64)
    terminals = np.array([t.terminal for t in batch], dtype=np.float64)
    return states, actions, next_states, rewards, terminals


class DdpgAgent:
    """Actor, critic, their targets and optimizers."""

    def __init__(self, state_dim: int, action_dim: int, hyperparams: Optional[Hyperparams] = None, seed: int = 0):
        """
        Initialize DDPG agent.

        The critic takes the state and action concatenated at its input layer.

        Args:
            state_dim: Length of the state vector
            action_dim: Number of actuated velocity components
            hyperparams: DDPG hyperparameters (published defaults if omitted)
            seed: Seed for network initialization and exploration
        """
        self.hyperparams = (hyperparams or Hyperparams()).validate()
        hp = self.hyperparams
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.seed = seed

        self.actor = mlp_init([state_dim] + hp.hidden_layers() + [action_dim], "tanh", seed=seed)
        self.critic = mlp_init([state_dim + action_dim] + hp.hidden_layers() + [1], "identity", seed=seed + 1)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = AdamState.create(self.actor, hp.actor_lr)
        self.critic_opt = AdamState.create(self.critic, hp.critic_lr)
        self.noise = OuNoiseProcess(action_dim, hp.ou_theta, hp.ou_sigma, hp.ou_dt, seed=seed + 2)
        self.updates_applied = 0

    @property
    def gamma(self) -> float:
        return self.hyperparams.gamma

    @property
    def batch_size(self) -> int:
        return self.hyperparams.batch_size

    def reset_noise(self) -> None:
        self.noise.reset()

    def select_action(self, state: Any, explore: bool = False) -> np.ndarray:
        """Actor output, plus clamped OU noise when exploring."""
        return _select_action(self.actor, self.noise, state, explore)

    def snapshot(self, noise_seed: int) -> ActorPolicy:
        """Copy the actor for a rollout worker, with an independent noise process."""
        hp = self.hyperparams
        return ActorPolicy(self.actor.copy(),
                           OuNoiseProcess(self.action_dim, hp.ou_theta, hp.ou_sigma, hp.ou_dt, seed=noise_seed))

    def actor_hash(self) -> str:
        return parameter_hash(self.actor)

    def q_values(self, states: np.ndarray, actions: np.ndarray, target: bool = False) -> np.ndarray:
        critic = self.critic_target if target else self.critic
        return forward(critic, np.hstack([states, actions]))[:, 0]

    def critic_loss_gradients(self, batch: Sequence[Transition]) -> Tuple[float, GradientSet]:
        """Mean squared Bellman error and its gradient with respect to the critic."""
        states, actions, next_states, rewards, terminals = _stack(batch)
        n = len(batch)
        next_actions = forward(self.actor_target, next_states)
        next_q = self.q_values(next_states, next_actions, target=True)
        q_target = bellman_target(rewards, terminals, next_q, self.gamma)

        critic_input = np.hstack([states, actions])
        q = forward(self.critic, critic_input)[:, 0]
        residual = np.atleast_1d(q_target) - q
        loss = float(np.sum(residual ** 2) / n)
        grads, _ = backward(self.critic, critic_input, (-2.0 * residual / n)[:, np.newaxis])
        return loss, grads

    def actor_loss_gradients(self, batch: Sequence[Transition]) -> Tuple[float, GradientSet]:
        """Policy loss -mean Q(s, actor(s)) and its gradient with respect to the actor."""
        states = _stack(batch)[0]
        n = len(batch)
        policy_actions = forward(self.actor, states)
        critic_input = np.hstack([states, policy_actions])
        q = forward(self.critic, critic_input)[:, 0]
        loss = float(-np.sum(q) / n)
        _, input_grad = backward(self.critic, critic_input, np.full((n, 1), -1.0 / n))
        action_grad = input_grad[:, self.state_dim:]
        grads, _ = backward(self.actor, states, action_grad)
        return loss, grads

    def critic_update(self, batch: Sequence[Transition]) -> float:
        """One Adam step on the critic; returns the pre-update loss."""
        loss, grads = self.critic_loss_gradients(batch)
        adam_step(self.critic, self.critic_opt, grads)
        return loss

    def actor_update(self, batch: Sequence[Transition]) -> float:
        """One Adam step on the actor through the critic's action input; returns the pre-update loss."""
        loss, grads = self.actor_loss_gradients(batch)
        adam_step(self.actor, self.actor_opt, grads)
        return loss

    def soft_update_targets(self, tau: Optional[float] = None) -> "DdpgAgent":
        tau = self.hyperparams.tau if tau is None else tau
        polyak_update(self.actor_target, self.actor, tau)
        polyak_update(self.critic_target, self.critic, tau)
        return self

    def train_step(self, buffer: ReplayBuffer) -> Optional[Tuple[float, float]]:
        """Critic update, actor update, soft target update; None while the buffer warms up."""
        if not buffer.is_ready(self.batch_size):
            return None
        batch = buffer.sample(self.batch_size)
        critic_loss = self.critic_update(batch)
        actor_loss = self.actor_update(batch)
        self.soft_update_targets()
        self.updates_applied += 1
        if not (np.isfinite(critic_loss) and np.isfinite(actor_loss)):
            logger.error(f"Non-finite loss after {self.updates_applied} updates")
            raise FloatingPointError("DDPG losses became non-finite")
        return critic_loss, actor_loss
