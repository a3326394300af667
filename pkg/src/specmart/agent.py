"""DDQN trading agent: state construction, epsilon-greedy action selection,
replay memory, and double-Q updates against a softly tracked target net.

The action set is the fixed ascending list of SRU deltas
(-3, -1.5, 0, +1.5, +3); negative deltas sell, positive deltas buy.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .neural import Adam, DenseNet, soft_update

ACTION_DELTAS = (-3.0, -1.5, 0.0, 1.5, 3.0)
HOLD_INDEX = 2
N_ACTIONS = len(ACTION_DELTAS)

EPSILON_START = 1.0
EPSILON_FLOOR = 0.01
EPSILON_DECAY = 0.995

DEFAULT_BUFFER_CAPACITY = 100_000
DEFAULT_BATCH_SIZE = 64
STATE_SIZE = 4


class DivergenceError(RuntimeError):
    """Raised when a Q-update produces a non-finite loss."""


@dataclass(frozen=True)
class Action:
    index: int
    delta_srus: float


def action_from_index(index: int) -> Action:
    if not 0 <= index < N_ACTIONS:
        raise ValueError(f"action index {index} out of range")
    return Action(index=index, delta_srus=ACTION_DELTAS[index])


def epsilon_at(step: int) -> float:
    """Exploration rate after ``step`` environment steps: max(0.01, 0.995**step)."""
    if step < 0:
        raise ValueError("step must be non-negative")
    return max(EPSILON_FLOOR, EPSILON_DECAY ** step)


@dataclass(frozen=True)
class RewardParams:
    alpha: float = 8.0         # weight of resource deficit
    beta: float = 2.0          # weight of resource surplus
    gamma_cost: float = 0.5    # weight of monetary cost (not the discount)
    transaction_cost: float = 0.05  # flat charge per executed trade

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma_cost", "transaction_cost"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def compute_reward(deficit: float, surplus: float, monetary_cost: float,
                   transacted: bool, params: RewardParams) -> float:
    """R = -(alpha*D + beta*S + gamma_cost*P + T).

    ``monetary_cost`` is positive when buying and negative when selling, so
    sale income raises the reward. The transaction charge applies only when
    a trade was executed. Deficit and surplus are mutually exclusive.
    """
    if deficit < 0 or surplus < 0:
        raise ValueError("deficit and surplus must be non-negative")
    if deficit > 0 and surplus > 0:
        raise ValueError("deficit and surplus cannot both be positive")
    t_cost = params.transaction_cost if transacted else 0.0
    return -(params.alpha * deficit + params.beta * surplus
             + params.gamma_cost * monetary_cost + t_cost)


@dataclass(frozen=True)
class AgentState:
    """Raw state components; the net consumes the threshold-normalized form."""

    allocation: float
    forecast: float
    forecast_error_ma: float
    demand_ma: float
    threshold: float

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        for name in ("allocation", "forecast", "forecast_error_ma", "demand_ma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def normalized(self) -> np.ndarray:
        return np.asarray([
            self.allocation, self.forecast,
            self.forecast_error_ma, self.demand_ma,
        ]) / self.threshold


def build_state(allocation: float, forecast: float, err_window, demand_window,
                n: int, threshold: float) -> AgentState:
    """Assemble the 4-component state with moving averages over the last
    min(n, window length) entries of each history window."""
    err_window = list(err_window)
    demand_window = list(demand_window)
    if not err_window or not demand_window:
        raise ValueError("history windows must be non-empty")
    if n < 1:
        raise ValueError("moving-average window must be at least 1")
    return AgentState(
        allocation=allocation,
        forecast=forecast,
        forecast_error_ma=float(np.mean(err_window[-n:])),
        demand_ma=float(np.mean(demand_window[-n:])),
        threshold=threshold,
    )


def allowed_action_mask(allocation: float, threshold: float,
                        alloc_min: float = 0.0,
                        alloc_max: float | None = None) -> np.ndarray:
    """Boolean mask of actions that keep the allocation within bounds.

    Default bounds are [0, 2*threshold]; hold is always allowed.
    """
    if alloc_max is None:
        alloc_max = 2.0 * threshold
    mask = np.array([
        alloc_min <= allocation + delta <= alloc_max for delta in ACTION_DELTAS
    ])
    mask[HOLD_INDEX] = True
    return mask


def select_action(net: DenseNet, state: AgentState, epsilon: float,
                  mask: np.ndarray, rng: np.random.Generator) -> Action:
    """Epsilon-greedy over unmasked actions; greedy ties go to the lowest index."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (N_ACTIONS,) or not mask.any():
        raise ValueError("mask must allow at least one of the actions")
    if epsilon > 0 and rng.random() < epsilon:
        index = int(rng.choice(np.flatnonzero(mask)))
    else:
        q = net.forward(state.normalized()).copy()
        q[~mask] = -np.inf
        index = int(np.argmax(q))
    return action_from_index(index)


@dataclass(eq=False)
class Transition:
    state: np.ndarray        # normalized, length 4
    action_index: int
    reward: float
    next_state: np.ndarray   # normalized, length 4
    done: bool


class ReplayBuffer:
    """Bounded FIFO store with seeded uniform sampling (with replacement)."""

    def __init__(self, capacity: int = DEFAULT_BUFFER_CAPACITY, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._store: deque[Transition] = deque(maxlen=capacity)
        self._rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self._store)

    def push(self, transition: Transition) -> None:
        self._store.append(transition)

    def sample(self, batch_size: int) -> list[Transition]:
        if len(self._store) < batch_size:
            raise ValueError(
                f"cannot sample {batch_size} from buffer of {len(self._store)}")
        indices = self._rng.integers(0, len(self._store), size=batch_size)
        return [self._store[int(i)] for i in indices]


def ddqn_update(online: DenseNet, target: DenseNet, batch: list[Transition],
                discount: float, adam: Adam) -> float:
    """One double-Q step on the online net; the target net is left untouched.

    y = r                                              if done
    y = r + discount * Q_target(s', argmax_a Q_online(s', a))  otherwise

    The loss is the MSE on the taken action's Q-value only.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    if online.layer_sizes != target.layer_sizes:
        raise ValueError("online and target architectures differ")

    n = len(batch)
    states = np.stack([t.state for t in batch])
    next_states = np.stack([t.next_state for t in batch])
    actions = np.asarray([t.action_index for t in batch])
    rewards = np.asarray([t.reward for t in batch], dtype=float)
    not_done = np.asarray([0.0 if t.done else 1.0 for t in batch])

    best_next = np.argmax(online.forward(next_states), axis=1)
    q_next = target.forward(next_states)[np.arange(n), best_next]
    targets = rewards + discount * q_next * not_done

    q = online.forward(states)
    diff = q[np.arange(n), actions] - targets
    with np.errstate(over="ignore"):  # overflow is the divergence signal
        loss = float(np.mean(diff * diff))
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite training loss: {loss}")

    grad_out = np.zeros_like(q)
    grad_out[np.arange(n), actions] = 2.0 * diff / n
    grads = online.backward(states, grad_out)
    adam.step(online.parameters, online.flat_grads(grads))
    return loss


@dataclass
class AgentHyperparams:
    layer_sizes: tuple[int, ...] = (STATE_SIZE, 128, 128, N_ACTIONS)
    discount: float = 0.99
    learning_rate: float = 0.001
    tau: float = 0.005
    batch_size: int = DEFAULT_BATCH_SIZE
    buffer_capacity: int = DEFAULT_BUFFER_CAPACITY

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if sizes[0] != STATE_SIZE or sizes[-1] != N_ACTIONS:
            raise ValueError(
                f"net must map {STATE_SIZE} state inputs to {N_ACTIONS} actions")
        self.layer_sizes = sizes


class TradingAgent:
    """Bundles the online/target nets, optimizer, replay memory, and the
    exploration step counter under one seeded namespace."""

    def __init__(self, hyper: AgentHyperparams | None = None, seed: int = 0):
        self.hyper = hyper or AgentHyperparams()
        self.online = DenseNet(self.hyper.layer_sizes, seed=seed)
        self.target = self.online.copy()
        self.adam = Adam(lr=self.hyper.learning_rate)
        self.buffer = ReplayBuffer(self.hyper.buffer_capacity, seed=seed + 1)
        self.explore_rng = np.random.default_rng(seed + 2)
        self.epsilon_step = 0

    def act(self, state: AgentState, mask: np.ndarray, explore: bool) -> Action:
        eps = epsilon_at(self.epsilon_step) if explore else 0.0
        if explore:
            self.epsilon_step += 1
        return select_action(self.online, state, eps, mask, self.explore_rng)

    def observe(self, transition: Transition) -> float | None:
        """Store a transition and, once warm, run one DDQN + soft-target step."""
        self.buffer.push(transition)
        if len(self.buffer) < self.hyper.batch_size:
            return None
        batch = self.buffer.sample(self.hyper.batch_size)
        loss = ddqn_update(self.online, self.target, batch,
                           self.hyper.discount, self.adam)
        soft_update(self.target, self.online, self.hyper.tau)
        return loss

    @staticmethod
    def _checkpoint_paths(prefix: str | Path) -> tuple[Path, Path, Path]:
        prefix = Path(prefix)
        if prefix.suffix == ".json":
            prefix = prefix.parent / prefix.stem
        base = prefix.parent / prefix.name
        return (base.parent / (base.name + ".json"),
                base.parent / (base.name + ".online.npz"),
                base.parent / (base.name + ".target.npz"))

    def save(self, prefix: str | Path) -> None:
        """Write ``<prefix>.json`` plus online/target net checkpoints.

        The replay buffer is intentionally not serialized.
        """
        sidecar_path, online_path, target_path = self._checkpoint_paths(prefix)
        self.online.save(online_path)
        self.target.save(target_path)
        sidecar = {
            "format_version": 1,
            "epsilon_step": self.epsilon_step,
            "buffer_skipped": True,
            "hyperparameters": {
                "layer_sizes": list(self.hyper.layer_sizes),
                "discount": self.hyper.discount,
                "learning_rate": self.hyper.learning_rate,
                "tau": self.hyper.tau,
                "batch_size": self.hyper.batch_size,
                "buffer_capacity": self.hyper.buffer_capacity,
            },
            "action_table": list(ACTION_DELTAS),
        }
        with sidecar_path.open("w") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, prefix: str | Path, seed: int = 0) -> "TradingAgent":
        sidecar_path, online_path, target_path = cls._checkpoint_paths(prefix)
        with sidecar_path.open() as fh:
            sidecar = json.load(fh)
        if sidecar.get("format_version") != 1:
            raise ValueError("unsupported agent checkpoint version")
        table = sidecar.get("action_table")
        if table != list(ACTION_DELTAS):
            raise ValueError(f"checkpoint action table {table} does not match")
        hp = sidecar["hyperparameters"]
        hyper = AgentHyperparams(
            layer_sizes=tuple(hp["layer_sizes"]),
            discount=hp["discount"],
            learning_rate=hp["learning_rate"],
            tau=hp["tau"],
            batch_size=hp["batch_size"],
            buffer_capacity=hp["buffer_capacity"],
        )
        agent = cls(hyper, seed=seed)
        online = DenseNet.load(online_path)
        target = DenseNet.load(target_path)
        if online.layer_sizes != list(hyper.layer_sizes):
            raise ValueError("checkpoint architecture mismatch")
        agent.online = online
        agent.target = target
        agent.epsilon_step = int(sidecar["epsilon_step"])
        return agent
