"""Discrete-time marketplace orchestrator.

Each step: quote prices from the counterparty's demand, translate the
agent's action into a bid or ask, match and settle instantaneously against
the always-accepting (capacity-limited) counterparty, observe actual
demand, score deficit/surplus/reward, and account profit for both the
trading policy and the static 24-SRU baseline.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import asdict, dataclass, fields
from datetime import datetime
from pathlib import Path

import numpy as np

from . import forecast as forecast_mod
from . import traffic as traffic_mod
from .agent import (
    Action,
    AgentHyperparams,
    AgentState,
    HOLD_INDEX,
    RewardParams,
    STATE_SIZE,
    TradingAgent,
    Transition,
    action_from_index,
    allowed_action_mask,
    build_state,
    compute_reward,
    select_action,
)
from .forecast import Forecaster, ForecasterConfig
from .market import Ledger, Order, Region, match_epoch, quote_for
from .traffic import SECONDS_PER_DAY, SynthSpec, TrafficSeries

GRANULARITY_SECONDS = {"hour": 3600, "minute": 60}

# Default order attributes for the two-operator experiment; matching is
# keyed on them but they never differ between the paired orders.
DEFAULT_FREQ_RANGE = (3.55e9, 3.70e9)
DEFAULT_REGION = Region(x=(0.0, 1000.0), y=(0.0, 1000.0), z=(0.0, 100.0))

# Traded quantities are snapped down onto this grid so that every holdings
# update is exact in binary floating point and SRU conservation holds
# bit-for-bit over arbitrarily long runs.
QTY_GRID = 2.0 ** -20

# Seed offsets keep the component rng streams distinct under one run seed.
_SEED_COUNTERPARTY_DATA = 7919
_SEED_AGENT = 101
_SEED_FORECASTER = 104
_SEED_RESAMPLE_TARGET = 105
_SEED_RESAMPLE_COUNTERPARTY = 106


class SimulationError(ValueError):
    """Raised for configuration or episode-stepping contract violations."""


def epoch_tag_for(granularity_seconds: float) -> str:
    """Market-epoch tag for a step size: sub-10 ms is real time, up to one
    second near-real-time, anything slower non-real-time."""
    if granularity_seconds <= 0.01:
        return "rt"
    if granularity_seconds <= 1.0:
        return "near_rt"
    return "non_rt"


@dataclass
class SimConfig:
    """Flat, JSON-serializable configuration for a full train/eval run."""

    threshold: float = 24.0
    train_days: int = 15
    total_days: int = 31
    granularity: int = 3600
    episodes: int = 60
    seed: int = 0
    discount: float = 0.99
    batch_size: int = 64
    buffer_capacity: int = 100_000
    tau: float = 0.005
    learning_rate: float = 0.001
    ma_window: int = 24
    hidden_size: int = 128
    reward_alpha: float = 8.0
    reward_beta: float = 2.0
    reward_gamma_cost: float = 0.5
    transaction_cost: float = 0.05
    service_revenue_rate: float = 0.3
    price_coefficient: float = 0.1
    alloc_min: float = 0.0
    alloc_max: float | None = None  # None: 2 * threshold
    quote_driver: str = "counterparty"
    minute_noise_fraction: float = 0.02
    counterparty_initial_alloc: float | None = None  # None: threshold
    forecaster_kind: str = "seasonal_naive"
    lookback: int = 72
    season_period: int | None = None
    mlp_hidden: int = 32
    train_fraction: float = 0.7
    mlp_epochs: int = 60
    demand_mean: float = 27.0
    demand_amplitude: float = 4.0
    demand_noise: float = 0.6
    demand_trend_per_day: float = -0.2
    counterparty_mean: float = 21.0
    counterparty_amplitude: float = -4.0  # negative: half-period phase shift
    counterparty_noise: float = 0.6
    counterparty_trend_per_day: float = 0.2
    traffic_csv: str | None = None
    counterparty_csv: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.threshold <= 0:
            raise SimulationError("threshold must be positive")
        if self.train_days < 1 or self.train_days >= self.total_days:
            raise SimulationError("train_days must be in [1, total_days)")
        if self.granularity <= 0 or SECONDS_PER_DAY % self.granularity != 0:
            raise SimulationError("granularity must divide one day")
        if self.episodes < 0:
            raise SimulationError("episodes must be non-negative")
        if self.seed < 0:
            raise SimulationError("seed must be non-negative")
        if not 0.0 <= self.discount <= 1.0:
            raise SimulationError("discount must be in [0, 1]")
        if self.batch_size < 1:
            raise SimulationError("batch_size must be positive")
        if self.ma_window < 1:
            raise SimulationError("ma_window must be positive")
        if self.alloc_max is not None and self.alloc_max <= self.alloc_min:
            raise SimulationError("alloc_max must exceed alloc_min")

    @property
    def resolved_alloc_max(self) -> float:
        return self.alloc_max if self.alloc_max is not None else 2.0 * self.threshold

    @property
    def resolved_counterparty_alloc(self) -> float:
        if self.counterparty_initial_alloc is not None:
            return self.counterparty_initial_alloc
        return self.threshold

    def steps_per_day(self) -> int:
        return SECONDS_PER_DAY // self.granularity

    def reward_params(self) -> RewardParams:
        return RewardParams(
            alpha=self.reward_alpha,
            beta=self.reward_beta,
            gamma_cost=self.reward_gamma_cost,
            transaction_cost=self.transaction_cost,
        )

    def forecaster_config(self) -> ForecasterConfig:
        return ForecasterConfig(
            kind=self.forecaster_kind,
            lookback=self.lookback,
            season_period=self.season_period,
            mlp_hidden=self.mlp_hidden,
            train_fraction=self.train_fraction,
            mlp_epochs=self.mlp_epochs,
            seed=self.seed + _SEED_FORECASTER,
        )

    def agent_hyperparams(self) -> AgentHyperparams:
        return AgentHyperparams(
            layer_sizes=(STATE_SIZE, self.hidden_size, self.hidden_size, 5),
            discount=self.discount,
            learning_rate=self.learning_rate,
            tau=self.tau,
            batch_size=self.batch_size,
            buffer_capacity=self.buffer_capacity,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise SimulationError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)


@dataclass
class MarketEpochResult:
    """Per-step record of the market loop for one operator."""

    step: int
    timestamp: datetime
    demand: float
    forecast: float
    alloc_before: float
    alloc_after: float
    action_delta: float  # executed (possibly partially filled) SRU delta
    buy_price: float
    sell_price: float
    deficit: float
    surplus: float
    reward: float
    profit_dynamic: float
    profit_static: float


def profit_step(demand: float, allocation: float, bought_qty: float,
                sold_qty: float, buy_price: float, sell_price: float,
                cfg: SimConfig) -> tuple[float, float]:
    """Per-step profit of the trading policy and of the static baseline.

    dynamic = revenue_rate * min(demand, allocation)
              - buy_price * bought + sell_price * sold - transaction costs
    static  = revenue_rate * min(demand, threshold)
    """
    if bought_qty < 0 or sold_qty < 0:
        raise SimulationError("trade quantities must be non-negative")
    tx = cfg.transaction_cost if (bought_qty > 0 or sold_qty > 0) else 0.0
    dynamic = (cfg.service_revenue_rate * min(demand, allocation)
               - buy_price * bought_qty + sell_price * sold_qty - tx)
    static = cfg.service_revenue_rate * min(demand, cfg.threshold)
    return dynamic, static


def _snap_quantity(qty: float) -> float:
    return np.floor(qty / QTY_GRID) * QTY_GRID


class SpectrumMarketEnv:
    """Steps one operator through the market over [start, end) of a series.

    The ledger is the single source of truth for allocations; episode
    resets restore the initial holdings.
    """

    def __init__(self, cfg: SimConfig, target: TrafficSeries,
                 counterparty: TrafficSeries, forecaster: Forecaster,
                 start: int, end: int):
        if len(target) != len(counterparty):
            raise SimulationError("target and counterparty series lengths differ")
        if target.granularity != counterparty.granularity:
            raise SimulationError("series granularities differ")
        if not forecaster.window_size <= start < end <= len(target):
            raise SimulationError(
                f"invalid span [{start}, {end}) for history {forecaster.window_size} "
                f"and length {len(target)}")
        self.cfg = cfg
        self.target = target
        self.counterparty = counterparty
        self.forecaster = forecaster
        self.start = start
        self.end = end
        self.epoch_tag = epoch_tag_for(target.granularity)
        self.ledger: Ledger | None = None
        self.reset()

    def reset(self) -> AgentState:
        cfg = self.cfg
        self.t = self.start
        self.ledger = Ledger({
            self.target.operator_id: cfg.threshold,
            self.counterparty.operator_id: cfg.resolved_counterparty_alloc,
        })
        n = cfg.ma_window
        demand_hist = self.target.values[max(0, self.start - n):self.start]
        self._demand_window = deque(demand_hist, maxlen=n)
        self._err_window = deque(maxlen=n)
        first_err_index = max(self.forecaster.window_size, self.start - n)
        for t in range(first_err_index, self.start):
            predicted = self._predict(t)
            self._err_window.append(abs(predicted - float(self.target.values[t])))
        if not self._err_window:
            self._err_window.append(0.0)
        self._forecast = self._predict(self.t)
        return self.state()

    def _predict(self, t: int) -> float:
        w = self.forecaster.window_size
        return self.forecaster.predict_next(self.target.values[t - w:t])

    @property
    def allocation(self) -> float:
        return float(self.ledger.holdings[self.target.operator_id])

    @property
    def counterparty_allocation(self) -> float:
        return float(self.ledger.holdings[self.counterparty.operator_id])

    @property
    def done(self) -> bool:
        return self.t >= self.end

    def state(self) -> AgentState:
        return build_state(
            allocation=self.allocation,
            forecast=self._forecast,
            err_window=self._err_window,
            demand_window=self._demand_window,
            n=self.cfg.ma_window,
            threshold=self.cfg.threshold,
        )

    def action_mask(self) -> np.ndarray:
        return allowed_action_mask(
            self.allocation, self.cfg.threshold,
            self.cfg.alloc_min, self.cfg.resolved_alloc_max)

    def _execute_trade(self, delta: float, quote: float) -> tuple[float, float]:
        """Post the agent's order against the counterparty's capacity-limited
        counter-order; returns (bought, sold) executed quantities."""
        cfg = self.cfg
        t = self.t
        cp_demand = float(self.counterparty.values[t])
        cp_alloc = self.counterparty_allocation
        ts = self.target.timestamp(t).timestamp()
        window = (ts, ts + self.target.granularity)
        target_op = self.target.operator_id
        cp_op = self.counterparty.operator_id

        if delta > 0:
            capacity = max(0.0, cp_alloc - cp_demand)
            qty = _snap_quantity(min(delta, capacity))
            if qty <= 0:
                return 0.0, 0.0
            bid = Order(f"{target_op}-{t}-bid", target_op, "bid", delta, quote,
                        DEFAULT_FREQ_RANGE, DEFAULT_REGION, window, self.epoch_tag)
            ask = Order(f"{cp_op}-{t}-ask", cp_op, "ask", qty, quote,
                        DEFAULT_FREQ_RANGE, DEFAULT_REGION, window, self.epoch_tag)
            matches = match_epoch([bid], [ask], timestamp=ts)
            self.ledger.settle(matches, {bid.order_id: bid, ask.order_id: ask},
                               cfg.transaction_cost, initiator=target_op)
            return float(sum(m.quantity for m in matches)), 0.0

        capacity = max(0.0, cp_demand - cp_alloc)
        qty = _snap_quantity(min(-delta, capacity))
        if qty <= 0:
            return 0.0, 0.0
        ask = Order(f"{target_op}-{t}-ask", target_op, "ask", -delta, quote,
                    DEFAULT_FREQ_RANGE, DEFAULT_REGION, window, self.epoch_tag)
        bid = Order(f"{cp_op}-{t}-bid", cp_op, "bid", qty, quote,
                    DEFAULT_FREQ_RANGE, DEFAULT_REGION, window, self.epoch_tag)
        matches = match_epoch([bid], [ask], timestamp=ts)
        self.ledger.settle(matches, {bid.order_id: bid, ask.order_id: ask},
                           cfg.transaction_cost, initiator=target_op)
        return 0.0, float(sum(m.quantity for m in matches))

    def step(self, action: Action) -> tuple[AgentState, float, MarketEpochResult]:
        if self.done:
            raise SimulationError("cannot step a finished environment")
        if not self.action_mask()[action.index]:
            raise SimulationError(
                f"action {action.delta_srus:+g} is masked at allocation "
                f"{self.allocation}")
        cfg = self.cfg
        t = self.t
        alloc_before = self.allocation
        cp_demand = float(self.counterparty.values[t])
        demand = float(self.target.values[t])

        side = "bid" if action.delta_srus > 0 else "ask"
        quote = quote_for(side, cp_demand, demand, cfg.price_coefficient,
                          cfg.quote_driver)

        bought = sold = 0.0
        if action.delta_srus != 0.0:
            bought, sold = self._execute_trade(action.delta_srus, quote)

        alloc_after = self.allocation
        deficit = max(0.0, demand - alloc_after)
        surplus = max(0.0, alloc_after - demand)
        monetary_cost = quote * bought - quote * sold
        transacted = bought > 0 or sold > 0
        reward = compute_reward(deficit, surplus, monetary_cost, transacted,
                                cfg.reward_params())
        dynamic, static = profit_step(demand, alloc_after, bought, sold,
                                      quote, quote, cfg)

        result = MarketEpochResult(
            step=t,
            timestamp=self.target.timestamp(t),
            demand=demand,
            forecast=self._forecast,
            alloc_before=alloc_before,
            alloc_after=alloc_after,
            action_delta=bought - sold,
            buy_price=quote,
            sell_price=quote,
            deficit=deficit,
            surplus=surplus,
            reward=reward,
            profit_dynamic=dynamic,
            profit_static=static,
        )

        self._err_window.append(abs(self._forecast - demand))
        self._demand_window.append(demand)
        self.t += 1
        if not self.done:
            self._forecast = self._predict(self.t)
        return self.state(), reward, result


def default_dataset(cfg: SimConfig) -> tuple[TrafficSeries, TrafficSeries]:
    """Target and counterparty demand series for a run.

    CSV paths in the config take precedence; otherwise two synthetic series
    are generated with a shared daily cycle, opposite phase and trend, and
    independent noise, so that one operator's surplus phase lines up with
    the other's deficit phase.
    """
    steps_per_day = cfg.steps_per_day()
    length = cfg.total_days * steps_per_day
    if cfg.traffic_csv:
        target = traffic_mod.load_csv(cfg.traffic_csv, cfg.granularity,
                                      operator_id="lte")
    else:
        target = traffic_mod.generate(SynthSpec(
            mean_level=cfg.demand_mean,
            daily_amplitude=cfg.demand_amplitude,
            period=steps_per_day,
            noise_sigma=cfg.demand_noise,
            trend_per_day=cfg.demand_trend_per_day,
            seed=cfg.seed,
            length=length,
        ), operator_id="lte")
    if cfg.counterparty_csv:
        counterparty = traffic_mod.load_csv(cfg.counterparty_csv, cfg.granularity,
                                            operator_id="nr")
    else:
        counterparty = traffic_mod.generate(SynthSpec(
            mean_level=cfg.counterparty_mean,
            daily_amplitude=cfg.counterparty_amplitude,
            period=steps_per_day,
            noise_sigma=cfg.counterparty_noise,
            trend_per_day=cfg.counterparty_trend_per_day,
            seed=cfg.seed + _SEED_COUNTERPARTY_DATA,
            length=length,
        ), operator_id="nr")
    if len(target) != len(counterparty):
        raise SimulationError("target and counterparty series lengths differ")
    return target, counterparty


def _training_span(cfg: SimConfig, forecaster: Forecaster,
                   series_len: int) -> tuple[int, int]:
    train_end = cfg.train_days * cfg.steps_per_day()
    if train_end > series_len:
        raise SimulationError("series shorter than the training span")
    start = max(forecaster.window_size, cfg.ma_window)
    if start >= train_end:
        raise SimulationError("training span too short for the lookback window")
    return start, train_end


@dataclass
class TrainOutput:
    agent: TradingAgent
    episode_rewards: list[float]


def train(cfg: SimConfig,
          dataset: tuple[TrafficSeries, TrafficSeries] | None = None) -> TrainOutput:
    """Run `episodes` passes over the training span and return the agent.

    Each episode resets the allocation to the threshold. Epsilon decays per
    environment step across episodes; the agent updates (and softly tracks
    the target net) on every step once the replay buffer holds a batch.
    Deterministic per config seed.
    """
    target, counterparty = dataset or default_dataset(cfg)
    fc = forecast_mod.fit(
        cfg.forecaster_config(),
        target.slice(0, cfg.train_days * cfg.steps_per_day()))
    start, train_end = _training_span(cfg, fc, len(target))
    env = SpectrumMarketEnv(cfg, target, counterparty, fc, start, train_end)
    agent = TradingAgent(cfg.agent_hyperparams(), seed=cfg.seed + _SEED_AGENT)

    episode_rewards: list[float] = []
    for _ in range(cfg.episodes):
        state = env.reset()
        total = 0.0
        while not env.done:
            mask = env.action_mask()
            action = agent.act(state, mask, explore=True)
            next_state, reward, _ = env.step(action)
            agent.observe(Transition(
                state=state.normalized(),
                action_index=action.index,
                reward=reward,
                next_state=next_state.normalized(),
                done=env.done,
            ))
            state = next_state
            total += reward
        episode_rewards.append(total)
    return TrainOutput(agent=agent, episode_rewards=episode_rewards)


@dataclass
class EvalOutput:
    results: list[MarketEpochResult]
    summary: dict
    ledger: Ledger


def _resample_for_eval(cfg: SimConfig, series: TrafficSeries,
                       gran_seconds: int, seed: int) -> TrafficSeries:
    if series.granularity == gran_seconds:
        return series
    noise = cfg.minute_noise_fraction * float(np.mean(series.values))
    return traffic_mod.resample(series, gran_seconds, noise_sigma=noise, seed=seed)


def evaluate(agent: TradingAgent | None, cfg: SimConfig,
             granularity: str = "hour",
             dataset: tuple[TrafficSeries, TrafficSeries] | None = None,
             policy: str = "agent") -> EvalOutput:
    """Greedy-policy evaluation over the span after the training days.

    ``granularity`` is "hour" or "minute"; minute-level series are derived
    by seeded resampling. ``policy`` selects the trained agent, the
    always-hold baseline, or any callable ``(state, mask) -> Action``.
    """
    if granularity not in GRANULARITY_SECONDS:
        raise SimulationError(f"granularity must be one of {sorted(GRANULARITY_SECONDS)}")
    if policy == "agent" and agent is None:
        raise SimulationError("policy 'agent' requires a trained agent")
    gran_seconds = GRANULARITY_SECONDS[granularity]

    target, counterparty = dataset or default_dataset(cfg)
    target = _resample_for_eval(cfg, target, gran_seconds,
                                cfg.seed + _SEED_RESAMPLE_TARGET)
    counterparty = _resample_for_eval(cfg, counterparty, gran_seconds,
                                      cfg.seed + _SEED_RESAMPLE_COUNTERPARTY)

    steps_per_day = SECONDS_PER_DAY // gran_seconds
    eval_start = cfg.train_days * steps_per_day
    eval_end = cfg.total_days * steps_per_day
    if eval_end > len(target):
        eval_end = len(target)
    if eval_start >= eval_end:
        raise SimulationError("evaluation span is empty or overlaps training days")

    fc_config = cfg.forecaster_config()
    fc = forecast_mod.fit(fc_config, target.slice(0, eval_start))
    env = SpectrumMarketEnv(cfg, target, counterparty, fc, eval_start, eval_end)

    if policy == "agent":
        def pick(state, mask):
            return select_action(agent.online, state, 0.0, mask, agent.explore_rng)
    elif policy == "hold":
        def pick(state, mask):
            return action_from_index(HOLD_INDEX)
    elif callable(policy):
        pick = policy
    else:
        raise SimulationError(f"unknown policy {policy!r}")

    results: list[MarketEpochResult] = []
    cumulative_dynamic = 0.0
    cumulative_static = 0.0
    total_reward = 0.0
    state = env.state()
    while not env.done:
        action = pick(state, env.action_mask())
        state, reward, result = env.step(action)
        results.append(result)
        cumulative_dynamic += result.profit_dynamic
        cumulative_static += result.profit_static
        total_reward += reward

    ratio = cumulative_dynamic / cumulative_static if cumulative_static != 0 \
        else float("nan")
    summary = {
        "granularity": granularity,
        "granularity_seconds": gran_seconds,
        "policy": policy if isinstance(policy, str) else "custom",
        "steps": len(results),
        "eval_start_step": eval_start,
        "eval_end_step": eval_end,
        "cumulative_dynamic_profit": cumulative_dynamic,
        "cumulative_static_profit": cumulative_static,
        "normalized_profit_ratio": ratio,
        "total_reward": total_reward,
    }
    return EvalOutput(results=results, summary=summary, ledger=env.ledger)


RESULTS_CSV_COLUMNS = [
    "step", "timestamp", "demand", "forecast", "alloc_before", "action_delta",
    "price", "deficit", "surplus", "reward", "profit_dyn", "profit_static",
]


def write_results_csv(results: list[MarketEpochResult], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_CSV_COLUMNS)
        for r in results:
            writer.writerow([
                r.step,
                r.timestamp.isoformat(),
                repr(float(r.demand)),
                repr(float(r.forecast)),
                repr(float(r.alloc_before)),
                repr(float(r.action_delta)),
                repr(float(r.buy_price)),
                repr(float(r.deficit)),
                repr(float(r.surplus)),
                repr(float(r.reward)),
                repr(float(r.profit_dynamic)),
                repr(float(r.profit_static)),
            ])


def write_summary_json(summary: dict, cfg: SimConfig, path: str | Path) -> None:
    """Summary metrics plus a full config echo, enough to reproduce the run."""
    payload = {"summary": summary, "config": cfg.to_dict()}
    with Path(path).open("w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_trace_csv(episode_rewards: list[float], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "total_reward"])
        for i, r in enumerate(episode_rewards):
            writer.writerow([i, repr(float(r))])
