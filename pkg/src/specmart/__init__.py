"""specmart: a deterministic multi-operator spectrum marketplace simulator.

Operators forecast SRU demand, quote prices off traffic, and trade through
a matching broker; the target operator's buy/sell/hold policy is a double
deep Q-network. See the CLI (``specmart --help``) for the full pipeline.
"""

from .agent import (
    ACTION_DELTAS,
    Action,
    AgentState,
    ReplayBuffer,
    RewardParams,
    TradingAgent,
    Transition,
    build_state,
    compute_reward,
    ddqn_update,
    epsilon_at,
    select_action,
)
from .forecast import ForecasterConfig, backtest, fit, predict_next
from .market import (
    Ledger,
    Match,
    Order,
    Region,
    compatible,
    match_epoch,
    price_of,
    quote_for,
)
from .neural import Adam, DenseNet, mse_loss, soft_update
from .sim import (
    MarketEpochResult,
    SimConfig,
    SpectrumMarketEnv,
    default_dataset,
    evaluate,
    profit_step,
    train,
)
from .traffic import SynthSpec, TrafficSeries, generate, load_csv, resample

__version__ = "0.1.0"
