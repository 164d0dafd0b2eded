"""Agent-based market with wealth-based strategy payoffs."""

from .core import (
    AgentState,
    Decision,
    Market,
    MarketState,
    ModelParams,
    RunRecord,
    SimulationFault,
    StepRecord,
    advance,
    clamp_action,
    price_update,
    settle_agent,
    simulate,
    transaction_price,
)
from .market_maker import ClearingMode, MarketMakerState, SpreadKind, SpreadPolicy
from .strategies import PayoffScheme, Strategy, StrategyScore, ZeroStrategy

__version__ = "0.1.0"
