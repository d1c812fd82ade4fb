"""Liquidity-risk analytics for pool-based lending protocols."""

__version__ = "0.1.0"

from .ledger import EventKind, EventRecord, LedgerError, PoolState, apply_event, replay, user_demand, user_supply
from .metrics import DailyPanelRow, build_daily_panel, descriptive_stats, protocol_liquidity_usd, protocol_utilization
from .econometrics import RegressionResult, RegressionSpec, ols_fit, preset_suites, run_model
from .simgen import ScenarioConfig, generate, inject_hacks

__all__ = [
    "EventKind",
    "EventRecord",
    "LedgerError",
    "PoolState",
    "apply_event",
    "replay",
    "user_supply",
    "user_demand",
    "DailyPanelRow",
    "build_daily_panel",
    "descriptive_stats",
    "protocol_liquidity_usd",
    "protocol_utilization",
    "RegressionResult",
    "RegressionSpec",
    "ols_fit",
    "preset_suites",
    "run_model",
    "ScenarioConfig",
    "generate",
    "inject_hacks",
]
