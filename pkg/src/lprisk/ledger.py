"""Per-asset pool accounting replayed from lending event logs.

Amounts are :class:`~decimal.Decimal` and every arithmetic step runs in a
context that traps ``Inexact``, so the accounting identities hold exactly or
the replay fails loudly.
"""

from __future__ import annotations

import decimal
import logging
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from decimal import Decimal
from enum import Enum
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

ZERO = Decimal(0)

#: Arithmetic context for all ledger sums. Any rounding raises.
EXACT = decimal.Context(
    prec=200,
    traps=[decimal.Inexact, decimal.InvalidOperation, decimal.DivisionByZero, decimal.Overflow],
)


#: Context for ratios of exact amounts before conversion to float.
RATIO = decimal.Context(prec=60)


class EventKind(str, Enum):
    DEPOSIT = "deposit"
    WITHDRAW = "withdraw"
    BORROW = "borrow"
    REPAY = "repay"
    LIQUIDATION = "liquidation"

    @classmethod
    def _missing_(cls, value):
        # accept "Deposit", "DEPOSIT", ...
        if isinstance(value, str) and value.lower() != value:
            return cls.__members__.get(value.upper())
        return None


class LedgerError(ValueError):
    """A log violates the pool accounting rules (strict mode) or ordering."""

    def __init__(self, message: str, index: int | None = None, line: int | None = None):
        where = []
        if index is not None:
            where.append(f"event {index}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.index = index
        self.line = line


@dataclass(frozen=True)
class EventRecord:
    timestamp: datetime
    event_kind: EventKind
    asset: str
    actor: str
    amount: Decimal
    price_usd: Decimal
    # source line in the ingested file, if any; not part of identity
    line: int | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.timestamp.tzinfo is None:
            raise ValueError("timestamp must be timezone-aware (UTC)")
        if not isinstance(self.event_kind, EventKind):
            object.__setattr__(self, "event_kind", EventKind(self.event_kind))
        if self.amount < 0:
            raise ValueError(f"negative amount {self.amount}")
        if self.price_usd < 0:
            raise ValueError(f"negative price {self.price_usd}")

    @property
    def day(self) -> date:
        return self.timestamp.astimezone(timezone.utc).date()


@dataclass
class PoolState:
    """Ledger for one asset pool.

    ``supply_by_user`` doubles as the claim balance of each depositor.
    ``debt_by_user`` holds borrower demand net of the borrower's own repays;
    liquidator repayments are tracked only in aggregate.
    """

    asset: str
    supply_by_user: dict[str, Decimal] = field(default_factory=dict)
    debt_by_user: dict[str, Decimal] = field(default_factory=dict)
    liquidator_repaid_total: Decimal = ZERO
    outstanding_deposit: Decimal = ZERO
    outstanding_debt: Decimal = ZERO

    def copy(self) -> "PoolState":
        return PoolState(
            asset=self.asset,
            supply_by_user=dict(self.supply_by_user),
            debt_by_user=dict(self.debt_by_user),
            liquidator_repaid_total=self.liquidator_repaid_total,
            outstanding_deposit=self.outstanding_deposit,
            outstanding_debt=self.outstanding_debt,
        )

    @property
    def liquidity(self) -> Decimal:
        return EXACT.subtract(self.outstanding_deposit, self.outstanding_debt)


@dataclass(frozen=True)
class ReplayWarning:
    index: int | None
    line: int | None
    message: str


def _apply(
    state: PoolState,
    ev: EventRecord,
    strict: bool,
    warnings: list[ReplayWarning] | None,
    index: int | None = None,
) -> None:
    if ev.asset != state.asset:
        raise LedgerError(f"event asset {ev.asset!r} does not match pool {state.asset!r}", index, ev.line)

    def clamp(msg: str) -> None:
        if strict:
            raise LedgerError(msg, index, ev.line)
        log.warning("clamped: %s (event %s)", msg, index)
        if warnings is not None:
            warnings.append(ReplayWarning(index, ev.line, msg))

    amount = ev.amount
    kind = ev.event_kind
    add, sub = EXACT.add, EXACT.subtract

    if kind is EventKind.DEPOSIT:
        state.supply_by_user[ev.actor] = add(state.supply_by_user.get(ev.actor, ZERO), amount)
        state.outstanding_deposit = add(state.outstanding_deposit, amount)
    elif kind is EventKind.WITHDRAW:
        held = state.supply_by_user.get(ev.actor, ZERO)
        if amount > held:
            clamp(f"withdraw {amount} exceeds supply {held} of {ev.actor} in {state.asset}")
            amount = held
        state.supply_by_user[ev.actor] = sub(held, amount)
        state.outstanding_deposit = sub(state.outstanding_deposit, amount)
    elif kind is EventKind.BORROW:
        state.debt_by_user[ev.actor] = add(state.debt_by_user.get(ev.actor, ZERO), amount)
        state.outstanding_debt = add(state.outstanding_debt, amount)
    elif kind is EventKind.REPAY:
        owed = state.debt_by_user.get(ev.actor, ZERO)
        if amount > owed:
            clamp(f"repay {amount} exceeds debt {owed} of {ev.actor} in {state.asset}")
            amount = owed
        if amount > state.outstanding_debt:
            clamp(f"repay {amount} drives outstanding debt of {state.asset} below zero")
            amount = max(state.outstanding_debt, ZERO)
        state.debt_by_user[ev.actor] = sub(owed, amount)
        state.outstanding_debt = sub(state.outstanding_debt, amount)
    elif kind is EventKind.LIQUIDATION:
        if amount > state.outstanding_debt:
            clamp(f"liquidation {amount} exceeds outstanding debt {state.outstanding_debt} in {state.asset}")
            amount = max(state.outstanding_debt, ZERO)
        state.liquidator_repaid_total = add(state.liquidator_repaid_total, amount)
        state.outstanding_debt = sub(state.outstanding_debt, amount)
    else:  # pragma: no cover
        raise LedgerError(f"unknown event kind {kind!r}", index, ev.line)


def apply_event(
    state: PoolState,
    ev: EventRecord,
    *,
    strict: bool = False,
    warnings: list[ReplayWarning] | None = None,
) -> PoolState:
    """Return the pool state after ``ev``; ``state`` itself is left untouched.

    In strict mode an overdraft (withdraw above supply, repay above debt,
    liquidation beyond outstanding debt) raises :class:`LedgerError`. In
    lenient mode the amount is clamped and a :class:`ReplayWarning` is
    appended to ``warnings``.
    """
    new = state.copy()
    _apply(new, ev, strict, warnings)
    return new


def user_supply(state: PoolState, actor: str) -> Decimal:
    """Net deposits of ``actor`` in this pool, 0 if never seen."""
    return state.supply_by_user.get(actor, ZERO)


def user_demand(state: PoolState, actor: str) -> Decimal:
    """Net borrows of ``actor`` (borrows minus own repays), 0 if never seen."""
    return state.debt_by_user.get(actor, ZERO)


@dataclass(frozen=True)
class DailyAssetSnapshot:
    """End-of-day marks for one asset pool."""

    asset: str
    date: date
    outstanding_deposit_native: Decimal
    outstanding_debt_native: Decimal
    close_price_usd: Decimal | None

    @property
    def liquidity_native(self) -> Decimal:
        return EXACT.subtract(self.outstanding_deposit_native, self.outstanding_debt_native)

    @property
    def utilization(self) -> float | None:
        if self.outstanding_deposit_native <= 0:
            return None
        return float(RATIO.divide(self.outstanding_debt_native, self.outstanding_deposit_native))


@dataclass
class ReplayResult:
    pools: dict[str, PoolState]
    snapshots: list[DailyAssetSnapshot]
    warnings: list[ReplayWarning]


def check_sorted(events: Sequence[EventRecord]) -> None:
    for i in range(1, len(events)):
        if events[i].timestamp < events[i - 1].timestamp:
            raise LedgerError(
                f"events out of order: {events[i].timestamp.isoformat()} "
                f"precedes {events[i - 1].timestamp.isoformat()}",
                i,
                events[i].line,
            )


def replay(
    events: Iterable[EventRecord],
    *,
    strict: bool = False,
    pools: dict[str, PoolState] | None = None,
) -> ReplayResult:
    """Replay a timestamp-ordered log into one :class:`PoolState` per asset.

    Emits one end-of-day snapshot per asset for every UTC day on which that
    asset had an event. Pass ``pools`` from a previous result to continue a
    replay (they are copied, not mutated).
    """
    events = list(events)
    check_sorted(events)
    state = {a: p.copy() for a, p in (pools or {}).items()}
    warnings: list[ReplayWarning] = []
    snapshots: list[DailyAssetSnapshot] = []

    current_day: date | None = None
    touched: dict[str, Decimal] = {}  # asset -> last price seen today

    def flush() -> None:
        for asset in sorted(touched):
            p = state[asset]
            snapshots.append(
                DailyAssetSnapshot(asset, current_day, p.outstanding_deposit, p.outstanding_debt, touched[asset])
            )
        touched.clear()

    for i, ev in enumerate(events):
        day = ev.day
        if day != current_day:
            if current_day is not None:
                flush()
            current_day = day
        pool = state.get(ev.asset)
        if pool is None:
            pool = state[ev.asset] = PoolState(ev.asset)
        _apply(pool, ev, strict, warnings, i)
        touched[ev.asset] = ev.price_usd
    if current_day is not None:
        flush()
    return ReplayResult(state, snapshots, warnings)
