"""Daily liquidity-risk measurements built on top of the ledger replay.

The four headline series are available liquidity (USD), value-weighted
utilization, and the repeat deposit / repeat loan ratios. Each
:class:`DailyPanelRow` also carries the per-day loan and deposit catalog
(counts, volumes, new vs repeat splits, outstanding balances).
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, fields
from datetime import date, timedelta
from decimal import Decimal
from enum import Enum
from typing import Collection, Iterable, Sequence

import numpy as np

from .ledger import (
    EXACT,
    RATIO,
    ZERO,
    DailyAssetSnapshot,
    EventKind,
    EventRecord,
    PoolState,
    _apply,
    check_sorted,
)

log = logging.getLogger(__name__)

__all__ = [
    "DailyAssetSnapshot",
    "DailyPanelRow",
    "DescriptiveStats",
    "FirstSeenIndex",
    "Role",
    "ActorStatus",
    "protocol_liquidity_usd",
    "protocol_utilization",
    "classify_actor",
    "repeat_ratios",
    "build_daily_panel",
    "descriptive_stats",
]


class Role(str, Enum):
    BORROWER = "borrower"
    DEPOSITOR = "depositor"


class ActorStatus(str, Enum):
    NEW = "new"
    REPEAT = "repeat"


_INITIATING = {EventKind.BORROW: Role.BORROWER, EventKind.DEPOSIT: Role.DEPOSITOR}


def _priced(snapshots: Iterable[DailyAssetSnapshot]) -> list[DailyAssetSnapshot]:
    out = []
    seen = set()
    for s in snapshots:
        if s.asset in seen:
            raise ValueError(f"asset {s.asset} appears twice for one day")
        seen.add(s.asset)
        if s.close_price_usd is None:
            log.warning("asset %s has no price on %s; skipped", s.asset, s.date)
            continue
        out.append(s)
    return out


def protocol_liquidity_usd(snapshots: Iterable[DailyAssetSnapshot]) -> Decimal:
    """Sum over assets of (deposits - debt) x close price."""
    total = ZERO
    for s in _priced(snapshots):
        total = EXACT.add(total, EXACT.multiply(s.liquidity_native, s.close_price_usd))
    return total


def _usd_totals(snapshots: Iterable[DailyAssetSnapshot]) -> tuple[Decimal, Decimal]:
    debt = dep = ZERO
    for s in _priced(snapshots):
        debt = EXACT.add(debt, EXACT.multiply(s.outstanding_debt_native, s.close_price_usd))
        dep = EXACT.add(dep, EXACT.multiply(s.outstanding_deposit_native, s.close_price_usd))
    return debt, dep


def _ratio(num: Decimal, den: Decimal) -> float | None:
    if den <= 0:
        return None
    return float(RATIO.divide(num, den)) if num else 0.0


def protocol_utilization(snapshots: Iterable[DailyAssetSnapshot]) -> float | None:
    """USD-weighted utilization: total debt value over total deposit value.

    Returns ``None`` when the USD value of deposits is zero.
    """
    debt, dep = _usd_totals(snapshots)
    return _ratio(debt, dep)


class FirstSeenIndex:
    """First UTC day each actor performed a role's initiating action.

    Borrow events initiate the borrower role, deposit events the depositor
    role; the two roles are tracked independently.
    """

    def __init__(self):
        self._first: dict[tuple[Role, str], date] = {}

    @classmethod
    def from_events(cls, events: Iterable[EventRecord]) -> "FirstSeenIndex":
        idx = cls()
        for ev in events:
            idx.observe_event(ev)
        return idx

    def observe(self, role: Role, actor: str, day: date) -> None:
        key = (Role(role), actor)
        prev = self._first.get(key)
        if prev is None or day < prev:
            self._first[key] = day

    def observe_event(self, ev: EventRecord) -> None:
        role = _INITIATING.get(ev.event_kind)
        if role is not None:
            self.observe(role, ev.actor, ev.day)

    def first_seen(self, role: Role, actor: str) -> date | None:
        return self._first.get((Role(role), actor))

    def __len__(self) -> int:
        return len(self._first)


def classify_actor(first_seen: FirstSeenIndex, role: Role, actor: str, day: date) -> ActorStatus:
    first = first_seen.first_seen(role, actor)
    if first is None or first > day:
        raise KeyError(f"{role} {actor!r} has no recorded activity on or before {day}")
    return ActorStatus.NEW if first == day else ActorStatus.REPEAT


@dataclass
class _Side:
    actors: set
    new_actors: set
    vol: Decimal = ZERO
    new_vol: Decimal = ZERO
    cnt: int = 0
    new_cnt: int = 0


def _split_day(day_events: Iterable[EventRecord], first_seen: FirstSeenIndex) -> dict[Role, _Side]:
    sides = {Role.BORROWER: _Side(set(), set()), Role.DEPOSITOR: _Side(set(), set())}
    for ev in day_events:
        role = _INITIATING.get(ev.event_kind)
        if role is None:
            continue
        side = sides[role]
        usd = EXACT.multiply(ev.amount, ev.price_usd)
        side.actors.add(ev.actor)
        side.vol = EXACT.add(side.vol, usd)
        side.cnt += 1
        if classify_actor(first_seen, role, ev.actor, ev.day) is ActorStatus.NEW:
            side.new_actors.add(ev.actor)
            side.new_vol = EXACT.add(side.new_vol, usd)
            side.new_cnt += 1
    return sides


def repeat_ratios(
    day_events: Iterable[EventRecord], first_seen: FirstSeenIndex
) -> tuple[float | None, float | None]:
    """Share of the day's USD deposit and loan volume from repeat actors.

    Returns ``(repeat_deposit_ratio, repeat_loan_ratio)``; a side with zero
    USD volume gives ``None`` rather than 0.
    """
    sides = _split_day(day_events, first_seen)
    out = []
    for role in (Role.DEPOSITOR, Role.BORROWER):
        s = sides[role]
        out.append(_ratio(EXACT.subtract(s.vol, s.new_vol), s.vol))
    return out[0], out[1]


@dataclass(frozen=True)
class DailyPanelRow:
    date: date
    liquidity_usd: Decimal
    utilization: float | None
    repeat_deposit_ratio: float | None
    repeat_loan_ratio: float | None
    # loan side
    borrower: int
    loan_vol_usd: Decimal
    loan_cnt: int
    new_borrower: int
    new_loan_vol_usd: Decimal
    new_loan_cnt: int
    avg_loan_usd: float | None
    outstanding_loan_usd: Decimal
    liquidation_usd: Decimal
    repeat_borrower: int
    repeat_loan_vol_usd: Decimal
    repeat_loan_cnt: int
    # deposit side
    depositor: int
    deposit_vol_usd: Decimal
    deposit_cnt: int
    new_depositor: int
    new_deposit_vol_usd: Decimal
    new_deposit_cnt: int
    avg_deposit_usd: float | None
    outstanding_deposit_usd: Decimal
    repeat_depositor: int
    repeat_deposit_vol_usd: Decimal
    repeat_deposit_cnt: int

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _avg(vol: Decimal, cnt: int) -> float | None:
    return float(RATIO.divide(vol, cnt)) if cnt else None


def _row(day: date, snaps: Sequence[DailyAssetSnapshot], sides: dict[Role, _Side], liq_usd: Decimal) -> DailyPanelRow:
    debt_usd, dep_usd = _usd_totals(snaps)
    liquidity = protocol_liquidity_usd(snaps)
    if liquidity < 0:
        log.warning("negative available liquidity %s on %s", liquidity, day)
    b, d = sides[Role.BORROWER], sides[Role.DEPOSITOR]
    rep_loan = EXACT.subtract(b.vol, b.new_vol)
    rep_dep = EXACT.subtract(d.vol, d.new_vol)
    return DailyPanelRow(
        date=day,
        liquidity_usd=liquidity,
        utilization=_ratio(debt_usd, dep_usd),
        repeat_deposit_ratio=_ratio(rep_dep, d.vol),
        repeat_loan_ratio=_ratio(rep_loan, b.vol),
        borrower=len(b.actors),
        loan_vol_usd=b.vol,
        loan_cnt=b.cnt,
        new_borrower=len(b.new_actors),
        new_loan_vol_usd=b.new_vol,
        new_loan_cnt=b.new_cnt,
        avg_loan_usd=_avg(b.vol, b.cnt),
        outstanding_loan_usd=debt_usd,
        liquidation_usd=liq_usd,
        repeat_borrower=len(b.actors) - len(b.new_actors),
        repeat_loan_vol_usd=rep_loan,
        repeat_loan_cnt=b.cnt - b.new_cnt,
        depositor=len(d.actors),
        deposit_vol_usd=d.vol,
        deposit_cnt=d.cnt,
        new_depositor=len(d.new_actors),
        new_deposit_vol_usd=d.new_vol,
        new_deposit_cnt=d.new_cnt,
        avg_deposit_usd=_avg(d.vol, d.cnt),
        outstanding_deposit_usd=dep_usd,
        repeat_depositor=len(d.actors) - len(d.new_actors),
        repeat_deposit_vol_usd=rep_dep,
        repeat_deposit_cnt=d.cnt - d.new_cnt,
    )


def build_daily_panel(
    events: Sequence[EventRecord],
    asset_filter: Collection[str] | None = None,
    *,
    strict: bool = False,
) -> list[DailyPanelRow]:
    """One row per UTC day from the first to the last event day, inclusive.

    ``asset_filter`` restricts the whole computation (balances, volumes and
    first-seen history) to the listed symbols. Days without events carry
    balances and close prices forward and report zero activity.
    """
    events = list(events)
    check_sorted(events)
    if asset_filter is not None:
        wanted = set(asset_filter)
        events = [e for e in events if e.asset in wanted]
    if not events:
        raise ValueError("no events")

    pools: dict[str, PoolState] = {}
    close: dict[str, Decimal] = {}
    first_seen = FirstSeenIndex()
    by_day: dict[date, list[tuple[int, EventRecord]]] = defaultdict(list)
    for i, ev in enumerate(events):
        by_day[ev.day].append((i, ev))

    rows = []
    day, last = events[0].day, events[-1].day
    while day <= last:
        todays = by_day.get(day, [])
        liq_usd = ZERO
        for i, ev in todays:
            pool = pools.get(ev.asset)
            if pool is None:
                pool = pools[ev.asset] = PoolState(ev.asset)
            _apply(pool, ev, strict, None, i)
            close[ev.asset] = ev.price_usd
            first_seen.observe_event(ev)
            if ev.event_kind is EventKind.LIQUIDATION:
                liq_usd = EXACT.add(liq_usd, EXACT.multiply(ev.amount, ev.price_usd))
        snaps = [
            DailyAssetSnapshot(a, day, p.outstanding_deposit, p.outstanding_debt, close.get(a))
            for a, p in sorted(pools.items())
        ]
        sides = _split_day((ev for _, ev in todays), first_seen)
        rows.append(_row(day, snaps, sides, liq_usd))
        day += timedelta(days=1)
    return rows


@dataclass(frozen=True)
class DescriptiveStats:
    mean: float
    median: float
    max: float
    min: float
    std: float
    n: int


def descriptive_stats(series: Iterable[float | Decimal | None]) -> DescriptiveStats:
    """Mean, median, max, min and sample std (n-1) ignoring missing values."""
    vals = [float(v) for v in series if v is not None]
    arr = np.asarray(vals, dtype=float)
    arr = arr[~np.isnan(arr)]
    if arr.size == 0:
        raise ValueError("descriptive_stats of an empty series")
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else float("nan")
    return DescriptiveStats(
        mean=float(np.mean(arr)),
        median=float(np.median(arr)),
        max=float(arr.max()),
        min=float(arr.min()),
        std=std,
        n=int(arr.size),
    )
