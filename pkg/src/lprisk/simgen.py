"""Seeded synthetic lending logs and factor panels.

Depositors, borrowers and liquidators act on a daily clock over a basket of
assets with geometric random-walk prices. Borrowers lock collateral outside
the lending pools (it never shows up as a deposit); liquidators repay part of
undercollateralized loans and seize collateral at a bonus. An optional stress
block makes the largest depositors withdraw a fixed fraction of their supply
every day, which is the bank-run pattern the liquidity metrics should flag.

Every log produced here replays cleanly in strict mode.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import date, datetime, time, timedelta, timezone
from decimal import ROUND_DOWN, ROUND_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from .ingest import FactorPanelRow
from .ledger import EXACT, RATIO, ZERO, EventKind, EventRecord

AMOUNT_QUANTUM = Decimal("0.000001")


class ConfigError(ValueError):
    pass


@dataclass
class AssetSpec:
    symbol: str
    initial_price: float
    volatility: float = 0.0  # daily log-return standard deviation


@dataclass
class StressBlock:
    start_day: int
    top_k_depositors: int
    withdrawal_fraction_per_day: float
    duration: int

    def active(self, day: int) -> bool:
        return self.start_day <= day < self.start_day + self.duration


@dataclass
class PriceShock:
    day: int
    asset: str
    factor: float


@dataclass
class ScenarioConfig:
    seed: int = 0
    horizon_days: int = 30
    depositor_count: int = 20
    borrower_count: int = 10
    liquidator_count: int = 2
    assets: list[AssetSpec] = field(
        default_factory=lambda: [
            AssetSpec("ETH", 2000.0, 0.04),
            AssetSpec("USDC", 1.0, 0.0005),
            AssetSpec("WBTC", 40000.0, 0.035),
        ]
    )
    start_date: date = date(2021, 1, 1)

    # behavior
    deposit_intensity: float = 0.3  # daily chance a dormant depositor makes a first deposit
    borrow_intensity: float = 0.3  # daily chance a dormant borrower takes a first loan
    repeat_probability: float = 0.5  # daily chance an already-active agent acts again
    withdraw_probability: float = 0.1
    repay_probability: float = 0.1
    deposit_amount_usd: float = 10_000.0  # lognormal median
    borrow_amount_usd: float = 5_000.0
    amount_sigma: float = 0.75
    whale_count: int = 0  # first depositors whose amounts are scaled by whale_multiplier
    whale_multiplier: float = 1.0
    max_borrow_share: float = 0.5  # cap on a single loan as a share of the pool's free liquidity
    collateral_factor: float = 0.75
    liquidation_bonus: float = 0.05
    close_factor: float = 0.5
    collateral_buffer: float = 0.25  # extra collateral locked above the minimum at issuance

    stress: StressBlock | None = None
    price_shocks: list[PriceShock] = field(default_factory=list)

    # factor panel
    token_initial_price: float = 100.0
    token_volatility: float = 0.05
    token_max_supply: float = 16_000_000.0
    token_circulating_supply: float = 12_000_000.0
    revenue_rate: float = 0.001
    tvl_noise: float = 0.01
    revenue_noise: float = 0.1
    holder_initial: int = 50_000
    holder_drift: float = 20.0
    holder_noise: float = 10.0
    developer_mean: float = 5.0

    def validate(self) -> None:
        probs = ("deposit_intensity", "borrow_intensity", "repeat_probability", "withdraw_probability", "repay_probability")
        for name in probs:
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.horizon_days < 1:
            raise ConfigError("horizon_days must be positive")
        if self.depositor_count < 0 or self.borrower_count < 0 or self.liquidator_count < 0:
            raise ConfigError("agent counts must be non-negative")
        if self.depositor_count + self.borrower_count == 0:
            raise ConfigError("need at least one depositor or borrower")
        if self.borrower_count > 0 and self.borrow_intensity > 0 and self.depositor_count == 0:
            raise ConfigError("borrowing configured but there are no depositors to lend")
        if not self.assets:
            raise ConfigError("at least one asset is required")
        symbols = [a.symbol for a in self.assets]
        if len(set(symbols)) != len(symbols):
            raise ConfigError("asset symbols must be unique")
        for a in self.assets:
            if not a.initial_price > 0:
                raise ConfigError(f"{a.symbol}: initial_price must be positive")
            if a.volatility < 0:
                raise ConfigError(f"{a.symbol}: volatility must be non-negative")
        if not 0 < self.collateral_factor < 1:
            raise ConfigError("collateral_factor must be in (0, 1)")
        if not 0 <= self.liquidation_bonus <= 0.5:
            raise ConfigError("liquidation_bonus must be in [0, 0.5]")
        if not 0 < self.close_factor <= 1:
            raise ConfigError("close_factor must be in (0, 1]")
        if not 0 < self.max_borrow_share <= 1:
            raise ConfigError("max_borrow_share must be in (0, 1]")
        if self.collateral_buffer < 0:
            raise ConfigError("collateral_buffer must be non-negative")
        if self.deposit_amount_usd <= 0 or self.borrow_amount_usd <= 0 or self.amount_sigma < 0:
            raise ConfigError("amount distribution parameters must be positive")
        if not 0 <= self.whale_count <= self.depositor_count or self.whale_multiplier <= 0:
            raise ConfigError("whale_count must be within depositor_count and whale_multiplier positive")
        if self.stress is not None:
            s = self.stress
            if not 0 <= s.start_day < self.horizon_days:
                raise ConfigError("stress.start_day outside the horizon")
            if s.top_k_depositors < 1 or s.duration < 1:
                raise ConfigError("stress.top_k_depositors and stress.duration must be positive")
            if not 0 < s.withdrawal_fraction_per_day <= 1:
                raise ConfigError("stress.withdrawal_fraction_per_day must be in (0, 1]")
        for shock in self.price_shocks:
            if shock.asset not in symbols:
                raise ConfigError(f"price shock on unknown asset {shock.asset}")
            if shock.factor <= 0:
                raise ConfigError("price shock factor must be positive")

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScenarioConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            if "assets" in data:
                data["assets"] = [AssetSpec(**a) for a in data["assets"]]
            if data.get("stress") is not None:
                data["stress"] = StressBlock(**data["stress"])
            if "price_shocks" in data:
                data["price_shocks"] = [PriceShock(**p) for p in data["price_shocks"]]
            if isinstance(data.get("start_date"), str):
                data["start_date"] = date.fromisoformat(data["start_date"])
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start_date"] = self.start_date.isoformat()
        return d


def load_config(path: str | Path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return ScenarioConfig.from_dict(data)


def reference_stress_config(seed: int = 7) -> ScenarioConfig:
    """Bank-run reference: three whales pull 50% of their supply per day for 5 days."""
    return ScenarioConfig(
        seed=seed,
        horizon_days=30,
        depositor_count=12,
        borrower_count=20,
        liquidator_count=0,
        assets=[AssetSpec("USDC", 1.0, 0.0), AssetSpec("DAI", 1.0, 0.0)],
        deposit_intensity=0.6,
        borrow_intensity=0.6,
        repeat_probability=0.3,
        withdraw_probability=0.02,
        repay_probability=0.02,
        deposit_amount_usd=10_000.0,
        borrow_amount_usd=30_000.0,
        amount_sigma=0.3,
        whale_count=3,
        whale_multiplier=20.0,
        stress=StressBlock(start_day=20, top_k_depositors=3, withdrawal_fraction_per_day=0.5, duration=5),
    )


# ---------------------------------------------------------------------------


@dataclass
class Loan:
    borrower: str
    asset: str
    debt: Decimal
    collateral_asset: str
    collateral: Decimal


@dataclass(frozen=True)
class LiquidationRecord:
    day: int
    borrower: str
    liquidator: str
    asset: str
    debt_before: Decimal
    repaid: Decimal
    collateral_asset: str
    seized: Decimal
    debt_value_usd: Decimal
    collateral_value_usd: Decimal


@dataclass
class SimulationOutput:
    events: list[EventRecord]
    factors: list[FactorPanelRow]
    liquidations: list[LiquidationRecord]
    stressed_depositors: list[str]


def _q_down(x: Decimal) -> Decimal:
    return x.quantize(AMOUNT_QUANTUM, rounding=ROUND_DOWN, context=RATIO)


def _q_up(x: Decimal) -> Decimal:
    return x.quantize(AMOUNT_QUANTUM, rounding=ROUND_UP, context=RATIO)


def _dec(x: float) -> Decimal:
    return Decimal(format(x, ".10g"))


class Simulator:
    def __init__(self, config: ScenarioConfig):
        config.validate()
        self.cfg = config
        self.rng = np.random.default_rng(config.seed)
        self.symbols = [a.symbol for a in config.assets]
        self.prices = {a.symbol: _dec(a.initial_price) for a in config.assets}
        self._price_f = {a.symbol: a.initial_price for a in config.assets}
        self.deposits = {s: ZERO for s in self.symbols}
        self.debt = {s: ZERO for s in self.symbols}
        self.supply: dict[tuple[str, str], Decimal] = {}
        self.loans: list[Loan] = []
        self.depositors = [f"dep{i:04d}" for i in range(config.depositor_count)]
        self.borrowers = [f"bor{j:04d}" for j in range(config.borrower_count)]
        self.liquidators = [f"liq{k:04d}" for k in range(config.liquidator_count)]
        self.active: set[str] = set()
        self.liquidation_log: list[LiquidationRecord] = []
        self.stressed: list[str] = []
        self._day_events: list[tuple[EventKind, str, str, Decimal]] = []
        self._shocks = {(s.day, s.asset): s.factor for s in config.price_shocks}
        self._cf = _dec(config.collateral_factor)
        self._bonus = _dec(config.liquidation_bonus)
        self._close = _dec(config.close_factor)

    # -- helpers -----------------------------------------------------------

    def _emit(self, kind: EventKind, actor: str, asset: str, amount: Decimal) -> None:
        self._day_events.append((kind, actor, asset, amount))

    def _liquidity(self, asset: str) -> Decimal:
        return EXACT.subtract(self.deposits[asset], self.debt[asset])

    def _amount_usd(self, median: float, scale: float = 1.0) -> float:
        sigma = self.cfg.amount_sigma
        return median * scale * math.exp(sigma * self.rng.standard_normal())

    def _wants_to_act(self, agent: str, first_intensity: float) -> bool:
        p = self.cfg.repeat_probability if agent in self.active else first_intensity
        return bool(self.rng.random() < p)

    # -- daily phases --------------------------------------------------------

    def _update_prices(self, day: int) -> None:
        for a in self.cfg.assets:
            if day > 0 and a.volatility > 0:
                z = self.rng.standard_normal()
                self._price_f[a.symbol] *= math.exp(a.volatility * z - 0.5 * a.volatility**2)
            shock = self._shocks.get((day, a.symbol))
            if shock is not None:
                self._price_f[a.symbol] *= shock
            self.prices[a.symbol] = max(_dec(self._price_f[a.symbol]), Decimal("1e-8"))

    def _liquidate(self, day: int) -> None:
        if not self.liquidators:
            return
        for loan in self.loans:
            if loan.debt <= 0:
                continue
            p_d, p_c = self.prices[loan.asset], self.prices[loan.collateral_asset]
            debt_val = EXACT.multiply(loan.debt, p_d)
            coll_val = EXACT.multiply(loan.collateral, p_c)
            if debt_val <= EXACT.multiply(self._cf, coll_val):
                continue
            repay = _q_down(RATIO.multiply(loan.debt, self._close))
            if repay <= 0:
                continue
            seize = _q_down(RATIO.divide(RATIO.multiply(RATIO.multiply(repay, p_d), 1 + self._bonus), p_c))
            seize = min(seize, loan.collateral)
            liquidator = self.liquidators[int(self.rng.integers(len(self.liquidators)))]
            self.liquidation_log.append(
                LiquidationRecord(day, loan.borrower, liquidator, loan.asset, loan.debt, repay,
                                  loan.collateral_asset, seize, debt_val, coll_val)
            )
            loan.debt = EXACT.subtract(loan.debt, repay)
            loan.collateral = EXACT.subtract(loan.collateral, seize)
            self.debt[loan.asset] = EXACT.subtract(self.debt[loan.asset], repay)
            self._emit(EventKind.LIQUIDATION, liquidator, loan.asset, repay)

    def _repay(self) -> None:
        for loan in self.loans:
            if loan.debt <= 0 or self.rng.random() >= self.cfg.repay_probability:
                continue
            if self.rng.random() < 0.5:
                amount = loan.debt
            else:
                amount = _q_down(RATIO.multiply(loan.debt, _dec(self.rng.uniform(0.2, 0.8))))
            if amount <= 0:
                continue
            released = _q_down(RATIO.multiply(loan.collateral, RATIO.divide(amount, loan.debt)))
            loan.debt = EXACT.subtract(loan.debt, amount)
            loan.collateral = EXACT.subtract(loan.collateral, min(released, loan.collateral))
            self.debt[loan.asset] = EXACT.subtract(self.debt[loan.asset], amount)
            self._emit(EventKind.REPAY, loan.borrower, loan.asset, amount)
        self.loans = [l for l in self.loans if l.debt > 0]

    def _deposit(self) -> None:
        cfg = self.cfg
        for i, dep in enumerate(self.depositors):
            if not self._wants_to_act(dep, cfg.deposit_intensity):
                continue
            asset = self.symbols[int(self.rng.integers(len(self.symbols)))]
            scale = cfg.whale_multiplier if i < cfg.whale_count else 1.0
            usd = self._amount_usd(cfg.deposit_amount_usd, scale)
            amount = _q_down(RATIO.divide(_dec(usd), self.prices[asset]))
            if amount <= 0:
                continue
            self.active.add(dep)
            key = (dep, asset)
            self.supply[key] = EXACT.add(self.supply.get(key, ZERO), amount)
            self.deposits[asset] = EXACT.add(self.deposits[asset], amount)
            self._emit(EventKind.DEPOSIT, dep, asset, amount)

    def _borrow(self) -> None:
        cfg = self.cfg
        for bor in self.borrowers:
            if not self._wants_to_act(bor, cfg.borrow_intensity):
                continue
            asset = self.symbols[int(self.rng.integers(len(self.symbols)))]
            others = [s for s in self.symbols if s != asset] or [asset]
            coll_asset = others[int(self.rng.integers(len(others)))]
            usd = self._amount_usd(cfg.borrow_amount_usd)
            cap = _q_down(RATIO.multiply(self._liquidity(asset), _dec(cfg.max_borrow_share)))
            amount = min(_q_down(RATIO.divide(_dec(usd), self.prices[asset])), cap)
            if amount <= 0:
                continue
            p_d, p_c = self.prices[asset], self.prices[coll_asset]
            need = RATIO.divide(RATIO.multiply(amount, p_d), RATIO.multiply(self._cf, p_c))
            collateral = _q_up(RATIO.multiply(need, _dec(1 + cfg.collateral_buffer)))
            # overcollateralized at issuance prices, checked exactly
            assert EXACT.multiply(self._cf, EXACT.multiply(collateral, p_c)) >= EXACT.multiply(amount, p_d)
            self.active.add(bor)
            self.loans.append(Loan(bor, asset, amount, coll_asset, collateral))
            self.debt[asset] = EXACT.add(self.debt[asset], amount)
            self._emit(EventKind.BORROW, bor, asset, amount)

    def _withdraw_one(self, dep: str, asset: str, amount: Decimal) -> None:
        amount = min(amount, self._liquidity(asset), self.supply.get((dep, asset), ZERO))
        if amount <= 0:
            return
        key = (dep, asset)
        self.supply[key] = EXACT.subtract(self.supply[key], amount)
        self.deposits[asset] = EXACT.subtract(self.deposits[asset], amount)
        self._emit(EventKind.WITHDRAW, dep, asset, amount)

    def _withdraw(self) -> None:
        for dep in self.depositors:
            if dep not in self.active or self.rng.random() >= self.cfg.withdraw_probability:
                continue
            held = [a for a in self.symbols if self.supply.get((dep, a), ZERO) > 0]
            if not held:
                continue
            asset = held[int(self.rng.integers(len(held)))]
            frac = self.rng.uniform(0.1, 1.0)
            bal = self.supply[(dep, asset)]
            amount = bal if frac > 0.95 else _q_down(RATIO.multiply(bal, _dec(frac)))
            self._withdraw_one(dep, asset, amount)

    def _supply_usd(self, dep: str) -> Decimal:
        total = ZERO
        for a in self.symbols:
            total = EXACT.add(total, EXACT.multiply(self.supply.get((dep, a), ZERO), self.prices[a]))
        return total

    def _stress(self, day: int) -> None:
        s = self.cfg.stress
        if s is None or not s.active(day):
            return
        if day == s.start_day:
            ranked = sorted(self.depositors, key=lambda d: (-self._supply_usd(d), d))
            self.stressed = ranked[: s.top_k_depositors]
        frac = _dec(s.withdrawal_fraction_per_day)
        for dep in self.stressed:
            for a in self.symbols:
                bal = self.supply.get((dep, a), ZERO)
                if bal > 0:
                    amount = bal if frac >= 1 else _q_down(RATIO.multiply(bal, frac))
                    self._withdraw_one(dep, a, amount)

    # -- factor panel --------------------------------------------------------

    def _factor_row(self, day: date, token_price: float, circ: float, holders: int) -> FactorPanelRow:
        cfg = self.cfg
        dep_usd = sum(float(self.deposits[a] * self.prices[a]) for a in self.symbols)
        loan_vol = sum(float(amt * self.prices[a]) for k, _, a, amt in self._day_events if k is EventKind.BORROW)
        actors = {actor for _, actor, _, _ in self._day_events}
        tvl = dep_usd * (1 + cfg.tvl_noise * self.rng.standard_normal())
        revenue = cfg.revenue_rate * loan_vol * max(0.0, 1 + cfg.revenue_noise * self.rng.standard_normal())
        return FactorPanelRow(
            date=day,
            mktc_f=round(token_price * cfg.token_max_supply, 4),
            mktc_c=round(token_price * circ, 4),
            token_price_usd=round(token_price, 6),
            tvl_usd=round(max(tvl, 0.0), 4),
            revenue_usd=round(revenue, 6),
            holder_count=holders,
            active_users=len(actors),
            developers=int(self.rng.poisson(cfg.developer_mean)),
        )

    # -- driver --------------------------------------------------------------

    def run(self) -> SimulationOutput:
        cfg = self.cfg
        events: list[EventRecord] = []
        factors: list[FactorPanelRow] = []
        token_price = cfg.token_initial_price
        circ = cfg.token_circulating_supply
        holders = cfg.holder_initial
        for t in range(cfg.horizon_days):
            day = cfg.start_date + timedelta(days=t)
            self._day_events = []
            self._update_prices(t)
            self._liquidate(t)
            self._repay()
            self._deposit()
            self._borrow()
            self._withdraw()
            self._stress(t)

            if t > 0:
                v = cfg.token_volatility
                token_price *= math.exp(v * self.rng.standard_normal() - 0.5 * v * v)
                circ = min(cfg.token_max_supply, circ * (1 + 1e-4))
                holders = max(0, holders + int(round(cfg.holder_drift + cfg.holder_noise * self.rng.standard_normal())))
            factors.append(self._factor_row(day, token_price, circ, holders))

            if len(self._day_events) >= 86_400:
                raise ConfigError(f"more than 86400 events on day {t}; lower the intensities")
            base = datetime.combine(day, time(0, 0), tzinfo=timezone.utc)
            for i, (kind, actor, asset, amount) in enumerate(self._day_events):
                events.append(EventRecord(base + timedelta(seconds=i), kind, asset, actor, amount, self.prices[asset]))
        return SimulationOutput(events, factors, self.liquidation_log, self.stressed)


def simulate(config: ScenarioConfig) -> SimulationOutput:
    return Simulator(config).run()


def generate(config: ScenarioConfig) -> tuple[list[EventRecord], list[FactorPanelRow]]:
    """Event log and factor panel for ``config``; identical for identical seeds."""
    out = simulate(config)
    return out.events, out.factors


_COUNTS = ("holder_count", "active_users", "developers")


def inject_hacks(
    rows: Sequence[FactorPanelRow],
    hack_dates: Iterable[date],
    shocks: Mapping[str, float],
    window_days: int = 7,
) -> list[FactorPanelRow]:
    """Scale factor columns by ``1 + shock`` on every day inside a hack window.

    A window covers the hack day and the following ``window_days - 1`` days.
    Overlapping windows do not compound.
    """
    rows = list(rows)
    hack_dates = sorted(hack_dates)
    if not rows:
        return rows
    first, last = rows[0].date, rows[-1].date
    for h in hack_dates:
        if not first <= h <= last:
            raise ValueError(f"hack date {h} outside panel range {first}..{last}")
    for name in shocks:
        if name == "date" or name not in FactorPanelRow.__dataclass_fields__:
            raise ValueError(f"unknown factor column {name!r}")
    out = []
    for r in rows:
        hit = any(h <= r.date < h + timedelta(days=window_days) for h in hack_dates)
        if not hit or not any(shocks.values()):
            out.append(r)
            continue
        changes = {}
        for name, mag in shocks.items():
            v = getattr(r, name)
            if v is None or mag == 0:
                continue
            nv = v * (1 + mag)
            changes[name] = int(round(nv)) if name in _COUNTS else nv
        out.append(replace(r, **changes))
    return out
