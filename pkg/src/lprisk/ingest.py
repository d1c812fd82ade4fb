"""Readers and writers for event logs, factor panels and hack calendars.

Event logs are CSV with the header
``timestamp,event_kind,asset,actor,amount,price_usd`` or JSONL with the same
keys. Decimal fields are parsed exactly; nothing goes through ``float``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, fields
from datetime import date, datetime, timedelta, timezone
from decimal import Decimal, InvalidOperation
from importlib import resources
from typing import IO, Iterable, Sequence, Union

from .ledger import EXACT, EventKind, EventRecord

log = logging.getLogger(__name__)

EVENT_FIELDS = ("timestamp", "event_kind", "asset", "actor", "amount", "price_usd")
FACTOR_FIELDS = (
    "date",
    "mktc_f",
    "mktc_c",
    "token_price_usd",
    "tvl_usd",
    "revenue_usd",
    "holder_count",
    "active_users",
    "developers",
)
HACK_FIELDS = ("date", "protocol")
MAX_DIGITS = 38

Source = Union[bytes, str, IO[bytes], IO[str]]


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class Diagnostic:
    line: int
    field: str | None
    reason: str

    def __str__(self) -> str:
        where = f"line {self.line}"
        if self.field:
            where += f", {self.field}"
        return f"{where}: {self.reason}"


@dataclass
class ParseResult:
    events: list[EventRecord]
    diagnostics: list[Diagnostic]
    sorted: bool = True


def _text(src: Source) -> str:
    if isinstance(src, bytes):
        return src.decode("utf-8")
    if isinstance(src, str):
        return src
    data = src.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def parse_timestamp(raw: str) -> datetime:
    """ISO-8601 date-time with an explicit ``Z`` or UTC offset, as UTC."""
    s = raw.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    ts = datetime.fromisoformat(s)
    if "T" not in s and " " not in s:
        raise ValueError(f"not a date-time: {raw!r}")
    if ts.tzinfo is None:
        raise ValueError(f"timestamp without timezone: {raw!r}")
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    if ts.microsecond:
        return ts.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_decimal(raw: object) -> Decimal:
    """Exact non-negative decimal: at most 38 significant digits, and no more
    than 38 digits on either side of the decimal point."""
    if isinstance(raw, float):
        raise ValueError("binary float amounts are not exact; quote the value")
    if isinstance(raw, bool) or raw is None:
        raise ValueError(f"not a number: {raw!r}")
    try:
        d = Decimal(str(raw).strip())
    except InvalidOperation:
        raise ValueError(f"not a number: {raw!r}") from None
    if not d.is_finite():
        raise ValueError(f"not finite: {raw!r}")
    if d < 0:
        raise ValueError(f"negative value {raw}")
    if len(d.as_tuple().digits) > MAX_DIGITS:
        raise ValueError(f"more than {MAX_DIGITS} significant digits")
    # keep every value representable in plain fixed-point form
    if d and (d.adjusted() >= MAX_DIGITS or d.as_tuple().exponent < -MAX_DIGITS):
        raise ValueError(f"magnitude out of range: {raw}")
    return d


def format_decimal(d: Decimal) -> str:
    """Plain positional notation without trailing zeros (``1.50`` -> ``1.5``)."""
    if not d:
        return "0"
    return format(d.normalize(EXACT), "f")


def _record(fields_: dict, line: int) -> tuple[EventRecord | None, Diagnostic | None]:
    for name in EVENT_FIELDS:
        if fields_.get(name) in (None, ""):
            return None, Diagnostic(line, name, "missing value")
    try:
        ts = parse_timestamp(str(fields_["timestamp"]))
    except ValueError as exc:
        return None, Diagnostic(line, "timestamp", f"invalid timestamp: {exc}")
    try:
        kind = EventKind(fields_["event_kind"])
    except ValueError:
        return None, Diagnostic(line, "event_kind", f"unknown event_kind {fields_['event_kind']!r}")
    vals = {}
    for name in ("amount", "price_usd"):
        try:
            vals[name] = parse_decimal(fields_[name])
        except ValueError as exc:
            return None, Diagnostic(line, name, str(exc))
    asset, actor = str(fields_["asset"]), str(fields_["actor"])
    return EventRecord(ts, kind, asset, actor, vals["amount"], vals["price_usd"], line=line), None


def _csv_rows(text: str) -> Iterable[tuple[int, dict | None, Diagnostic | None]]:
    reader = csv.reader(io.StringIO(text, newline=""))
    header = next(reader, None)
    if header is None:
        return
    header = [h.strip() for h in header]
    if tuple(header) != EVENT_FIELDS:
        yield 1, None, Diagnostic(1, None, f"bad header {','.join(header)!r}; expected {','.join(EVENT_FIELDS)!r}")
        return
    for row in reader:
        line = reader.line_num
        if not row or row == [""]:
            continue
        if len(row) != len(EVENT_FIELDS):
            yield line, None, Diagnostic(line, None, f"expected {len(EVENT_FIELDS)} fields, got {len(row)}")
            continue
        yield line, dict(zip(EVENT_FIELDS, row)), None


def _jsonl_rows(text: str) -> Iterable[tuple[int, dict | None, Diagnostic | None]]:
    for line, raw in enumerate(text.split("\n"), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw, parse_float=Decimal)
        except json.JSONDecodeError as exc:
            yield line, None, Diagnostic(line, None, f"invalid JSON: {exc.msg}")
            continue
        if not isinstance(obj, dict):
            yield line, None, Diagnostic(line, None, "expected a JSON object")
            continue
        extra = set(obj) - set(EVENT_FIELDS)
        if extra:
            yield line, None, Diagnostic(line, sorted(extra)[0], "unexpected field")
            continue
        yield line, obj, None


def parse_events(src: Source, fmt: str = "csv", *, strict: bool = False) -> ParseResult:
    """Parse an event log.

    Malformed rows produce a :class:`Diagnostic` and are skipped; with
    ``strict`` the first diagnostic raises :class:`IngestError` instead.
    Timestamp order is checked but not repaired.
    """
    text = _text(src)
    if fmt == "csv":
        rows = _csv_rows(text)
    elif fmt == "jsonl":
        rows = _jsonl_rows(text)
    else:
        raise ValueError(f"unknown event format {fmt!r}")

    events: list[EventRecord] = []
    diags: list[Diagnostic] = []
    in_order = True

    def report(d: Diagnostic) -> None:
        if strict:
            raise IngestError(str(d))
        diags.append(d)

    for line, fields_, diag in rows:
        if diag is None:
            ev, diag = _record(fields_, line)
        if diag is not None:
            report(diag)
            continue
        if events and ev.timestamp < events[-1].timestamp:
            in_order = False
            report(Diagnostic(line, "timestamp", "out of order (log must be sorted by timestamp)"))
        events.append(ev)
    return ParseResult(events, diags, in_order)


def serialize_events(events: Iterable[EventRecord], fmt: str = "csv") -> str:
    out = io.StringIO(newline="")
    if fmt == "csv":
        w = csv.writer(out, lineterminator="\n")
        w.writerow(EVENT_FIELDS)
        for e in events:
            w.writerow(
                [format_timestamp(e.timestamp), e.event_kind.value, e.asset, e.actor,
                 format_decimal(e.amount), format_decimal(e.price_usd)]
            )
    elif fmt == "jsonl":
        for e in events:
            obj = {
                "timestamp": format_timestamp(e.timestamp),
                "event_kind": e.event_kind.value,
                "asset": e.asset,
                "actor": e.actor,
                "amount": format_decimal(e.amount),
                "price_usd": format_decimal(e.price_usd),
            }
            out.write(json.dumps(obj, ensure_ascii=False) + "\n")
    else:
        raise ValueError(f"unknown event format {fmt!r}")
    return out.getvalue()


@dataclass(frozen=True)
class FactorPanelRow:
    """One day of protocol-level factors; ``None`` marks a missing cell."""

    date: date
    mktc_f: float | None
    mktc_c: float | None
    token_price_usd: float | None
    tvl_usd: float | None
    revenue_usd: float | None
    holder_count: int | None
    active_users: int | None
    developers: int | None


_COUNT_FIELDS = {"holder_count", "active_users", "developers"}


def parse_factor_panel(src: Source) -> list[FactorPanelRow]:
    text = _text(src)
    reader = csv.reader(io.StringIO(text, newline=""))
    header = next(reader, None)
    if header is None:
        raise IngestError("factor panel: missing header")
    header = [h.strip() for h in header]
    missing = [f for f in FACTOR_FIELDS if f not in header]
    if missing:
        raise IngestError(f"factor panel: header lacks {', '.join(missing)}")
    pos = {name: header.index(name) for name in FACTOR_FIELDS}

    rows: dict[date, FactorPanelRow] = {}
    for row in reader:
        line = reader.line_num
        if not row or row == [""]:
            continue
        if len(row) != len(header):
            raise IngestError(f"factor panel line {line}: expected {len(header)} fields, got {len(row)}")
        vals: dict[str, object] = {}
        for name in FACTOR_FIELDS:
            cell = row[pos[name]].strip()
            if name == "date":
                try:
                    vals[name] = date.fromisoformat(cell)
                except ValueError:
                    raise IngestError(f"factor panel line {line}: bad date {cell!r}") from None
                continue
            if cell == "":
                vals[name] = None
                continue
            try:
                if name in _COUNT_FIELDS:
                    v = int(cell)
                    if v < 0:
                        raise ValueError
                else:
                    v = float(cell)
            except ValueError:
                raise IngestError(f"factor panel line {line}, {name}: unparseable value {cell!r}") from None
            vals[name] = v
        d = vals["date"]
        if d in rows:
            raise IngestError(f"factor panel: duplicate date {d.isoformat()}")
        rows[d] = FactorPanelRow(**vals)
    return [rows[d] for d in sorted(rows)]


def _fmt_float(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def serialize_factor_panel(rows: Iterable[FactorPanelRow]) -> str:
    out = io.StringIO(newline="")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(FACTOR_FIELDS)
    for r in rows:
        cells = [r.date.isoformat()]
        for f in fields(FactorPanelRow)[1:]:
            v = getattr(r, f.name)
            cells.append("" if v is None else str(v) if f.name in _COUNT_FIELDS else _fmt_float(v))
        w.writerow(cells)
    return out.getvalue()


def parse_hack_calendar(src: Source) -> list[tuple[date, str]]:
    text = _text(src)
    reader = csv.reader(io.StringIO(text, newline=""))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != HACK_FIELDS:
        raise IngestError(f"hack calendar: expected header {','.join(HACK_FIELDS)!r}")
    out = []
    for row in reader:
        if not row:
            continue
        try:
            out.append((date.fromisoformat(row[0].strip()), row[1].strip()))
        except (ValueError, IndexError):
            raise IngestError(f"hack calendar line {reader.line_num}: malformed row {row!r}") from None
    return sorted(out)


def bundled_hack_calendar() -> list[tuple[date, str]]:
    """The 30 DeFi hacks of 2020-2022 used for the hack dummy."""
    return parse_hack_calendar(resources.files("lprisk.data").joinpath("hacks.csv").read_text("utf-8"))


def parse_asset_list(src: Source) -> list[str]:
    """One symbol per line; blank lines and ``#`` comments ignored."""
    out = []
    for raw in _text(src).splitlines():
        s = raw.split("#", 1)[0].strip()
        if s:
            out.append(s)
    return out


def mainstream_assets() -> list[str]:
    """The 16 most frequently traded assets used for the mainstream subset."""
    return parse_asset_list(resources.files("lprisk.data").joinpath("mainstream.txt").read_text("utf-8"))


def resolve_daily_prices(
    events: Sequence[EventRecord], end: date | None = None
) -> dict[tuple[str, date], Decimal]:
    """Close price per (asset, UTC day): last event price, carried forward.

    Filled from each asset's first priced day through ``end`` (default: the
    last day in the log).
    """
    last: dict[str, dict[date, Decimal]] = {}
    for ev in events:
        last.setdefault(ev.asset, {})[ev.day] = ev.price_usd
    if not events:
        return {}
    stop = end or max(ev.day for ev in events)
    out: dict[tuple[str, date], Decimal] = {}
    for asset, by_day in last.items():
        day = min(by_day)
        price = by_day[day]
        while day <= stop:
            price = by_day.get(day, price)
            out[(asset, day)] = price
            day += timedelta(days=1)
    return out
