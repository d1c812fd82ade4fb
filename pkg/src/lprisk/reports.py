"""Daily panel CSV and descriptive-statistics tables."""

from __future__ import annotations

import csv
import io
from datetime import date
from decimal import Decimal
from typing import Sequence

from .ingest import IngestError, Source, _text, format_decimal
from .metrics import DailyPanelRow, descriptive_stats

RISK_ROWS = (
    ("liquidity_usd", "Liquidity"),
    ("utilization", "Utilization"),
    ("repeat_deposit_ratio", "Repeat deposit ratio"),
    ("repeat_loan_ratio", "Repeat loan ratio"),
)

LOAN_ROWS = (
    ("borrower", "Borrower"),
    ("loan_vol_usd", "Loan vol usd"),
    ("loan_cnt", "Loan cnt"),
    ("new_borrower", "New borrower"),
    ("new_loan_vol_usd", "New loan vol usd"),
    ("new_loan_cnt", "New loan cnt"),
    ("avg_loan_usd", "Avg loan usd"),
    ("outstanding_loan_usd", "Outstanding loan"),
    ("liquidation_usd", "Liquidation usd"),
    ("repeat_borrower", "Repeat borrower"),
    ("repeat_loan_vol_usd", "Repeat loan vol usd"),
    ("repeat_loan_cnt", "Repeat loan cnt"),
)

DEPOSIT_ROWS = (
    ("depositor", "Depositor"),
    ("deposit_vol_usd", "Deposit vol usd"),
    ("deposit_cnt", "Deposit cnt"),
    ("new_depositor", "New depositor"),
    ("new_deposit_vol_usd", "New deposit vol usd"),
    ("new_deposit_cnt", "New deposit cnt"),
    ("avg_deposit_usd", "Avg deposit usd"),
    ("outstanding_deposit_usd", "Outstanding deposit"),
    ("repeat_depositor", "Repeat depositor"),
    ("repeat_deposit_vol_usd", "Repeat deposit vol usd"),
    ("repeat_deposit_cnt", "Repeat deposit cnt"),
)

STAT_COLUMNS = ("Mean", "Median", "Maximum", "Minimum", "Std")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, Decimal):
        return format_decimal(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, date):
        return v.isoformat()
    return str(v)


def daily_panel_csv(rows: Sequence[DailyPanelRow]) -> str:
    """Full-precision CSV; missing values are empty cells."""
    names = DailyPanelRow.field_names()
    out = io.StringIO(newline="")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(names)
    for r in rows:
        w.writerow([_cell(getattr(r, n)) for n in names])
    return out.getvalue()


def parse_daily_panel(src: Source) -> list[dict]:
    """Read a daily panel CSV into dicts of ``date`` plus float-or-None columns."""
    reader = csv.reader(io.StringIO(_text(src), newline=""))
    header = next(reader, None)
    if not header or header[0].strip() != "date":
        raise IngestError("daily panel: first column must be 'date'")
    header = [h.strip() for h in header]
    rows = []
    seen = set()
    for row in reader:
        if not row:
            continue
        if len(row) != len(header):
            raise IngestError(f"daily panel line {reader.line_num}: expected {len(header)} fields")
        try:
            d = date.fromisoformat(row[0])
        except ValueError:
            raise IngestError(f"daily panel line {reader.line_num}: bad date {row[0]!r}") from None
        if d in seen:
            raise IngestError(f"daily panel: duplicate date {d.isoformat()}")
        seen.add(d)
        rec: dict = {"date": d}
        for name, cell in zip(header[1:], row[1:]):
            try:
                rec[name] = float(cell) if cell.strip() else None
            except ValueError:
                raise IngestError(f"daily panel line {reader.line_num}, {name}: bad number {cell!r}") from None
        rows.append(rec)
    rows.sort(key=lambda r: r["date"])
    return rows


def _fmt(x: float) -> str:
    if x != x:
        return "nan"
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def _stats_table(rows: Sequence, spec: Sequence[tuple[str, str]]) -> list[str]:
    lines = ["| Variable | " + " | ".join(STAT_COLUMNS) + " |", "|---" * (len(STAT_COLUMNS) + 1) + "|"]
    for field_name, label in spec:
        series = [getattr(r, field_name) if not isinstance(r, dict) else r[field_name] for r in rows]
        try:
            st = descriptive_stats(series)
        except ValueError:
            cells = ["n/a"] * len(STAT_COLUMNS)
        else:
            cells = [_fmt(v) for v in (st.mean, st.median, st.max, st.min, st.std)]
        lines.append(f"| {label} | " + " | ".join(cells) + " |")
    return lines


def stats_markdown(rows: Sequence[DailyPanelRow]) -> str:
    out = ["# Measurements of liquidity risks", ""]
    out += _stats_table(rows, RISK_ROWS)
    out += ["", "## Panel A: Loan details", ""]
    out += _stats_table(rows, LOAN_ROWS)
    out += ["", "## Panel B: Deposit details", ""]
    out += _stats_table(rows, DEPOSIT_ROWS)
    if rows:
        out += ["", f"Days: {len(rows)} ({rows[0].date.isoformat()} to {rows[-1].date.isoformat()}). "
                "Std is the sample standard deviation; missing values are excluded."]
    out += ["", "<!-- manifest: manifest.json -->"]
    return "\n".join(out) + "\n"
