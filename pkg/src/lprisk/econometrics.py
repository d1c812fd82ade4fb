"""OLS regressions of protocol factors on liquidity-risk measures.

The preset suites ``eq10`` .. ``eq17`` each cross four risk measures with
six protocol dependents (24 fits per suite, 192 overall). Fits use plain OLS
with homoskedastic standard errors, solved by QR.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date, timedelta
from enum import Enum
from statistics import NormalDist
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

V2_LAUNCH = date(2020, 12, 3)
V3_LAUNCH = date(2022, 8, 25)
HACK_WINDOW_DAYS = 7  # hack day plus the following 6 days

# two-sided normal critical values for 10%, 5%, 1%
STAR_LEVELS = tuple((NormalDist().inv_cdf(1 - a / 2), "*" * n) for a, n in ((0.01, 3), (0.05, 2), (0.10, 1)))


class RegressionError(ValueError):
    pass


class Transform(str, Enum):
    LEVEL = "level"
    FIRST_DIFF = "first_diff"
    PCT_CHANGE = "pct_change"
    ZSCORE = "zscore"


def _steps(t) -> list[Transform]:
    if isinstance(t, (Transform, str)):
        return [Transform(t)]
    return [Transform(x) for x in t]


def zscore(values: np.ndarray, name: str = "series") -> np.ndarray:
    """Standardize with the non-missing sample mean and sample std (n-1)."""
    x = np.asarray(values, dtype=float)
    ok = ~np.isnan(x)
    if ok.sum() < 2:
        raise RegressionError(f"cannot z-score {name}: fewer than 2 observations")
    mean = x[ok].mean()
    centered = x - mean
    std = np.sqrt((centered[ok] ** 2).sum() / (ok.sum() - 1))
    if std == 0 or not np.isfinite(std) or std <= 1e-14 * max(abs(mean), 1.0):
        raise RegressionError(f"cannot z-score {name}: constant series")
    return centered / std


def transform_series(
    dates: Sequence[date],
    values: Sequence[float | None],
    transform=Transform.LEVEL,
    name: str = "series",
) -> np.ndarray:
    """Apply a transform (or a list of transforms, in order) to a daily series.

    Differences use the value on the previous calendar day; when that day is
    absent or missing the result is missing (NaN). A percentage change with a
    non-positive prior value is missing too.
    """
    dates = list(dates)
    for a, b in zip(dates, dates[1:]):
        if b <= a:
            raise ValueError(f"{name}: dates must be strictly increasing ({a} then {b})")
    x = np.array([np.nan if v is None else float(v) for v in values], dtype=float)
    if len(x) != len(dates):
        raise ValueError(f"{name}: {len(dates)} dates but {len(x)} values")
    has_prev = np.zeros(len(x), dtype=bool)
    for i in range(1, len(dates)):
        has_prev[i] = dates[i] - dates[i - 1] == timedelta(days=1)

    for step in _steps(transform):
        if step is Transform.LEVEL:
            continue
        if step is Transform.ZSCORE:
            x = zscore(x, name)
            continue
        prev = np.full_like(x, np.nan)
        prev[1:] = x[:-1]
        prev[~has_prev] = np.nan
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            if step is Transform.FIRST_DIFF:
                x = x - prev
            else:
                x = np.where(prev > 0, (x - prev) / prev, np.nan)
    return x


def dummy_v2(d: date) -> int:
    return int(d >= V2_LAUNCH)


def dummy_v3(d: date) -> int:
    return int(d >= V3_LAUNCH)


def dummy_hack(d: date, hack_dates: Iterable[date]) -> int:
    """1 iff some hack happened on ``d`` or within the 6 days before it."""
    lo = d - timedelta(days=HACK_WINDOW_DAYS - 1)
    return int(any(lo <= h <= d for h in hack_dates))


# ---------------------------------------------------------------------------
# OLS


@dataclass(frozen=True)
class Estimate:
    coefficient: float
    std_error: float
    t_statistic: float

    @property
    def stars(self) -> str:
        t = abs(self.t_statistic)
        for crit, s in STAR_LEVELS:
            if t >= crit:
                return s
        return ""


@dataclass
class RegressionResult:
    names: list[str]
    coefficients: dict[str, Estimate]
    intercept: Estimate
    n_obs: int
    r_squared: float
    adj_r_squared: float
    residuals: np.ndarray = field(repr=False)
    dependent: str = ""
    n_dropped: int = 0

    def __getitem__(self, name: str) -> Estimate:
        return self.coefficients[name]


def _first_dependent_column(R: np.ndarray, tol: float) -> int | None:
    diag = np.abs(np.diag(R))
    scale = diag.max() if diag.size else 0.0
    for j, v in enumerate(diag):
        if v <= tol * scale:
            return j
    return None


def ols_fit(X: np.ndarray, y: np.ndarray, names: Sequence[str] | None = None) -> RegressionResult:
    """Fit ``y = X b + e`` where ``X`` already holds the intercept column.

    ``names`` labels the columns of ``X``; by convention the first column is
    the intercept. Raises :class:`RegressionError` when ``n <= k`` or when a
    column is linearly dependent on the ones before it.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    names = list(names) if names is not None else ["const"] + [f"x{j}" for j in range(1, k)]
    if len(names) != k:
        raise ValueError(f"{k} columns but {len(names)} names")
    if n <= k:
        raise RegressionError(f"need more observations than parameters (n={n}, k={k})")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise RegressionError("design or response contains missing/non-finite values")

    Q, R = np.linalg.qr(X, mode="reduced")
    bad = _first_dependent_column(R, 1e-10)
    if bad is not None:
        raise RegressionError(f"design matrix is rank deficient: column {names[bad]!r} is collinear with earlier columns")

    beta = np.linalg.solve(R, Q.T @ y)
    resid = y - X @ beta
    sse = float(resid @ resid)
    dof = n - k
    s2 = sse / dof
    R_inv = np.linalg.solve(R, np.eye(k))
    se = np.sqrt(s2 * np.einsum("ij,ij->i", R_inv, R_inv))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = beta / se
    centered = y - y.mean()
    tss = float(centered @ centered)
    r2 = 1.0 - sse / tss if tss > 0 else float("nan")
    adj = 1.0 - (1.0 - r2) * (n - 1) / dof if tss > 0 else float("nan")

    est = [Estimate(float(b), float(s), float(tt)) for b, s, tt in zip(beta, se, t)]
    return RegressionResult(
        names=names[1:],
        coefficients=dict(zip(names[1:], est[1:])),
        intercept=est[0],
        n_obs=n,
        r_squared=r2,
        adj_r_squared=adj,
        residuals=resid,
    )


# ---------------------------------------------------------------------------
# Model specification


@dataclass(frozen=True)
class Variable:
    name: str
    transform: tuple[Transform, ...] = (Transform.LEVEL,)
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "transform", tuple(_steps(self.transform)))
        if not self.label:
            object.__setattr__(self, "label", self.name)


@dataclass(frozen=True)
class Dummy:
    name: str  # one of "v2", "v3", "hack"
    label: str = ""

    def __post_init__(self):
        if self.name not in ("v2", "v3", "hack"):
            raise ValueError(f"unknown dummy rule {self.name!r}")
        if not self.label:
            object.__setattr__(self, "label", {"v2": "V2", "v3": "V3", "hack": "Hack"}[self.name])

    def values(self, dates: Sequence[date], hack_dates: Sequence[date] = ()) -> np.ndarray:
        if self.name == "v2":
            return np.array([dummy_v2(d) for d in dates], dtype=float)
        if self.name == "v3":
            return np.array([dummy_v3(d) for d in dates], dtype=float)
        hd = sorted(hack_dates)
        return np.array([dummy_hack(d, hd) for d in dates], dtype=float)


@dataclass(frozen=True)
class RegressionSpec:
    """One model: dependent ~ intercept + regressors + dummies.

    In the design matrix (and in rendered tables) the dummies sit right after
    the first regressor, which is the risk measure.
    """

    dependent: Variable
    regressors: tuple[Variable, ...]
    dummies: tuple[Dummy, ...] = ()
    standardize: bool = True

    def __post_init__(self):
        names = [v.label for v in self.regressors] + [d.label for d in self.dummies]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise ValueError(f"duplicate regressors: {sorted(dupes)}")

    def terms(self) -> list[Variable | Dummy]:
        return [*self.regressors[:1], *self.dummies, *self.regressors[1:]]


@dataclass
class Panel:
    """Date-indexed columns of floats (NaN = missing)."""

    dates: list[date]
    columns: dict[str, np.ndarray]

    def __len__(self) -> int:
        return len(self.dates)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise KeyError(f"variable {name!r} not in panel (have: {', '.join(sorted(self.columns))})") from None


def _num(v) -> float:
    return np.nan if v is None else float(v)


def merge_panels(daily_rows: Sequence, factor_rows: Sequence) -> Panel:
    """Inner-join daily metric rows and factor rows on date.

    Accepts any row objects exposing a ``date`` attribute plus numeric
    fields (``DailyPanelRow``/``FactorPanelRow`` or plain mappings).
    """

    def as_dict(r) -> dict:
        if isinstance(r, Mapping):
            return dict(r)
        return {k: getattr(r, k) for k in r.__dataclass_fields__}

    left = {d["date"]: d for d in map(as_dict, daily_rows)}
    right = {d["date"]: d for d in map(as_dict, factor_rows)}
    dates = sorted(set(left) & set(right))
    names: list[str] = []
    for src in (left, right):
        if src:
            for k in next(iter(src.values())):
                if k != "date" and k not in names:
                    names.append(k)
    cols = {}
    for name in names:
        src = right if any(name in right[d] for d in dates[:1]) else left
        cols[name] = np.array([_num(src[d].get(name)) for d in dates], dtype=float)
    return Panel(dates, cols)


def run_model(panel: Panel, spec: RegressionSpec, hack_dates: Sequence[date] = ()) -> RegressionResult:
    """Transform, listwise-delete, optionally standardize, and fit one spec.

    Standardization happens on the estimation sample (after deletion) and
    leaves dummies as 0/1.
    """
    cols: list[np.ndarray] = []
    labels: list[str] = []
    is_dummy: list[bool] = []
    y = transform_series(panel.dates, panel.column(spec.dependent.name), spec.dependent.transform, spec.dependent.name)
    for term in spec.terms():
        if isinstance(term, Dummy):
            cols.append(term.values(panel.dates, hack_dates))
            is_dummy.append(True)
        else:
            cols.append(transform_series(panel.dates, panel.column(term.name), term.transform, term.name))
            is_dummy.append(False)
        labels.append(term.label)

    data = np.column_stack([y, *cols]) if cols else y[:, None]
    keep = ~np.isnan(data).any(axis=1)
    n = int(keep.sum())
    k = len(cols) + 1
    dropped = len(panel) - n
    if n <= k:
        audit = ", ".join(
            f"{lab}: {int(np.isnan(c).sum())} missing"
            for lab, c in zip([spec.dependent.label, *labels], [y, *cols])
        )
        raise RegressionError(f"{n} complete rows left for {k} parameters after listwise deletion ({audit})")

    yk = y[keep]
    Xcols = [c[keep] for c in cols]
    if spec.standardize:
        yk = zscore(yk, spec.dependent.label)
        Xcols = [c if dm else zscore(c, lab) for c, dm, lab in zip(Xcols, is_dummy, labels)]
    X = np.column_stack([np.ones(n), *Xcols])
    res = ols_fit(X, yk, ["const", *labels])
    res.dependent = spec.dependent.label
    res.n_dropped = dropped
    return res


# ---------------------------------------------------------------------------
# Preset suites

DEFAULT_DELTA: dict[str, Transform] = {
    "mktc_f": Transform.PCT_CHANGE,
    "mktc_c": Transform.PCT_CHANGE,
    "token_price_usd": Transform.PCT_CHANGE,
    "tvl_usd": Transform.PCT_CHANGE,
    "revenue_usd": Transform.PCT_CHANGE,
    "outstanding_loan_usd": Transform.PCT_CHANGE,
    "outstanding_deposit_usd": Transform.PCT_CHANGE,
    "holder_count": Transform.FIRST_DIFF,
    "active_users": Transform.FIRST_DIFF,
    "developers": Transform.FIRST_DIFF,
}

RISK_MEASURES: tuple[Variable, ...] = (
    Variable("liquidity_usd", label="Liquidity"),
    Variable("utilization", label="Utilization"),
    Variable("repeat_deposit_ratio", label="Repeat deposit ratio"),
    Variable("repeat_loan_ratio", label="Repeat loan ratio"),
)


@dataclass(frozen=True)
class Suite:
    name: str
    title: str
    protocol: str  # "aave" | "compound"
    dependents: tuple[Variable, ...]
    controls: tuple[Variable, ...]
    dummies: tuple[Dummy, ...] = ()
    mainstream: bool = False

    def specs(self, standardize: bool = True) -> list[list[RegressionSpec]]:
        """Specs grouped by risk measure: 4 panels x 6 dependents."""
        return [
            [
                RegressionSpec(dep, (risk, *self.controls), self.dummies, standardize)
                for dep in self.dependents
            ]
            for risk in RISK_MEASURES
        ]


def _delta(name: str, label: str, delta_map: Mapping[str, Transform]) -> Variable:
    return Variable(name, (delta_map.get(name, Transform.PCT_CHANGE),), f"Δ {label}")


def _level(name: str, label: str) -> Variable:
    return Variable(name, (Transform.LEVEL,), label)


def preset_suites(delta_map: Mapping[str, Transform | str] | None = None) -> dict[str, Suite]:
    """The eight regression suites keyed ``eq10`` .. ``eq17``.

    ``delta_map`` overrides how individual variables are differenced
    (``pct_change`` or ``first_diff``).
    """
    dm = dict(DEFAULT_DELTA)
    for k, v in (delta_map or {}).items():
        dm[k] = Transform(v)

    def dependents(token: str, revenue: Variable) -> tuple[Variable, ...]:
        return (
            _delta("mktc_f", "MktC_F", dm),
            _delta("mktc_c", "MktC_C", dm),
            revenue,
            _delta("tvl_usd", "TVL", dm),
            _delta("token_price_usd", token, dm),
            _delta("holder_count", f"{token} holder", dm),
        )

    aave_deps = dependents("AAVE", _level("revenue_usd", "Revenue"))
    comp_deps = dependents("COMP", _delta("revenue_usd", "Revenue", dm))

    aave_controls = (
        _delta("outstanding_loan_usd", "Outstanding loan", dm),
        _delta("outstanding_deposit_usd", "Outstanding deposit", dm),
        _level("deposit_vol_usd", "Deposit vol usd"),
        _level("loan_vol_usd", "Loan vol usd"),
        _level("liquidation_usd", "Liquidation usd"),
        _delta("active_users", "Active user", dm),
        _delta("developers", "Developer", dm),
    )
    comp_controls = (
        _delta("outstanding_loan_usd", "Outstanding loan", dm),
        _delta("outstanding_deposit_usd", "Outstanding deposit", dm),
        _level("loan_vol_usd", "Loan vol usd"),
        _level("liquidation_usd", "Liquidation usd"),
        _level("active_users", "Active user"),
        _delta("developers", "Developer", dm),
    )
    v2, v3, hack = Dummy("v2"), Dummy("v3"), Dummy("hack")

    suites = [
        Suite("eq10", "The effects of liquidity risks on Aave protocol", "aave", aave_deps, aave_controls),
        Suite("eq11", "The effects of liquidity risks on Compound protocol", "compound", comp_deps, comp_controls),
        Suite("eq12", "The effects of liquidity risks and Aave v2 on Aave protocol", "aave", aave_deps, aave_controls, (v2,)),
        Suite("eq13", "The effects of liquidity risks and Compound v3 on Compound protocol", "compound", comp_deps, comp_controls, (v3,)),
        Suite("eq14", "The effects of liquidity risks and DeFi hacks on Aave protocol", "aave", aave_deps, aave_controls, (hack,)),
        Suite("eq15", "The effects of liquidity risks and DeFi hacks on Compound protocol", "compound", comp_deps, comp_controls, (hack,)),
        Suite("eq16", "The effects of liquidity risks caused by mainstream assets on Aave protocol", "aave", aave_deps, aave_controls, (v2, hack), True),
        Suite("eq17", "The effects of liquidity risks caused by mainstream assets on Compound protocol", "compound", comp_deps, comp_controls, (v3, hack), True),
    ]
    return {s.name: s for s in suites}


@dataclass
class SuiteResult:
    suite: Suite
    # panels[risk_index][dependent_index] -> result or error message
    panels: list[list[RegressionResult | str]]
    specs: list[list[RegressionSpec]]


def run_suite(
    panel: Panel,
    suite: Suite,
    *,
    standardize: bool = True,
    hack_dates: Sequence[date] = (),
) -> SuiteResult:
    specs = suite.specs(standardize)
    panels: list[list[RegressionResult | str]] = []
    for row in specs:
        out: list[RegressionResult | str] = []
        for spec in row:
            try:
                out.append(run_model(panel, spec, hack_dates))
            except RegressionError as exc:
                log.warning("%s %s ~ %s: %s", suite.name, spec.dependent.label, spec.regressors[0].label, exc)
                out.append(str(exc))
        panels.append(out)
    return SuiteResult(suite, panels, specs)


# ---------------------------------------------------------------------------
# Table rendering


def fmt2(x: float) -> str:
    if not np.isfinite(x):
        return "nan" if np.isnan(x) else ("inf" if x > 0 else "-inf")
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def format_cell(e: Estimate) -> str:
    return f"{fmt2(e.coefficient)}{e.stars} ({fmt2(e.t_statistic)})"


def _panel_grid(result: SuiteResult, i: int) -> tuple[str, list[str], list[list[str]]]:
    specs = result.specs[i]
    fits = result.panels[i]
    title = f"Panel {chr(ord('A') + i)}: {RISK_MEASURES[i].label}"
    header = [s.dependent.label for s in specs]
    labels = [t.label for t in specs[0].terms()]
    rows = []
    for lab in labels:
        rows.append([lab] + [format_cell(f[lab]) if isinstance(f, RegressionResult) else "n/a" for f in fits])
    rows.append(["N"] + [str(f.n_obs) if isinstance(f, RegressionResult) else "n/a" for f in fits])
    rows.append(["Adj R-sq"] + [fmt2(f.adj_r_squared) if isinstance(f, RegressionResult) else "n/a" for f in fits])
    return title, header, rows


def render_tsv(result: SuiteResult) -> str:
    lines = [f"{result.suite.name}\t{result.suite.title}"]
    for i in range(len(RISK_MEASURES)):
        title, header, rows = _panel_grid(result, i)
        n = len(header)
        lines.append(title)
        lines.append("\t".join([""] + [f"({j + 1})" for j in range(n)]))
        lines.append("\t".join([""] + header))
        lines.extend("\t".join(r) for r in rows)
    return "\n".join(lines) + "\n"


def render_markdown(result: SuiteResult) -> str:
    out = [f"## {result.suite.name}: {result.suite.title}", ""]
    for i in range(len(RISK_MEASURES)):
        title, header, rows = _panel_grid(result, i)
        out.append(f"### {title}")
        out.append("")
        out.append("| | " + " | ".join(f"({j + 1}) {h}" for j, h in enumerate(header)) + " |")
        out.append("|---" * (len(header) + 1) + "|")
        out.extend("| " + " | ".join(r) + " |" for r in rows)
        out.append("")
    out.append("T-statistics in parentheses. *, **, *** denote significance at the 10%, 5% and 1% levels.")
    return "\n".join(out) + "\n"
