"""Command-line entry point: ``lprisk ingest-check | metrics | regress | simulate``.

Exit codes: 0 success, 1 domain error (bad data, failed replay or fit),
2 usage error.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import click
import yaml

from . import __version__
from .econometrics import RegressionError, merge_panels, preset_suites, render_markdown, render_tsv, run_suite
from .ingest import (
    FACTOR_FIELDS,
    IngestError,
    bundled_hack_calendar,
    mainstream_assets,
    parse_asset_list,
    parse_events,
    parse_factor_panel,
    parse_hack_calendar,
    serialize_events,
    serialize_factor_panel,
)
from .ledger import LedgerError
from .metrics import build_daily_panel
from .reports import daily_panel_csv, parse_daily_panel, stats_markdown
from .simgen import ConfigError, generate, load_config

log = logging.getLogger("lprisk")

MANIFEST = "manifest.json"
MD_FOOTER = "<!-- manifest: manifest.json -->\n"


class DomainError(click.ClickException):
    exit_code = 1

    def show(self, file=None) -> None:
        color = False if os.environ.get("NO_COLOR") else None
        click.secho(f"error: {self.format_message()}", err=True, fg="red", color=color)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def _write_manifest(out: Path, command: str, inputs: list[Path], outputs: list[Path], **flags) -> None:
    manifest = {
        "tool": "lprisk",
        "version": __version__,
        "command": command,
        "created_utc": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in inputs],
        "flags": flags,
        "outputs": [{"path": p.name, "sha256": _sha256(p)} for p in outputs],
    }
    _write(out / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _event_format(path: Path, fmt: str) -> str:
    if fmt != "auto":
        return fmt
    return "jsonl" if path.suffix.lower() in (".jsonl", ".ndjson") else "csv"


def _load_events(path: Path, fmt: str, strict: bool):
    try:
        result = parse_events(path.read_bytes(), _event_format(path, fmt), strict=strict)
    except IngestError as exc:
        raise DomainError(f"{path}: {exc}") from None
    except UnicodeDecodeError:
        raise DomainError(f"{path}: not valid UTF-8") from None
    for d in result.diagnostics:
        log.warning("%s: %s", path, d)
    return result


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="lprisk")
@click.option("-v", "--verbose", count=True, help="More logging (repeat for debug).")
def main(verbose: int) -> None:
    """Liquidity-risk analytics for pool-based lending protocols."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@main.command("ingest-check")
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--strict", is_flag=True, help="Treat any diagnostic as fatal (nonzero exit).")
@click.option("--format", "fmt", type=click.Choice(["auto", "csv", "jsonl"]), default="auto", show_default=True,
              help="Event log format; auto picks by file suffix.")
def ingest_check(paths: tuple[Path, ...], strict: bool, fmt: str) -> None:
    """Validate event logs, factor panels or hack calendars and list diagnostics."""
    total = 0
    for path in paths:
        try:
            text = path.read_bytes().decode("utf-8")
        except UnicodeDecodeError:
            click.echo(f"{path}: not valid UTF-8")
            total += 1
            continue
        head = text.split("\n", 1)[0].strip()
        diags: list[str] = []
        try:
            if head.startswith("date,protocol"):
                parse_hack_calendar(text)
            elif head.split(",")[0] == "date" and set(FACTOR_FIELDS) <= set(head.split(",")):
                parse_factor_panel(text)
            else:
                diags = [str(d) for d in parse_events(text, _event_format(path, fmt)).diagnostics]
        except IngestError as exc:
            diags = [str(exc)]
        for d in diags:
            click.echo(f"{path}: {d}")
        click.echo(f"{path}: {len(diags)} diagnostics")
        total += len(diags)
    if strict and total:
        raise DomainError(f"{total} diagnostics in strict mode")


@main.command("metrics")
@click.argument("events", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", "out", required=True, type=click.Path(file_okay=False, path_type=Path),
              help="Output directory for daily_panel.csv, stats.md and manifest.json.")
@click.option("--assets", "assets", default=None,
              help="Restrict to symbols listed in this file (one per line), or 'mainstream' for the bundled list.")
@click.option("--strict", is_flag=True, help="Reject malformed rows and ledger overdrafts instead of skipping/clamping.")
@click.option("--format", "fmt", type=click.Choice(["auto", "csv", "jsonl"]), default="auto", show_default=True)
def metrics_cmd(events: Path, out: Path, assets: str | None, strict: bool, fmt: str) -> None:
    """Replay an event log and write the daily panel plus descriptive statistics."""
    inputs = [events]
    asset_filter = None
    if assets == "mainstream":
        asset_filter = mainstream_assets()
    elif assets is not None:
        apath = Path(assets)
        if not apath.is_file():
            raise click.BadParameter(f"no such file: {assets}", param_hint="--assets")
        asset_filter = parse_asset_list(apath.read_text(encoding="utf-8"))
        inputs.append(apath)

    parsed = _load_events(events, fmt, strict)
    if not parsed.events:
        raise DomainError(f"{events}: no events")
    try:
        rows = build_daily_panel(parsed.events, asset_filter, strict=strict)
    except (LedgerError, ValueError) as exc:
        raise DomainError(f"{events}: {exc}") from None

    panel = _write(out / "daily_panel.csv", daily_panel_csv(rows))
    stats = _write(out / "stats.md", stats_markdown(rows))
    _write_manifest(out, "metrics", inputs, [panel, stats], strict=strict, assets=assets,
                    diagnostics=len(parsed.diagnostics))
    click.echo(f"{len(rows)} days, {len(parsed.diagnostics)} diagnostics -> {out}")


SUITES = preset_suites()


@main.command("regress")
@click.argument("panel", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--factors", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Factor panel CSV for the protocol being explained.")
@click.option("--suite", "suites", required=True, multiple=True, type=click.Choice(sorted(SUITES)),
              help="Preset model suite (repeatable).")
@click.option("--standardize/--raw", default=True, show_default=True,
              help="Z-score the dependent and non-dummy regressors before fitting.")
@click.option("--delta-map", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
              help="YAML/JSON mapping variable -> pct_change|first_diff overriding the default differencing.")
@click.option("--hacks", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
              help="Hack calendar CSV (date,protocol); defaults to the bundled 2020-2022 calendar.")
@click.option("--out", "out", required=True, type=click.Path(file_okay=False, path_type=Path),
              help="Output directory for <suite>.tsv, <suite>.md and manifest.json.")
def regress_cmd(panel: Path, factors: Path, suites: tuple[str, ...], standardize: bool,
                delta_map: Path | None, hacks: Path | None, out: Path) -> None:
    """Fit preset regression suites on a daily panel merged with a factor panel."""
    inputs = [panel, factors]
    try:
        daily = parse_daily_panel(panel.read_text(encoding="utf-8"))
        frows = parse_factor_panel(factors.read_text(encoding="utf-8"))
        if hacks is not None:
            hack_dates = [d for d, _ in parse_hack_calendar(hacks.read_text(encoding="utf-8"))]
            inputs.append(hacks)
        else:
            hack_dates = [d for d, _ in bundled_hack_calendar()]
    except IngestError as exc:
        raise DomainError(str(exc)) from None

    dmap = None
    if delta_map is not None:
        dmap = yaml.safe_load(delta_map.read_text(encoding="utf-8")) or {}
        if not isinstance(dmap, dict):
            raise DomainError(f"{delta_map}: expected a mapping")
        inputs.append(delta_map)
    try:
        catalog = preset_suites(dmap)
    except ValueError as exc:
        raise DomainError(f"--delta-map: {exc}") from None

    merged = merge_panels(daily, frows)
    written = []
    for name in suites:
        suite = catalog[name]
        k = 2 + len(suite.dummies) + len(suite.controls)
        if len(merged) < k + 2:
            raise DomainError(f"merged panel has {len(merged)} rows; suite {name} needs at least {k + 2}")
        if suite.mainstream:
            log.info("%s expects a panel built with --assets mainstream", name)
        try:
            result = run_suite(merged, suite, standardize=standardize, hack_dates=hack_dates)
        except (RegressionError, KeyError) as exc:
            raise DomainError(f"{name}: {exc}") from None
        written.append(_write(out / f"{name}.tsv", render_tsv(result)))
        written.append(_write(out / f"{name}.md", render_markdown(result) + "\n" + MD_FOOTER))
    _write_manifest(out, "regress", inputs, written, suites=list(suites), standardize=standardize)
    click.echo(f"{len(suites)} suites, {len(merged)} merged days -> {out}")


@main.command("simulate")
@click.argument("config", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", "out", required=True, type=click.Path(file_okay=False, path_type=Path),
              help="Output directory for events.csv, factors.csv and manifest.json.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
def simulate_cmd(config: Path, out: Path, seed: int | None) -> None:
    """Generate a synthetic event log and factor panel from a scenario config."""
    try:
        cfg = load_config(config)
        if seed is not None:
            cfg.seed = seed
            cfg.validate()
        events, factors = generate(cfg)
    except (ConfigError, yaml.YAMLError) as exc:
        raise DomainError(f"{config}: {exc}") from None
    ev = _write(out / "events.csv", serialize_events(events))
    fa = _write(out / "factors.csv", serialize_factor_panel(factors))
    _write_manifest(out, "simulate", [config], [ev, fa], seed=cfg.seed)
    click.echo(f"{len(events)} events over {cfg.horizon_days} days -> {out}")


if __name__ == "__main__":  # pragma: no cover
    main()
