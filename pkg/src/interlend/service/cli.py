"""Command line entry points.

`node` serves and feeds one community node, `sim` runs the in-process
multi-node simulation, `report` renders the reciprocity cost comparison.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from ..acquisition import load_usage_csv
from ..errors import InterlendError
from ..ledger import ScenarioInputs, compare_scenarios, report_csv
from ..money import cents_to_str, to_cents
from ..routing import HoldingsIndex
from ..compliance import LicenceStore
from .config import load_config
from .node import ServiceNode
from .sim import SimScenario, report_bytes, run_simulation


@click.group()
def main():
    """Federated interlibrary resource-sharing node."""


@main.group()
def node():
    """Run and feed a community node."""


def _data_dir(config, override: str | None) -> Path:
    if override:
        return Path(override)
    if config.data_dir:
        return config.data_dir
    return Path(".")


@node.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--host", default=None, help="Override the configured address.")
@click.option("--port", default=None, type=int)
def serve(config_path, host, port):
    """Serve the HTTP API for one node."""
    import uvicorn

    from .http import create_app

    config = load_config(config_path)
    data_dir = _data_dir(config, None)
    log_path = None
    if config.data_dir:
        config.data_dir.mkdir(parents=True, exist_ok=True)
        log_path = config.data_dir / "events.log"
    node_runtime = ServiceNode(config, log_path=log_path)
    holdings_file = data_dir / "holdings.csv"
    if holdings_file.exists():
        count = node_runtime.ingest_holdings(holdings_file)
        click.echo(f"loaded {count} holdings rows")
    licence_file = data_dir / "licences.csv"
    if licence_file.exists():
        count = node_runtime.ingest_licences(licence_file)
        click.echo(f"loaded {count} licence records")
    usage_file = data_dir / "usage.csv"
    if usage_file.exists():
        count = node_runtime.ingest_usage(usage_file)
        click.echo(f"loaded {count} usage rows")
    app = create_app(node_runtime)
    listen_host, _, listen_port = config.listen_address.partition(":")
    uvicorn.run(app, host=host or listen_host or "127.0.0.1",
                port=port or int(listen_port or 8042), log_level="warning")


def _ingest(kind: str, source: str, config_path: str | None,
            data_dir: str | None) -> None:
    path = Path(source)
    if kind == "holdings":
        staging = HoldingsIndex()
        count = staging.load_csv(path)
    elif kind == "licences":
        count = len(LicenceStore.from_csv(path))
    else:
        count = len(load_usage_csv(path))
    target = None
    if config_path:
        config = load_config(config_path)
        target = _data_dir(config, data_dir)
    elif data_dir:
        target = Path(data_dir)
    if target is not None:
        target.mkdir(parents=True, exist_ok=True)
        destination = target / f"{kind}.csv"
        destination.write_text(path.read_text(encoding="utf-8"),
                               encoding="utf-8")
        click.echo(f"validated {count} {kind} rows -> {destination}")
    else:
        click.echo(f"validated {count} {kind} rows")


@node.command("ingest-holdings")
@click.argument("csv_file", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--data-dir", type=click.Path())
def ingest_holdings(csv_file, config_path, data_dir):
    """Validate and stage a holdings CSV (key,partner_id,year_start,year_end)."""
    _ingest("holdings", csv_file, config_path, data_dir)


@node.command("ingest-licences")
@click.argument("csv_file", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--data-dir", type=click.Path())
def ingest_licences(csv_file, config_path, data_dir):
    """Validate and stage a licence CSV (publisher,container,...)."""
    _ingest("licences", csv_file, config_path, data_dir)


@node.command("ingest-usage")
@click.argument("csv_file", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--data-dir", type=click.Path())
def ingest_usage(csv_file, config_path, data_dir):
    """Validate and stage a COUNTER-style usage CSV."""
    _ingest("usage", csv_file, config_path, data_dir)


@main.group()
def sim():
    """Deterministic multi-node simulation."""


@sim.command()
@click.option("--seed", required=True, type=int)
@click.option("--nodes", "node_count", required=True, type=int)
@click.option("--requests", "request_count", required=True, type=int)
@click.option("--scenario", "scenario_path", type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path())
def run(seed, node_count, request_count, scenario_path, out_path):
    """Run the simulation and print its canonical JSON report."""
    scenario = None
    if scenario_path:
        with open(scenario_path, encoding="utf-8") as handle:
            scenario = SimScenario.from_dict(json.load(handle))
    report = run_simulation(seed, node_count, request_count, scenario)
    payload = report_bytes(report)
    if out_path:
        Path(out_path).write_bytes(payload + b"\n")
        click.echo(f"report written to {out_path}")
    else:
        sys.stdout.buffer.write(payload + b"\n")


@main.group()
def report():
    """Service reports."""


@report.command("cost-comparison")
@click.argument("inputs_file", type=click.Path(exists=True))
@click.option("--csv", "csv_out", type=click.Path(),
              help="Also write the comparison as CSV.")
def cost_comparison(inputs_file, csv_out):
    """Reciprocity vs pay-per-document cost comparison from a JSON file.

    The file carries euro amounts: sent_requests, lent_documents,
    avg_fee_per_doc, shipping_return_total, shipping_out_total,
    user_invoice_total, fee_paid_to_nonreciprocal,
    fee_received_from_nonreciprocal.
    """
    with open(inputs_file, encoding="utf-8") as handle:
        raw = json.load(handle)
    inputs = ScenarioInputs(
        sent_requests=int(raw["sent_requests"]),
        lent_documents=int(raw["lent_documents"]),
        avg_fee_per_doc=to_cents(raw["avg_fee_per_doc"]),
        shipping_return_total=to_cents(raw["shipping_return_total"]),
        shipping_out_total=to_cents(raw["shipping_out_total"]),
        user_invoice_total=to_cents(raw["user_invoice_total"]),
        fee_paid_to_nonreciprocal=to_cents(raw["fee_paid_to_nonreciprocal"]),
        fee_received_from_nonreciprocal=to_cents(
            raw["fee_received_from_nonreciprocal"]),
    )
    result = compare_scenarios(inputs)
    with_side = result["with_reciprocity"]
    without = result["without_reciprocity"]
    click.echo("Cost comparison (EUR)")
    click.echo(f"  with reciprocity:    costs {cents_to_str(with_side['costs'])}"
               f"  revenues {cents_to_str(with_side['revenues'])}"
               f"  total {cents_to_str(with_side['total'])}")
    click.echo(f"  without reciprocity: costs {cents_to_str(without['costs'])}"
               f"  revenues {cents_to_str(without['revenues'])}"
               f"  total {cents_to_str(without['total'])}")
    click.echo(f"  fee line paid (without): {cents_to_str(without['fee_paid'])}")
    click.echo(f"  fee line received (without): "
               f"{cents_to_str(without['fee_received'])}")
    click.echo(f"  avg cost per document: "
               f"{cents_to_str(result['avg_cost_per_doc_with'])}"
               f" vs {cents_to_str(result['avg_cost_per_doc_without'])}")
    if csv_out:
        Path(csv_out).write_text(report_csv(result), encoding="utf-8")
        click.echo(f"CSV written to {csv_out}")


def entry() -> int:
    try:
        main(standalone_mode=False)
        return 0
    except InterlendError as exc:
        click.echo(f"error [{exc.code}]: {exc.message}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(entry())
