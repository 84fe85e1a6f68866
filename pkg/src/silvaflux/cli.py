"""Pipeline command-line interface.

Subcommands mirror the methodology steps: ``convert`` (unit conversion),
``reconcile`` (mass-balance reconciliation plus Sankey output),
``scenario`` (what-if edits plus carbon comparison), ``report``
(reference-vs-baseline delta table), and ``carbon`` (standalone ledger).

Exit codes: 0 ok, 2 input error, 3 infeasible reconciliation, 4 scenario
error. Failures emit one JSON object on stderr. Outputs are written to a
temporary file and atomically renamed, never left partial.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from . import __version__, carbon, flow_model, report, scenario as scenario_mod, units
from .errors import (
    Infeasible,
    ParseError,
    ScenarioError,
    SilvafluxError,
)
from .flow_model import FlowGraph, observed_total, resolve_target
from .reconcile import ReconcileProblem, reconcile, residuals_csv

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_SCENARIO = 4

_INPUT_KEYS = (
    "products",
    "nodes",
    "flows",
    "observations",
    "coefficients",
    "scenario",
    "pool_params",
    "raw_flows",
)


@dataclass
class PipelineConfig:
    """Paths and options parsed from the TOML config file.

    Paths are resolved relative to the config file's directory; every file
    a subcommand needs is parsed before any computation starts.
    """

    base_dir: Path
    inputs: dict[str, Path] = field(default_factory=dict)
    default_sigma_rel: float = 0.10
    scale: float = 1.0
    period: str = ""
    years: int = 10
    out_dir: Optional[Path] = None

    @classmethod
    def load(cls, path: Path) -> "PipelineConfig":
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:  # pragma: no cover - version dependent
            import tomli as tomllib

        if not path.exists():
            raise ParseError(f"config file not found: {path}")
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ParseError(f"{path}: {exc}") from None
        base = path.parent
        cfg = cls(base_dir=base)
        for key, value in data.get("inputs", {}).items():
            if key not in _INPUT_KEYS:
                raise ParseError(f"{path}: [inputs]: unknown key {key!r}")
            cfg.inputs[key] = (base / value).resolve()
        options = data.get("options", {})
        cfg.default_sigma_rel = float(options.get("default_sigma_rel", 0.10))
        cfg.scale = float(options.get("scale", 1.0))
        cfg.period = str(options.get("period", ""))
        cfg.years = int(options.get("years", 10))
        if "out_dir" in options:
            cfg.out_dir = (base / options["out_dir"]).resolve()
        if not cfg.default_sigma_rel > 0:
            raise ParseError(f"{path}: default_sigma_rel must be > 0")
        if not cfg.scale > 0:
            raise ParseError(f"{path}: scale must be > 0")
        if cfg.years < 1:
            raise ParseError(f"{path}: years must be >= 1")
        return cfg

    def path(self, key: str) -> Path:
        try:
            candidate = self.inputs[key]
        except KeyError:
            raise ParseError(f"config is missing inputs.{key}") from None
        if not candidate.exists():
            raise ParseError(f"inputs.{key}: file not found: {candidate}")
        return candidate


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _write_outputs(out_dir: Path, outputs: Mapping[str, str]) -> None:
    for name, text in outputs.items():
        _atomic_write(out_dir / name, text)


def _load_graph(cfg: PipelineConfig) -> FlowGraph:
    graph = flow_model.read_graph(cfg.path("nodes"), cfg.path("flows"), cfg.period)
    violations = [
        v for v in flow_model.validate(graph) if v.code != "negative_quantity"
    ]
    if violations:
        raise ParseError(
            "graph is invalid: " + "; ".join(v.message for v in violations)
        )
    return graph


def _load_product_categories(cfg: PipelineConfig) -> dict[str, str]:
    products = flow_model.read_products(cfg.path("products"))
    return {pid: product.category for pid, product in products.items()}


def cmd_convert(cfg: PipelineConfig, out_dir: Path) -> int:
    table = units.read_conversion_table(cfg.path("coefficients"))
    products = flow_model.read_products(cfg.path("products"))
    raw = flow_model.read_flows(cfg.path("raw_flows"))
    converted = []
    for fl in raw:
        if fl.product not in products:
            raise ParseError(f"raw flow {fl.id!r}: unknown product {fl.product!r}")
        converted.append(
            flow_model.Flow(
                fl.id,
                fl.from_node,
                fl.to_node,
                fl.product,
                units.to_wfe(fl.quantity, fl.product, table),
            )
        )
    graph = FlowGraph.build((), converted, cfg.period)
    _write_outputs(out_dir, {"flows.csv": flow_model.flows_csv(graph)})
    return EXIT_OK


def cmd_reconcile(cfg: PipelineConfig, out_dir: Path) -> int:
    template = _load_graph(cfg)
    observations = flow_model.read_observations(cfg.path("observations"))
    problem = ReconcileProblem(template, observations, cfg.default_sigma_rel)
    result = reconcile(problem)
    svg, interchange = report.emit_sankey(result.graph, scale=cfg.scale)
    _write_outputs(
        out_dir,
        {
            "reconciled_flows.csv": flow_model.flows_csv(result.graph),
            "residuals.csv": residuals_csv(result),
            "reconciled.svg": svg,
            "reconciled.sankey.json": interchange,
        },
    )
    if result.underdetermined:
        keys = ", ".join(flow_model.flow_key_str(k) for k in result.underdetermined)
        print(f"warning: flows pinned only by balance/prior: {keys}", file=sys.stderr)
    return EXIT_OK


def cmd_scenario(cfg: PipelineConfig, out_dir: Path) -> int:
    baseline = _load_graph(cfg)
    sc = scenario_mod.read_scenario(cfg.path("scenario"))
    table = units.read_conversion_table(cfg.path("coefficients"))
    params, destinations = carbon.read_pool_params(cfg.path("pool_params"))
    categories = _load_product_categories(cfg)

    edited, diff = scenario_mod.apply(baseline, sc, table, destinations)

    highlights = {
        key: "highlighted-scenario"
        for key in diff.flow_deltas
        if key in edited.flow_by_key
    }
    svg, interchange = report.emit_sankey(edited, highlights, scale=cfg.scale)

    base_inflows = carbon.ledger_from_graph(baseline, table, destinations, categories)
    scen_inflows = carbon.ledger_from_graph(edited, table, destinations, categories)
    empty = carbon.PoolState()
    ledger_a = carbon.simulate(empty, [base_inflows] * cfg.years, params)
    ledger_b = carbon.simulate(empty, [scen_inflows] * cfg.years, params)
    delta = carbon.compare_ledgers(ledger_a, ledger_b)

    _write_outputs(
        out_dir,
        {
            "scenario_flows.csv": flow_model.flows_csv(edited),
            "scenario_diff.csv": scenario_mod.diff_csv(diff),
            "scenario.svg": svg,
            "scenario.sankey.json": interchange,
            "carbon_compare.csv": carbon.compare_csv(delta),
        },
    )
    return EXIT_OK


def cmd_report(cfg: PipelineConfig, out_dir: Path) -> int:
    baseline = _load_graph(cfg)
    observations = flow_model.read_observations(
        cfg.path("observations"), allow_missing_value=True
    )
    totals = report.destination_totals(baseline)
    observed: dict[str, Optional[float]] = {}
    for obs in observations:
        if obs.target_kind == "node_in":
            label = obs.target_key
        else:
            label = f"{obs.target_kind}:{obs.target_key}"
        if resolve_target(baseline, obs.target_kind, obs.target_key):
            totals.setdefault(
                label, observed_total(baseline, obs.target_kind, obs.target_key)
            )
        observed[label] = None if math.isnan(obs.value) else obs.value
    rows = report.build_delta_report(totals, observed)
    _write_outputs(out_dir, {"delta.csv": report.delta_csv(rows)})
    return EXIT_OK


def cmd_carbon(cfg: PipelineConfig, out_dir: Path) -> int:
    graph = _load_graph(cfg)
    table = units.read_conversion_table(cfg.path("coefficients"))
    params, destinations = carbon.read_pool_params(cfg.path("pool_params"))
    categories = _load_product_categories(cfg)
    inflows = carbon.ledger_from_graph(graph, table, destinations, categories)
    ledger = carbon.simulate(
        carbon.PoolState(), [inflows] * cfg.years, params
    )
    _write_outputs(out_dir, {"ledger.csv": carbon.ledger_csv(ledger)})
    return EXIT_OK


_COMMANDS = {
    "convert": cmd_convert,
    "reconcile": cmd_reconcile,
    "scenario": cmd_scenario,
    "report": cmd_report,
    "carbon": cmd_carbon,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="silvaflux",
        description="Mass-balanced wood supply-chain flows: reconciliation, "
        "scenarios, carbon accounting, Sankey output.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, type=Path,
                         help="pipeline TOML config file")
        cmd.add_argument("--out", type=Path, default=None,
                         help="output directory (overrides options.out_dir)")
    return parser


def _emit_error(exc: BaseException) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = PipelineConfig.load(args.config)
        out_dir = args.out or cfg.out_dir or Path("out")
        return _COMMANDS[args.command](cfg, Path(out_dir))
    except Infeasible as exc:
        _emit_error(exc)
        return EXIT_INFEASIBLE
    except ScenarioError as exc:
        _emit_error(exc)
        return EXIT_SCENARIO
    except (SilvafluxError, OSError, ValueError) as exc:
        _emit_error(exc)
        return EXIT_INPUT


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
