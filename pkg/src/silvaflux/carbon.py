"""Annual-step harvested-wood-products carbon ledger.

Tracks carbon in two pools per product category: products in use and
solid-waste disposal sites (SWDS). In-use stock decays by the discrete
first-order factor 2**(-1/half_life) per year; a share of what retires is
recycled back into use, a share enters the SWDS pool (which decays with
its own half-life, to emissions), and the rest is emitted the same year.
Energy-destined inflows are emitted the year they arrive; export-destined
inflows leave the ledger at the border.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .errors import NegativeStock, ParseError, UnclassifiedNode, YearMismatch
from .flow_model import FlowGraph
from .units import ConversionTable, to_carbon

DESTINATION_CLASSES = ("energy", "product", "export")


@dataclass(frozen=True)
class CategoryParams:
    """Decay and routing parameters for one product category."""

    half_life: float  # years; math.inf for non-decaying stock
    swds_fraction: float = 0.0
    swds_decay_half_life: float = 20.0
    recycling_rate: float = 0.0

    def __post_init__(self):
        if not self.half_life > 0:
            raise ValueError(f"half_life must be > 0, got {self.half_life}")
        if not 0.0 <= self.swds_fraction <= 1.0:
            raise ValueError(f"swds_fraction out of [0,1]: {self.swds_fraction}")
        if not self.swds_decay_half_life > 0:
            raise ValueError(
                f"swds_decay_half_life must be > 0, got {self.swds_decay_half_life}"
            )
        if not 0.0 <= self.recycling_rate < 1.0:
            raise ValueError(f"recycling_rate out of [0,1): {self.recycling_rate}")

    @property
    def retained_fraction(self) -> float:
        if math.isinf(self.half_life):
            return 1.0
        return 2.0 ** (-1.0 / self.half_life)

    @property
    def swds_retained_fraction(self) -> float:
        if math.isinf(self.swds_decay_half_life):
            return 1.0
        return 2.0 ** (-1.0 / self.swds_decay_half_life)


@dataclass(frozen=True)
class PoolParams:
    categories: Mapping[str, CategoryParams] = field(default_factory=dict)
    default: CategoryParams = CategoryParams(half_life=1.0)

    def for_category(self, category: str) -> CategoryParams:
        return self.categories.get(category, self.default)


@dataclass(frozen=True)
class PoolState:
    """Stocks in tC by product category at a point in time."""

    hwp_in_use: Mapping[str, float] = field(default_factory=dict)
    swds: Mapping[str, float] = field(default_factory=dict)

    def categories(self) -> set[str]:
        return set(self.hwp_in_use) | set(self.swds)


@dataclass(frozen=True)
class AnnualInflows:
    """One year's carbon inflows in tC by category, split by destination."""

    product: Mapping[str, float] = field(default_factory=dict)
    energy: Mapping[str, float] = field(default_factory=dict)
    export: Mapping[str, float] = field(default_factory=dict)

    def categories(self) -> set[str]:
        return set(self.product) | set(self.energy) | set(self.export)

    def total(self) -> float:
        return (
            sum(self.product.values())
            + sum(self.energy.values())
            + sum(self.export.values())
        )


@dataclass(frozen=True)
class AnnualFluxes:
    """One year's fluxes in tC by category."""

    inflow_from_harvest: Mapping[str, float]
    emitted_energy: Mapping[str, float]
    emitted_decay: Mapping[str, float]
    exported: Mapping[str, float]


def annual_step(
    state: PoolState, inflows: AnnualInflows, params: PoolParams
) -> tuple[PoolState, AnnualFluxes]:
    """Advance the pools one year; returns the next state and the fluxes.

    Inflows enter after the year's decay, so they are undecayed in their
    entry year. The conservation identity holds exactly in exact
    arithmetic: total inflow = change in stocks + emissions + exports.
    """
    for mapping in (
        state.hwp_in_use,
        state.swds,
        inflows.product,
        inflows.energy,
        inflows.export,
    ):
        for cat, value in mapping.items():
            if value < 0:
                raise NegativeStock(f"{cat}: {value}")

    categories = sorted(state.categories() | inflows.categories())
    hwp_next: dict[str, float] = {}
    swds_next: dict[str, float] = {}
    inflow_flux: dict[str, float] = {}
    energy_flux: dict[str, float] = {}
    decay_flux: dict[str, float] = {}
    export_flux: dict[str, float] = {}
    for cat in categories:
        cp = params.for_category(cat)
        stock = state.hwp_in_use.get(cat, 0.0)
        swds_stock = state.swds.get(cat, 0.0)
        retired = stock * (1.0 - cp.retained_fraction)
        recycled = retired * cp.recycling_rate
        discarded = retired - recycled
        to_swds = discarded * cp.swds_fraction
        swds_emitted = swds_stock * (1.0 - cp.swds_retained_fraction)

        product_in = inflows.product.get(cat, 0.0)
        energy_in = inflows.energy.get(cat, 0.0)
        export_in = inflows.export.get(cat, 0.0)

        hwp_next[cat] = stock - retired + recycled + product_in
        swds_next[cat] = swds_stock - swds_emitted + to_swds
        inflow_flux[cat] = product_in + energy_in + export_in
        energy_flux[cat] = energy_in
        decay_flux[cat] = (discarded - to_swds) + swds_emitted
        export_flux[cat] = export_in

    next_state = PoolState(hwp_in_use=hwp_next, swds=swds_next)
    fluxes = AnnualFluxes(inflow_flux, energy_flux, decay_flux, export_flux)
    return next_state, fluxes


@dataclass(frozen=True)
class CarbonLedger:
    """Annual time series of stocks and fluxes in tC by category.

    Stocks are end-of-year values; ``initial`` is the state the first year
    started from, so per-year stock changes are always well defined.
    """

    years: tuple[int, ...]
    categories: tuple[str, ...]
    initial: PoolState
    hwp_in_use: tuple[Mapping[str, float], ...]
    swds: tuple[Mapping[str, float], ...]
    inflow_from_harvest: tuple[Mapping[str, float], ...]
    emitted_energy: tuple[Mapping[str, float], ...]
    emitted_decay: tuple[Mapping[str, float], ...]
    exported: tuple[Mapping[str, float], ...]

    def totals(self, series_name: str) -> list[float]:
        series = getattr(self, series_name)
        return [sum(year_map.values()) for year_map in series]


def simulate(
    initial: PoolState,
    inflow_series: Sequence[AnnualInflows],
    params: PoolParams,
    start_year: int = 0,
) -> CarbonLedger:
    """Fold annual_step over a series of yearly inflows."""
    years = []
    hwp, swds, inflow, energy, decay, export = [], [], [], [], [], []
    state = initial
    categories: set[str] = initial.categories()
    for offset, inflows in enumerate(inflow_series):
        state, fluxes = annual_step(state, inflows, params)
        years.append(start_year + offset)
        categories |= state.categories() | inflows.categories()
        hwp.append(dict(state.hwp_in_use))
        swds.append(dict(state.swds))
        inflow.append(dict(fluxes.inflow_from_harvest))
        energy.append(dict(fluxes.emitted_energy))
        decay.append(dict(fluxes.emitted_decay))
        export.append(dict(fluxes.exported))
    return CarbonLedger(
        years=tuple(years),
        categories=tuple(sorted(categories)),
        initial=initial,
        hwp_in_use=tuple(hwp),
        swds=tuple(swds),
        inflow_from_harvest=tuple(inflow),
        emitted_energy=tuple(energy),
        emitted_decay=tuple(decay),
        exported=tuple(export),
    )


def ledger_from_graph(
    graph: FlowGraph,
    table: ConversionTable,
    destination_classes: Mapping[str, str],
    product_categories: Optional[Mapping[str, str]] = None,
) -> AnnualInflows:
    """Annual tC inflows implied by a graph's terminal-destined flows.

    Terminal nodes are sinks and exports; each must appear in
    ``destination_classes`` with one of energy/product/export. Flows are
    converted with the carbon density table and binned by the flow
    product's category (``product_categories`` maps product id to
    category; by default the product id is used as the category).
    """
    product: dict[str, float] = {}
    energy: dict[str, float] = {}
    export: dict[str, float] = {}
    bins = {"product": product, "energy": energy, "export": export}
    for fl in graph.flows:
        dst = graph.node_by_id.get(fl.to_node)
        if dst is None or dst.kind not in ("sink", "export"):
            continue
        klass = destination_classes.get(fl.to_node)
        if klass is None:
            raise UnclassifiedNode(
                f"terminal node {fl.to_node!r} has no destination class"
            )
        if klass not in DESTINATION_CLASSES:
            raise UnclassifiedNode(
                f"node {fl.to_node!r}: unknown destination class {klass!r}"
            )
        category = fl.product
        if product_categories is not None:
            category = product_categories.get(fl.product, fl.product)
        tc = to_carbon(fl.quantity, fl.product, table)
        bins[klass][category] = bins[klass].get(category, 0.0) + tc
    return AnnualInflows(product=product, energy=energy, export=export)


@dataclass(frozen=True)
class LedgerDelta:
    years: tuple[int, ...]
    inflow_from_harvest: tuple[float, ...]
    emitted_energy: tuple[float, ...]
    emitted_decay: tuple[float, ...]
    exported: tuple[float, ...]


def compare_ledgers(a: CarbonLedger, b: CarbonLedger) -> LedgerDelta:
    """Per-flux annual totals of b minus a."""
    if a.years != b.years:
        raise YearMismatch(f"year ranges differ: {a.years} vs {b.years}")
    deltas = {}
    for name in ("inflow_from_harvest", "emitted_energy", "emitted_decay", "exported"):
        totals_a = a.totals(name)
        totals_b = b.totals(name)
        deltas[name] = tuple(tb - ta for ta, tb in zip(totals_a, totals_b))
    return LedgerDelta(years=a.years, **deltas)


def ledger_csv(ledger: CarbonLedger) -> str:
    header = (
        "year,category,hwp_in_use_tc,swds_tc,inflow_from_harvest_tc,"
        "emitted_energy_tc,emitted_decay_tc,exported_tc"
    )
    lines = [header]
    for i, year in enumerate(ledger.years):
        for cat in ledger.categories:
            lines.append(
                f"{year},{cat},"
                f"{ledger.hwp_in_use[i].get(cat, 0.0):.3f},"
                f"{ledger.swds[i].get(cat, 0.0):.3f},"
                f"{ledger.inflow_from_harvest[i].get(cat, 0.0):.3f},"
                f"{ledger.emitted_energy[i].get(cat, 0.0):.3f},"
                f"{ledger.emitted_decay[i].get(cat, 0.0):.3f},"
                f"{ledger.exported[i].get(cat, 0.0):.3f}"
            )
    return "\n".join(lines) + "\n"


def compare_csv(delta: LedgerDelta) -> str:
    header = (
        "year,inflow_from_harvest_tc,emitted_energy_tc,emitted_decay_tc,exported_tc"
    )
    lines = [header]
    for i, year in enumerate(delta.years):
        lines.append(
            f"{year},{delta.inflow_from_harvest[i]:.3f},"
            f"{delta.emitted_energy[i]:.3f},{delta.emitted_decay[i]:.3f},"
            f"{delta.exported[i]:.3f}"
        )
    return "\n".join(lines) + "\n"


def read_pool_params(path) -> tuple[PoolParams, dict[str, str]]:
    """Load a pool-parameters TOML file.

    Layout: an optional ``[default]`` table, one ``[categories.<name>]``
    table per product category (fields half_life, swds_fraction,
    swds_decay_half_life, recycling_rate), and an optional
    ``[destinations]`` table mapping terminal node ids to their
    destination class (energy/product/export).
    """
    try:
        import tomllib  # Python >= 3.11
    except ModuleNotFoundError:  # pragma: no cover - version dependent
        import tomli as tomllib

    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from None

    def build(table: dict, where: str) -> CategoryParams:
        known = {"half_life", "swds_fraction", "swds_decay_half_life",
                 "recycling_rate"}
        unknown = set(table) - known
        if unknown:
            raise ParseError(f"{path}: {where}: unknown keys {sorted(unknown)}")
        try:
            return CategoryParams(**table)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}: {where}: {exc}") from None

    default = build(data.get("default", {"half_life": 1.0}), "[default]")
    categories = {
        name: build(table, f"[categories.{name}]")
        for name, table in data.get("categories", {}).items()
    }
    destinations = {}
    for node_id, klass in data.get("destinations", {}).items():
        if klass not in DESTINATION_CLASSES:
            raise ParseError(
                f"{path}: [destinations]: {node_id!r} has unknown class {klass!r}"
            )
        destinations[node_id] = klass
    return PoolParams(categories=categories, default=default), destinations
