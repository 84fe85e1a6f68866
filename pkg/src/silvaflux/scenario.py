"""Declarative what-if edits to a baseline flow graph.

A scenario is an ordered list of edits applied sequentially against the
evolving graph: reroute part of a flow to a new destination, insert a new
actor fed from existing flows, assert a processing-capacity cap, or scale
a flow. Application returns the edited graph plus a structured diff with
per-flow and per-node deltas and the implied carbon delta by destination
class (burned / stored_in_products / exported).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

from .errors import (
    CapExceeded,
    ParseError,
    RerouteExceedsFlow,
    ScenarioError,
    UnbalancedResult,
    UnclassifiedNode,
    UnknownEndpoint,
)
from .flow_model import Flow, FlowGraph, FlowKey, Node, flow_key_str
from .units import ConversionTable, to_carbon

_AMOUNT_TOL_REL = 1e-12
_AMOUNT_TOL_ABS = 1e-9


@dataclass(frozen=True)
class Reroute:
    """Move volume of one product from one destination to another."""

    name: str
    product: str
    from_node: str
    old_to: str
    new_to: str
    amount: Optional[float] = None  # m3 WFE
    fraction: Optional[float] = None  # of the existing flow, in (0, 1]

    def __post_init__(self):
        if (self.amount is None) == (self.fraction is None):
            raise ValueError(f"edit {self.name!r}: set exactly one of amount/fraction")
        if self.amount is not None and not self.amount >= 0:
            raise ValueError(f"edit {self.name!r}: amount must be >= 0")
        if self.fraction is not None and not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"edit {self.name!r}: fraction must be in (0, 1]")


@dataclass(frozen=True)
class InboundSpec:
    from_node: str
    product: str
    amount: float


@dataclass(frozen=True)
class InsertActor:
    """Add a node, feeding it by drawing volume off existing flows.

    Each inbound amount is taken proportionally from the origin node's
    current outbound flows of that product, so the origin's balance is
    untouched. An empty inbound list just inserts the node; later reroutes
    can then address it explicitly.
    """

    name: str
    node: Node
    inbound: tuple[InboundSpec, ...] = ()


@dataclass(frozen=True)
class CapByDeposit:
    """Assert that a node's intake of a product stays within a deposit.

    The cap is a mass in tonnes; intake volume is converted with the yield
    coefficient (tonnes per m3 WFE). The edit changes nothing, it only
    fails the scenario when the cap is exceeded.
    """

    name: str
    node: str
    product: str
    cap_mass: float  # tonnes
    yield_coefficient: float  # tonnes per m3 WFE

    def __post_init__(self):
        if not self.cap_mass >= 0:
            raise ValueError(f"edit {self.name!r}: cap_mass must be >= 0")
        if not self.yield_coefficient > 0:
            raise ValueError(f"edit {self.name!r}: yield_coefficient must be > 0")


@dataclass(frozen=True)
class Scale:
    name: str
    flow: FlowKey
    factor: float

    def __post_init__(self):
        if not self.factor >= 0:
            raise ValueError(f"edit {self.name!r}: factor must be >= 0")


Edit = Union[Reroute, InsertActor, CapByDeposit, Scale]


@dataclass(frozen=True)
class Scenario:
    name: str
    edits: tuple[Edit, ...] = ()

    def __post_init__(self):
        names = [e.name for e in self.edits]
        if len(names) != len(set(names)):
            raise ValueError(f"scenario {self.name!r}: edit names must be unique")


@dataclass(frozen=True)
class CarbonDelta:
    """Carbon flux change in tC/yr by destination class."""

    burned: float = 0.0
    stored_in_products: float = 0.0
    exported: float = 0.0


@dataclass(frozen=True)
class ScenarioDiff:
    flow_deltas: Mapping[FlowKey, float]
    node_in_deltas: Mapping[str, float]
    node_out_deltas: Mapping[str, float]
    carbon_delta: CarbonDelta


class _WorkingGraph:
    """Mutable quantities keyed by flow, evolved edit by edit."""

    def __init__(self, graph: FlowGraph):
        self.nodes: dict[str, Node] = dict(graph.node_by_id)
        self.quantities: dict[FlowKey, float] = {
            f.key: f.quantity for f in graph.flows
        }
        self.flow_ids: dict[FlowKey, str] = {f.key: f.id for f in graph.flows}
        self.period = graph.period

    def require_node(self, node_id: str, edit_name: str) -> None:
        if node_id not in self.nodes:
            raise UnknownEndpoint(f"edit {edit_name!r}: unknown node {node_id!r}")

    def add(self, key: FlowKey, amount: float) -> None:
        self.quantities[key] = self.quantities.get(key, 0.0) + amount
        self.flow_ids.setdefault(key, flow_key_str(key))

    def remove_amount(self, key: FlowKey, amount: float, edit_name: str) -> None:
        available = self.quantities.get(key, 0.0)
        if amount > available * (1.0 + _AMOUNT_TOL_REL) + _AMOUNT_TOL_ABS:
            raise RerouteExceedsFlow(
                f"edit {edit_name!r}: {amount} m3 exceeds available "
                f"{available} m3 on {flow_key_str(key)}"
            )
        remaining = available - amount
        if remaining <= 0.0:
            self.quantities.pop(key, None)
        else:
            self.quantities[key] = remaining

    def to_graph(self) -> FlowGraph:
        flows = [
            Flow(self.flow_ids[k], k[0], k[1], k[2], q)
            for k, q in self.quantities.items()
        ]
        return FlowGraph.build(self.nodes.values(), flows, self.period)


def _apply_reroute(work: _WorkingGraph, edit: Reroute) -> None:
    work.require_node(edit.from_node, edit.name)
    work.require_node(edit.old_to, edit.name)
    work.require_node(edit.new_to, edit.name)
    old_key = (edit.from_node, edit.old_to, edit.product)
    if old_key not in work.quantities:
        raise UnknownEndpoint(
            f"edit {edit.name!r}: no flow {flow_key_str(old_key)} to reroute"
        )
    if edit.fraction is not None:
        amount = work.quantities[old_key] * edit.fraction
        if edit.fraction == 1.0:
            amount = work.quantities[old_key]
    else:
        amount = edit.amount
    work.remove_amount(old_key, amount, edit.name)
    work.add((edit.from_node, edit.new_to, edit.product), amount)


def _apply_insert_actor(work: _WorkingGraph, edit: InsertActor) -> None:
    if edit.node.id in work.nodes:
        raise ScenarioError(
            f"edit {edit.name!r}: node {edit.node.id!r} already exists"
        )
    work.nodes[edit.node.id] = edit.node
    for spec in edit.inbound:
        work.require_node(spec.from_node, edit.name)
        donors = sorted(
            key
            for key in work.quantities
            if key[0] == spec.from_node and key[2] == spec.product
        )
        available = sum(work.quantities[k] for k in donors)
        if spec.amount > available * (1.0 + _AMOUNT_TOL_REL) + _AMOUNT_TOL_ABS:
            raise RerouteExceedsFlow(
                f"edit {edit.name!r}: {spec.amount} m3 of {spec.product!r} "
                f"exceeds the {available} m3 leaving {spec.from_node!r}"
            )
        if available == 0.0:
            raise UnknownEndpoint(
                f"edit {edit.name!r}: no {spec.product!r} flow leaves "
                f"{spec.from_node!r}"
            )
        # Proportional draw keeps the origin's outbound total unchanged.
        for key in donors:
            share = work.quantities[key] / available
            work.remove_amount(key, spec.amount * share, edit.name)
        work.add((spec.from_node, edit.node.id, spec.product), spec.amount)


def _apply_cap(work: _WorkingGraph, edit: CapByDeposit) -> None:
    work.require_node(edit.node, edit.name)
    volume = sum(
        q for key, q in work.quantities.items()
        if key[1] == edit.node and key[2] == edit.product
    )
    mass = volume * edit.yield_coefficient
    if mass > edit.cap_mass * (1.0 + 1e-9) + 1e-9:
        raise CapExceeded(
            f"edit {edit.name!r}: {volume} m3 of {edit.product!r} into "
            f"{edit.node!r} implies {mass:.3f} t, above the cap "
            f"{edit.cap_mass} t"
        )


def _apply_scale(work: _WorkingGraph, edit: Scale) -> None:
    if edit.flow not in work.quantities:
        raise UnknownEndpoint(
            f"edit {edit.name!r}: no flow {flow_key_str(edit.flow)} to scale"
        )
    scaled = work.quantities[edit.flow] * edit.factor
    if scaled == 0.0:
        work.quantities.pop(edit.flow)
    else:
        work.quantities[edit.flow] = scaled


def _destination_class(
    node: Node, destination_classes: Optional[Mapping[str, str]]
) -> str:
    if destination_classes is not None and node.id in destination_classes:
        klass = destination_classes[node.id]
        if klass not in ("energy", "product", "export"):
            raise UnclassifiedNode(
                f"node {node.id!r}: unknown destination class {klass!r}"
            )
        return klass
    if node.kind == "export":
        return "export"
    if node.kind == "transformer":
        return "product"
    raise UnclassifiedNode(
        f"node {node.id!r} (kind {node.kind}) needs a destination class to "
        f"attribute the carbon delta"
    )


def apply(
    baseline: FlowGraph,
    scenario: Scenario,
    table: ConversionTable,
    destination_classes: Optional[Mapping[str, str]] = None,
) -> tuple[FlowGraph, ScenarioDiff]:
    """Apply a scenario's edits in order; returns the new graph and diff.

    The baseline is never mutated. Edits see the evolving graph, so a cap
    can constrain a preceding insertion. The result must pass the balance
    check, otherwise UnbalancedResult is raised; carbon deltas are
    attributed by each changed flow's destination node class.
    """
    work = _WorkingGraph(baseline)
    for edit in scenario.edits:
        if isinstance(edit, Reroute):
            _apply_reroute(work, edit)
        elif isinstance(edit, InsertActor):
            _apply_insert_actor(work, edit)
        elif isinstance(edit, CapByDeposit):
            _apply_cap(work, edit)
        elif isinstance(edit, Scale):
            _apply_scale(work, edit)
        else:
            raise ScenarioError(f"unknown edit type {type(edit).__name__}")

    graph = work.to_graph()
    if not graph.is_balanced():
        raise UnbalancedResult(
            f"scenario {scenario.name!r} leaves a transformer out of balance"
        )

    baseline_q = {f.key: f.quantity for f in baseline.flows}
    result_q = {f.key: f.quantity for f in graph.flows}
    flow_deltas: dict[FlowKey, float] = {}
    for key in sorted(set(baseline_q) | set(result_q)):
        delta = result_q.get(key, 0.0) - baseline_q.get(key, 0.0)
        if delta != 0.0:
            flow_deltas[key] = delta

    node_in: dict[str, float] = {}
    node_out: dict[str, float] = {}
    burned = stored = exported = 0.0
    for key, delta in flow_deltas.items():
        src, dst, product = key
        node_out[src] = node_out.get(src, 0.0) + delta
        node_in[dst] = node_in.get(dst, 0.0) + delta
        dst_node = graph.node_by_id.get(dst) or baseline.node_by_id[dst]
        klass = _destination_class(dst_node, destination_classes)
        carbon = math.copysign(to_carbon(abs(delta), product, table), delta)
        if klass == "energy":
            burned += carbon
        elif klass == "product":
            stored += carbon
        else:
            exported += carbon

    diff = ScenarioDiff(
        flow_deltas=flow_deltas,
        node_in_deltas={k: v for k, v in sorted(node_in.items()) if v != 0.0},
        node_out_deltas={k: v for k, v in sorted(node_out.items()) if v != 0.0},
        carbon_delta=CarbonDelta(burned, stored, exported),
    )
    return graph, diff


def max_reroutable(
    baseline: FlowGraph, product: str, from_node: str, old_to: str
) -> float:
    """Current quantity available to reroute on (from_node, old_to, product).

    Unknown nodes, or a node pair with no flows at all between them, raise
    UnknownEndpoint; a connected pair that simply lacks this product
    returns 0 (the exhausted-flow convention).
    """
    for node_id in (from_node, old_to):
        if node_id not in baseline.node_by_id:
            raise UnknownEndpoint(f"unknown node {node_id!r}")
    pair_flows = [
        f for f in baseline.flows
        if f.from_node == from_node and f.to_node == old_to
    ]
    if not pair_flows:
        raise UnknownEndpoint(f"no flows from {from_node!r} to {old_to!r}")
    return sum(f.quantity for f in pair_flows if f.product == product)


def diff_csv(diff: ScenarioDiff) -> str:
    lines = ["record,key,delta"]
    for key, delta in sorted(diff.flow_deltas.items()):
        lines.append(f"flow,{flow_key_str(key)},{delta:.3f}")
    for node, delta in sorted(diff.node_in_deltas.items()):
        lines.append(f"node_in,{node},{delta:.3f}")
    for node, delta in sorted(diff.node_out_deltas.items()):
        lines.append(f"node_out,{node},{delta:.3f}")
    cd = diff.carbon_delta
    lines.append(f"carbon_tC,burned,{cd.burned:.3f}")
    lines.append(f"carbon_tC,stored_in_products,{cd.stored_in_products:.3f}")
    lines.append(f"carbon_tC,exported,{cd.exported:.3f}")
    return "\n".join(lines) + "\n"


def read_scenario(path) -> Scenario:
    """Load a scenario TOML file.

    Layout: a ``[scenario]`` table with ``name``, then one ``[[edit]]``
    table per edit carrying a ``kind`` discriminator (reroute,
    insert_actor, cap_by_deposit, scale) and that variant's fields.
    Amounts are in m3 WFE unless given as ``fraction``.
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

    name = data.get("scenario", {}).get("name", "")
    if not name:
        raise ParseError(f"{path}: missing [scenario] name")
    edits: list[Edit] = []
    for i, table in enumerate(data.get("edit", []), start=1):
        kind = table.get("kind")
        edit_name = table.get("name", f"edit_{i}")
        try:
            if kind == "reroute":
                edits.append(
                    Reroute(
                        name=edit_name,
                        product=table["product"],
                        from_node=table["from_node"],
                        old_to=table["old_to"],
                        new_to=table["new_to"],
                        amount=table.get("amount_m3"),
                        fraction=table.get("fraction"),
                    )
                )
            elif kind == "insert_actor":
                node = Node(
                    table["node_id"],
                    table.get("node_label", table["node_id"]),
                    table.get("node_kind", "sink"),
                )
                inbound = tuple(
                    InboundSpec(spec["from_node"], spec["product"], spec["amount_m3"])
                    for spec in table.get("inbound", [])
                )
                edits.append(InsertActor(name=edit_name, node=node, inbound=inbound))
            elif kind == "cap_by_deposit":
                edits.append(
                    CapByDeposit(
                        name=edit_name,
                        node=table["node"],
                        product=table["product"],
                        cap_mass=table["cap_mass_t"],
                        yield_coefficient=table["yield_t_per_m3"],
                    )
                )
            elif kind == "scale":
                edits.append(
                    Scale(
                        name=edit_name,
                        flow=(table["from_node"], table["to_node"], table["product"]),
                        factor=table["factor"],
                    )
                )
            else:
                raise ParseError(f"{path}: edit {i}: unknown kind {kind!r}")
        except KeyError as exc:
            raise ParseError(f"{path}: edit {i}: missing field {exc}") from None
        except ValueError as exc:
            raise ParseError(f"{path}: edit {i}: {exc}") from None
    try:
        return Scenario(name=name, edits=tuple(edits))
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
