"""Sector nodes, product flows, and the balanced flow graph.

Quantities are volumes in cubic meters of wood-fiber equivalent (m3 WFE)
throughout. A graph is BALANCED when every transformer node's inbound and
outbound totals agree within ``TOL_ABS + TOL_REL * inbound``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence

from .errors import ParseError

PRODUCT_CATEGORIES = frozenset(
    {
        "roundwood",
        "fuelwood",
        "forest_chips",
        "industrial_chips",
        "sawdust",
        "bark",
        "sawnwood_softwood",
        "sawnwood_hardwood",
        "panel",
        "pulp",
        "extractives",
        "other",
    }
)

NODE_KINDS = frozenset({"source", "transformer", "sink", "export", "import"})

# Balance tolerance, well below the data precision of regional statistics
# (reported in thousands of m3).
TOL_REL = 1e-9
TOL_ABS = 1e-6  # m3 WFE

#: (from node id, to node id, product id)
FlowKey = tuple[str, str, str]


@dataclass(frozen=True)
class Product:
    id: str
    label: str
    category: str

    def __post_init__(self):
        if self.category not in PRODUCT_CATEGORIES:
            raise ValueError(
                f"product {self.id!r}: unknown category {self.category!r}"
            )


@dataclass(frozen=True)
class Node:
    id: str
    label: str
    kind: str

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise ValueError(f"node {self.id!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class Flow:
    id: str
    from_node: str
    to_node: str
    product: str
    quantity: float

    @property
    def key(self) -> FlowKey:
        return (self.from_node, self.to_node, self.product)


@dataclass(frozen=True)
class Observation:
    """A reported statistic targeting a flow or a node total.

    ``target_kind`` is one of ``flow``, ``node_in``, ``node_out``. Flow
    targets use the key syntax ``from->to:product``; node targets use
    ``node`` or ``node:product`` to filter by product. ``sigma`` is the
    standard deviation in m3 WFE, or None when the source reports no
    uncertainty.
    """

    target_kind: str
    target_key: str
    value: float
    sigma: Optional[float] = None
    source: str = ""

    def __post_init__(self):
        if self.target_kind not in ("flow", "node_in", "node_out"):
            raise ValueError(f"unknown target kind {self.target_kind!r}")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError(f"observation {self.target_key!r}: sigma must be > 0")


def flow_key_str(key: FlowKey) -> str:
    return f"{key[0]}->{key[1]}:{key[2]}"


def parse_flow_key(text: str) -> FlowKey:
    head, sep, product = text.partition(":")
    src, arrow, dst = head.partition("->")
    if not sep or not arrow or not src or not dst or not product:
        raise ValueError(f"bad flow key {text!r}, expected 'from->to:product'")
    return (src, dst, product)


@dataclass(frozen=True)
class FlowGraph:
    """Immutable directed multigraph of sector nodes and product flows.

    Construct through :meth:`build`, which merges parallel flows of the
    same product between the same node pair and canonicalizes ordering so
    that structural equality and serialization round-trips hold.
    """

    nodes: tuple[Node, ...]
    flows: tuple[Flow, ...]
    period: str = ""

    @classmethod
    def build(
        cls,
        nodes: Iterable[Node],
        flows: Iterable[Flow],
        period: str = "",
    ) -> "FlowGraph":
        merged: dict[FlowKey, float] = {}
        ids: dict[FlowKey, str] = {}
        for fl in flows:
            if fl.key in merged:
                merged[fl.key] += fl.quantity
            else:
                merged[fl.key] = fl.quantity
                ids[fl.key] = fl.id
        out_flows = tuple(
            Flow(ids[k], k[0], k[1], k[2], merged[k]) for k in sorted(merged)
        )
        out_nodes = tuple(sorted(set(nodes), key=lambda n: n.id))
        return cls(nodes=out_nodes, flows=out_flows, period=period)

    @cached_property
    def node_by_id(self) -> Mapping[str, Node]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def flow_by_key(self) -> Mapping[FlowKey, Flow]:
        return {f.key: f for f in self.flows}

    def quantity(self, key: FlowKey) -> float:
        fl = self.flow_by_key.get(key)
        return fl.quantity if fl is not None else 0.0

    def inbound(self, node_id: str, product: Optional[str] = None) -> list[Flow]:
        return [
            f
            for f in self.flows
            if f.to_node == node_id and (product is None or f.product == product)
        ]

    def outbound(self, node_id: str, product: Optional[str] = None) -> list[Flow]:
        return [
            f
            for f in self.flows
            if f.from_node == node_id and (product is None or f.product == product)
        ]

    def is_balanced(self, tol_rel: float = TOL_REL, tol_abs: float = TOL_ABS) -> bool:
        for node_id, residual in balance_residuals(self).items():
            inbound_total = sum(f.quantity for f in self.inbound(node_id))
            if abs(residual) > tol_abs + tol_rel * inbound_total:
                return False
        return True

    def with_flows(self, flows: Iterable[Flow]) -> "FlowGraph":
        return FlowGraph.build(self.nodes, flows, self.period)


def balance_residuals(graph: FlowGraph) -> dict[str, float]:
    """Signed inbound-minus-outbound total per transformer node.

    Source, sink, export, and import nodes carry no balance constraint and
    are omitted; a graph without transformers yields an empty map.
    """
    residuals: dict[str, float] = {}
    for node in graph.nodes:
        if node.kind != "transformer":
            continue
        total_in = sum(f.quantity for f in graph.inbound(node.id))
        total_out = sum(f.quantity for f in graph.outbound(node.id))
        residuals[node.id] = total_in - total_out
    return residuals


@dataclass(frozen=True)
class Violation:
    code: str
    subject: str
    message: str


def validate(graph: FlowGraph) -> list[Violation]:
    """Every structural invariant violation, as data; empty iff valid."""
    violations: list[Violation] = []
    seen_keys: set[FlowKey] = set()
    for fl in graph.flows:
        if fl.quantity < 0:
            violations.append(
                Violation(
                    "negative_quantity",
                    fl.id,
                    f"flow {fl.id!r} ({flow_key_str(fl.key)}) has quantity {fl.quantity}",
                )
            )
        if fl.from_node == fl.to_node:
            violations.append(
                Violation(
                    "self_loop",
                    fl.id,
                    f"flow {fl.id!r} has identical endpoints {fl.from_node!r}",
                )
            )
        for endpoint in (fl.from_node, fl.to_node):
            if endpoint not in graph.node_by_id:
                violations.append(
                    Violation(
                        "dangling_endpoint",
                        fl.id,
                        f"flow {fl.id!r} references unknown node {endpoint!r}",
                    )
                )
        if fl.key in seen_keys:
            violations.append(
                Violation(
                    "duplicate_flow_key",
                    fl.id,
                    f"duplicate flow key {flow_key_str(fl.key)}",
                )
            )
        seen_keys.add(fl.key)

        dst = graph.node_by_id.get(fl.to_node)
        if dst is not None and dst.kind == "source":
            violations.append(
                Violation(
                    "inbound_into_source",
                    fl.to_node,
                    f"source node {fl.to_node!r} must not have inbound flows "
                    f"(flow {fl.id!r})",
                )
            )
        src = graph.node_by_id.get(fl.from_node)
        if src is not None and src.kind in ("sink", "export"):
            violations.append(
                Violation(
                    "outbound_from_terminal",
                    fl.from_node,
                    f"{src.kind} node {fl.from_node!r} must not have outbound "
                    f"flows (flow {fl.id!r})",
                )
            )
    return violations


# ---------------------------------------------------------------------------
# CSV ingestion and emission.
#
# All files are UTF-8 with '.' decimal separators and no thousands
# separators. Emitters return text so writers can stay atomic; quantities
# are written at full precision because graph CSVs are interchange files
# that later steps re-ingest.
# ---------------------------------------------------------------------------

PRODUCTS_HEADER = ["product_id", "label", "category"]
NODES_HEADER = ["node_id", "label", "kind"]
FLOWS_HEADER = ["flow_id", "from", "to", "product", "quantity_m3wfe"]
OBSERVATIONS_HEADER = ["target_kind", "target_key", "value_m3wfe", "sigma_m3wfe", "source"]


def _read_rows(path, expected_header: Sequence[str]) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, expected header "
                             f"{','.join(expected_header)}") from None
        if [h.strip() for h in header] != list(expected_header):
            raise ParseError(
                f"{path}: bad header {header!r}, expected {list(expected_header)!r}"
            )
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if len(raw) != len(expected_header):
                raise ParseError(
                    f"{path}: row {lineno}: expected {len(expected_header)} "
                    f"fields, got {len(raw)}"
                )
            rows.append(
                {key: cell.strip() for key, cell in zip(expected_header, raw)}
            )
        return rows


def _parse_float(path, lineno_hint: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"{path}: {lineno_hint}: not a number: {text!r}") from None


def read_products(path) -> dict[str, Product]:
    products: dict[str, Product] = {}
    for row in _read_rows(path, PRODUCTS_HEADER):
        pid = row["product_id"]
        if pid in products:
            raise ParseError(f"{path}: duplicate product id {pid!r}")
        try:
            products[pid] = Product(pid, row["label"], row["category"])
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from None
    return products


def read_nodes(path) -> list[Node]:
    nodes = []
    seen = set()
    for row in _read_rows(path, NODES_HEADER):
        nid = row["node_id"]
        if nid in seen:
            raise ParseError(f"{path}: duplicate node id {nid!r}")
        seen.add(nid)
        try:
            nodes.append(Node(nid, row["label"], row["kind"]))
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from None
    return nodes


def read_flows(path) -> list[Flow]:
    flows = []
    for row in _read_rows(path, FLOWS_HEADER):
        qty = _parse_float(path, f"flow {row['flow_id']!r}", row["quantity_m3wfe"])
        flows.append(Flow(row["flow_id"], row["from"], row["to"], row["product"], qty))
    return flows


def read_graph(nodes_path, flows_path, period: str = "") -> FlowGraph:
    return FlowGraph.build(read_nodes(nodes_path), read_flows(flows_path), period)


def read_observations(path, allow_missing_value: bool = False) -> list[Observation]:
    """Parse an observations CSV.

    With ``allow_missing_value`` (used by the delta report, where a row may
    record that a source could not provide the figure), an empty value cell
    yields an Observation with ``value`` NaN; otherwise it is an error.
    """
    observations = []
    for i, row in enumerate(_read_rows(path, OBSERVATIONS_HEADER), start=2):
        value_text = row["value_m3wfe"]
        if value_text == "":
            if not allow_missing_value:
                raise ParseError(f"{path}: row {i}: missing value")
            value = float("nan")
        else:
            value = _parse_float(path, f"row {i}", value_text)
        sigma = None
        if row["sigma_m3wfe"] != "":
            sigma = _parse_float(path, f"row {i}", row["sigma_m3wfe"])
        try:
            observations.append(
                Observation(row["target_kind"], row["target_key"], value, sigma,
                            row["source"])
            )
        except ValueError as exc:
            raise ParseError(f"{path}: row {i}: {exc}") from None
    return observations


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def flows_csv(graph: FlowGraph) -> str:
    return _csv_text(
        FLOWS_HEADER,
        (
            [f.id, f.from_node, f.to_node, f.product, repr(f.quantity)]
            for f in graph.flows
        ),
    )


def nodes_csv(graph: FlowGraph) -> str:
    return _csv_text(NODES_HEADER, ([n.id, n.label, n.kind] for n in graph.nodes))


def resolve_target(
    graph: FlowGraph, target_kind: str, target_key: str
) -> list[FlowKey]:
    """Flow keys a target covers: a single flow, or a node total."""
    if target_kind == "flow":
        key = parse_flow_key(target_key)
        return [key] if key in graph.flow_by_key else []
    node_id, sep, product = target_key.partition(":")
    product_filter = product if sep else None
    if target_kind == "node_in":
        flows = graph.inbound(node_id, product_filter)
    else:
        flows = graph.outbound(node_id, product_filter)
    return [f.key for f in flows]


def observed_total(graph: FlowGraph, target_kind: str, target_key: str) -> float:
    return sum(graph.quantity(k) for k in resolve_target(graph, target_kind, target_key))
