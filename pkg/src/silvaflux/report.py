"""Human-readable outputs: delta reports and Sankey diagrams.

The delta convention divides by the REFERENCE (observed) value, not the
baseline: percent = 100 * (reference - baseline) / reference. That is the
nonstandard choice, kept because it is the one consistent with the
regional statistics this toolkit reproduces.

Sankey output is deterministic: layers by longest path from source nodes,
vertical order by a barycenter heuristic with lexicographic tie-breaks,
ribbon stroke width proportional to quantity, stable float formatting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional
from xml.sax.saxutils import escape

from .errors import EmptyGraph, ZeroReference
from .flow_model import FlowGraph, FlowKey, flow_key_str

COLOR_CLASSES = ("regional", "export", "highlighted-scenario")

_CLASS_STROKE = {
    "regional": "#9aa0a6",
    "export": "#2b6cb0",
    "highlighted-scenario": "#2f855a",
}

NODE_WIDTH = 18.0
LAYER_GAP = 200.0
NODE_GAP = 24.0
MARGIN = 48.0
_BARYCENTER_SWEEPS = 4


def delta_percent(baseline: float, reference: float) -> float:
    """100 * (reference - baseline) / reference; reference must be > 0."""
    if not reference > 0:
        raise ZeroReference(f"reference must be > 0, got {reference}")
    return 100.0 * (reference - baseline) / reference


@dataclass(frozen=True)
class DeltaRow:
    label: str
    baseline: Optional[float]
    reference: Optional[float]
    delta_percent: Optional[float]
    flag: str  # ok | N/A | no_baseline | zero_reference


def build_delta_report(
    baseline_totals: Mapping[str, float],
    observed: Mapping[str, Optional[float]],
) -> tuple[DeltaRow, ...]:
    """One row per baseline label, observed values matched by label.

    Labels with no observed value are flagged N/A (data the sources could
    not provide is representable, not an error). Observed labels absent
    from the baseline are appended and flagged no_baseline.
    """
    rows = []
    for label in sorted(set(baseline_totals) | set(observed)):
        base = baseline_totals.get(label)
        ref = observed.get(label)
        if ref is not None and ref != ref:  # NaN marks a recorded gap
            ref = None
        if base is None:
            rows.append(DeltaRow(label, None, ref, None, "no_baseline"))
        elif ref is None:
            rows.append(DeltaRow(label, base, None, None, "N/A"))
        elif not ref > 0:
            rows.append(DeltaRow(label, base, ref, None, "zero_reference"))
        else:
            rows.append(DeltaRow(label, base, ref, delta_percent(base, ref), "ok"))
    return tuple(rows)


def destination_totals(graph: FlowGraph) -> dict[str, float]:
    """Per (destination node, product) volume totals, keyed 'node:product'."""
    totals: dict[str, float] = {}
    for fl in graph.flows:
        key = f"{fl.to_node}:{fl.product}"
        totals[key] = totals.get(key, 0.0) + fl.quantity
    return totals


def delta_csv(rows: Iterable[DeltaRow]) -> str:
    lines = ["label,baseline,reference,delta_percent,flag"]
    for row in rows:
        base = f"{row.baseline:.3f}" if row.baseline is not None else ""
        ref = f"{row.reference:.3f}" if row.reference is not None else ""
        pct = f"{row.delta_percent:.2f}" if row.delta_percent is not None else ""
        lines.append(f"{row.label},{base},{ref},{pct},{row.flag}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Sankey layout and emission
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NodePlacement:
    id: str
    label: str
    layer: int
    x: float
    y: float
    height: float


@dataclass(frozen=True)
class Ribbon:
    key: FlowKey
    quantity: float
    width: float
    x0: float
    y0: float
    x1: float
    y1: float
    color_class: str


@dataclass(frozen=True)
class SankeyLayout:
    nodes: tuple[NodePlacement, ...]
    ribbons: tuple[Ribbon, ...]
    width: float
    height: float


def _layer_ranks(graph: FlowGraph) -> dict[str, int]:
    """Longest-path rank from the nodes without inbound flows."""
    preds: dict[str, set[str]] = {n.id: set() for n in graph.nodes}
    succs: dict[str, set[str]] = {n.id: set() for n in graph.nodes}
    for fl in graph.flows:
        preds[fl.to_node].add(fl.from_node)
        succs[fl.from_node].add(fl.to_node)

    ranks: dict[str, int] = {}
    visiting: set[str] = set()

    def rank(node_id: str) -> int:
        if node_id in ranks:
            return ranks[node_id]
        if node_id in visiting:
            raise ValueError(f"graph has a cycle through {node_id!r}; "
                             f"cannot assign layers")
        visiting.add(node_id)
        upstream = preds[node_id]
        value = 0 if not upstream else 1 + max(rank(p) for p in sorted(upstream))
        visiting.discard(node_id)
        ranks[node_id] = value
        return value

    for node_id in sorted(preds):
        rank(node_id)
    return ranks


def _ordered_layers(graph: FlowGraph, ranks: dict[str, int]) -> list[list[str]]:
    n_layers = max(ranks.values()) + 1 if ranks else 0
    layers: list[list[str]] = [[] for _ in range(n_layers)]
    for node_id in sorted(ranks):
        layers[ranks[node_id]].append(node_id)

    neighbors_in: dict[str, set[str]] = {nid: set() for nid in ranks}
    neighbors_out: dict[str, set[str]] = {nid: set() for nid in ranks}
    for fl in graph.flows:
        neighbors_in[fl.to_node].add(fl.from_node)
        neighbors_out[fl.from_node].add(fl.to_node)

    def sweep(neighbor_map: dict[str, set[str]], order: range) -> None:
        for li in order:
            positions = {
                nid: pos for layer in layers for pos, nid in enumerate(layer)
            }
            def barycenter(nid: str):
                others = neighbor_map[nid]
                if not others:
                    return (positions[nid], nid)
                return (
                    sum(positions[o] for o in others) / len(others),
                    nid,
                )
            layers[li] = sorted(layers[li], key=barycenter)

    for _ in range(_BARYCENTER_SWEEPS):
        sweep(neighbors_in, range(1, n_layers))
        sweep(neighbors_out, range(n_layers - 2, -1, -1))
    return layers


def compute_layout(
    graph: FlowGraph,
    highlights: Optional[Mapping[FlowKey, str]] = None,
    scale: float = 1.0,
) -> SankeyLayout:
    """Deterministic layered layout; ribbon width = quantity * scale."""
    if not graph.flows:
        raise EmptyGraph("cannot lay out a graph without flows")
    if not scale > 0:
        raise ValueError(f"scale must be > 0, got {scale}")
    highlights = dict(highlights or {})
    for key, klass in highlights.items():
        if klass not in COLOR_CLASSES:
            raise ValueError(f"unknown color class {klass!r} for "
                             f"{flow_key_str(key)}")

    ranks = _layer_ranks(graph)
    layers = _ordered_layers(graph, ranks)

    width_of = {f.key: f.quantity * scale for f in graph.flows}
    heights: dict[str, float] = {}
    for node in graph.nodes:
        in_total = sum(width_of[f.key] for f in graph.inbound(node.id))
        out_total = sum(width_of[f.key] for f in graph.outbound(node.id))
        heights[node.id] = max(in_total, out_total)

    layer_heights = [
        sum(heights[nid] for nid in layer) + NODE_GAP * max(0, len(layer) - 1)
        for layer in layers
    ]
    canvas_inner = max(layer_heights) if layer_heights else 0.0

    x_of: dict[str, float] = {}
    y_of: dict[str, float] = {}
    for li, layer in enumerate(layers):
        x = MARGIN + li * LAYER_GAP
        y = MARGIN + (canvas_inner - layer_heights[li]) / 2.0
        for nid in layer:
            x_of[nid] = x
            y_of[nid] = y
            y += heights[nid] + NODE_GAP

    node_order = {nid: (li, pos) for li, layer in enumerate(layers)
                  for pos, nid in enumerate(layer)}

    out_cursor = {nid: 0.0 for nid in ranks}
    in_cursor = {nid: 0.0 for nid in ranks}
    ribbons = []
    flow_sort = sorted(
        graph.flows,
        key=lambda f: (node_order[f.from_node], node_order[f.to_node], f.product),
    )
    for fl in flow_sort:
        w = width_of[fl.key]
        y0 = y_of[fl.from_node] + out_cursor[fl.from_node] + w / 2.0
        out_cursor[fl.from_node] += w
        y1 = y_of[fl.to_node] + in_cursor[fl.to_node] + w / 2.0
        in_cursor[fl.to_node] += w
        klass = highlights.get(fl.key)
        if klass is None:
            dst = graph.node_by_id[fl.to_node]
            klass = "export" if dst.kind == "export" else "regional"
        ribbons.append(
            Ribbon(
                key=fl.key,
                quantity=fl.quantity,
                width=w,
                x0=x_of[fl.from_node] + NODE_WIDTH,
                y0=y0,
                x1=x_of[fl.to_node],
                y1=y1,
                color_class=klass,
            )
        )

    placements = tuple(
        NodePlacement(
            id=nid,
            label=graph.node_by_id[nid].label,
            layer=li,
            x=x_of[nid],
            y=y_of[nid],
            height=heights[nid],
        )
        for li, layer in enumerate(layers)
        for nid in layer
    )
    total_width = MARGIN * 2 + (len(layers) - 1) * LAYER_GAP + NODE_WIDTH
    total_height = MARGIN * 2 + canvas_inner
    return SankeyLayout(placements, tuple(ribbons), total_width, total_height)


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def sankey_svg(layout: SankeyLayout) -> str:
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{_fmt(layout.width)}" height="{_fmt(layout.height)}" '
        f'viewBox="0 0 {_fmt(layout.width)} {_fmt(layout.height)}">',
        "<style>",
        ".node{fill:#4a5568;}",
        ".node-label{font:12px sans-serif;fill:#1a202c;}",
    ]
    for klass in COLOR_CLASSES:
        lines.append(
            f".flow-{klass}{{stroke:{_CLASS_STROKE[klass]};fill:none;"
            f"stroke-opacity:0.55;}}"
        )
    lines.append("</style>")
    for rb in layout.ribbons:
        mx = (rb.x0 + rb.x1) / 2.0
        path = (
            f"M {_fmt(rb.x0)} {_fmt(rb.y0)} "
            f"C {_fmt(mx)} {_fmt(rb.y0)} {_fmt(mx)} {_fmt(rb.y1)} "
            f"{_fmt(rb.x1)} {_fmt(rb.y1)}"
        )
        lines.append(
            f'<path class="flow-{rb.color_class}" d="{path}" '
            f'stroke-width="{_fmt(rb.width)}">'
            f"<title>{escape(flow_key_str(rb.key))}: "
            f"{escape(repr(rb.quantity))} m3</title></path>"
        )
    for node in layout.nodes:
        lines.append(
            f'<rect class="node" x="{_fmt(node.x)}" y="{_fmt(node.y)}" '
            f'width="{_fmt(NODE_WIDTH)}" height="{_fmt(max(node.height, 1.0))}"/>'
        )
        lines.append(
            f'<text class="node-label" x="{_fmt(node.x)}" '
            f'y="{_fmt(node.y - 4.0)}">{escape(node.label)}</text>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def sankey_interchange(graph: FlowGraph, layout: SankeyLayout) -> str:
    """JSON interchange: nodes[] and links[] {source, target, value, class}."""
    class_of = {rb.key: rb.color_class for rb in layout.ribbons}
    doc = {
        "nodes": [
            {"id": n.id, "label": n.label, "layer": n.layer} for n in layout.nodes
        ],
        "links": [
            {
                "source": f.from_node,
                "target": f.to_node,
                "product": f.product,
                "value": f.quantity,
                "class": class_of[f.key],
            }
            for f in graph.flows
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def emit_sankey(
    graph: FlowGraph,
    highlights: Optional[Mapping[FlowKey, str]] = None,
    scale: float = 1.0,
) -> tuple[str, str]:
    """SVG document and JSON interchange document for a graph."""
    layout = compute_layout(graph, highlights, scale)
    return sankey_svg(layout), sankey_interchange(graph, layout)
