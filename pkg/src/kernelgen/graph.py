"""Computation-graph IR: construction, flow validation, topological order,
and the canonical JSON wire format.

A graph is single-writer while under construction; every mutation is atomic
(a rejected mutation leaves the graph byte-identical under serialization).
Once validated it is treated as immutable.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from typing import Iterable, Mapping

from .inventory import (
    DType,
    InferenceError,
    ShapeMismatch,
    TensorSpec,
    get_operator,
    infer_output_spec,
)

NodeId = int

KIND_INPUT = "input"
KIND_OP = "op"


class GraphError(Exception):
    pass


class UnknownNode(GraphError):
    pass


class CycleWouldForm(GraphError):
    pass


class SlotOccupied(GraphError):
    pass


class NotADag(GraphError):
    pass


class GraphJsonError(GraphError):
    """Raised when canonical-JSON input does not describe a valid graph."""


@dataclass(frozen=True)
class GraphNode:
    id: NodeId
    kind: str  # KIND_INPUT | KIND_OP
    op_name: str | None
    attrs: Mapping[str, object]
    output_spec: TensorSpec
    inputs: tuple[NodeId | None, ...]  # slot table; None = unfilled


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[tuple[str, tuple[NodeId, ...], str], ...]


class ComputationGraph:
    """DAG of operator nodes over tensor edges.

    Node ids are dense from 0 in creation order. `outputs` is maintained as
    the ascending list of sink nodes after every mutation.
    """

    def __init__(self):
        self._nodes: list[GraphNode] = []
        self.outputs: list[NodeId] = []

    # -- accessors ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def nodes(self) -> tuple[GraphNode, ...]:
        return tuple(self._nodes)

    def node(self, nid: NodeId) -> GraphNode:
        if not 0 <= nid < len(self._nodes):
            raise UnknownNode(f"no node {nid}")
        return self._nodes[nid]

    def edges(self) -> list[tuple[NodeId, NodeId, int]]:
        """(producer, consumer, slot) triples ordered by (consumer, slot)."""
        out = []
        for node in self._nodes:
            for slot, frm in enumerate(node.inputs):
                if frm is not None:
                    out.append((frm, node.id, slot))
        return out

    def consumers(self) -> dict[NodeId, list[NodeId]]:
        cons: dict[NodeId, list[NodeId]] = {n.id: [] for n in self._nodes}
        for frm, to, _ in self.edges():
            cons[frm].append(to)
        return cons

    def out_degree(self, nid: NodeId) -> int:
        self.node(nid)
        return sum(1 for frm, _, _ in self.edges() if frm == nid)

    def clone(self) -> "ComputationGraph":
        g = ComputationGraph()
        g._nodes = list(self._nodes)  # nodes are immutable records
        g.outputs = list(self.outputs)
        return g

    # -- mutation ----------------------------------------------------------

    def add_node(
        self,
        kind: str,
        op_name: str | None = None,
        attrs: Mapping[str, object] | None = None,
        input_ids: Iterable[NodeId | None] = (),
        spec: TensorSpec | None = None,
    ) -> NodeId:
        """Append a node; atomic (the graph is unchanged on rejection).

        Input nodes need `spec` and take no inputs. Operator nodes take a
        full slot table; a slot may be None only when the output spec is
        still derivable from the filled slots (same-shape binary operators),
        to be filled later via add_edge.
        """
        if kind == KIND_INPUT:
            if op_name is not None or attrs or tuple(input_ids):
                raise GraphError("input nodes carry no operator or inputs")
            if spec is None:
                raise GraphError("input nodes require a TensorSpec")
            node = GraphNode(len(self._nodes), KIND_INPUT, None, {}, spec, ())
        elif kind == KIND_OP:
            if op_name is None:
                raise GraphError("operator nodes require op_name")
            op = get_operator(op_name)
            slots = tuple(input_ids)
            if len(slots) != op.arity:
                raise ShapeMismatch(
                    f"{op_name}: expected {op.arity} input slots, got {len(slots)}"
                )
            for frm in slots:
                if frm is not None:
                    self.node(frm)
            out_spec = self._infer_partial(op_name, slots, dict(attrs or {}))
            node = GraphNode(
                len(self._nodes), KIND_OP, op_name, dict(attrs or {}), out_spec, slots
            )
        else:
            raise GraphError(f"unknown node kind {kind!r}")
        self._nodes.append(node)
        self.outputs = self._derive_outputs()
        return node.id

    def add_input(self, spec: TensorSpec) -> NodeId:
        return self.add_node(KIND_INPUT, spec=spec)

    def add_operator(
        self,
        op_name: str,
        input_ids: Iterable[NodeId | None],
        attrs: Mapping[str, object] | None = None,
    ) -> NodeId:
        return self.add_node(KIND_OP, op_name=op_name, attrs=attrs, input_ids=input_ids)

    def add_edge(self, frm: NodeId, to: NodeId, slot: int) -> None:
        """Fill an empty input slot; atomic.

        Rejected with CycleWouldForm / SlotOccupied / ShapeMismatch when the
        edge would break acyclicity, arity, or shape consistency.
        """
        self.node(frm)
        target = self.node(to)
        if target.kind != KIND_OP or not 0 <= slot < len(target.inputs):
            raise GraphError(f"node {to} has no input slot {slot}")
        if target.inputs[slot] is not None:
            raise SlotOccupied(f"slot {slot} of node {to} is already fed")
        if frm == to or frm in self._successors(to):
            raise CycleWouldForm(f"edge {frm}->{to} would close a cycle")
        slots = list(target.inputs)
        slots[slot] = frm
        derived = self._infer_partial(target.op_name, tuple(slots), dict(target.attrs))
        if derived != target.output_spec:
            raise ShapeMismatch(
                f"edge {frm}->{to} slot {slot}: spec {self._nodes[frm].output_spec} "
                f"incompatible with stored output {target.output_spec}"
            )
        self._replace(to, inputs=tuple(slots))

    def rewire_slot(self, to: NodeId, slot: int, frm: NodeId) -> None:
        """Point an occupied slot at a different producer with an identical
        spec; atomic. Used by the builder's random-connection action."""
        target = self.node(to)
        new_src = self.node(frm)
        if target.kind != KIND_OP or not 0 <= slot < len(target.inputs):
            raise GraphError(f"node {to} has no input slot {slot}")
        current = target.inputs[slot]
        if current is None:
            raise GraphError(f"slot {slot} of node {to} is unfilled; use add_edge")
        if new_src.output_spec != self._nodes[current].output_spec:
            raise ShapeMismatch(
                f"rewire {to}[{slot}]: {new_src.output_spec} != "
                f"{self._nodes[current].output_spec}"
            )
        if frm == to or frm in self._successors(to):
            raise CycleWouldForm(f"rewire {to}[{slot}] to {frm} would close a cycle")
        slots = list(target.inputs)
        slots[slot] = frm
        self._replace(to, inputs=tuple(slots))

    # -- internals ---------------------------------------------------------

    def _replace(self, nid: NodeId, **changes) -> None:
        old = self._nodes[nid]
        self._nodes[nid] = GraphNode(
            id=old.id,
            kind=old.kind,
            op_name=old.op_name,
            attrs=old.attrs,
            output_spec=old.output_spec,
            inputs=changes.get("inputs", old.inputs),
        )
        self.outputs = self._derive_outputs()

    def _infer_partial(
        self, op_name: str, slots: tuple[NodeId | None, ...], attrs: dict
    ) -> TensorSpec:
        """Infer the output spec from whatever slots are filled.

        Full slot tables go through regular inference. A partially filled
        same-shape binary operator infers from the filled slot alone; all
        other operators must be fully connected at creation.
        """
        op = get_operator(op_name)
        filled = [s for s in slots if s is not None]
        if len(filled) == len(slots):
            specs = [self._nodes[s].output_spec for s in slots]
            return infer_output_spec(op, specs, attrs)
        if op.loop_class == "elementwise" and op.arity == 2 and len(filled) == 1:
            spec = self._nodes[filled[0]].output_spec
            # Same inference a full slot table would produce.
            return infer_output_spec(op, [spec, spec], attrs)
        raise ShapeMismatch(
            f"{op_name}: cannot infer output from {len(filled)}/{len(slots)} inputs"
        )

    def _successors(self, nid: NodeId) -> set[NodeId]:
        cons = self.consumers()
        seen: set[NodeId] = set()
        stack = [nid]
        while stack:
            for nxt in cons.get(stack.pop(), ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    def _derive_outputs(self) -> list[NodeId]:
        fed = {frm for frm, _, _ in self.edges()}
        return [n.id for n in self._nodes if n.id not in fed]


# ---------------------------------------------------------------------------
# Validation and ordering


def validate(graph: ComputationGraph) -> ValidationReport:
    """Flow-validity check: DAG, arity completeness, shape consistency,
    output-set correctness. Reports all violations, not just the first."""
    violations: list[tuple[str, tuple[NodeId, ...], str]] = []

    # DAG property over filled slots.
    cyclic = _cycle_members(graph)
    if cyclic:
        violations.append(
            ("acyclic", tuple(sorted(cyclic)), "graph contains a cycle")
        )

    for node in graph.nodes:
        if node.kind != KIND_OP:
            continue
        empty = [i for i, s in enumerate(node.inputs) if s is None]
        if empty:
            violations.append(
                ("dangling", (node.id,), f"unfilled input slot(s) {empty}")
            )
            continue
        specs = [graph.node(s).output_spec for s in node.inputs]
        try:
            derived = infer_output_spec(get_operator(node.op_name), specs, node.attrs)
        except InferenceError as exc:
            violations.append(("spec", (node.id,), str(exc)))
            continue
        if derived != node.output_spec:
            violations.append(
                (
                    "spec",
                    (node.id,),
                    f"stored spec {node.output_spec} != derived {derived}",
                )
            )

    sinks = graph._derive_outputs()
    if sorted(graph.outputs) != sorted(sinks):
        violations.append(
            (
                "outputs",
                tuple(sorted(set(graph.outputs) ^ set(sinks))),
                f"recorded outputs {sorted(graph.outputs)} != sinks {sorted(sinks)}",
            )
        )

    return ValidationReport(ok=not violations, violations=tuple(violations))


def _cycle_members(graph: ComputationGraph) -> set[NodeId]:
    indeg = {n.id: 0 for n in graph.nodes}
    cons = graph.consumers()
    for _, to, _ in graph.edges():
        indeg[to] += 1
    ready = [nid for nid, d in sorted(indeg.items()) if d == 0]
    seen = 0
    while ready:
        nid = ready.pop()
        seen += 1
        for nxt in cons[nid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    if seen == len(graph):
        return set()
    return {nid for nid, d in indeg.items() if d > 0}


def topo_order(graph: ComputationGraph) -> list[NodeId]:
    """Deterministic topological order, ties broken by ascending id.

    This is the emission order for codegen.
    """
    indeg = {n.id: 0 for n in graph.nodes}
    cons = graph.consumers()
    for _, to, _ in graph.edges():
        indeg[to] += 1
    heap = [nid for nid, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order: list[NodeId] = []
    while heap:
        nid = heapq.heappop(heap)
        order.append(nid)
        for nxt in cons[nid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(heap, nxt)
    if len(order) != len(graph):
        raise NotADag("cycle prevents topological ordering")
    return order


def depth(graph: ComputationGraph) -> int:
    """Longest input-to-sink path, edges counted."""
    longest = {nid: 0 for nid in topo_order(graph)}
    for nid in topo_order(graph):
        node = graph.node(nid)
        for frm in node.inputs:
            if frm is not None:
                longest[nid] = max(longest[nid], longest[frm] + 1)
    return max(longest.values(), default=0)


# ---------------------------------------------------------------------------
# Canonical JSON

SCHEMA = {
    "nodes": "array of {id, kind, op, attrs, shape, dtype}",
    "edges": "array of [from, to, slot]",
    "outputs": "array of node ids",
}


def _canonical_attrs(attrs: Mapping[str, object]) -> dict:
    out = {}
    for key in sorted(attrs):
        value = attrs[key]
        out[key] = list(value) if isinstance(value, (tuple, list)) else value
    return out


def to_canonical_dict(graph: ComputationGraph) -> dict:
    return {
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind,
                "op": n.op_name,
                "attrs": _canonical_attrs(n.attrs),
                "shape": list(n.output_spec.shape),
                "dtype": n.output_spec.dtype.value,
            }
            for n in graph.nodes
        ],
        "edges": [list(e) for e in graph.edges()],
        "outputs": sorted(graph.outputs),
    }


def to_canonical_json(graph: ComputationGraph) -> str:
    """Canonical serialization: sorted keys, dense ids, no whitespace.
    Graph equality is byte-equality of this form."""
    return json.dumps(to_canonical_dict(graph), sort_keys=True, separators=(",", ":"))


_TUPLE_ATTRS = {"perm", "target"}


def from_canonical_dict(obj: Mapping) -> ComputationGraph:
    """Rebuild a graph from the canonical form, re-checking every invariant.

    Raises GraphJsonError when the payload is malformed or describes an
    invalid graph (tampered specs, wrong outputs, dangling slots, cycles).
    """
    try:
        nodes = obj["nodes"]
        edges = obj["edges"]
        outputs = obj["outputs"]
    except (KeyError, TypeError) as exc:
        raise GraphJsonError(f"missing graph field: {exc}") from exc

    graph = ComputationGraph()
    try:
        for i, rec in enumerate(nodes):
            if rec["id"] != i:
                raise GraphJsonError(f"node ids not dense: expected {i}, got {rec['id']}")
            spec = TensorSpec(DType(rec["dtype"]), tuple(rec["shape"]))
            attrs = {
                k: tuple(v) if k in _TUPLE_ATTRS else v
                for k, v in dict(rec["attrs"]).items()
            }
            if rec["kind"] == KIND_INPUT:
                node = GraphNode(i, KIND_INPUT, None, {}, spec, ())
            elif rec["kind"] == KIND_OP:
                arity = get_operator(rec["op"]).arity
                node = GraphNode(i, KIND_OP, rec["op"], attrs, spec, (None,) * arity)
            else:
                raise GraphJsonError(f"unknown node kind {rec['kind']!r}")
            graph._nodes.append(node)
        for frm, to, slot in edges:
            target = graph.node(to)
            if not 0 <= slot < len(target.inputs):
                raise GraphJsonError(f"edge [{frm},{to},{slot}]: no such slot")
            if target.inputs[slot] is not None:
                raise GraphJsonError(f"edge [{frm},{to},{slot}]: slot already fed")
            graph.node(frm)
            slots = list(target.inputs)
            slots[slot] = frm
            graph._nodes[to] = GraphNode(
                to, target.kind, target.op_name, target.attrs, target.output_spec,
                tuple(slots),
            )
        graph.outputs = list(outputs)
    except GraphJsonError:
        raise
    except Exception as exc:
        raise GraphJsonError(f"malformed graph payload: {exc}") from exc

    report = validate(graph)
    if not report.ok:
        rules = "; ".join(f"{r}: {msg}" for r, _, msg in report.violations)
        raise GraphJsonError(f"graph fails validation: {rules}")
    return graph


def from_canonical_json(text: str) -> ComputationGraph:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphJsonError(f"invalid JSON: {exc}") from exc
    return from_canonical_dict(obj)
