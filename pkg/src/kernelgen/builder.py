"""Seeded stochastic graph construction: expansion under per-operator usage
caps, topological-diversity actions (random connection, branch, merge),
flow validation, and rollback.

All randomness flows from one `random.Random(seed)` owned by the build, so
(seed, config) fully determines (graph, trace). Candidate collections are
always assembled in ascending node-id order before sampling.
"""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

from .graph import ComputationGraph, NodeId, depth, validate
from .inventory import (
    CONV2D_KERNEL,
    DType,
    InferenceError,
    OperatorCategory,
    OperatorSpec,
    TensorSpec,
    f32,
    get_operator,
    infer_output_spec,
    list_operators,
)


class BuildExhausted(Exception):
    """No valid graph with at least 2 nodes was reachable."""


class NoEligibleOperator(Exception):
    """Every operator has hit its usage cap."""


DEFAULT_SHAPE_POOL: tuple[TensorSpec, ...] = (
    f32(36, 9),
    f32(64, 64),
    f32(4, 3),
    f32(3, 5),
    f32(1, 16, 32, 32),
)


def _uniform_category_weights() -> dict[OperatorCategory, float]:
    return {cat: 1.0 for cat in OperatorCategory}


@dataclass
class BuilderConfig:
    seed: int = 0
    n_max: int = 12
    d_max: int = 6
    p_op: float = 0.4
    # Weights for (expand-only, random_connection, branch, merge).
    action_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    input_shape_pool: tuple[TensorSpec, ...] = DEFAULT_SHAPE_POOL
    category_weights: dict[OperatorCategory, float] = field(
        default_factory=_uniform_category_weights
    )
    max_retries: int = 50

    def __post_init__(self):
        if self.n_max < 2:
            raise ValueError("n_max must be >= 2")
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1")
        if not 0.0 <= self.p_op <= 1.0:
            raise ValueError("p_op must lie in [0, 1]")
        if sum(self.action_weights) <= 0 or any(w < 0 for w in self.action_weights):
            raise ValueError("action weights must be non-negative with positive sum")
        if not self.input_shape_pool:
            raise ValueError("input_shape_pool must not be empty")


@dataclass(frozen=True)
class TraceStep:
    step: int
    action: str
    detail: str
    accepted: bool
    reason: str = ""
    # Replayable mutations: ("input", dtype, shape) | ("op", name, attrs, ids)
    # | ("rewire", consumer, slot, producer). Empty for rolled-back entries.
    mutations: tuple = ()


BuildTrace = list


def usage_cap(config: BuilderConfig) -> int:
    """Per-operator usage cap ceil(p_op * |inventory|)."""
    return math.ceil(config.p_op * len(list_operators()))


# ---------------------------------------------------------------------------
# Operator applicability and operand synthesis


def _applicable(op: OperatorSpec, anchor: TensorSpec) -> bool:
    """Whether `op` can consume `anchor` in slot 0 with some valid attrs."""
    if op.loop_class in ("reshape", "transpose"):
        return True
    if anchor.dtype is not DType.F32:
        return False
    if op.reduces_axis:
        return anchor.rank >= 2
    if op.loop_class == "matmul":
        return anchor.rank == 2
    if op.loop_class == "conv2d":
        return anchor.rank == 4
    return True


def _operand_predicate(op: OperatorSpec, anchor: TensorSpec) -> Callable[[TensorSpec], bool]:
    if op.loop_class == "matmul":
        return lambda s: s.dtype is DType.F32 and s.rank == 2 and s.shape[0] == anchor.shape[1]
    if op.loop_class == "conv2d":
        return lambda s: (
            s.dtype is DType.F32
            and s.rank == 4
            and s.shape[1] == anchor.shape[1]
            and s.shape[2] == s.shape[3] == CONV2D_KERNEL
        )
    return lambda s: s == anchor


def _synth_operand_spec(op: OperatorSpec, anchor: TensorSpec, rng: random.Random) -> TensorSpec:
    # Shape-constrained slots (matmul rhs, conv2d weight) cannot always be
    # satisfied by the input pool; derive a compatible spec instead.
    if op.loop_class == "matmul":
        return f32(anchor.shape[1], rng.choice((3, 4, 5, 8, 16)))
    if op.loop_class == "conv2d":
        return f32(rng.choice((4, 8)), anchor.shape[1], CONV2D_KERNEL, CONV2D_KERNEL)
    return anchor


def _synth_attrs(op: OperatorSpec, anchor: TensorSpec, rng: random.Random) -> dict:
    if op.reduces_axis or op.loop_class == "softmax":
        return {"axis": rng.randrange(anchor.rank)}
    if op.loop_class == "topk_rows":
        return {"k": rng.randint(1, anchor.shape[-1])}
    if op.loop_class == "transpose":
        return {"perm": tuple(rng.sample(range(anchor.rank), anchor.rank))}
    if op.loop_class == "reshape":
        candidates = [(anchor.numel,)]
        rev = tuple(reversed(anchor.shape))
        if rev not in candidates:
            candidates.append(rev)
        return {"target": rng.choice(candidates)}
    return {}


# ---------------------------------------------------------------------------
# Spec operations


def select_expansion_nodes(graph: ComputationGraph, rng: random.Random) -> list[NodeId]:
    """1-2 sink or near-sink nodes (out-degree 0, or 1 feeding a sink),
    drawn uniformly without replacement."""
    cons = graph.consumers()
    sinks = {nid for nid, c in cons.items() if not c}
    cands = sorted(
        nid
        for nid, c in cons.items()
        if not c or (len(c) == 1 and c[0] in sinks)
    )
    k = 1 if len(cands) == 1 else rng.randint(1, 2)
    return sorted(rng.sample(cands, min(k, len(cands))))


def pick_operator(
    usage_counts: Counter,
    config: BuilderConfig,
    rng: random.Random,
    eligible: Callable[[OperatorSpec], bool] | None = None,
) -> OperatorSpec:
    """Weighted sample by category over operators below the usage cap."""
    cap = usage_cap(config)
    pool = [
        op
        for op in list_operators()
        if usage_counts.get(op.name, 0) < cap and (eligible is None or eligible(op))
    ]
    if not pool:
        raise NoEligibleOperator("all operators capped or inapplicable")
    weights = [float(config.category_weights.get(op.category, 1.0)) for op in pool]
    if sum(weights) <= 0:
        raise NoEligibleOperator("category weights eliminate every candidate")
    return rng.choices(pool, weights=weights, k=1)[0]


def _plan_operand(
    graph: ComputationGraph,
    op: OperatorSpec,
    anchor: TensorSpec,
    rng: random.Random,
    config: BuilderConfig,
) -> tuple[str, NodeId | TensorSpec] | None:
    """Second operand for a binary operator, without mutating the graph:
    an existing compatible node if any, else a fresh Input from the pool,
    else a synthesized-shape Input. Returns None when a fresh node is
    needed but would exceed n_max."""
    pred = _operand_predicate(op, anchor)
    existing = [n.id for n in graph.nodes if pred(n.output_spec)]
    if existing:
        return "existing", rng.choice(existing)
    if len(graph) + 2 > config.n_max:  # fresh input + the operator node
        return None
    pool = [s for s in config.input_shape_pool if pred(s)]
    spec = rng.choice(pool) if pool else _synth_operand_spec(op, anchor, rng)
    return "fresh", spec


def _expand_at(
    graph: ComputationGraph,
    anchor_id: NodeId,
    rng: random.Random,
    config: BuilderConfig,
    usage: Counter,
    muts: list,
) -> tuple[bool, str]:
    anchor = graph.node(anchor_id).output_spec
    try:
        op = pick_operator(usage, config, rng, eligible=lambda o: _applicable(o, anchor))
    except NoEligibleOperator:
        return False, f"n{anchor_id}: no eligible operator"
    if len(graph) + 1 > config.n_max:
        return False, f"n{anchor_id}: node budget exhausted"
    attrs = _synth_attrs(op, anchor, rng)
    operand_plan = None
    operand_spec = None
    if op.arity == 2:
        operand_plan = _plan_operand(graph, op, anchor, rng, config)
        if operand_plan is None:
            return False, f"n{anchor_id}: {op.name} operand would exceed n_max"
        kind, value = operand_plan
        operand_spec = graph.node(value).output_spec if kind == "existing" else value
    # Dry-run inference so the mutation below cannot fail halfway.
    specs = [anchor] if op.arity == 1 else [anchor, operand_spec]
    try:
        infer_output_spec(op, specs, attrs)
    except InferenceError as exc:
        return False, f"n{anchor_id}: {op.name} rejected ({exc})"
    input_ids = [anchor_id]
    if operand_plan is not None:
        kind, value = operand_plan
        if kind == "existing":
            input_ids.append(value)
        else:
            fresh = graph.add_input(value)
            muts.append(("input", value.dtype.value, value.shape))
            input_ids.append(fresh)
    nid = graph.add_operator(op.name, input_ids, attrs)
    usage[op.name] += 1
    muts.append(("op", op.name, dict(attrs), tuple(input_ids)))
    return True, f"n{nid}={op.name}(n{', n'.join(str(i) for i in input_ids)})"


# -- diversity actions -------------------------------------------------------


def _try_random_connection(graph, rng, config, usage, muts) -> tuple[bool, str]:
    consumers = [n for n in graph.nodes if n.inputs]
    if not consumers:
        return False, "no consumer slots"
    # In-degree-proportional choice with a floor weight of 1.
    weights = [max(sum(1 for s in n.inputs if s is not None), 1) for n in consumers]
    target = rng.choices(consumers, weights=weights, k=1)[0]
    slot = rng.randrange(len(target.inputs))
    current = target.inputs[slot]
    if current is None:
        return False, f"n{target.id}[{slot}] unfilled"
    want = graph.node(current).output_spec
    blocked = graph._successors(target.id) | {target.id, current}
    cands = [
        n.id for n in graph.nodes if n.id not in blocked and n.output_spec == want
    ]
    if not cands:
        return False, f"n{target.id}[{slot}]: no alternative producer"
    frm = rng.choice(cands)
    graph.rewire_slot(target.id, slot, frm)
    muts.append(("rewire", target.id, slot, frm))
    return True, f"n{target.id}[{slot}] <- n{frm}"


def _try_branch(graph, rng, config, usage, muts) -> tuple[bool, str]:
    if len(graph) + 2 > config.n_max:
        return False, "node budget exhausted"
    unary = [op for op in list_operators() if op.arity == 1]
    cap = usage_cap(config)

    def choices_for(spec):
        return [
            op
            for op in unary
            if usage.get(op.name, 0) < cap and _applicable(op, spec)
        ]

    anchors = [n.id for n in graph.nodes if choices_for(n.output_spec)]
    if not anchors:
        return False, "no branchable node"
    anchor_id = rng.choice(anchors)
    spec = graph.node(anchor_id).output_spec
    new_ids = []
    for _ in range(2):
        pool = choices_for(spec)
        if not pool:
            return False, "unary operators capped mid-branch"
        weights = [float(config.category_weights.get(op.category, 1.0)) for op in pool]
        op = rng.choices(pool, weights=weights, k=1)[0]
        attrs = _synth_attrs(op, spec, rng)
        nid = graph.add_operator(op.name, [anchor_id], attrs)
        usage[op.name] += 1
        muts.append(("op", op.name, dict(attrs), (anchor_id,)))
        new_ids.append(nid)
    return True, f"n{anchor_id} -> {{n{new_ids[0]}, n{new_ids[1]}}}"


def _try_merge(graph, rng, config, usage, muts) -> tuple[bool, str]:
    if len(graph) + 1 > config.n_max:
        return False, "node budget exhausted"
    sinks = sorted(graph.outputs)
    groups: dict[TensorSpec, list[NodeId]] = {}
    for nid in sinks:
        spec = graph.node(nid).output_spec
        if spec.dtype is DType.F32:
            groups.setdefault(spec, []).append(nid)
    mergeable = [ids for _, ids in sorted(groups.items(), key=lambda kv: kv[1][0]) if len(ids) >= 2]
    if not mergeable:
        return False, "fewer than two compatible sinks"
    group = rng.choice(mergeable)
    a, b = rng.sample(group, 2)
    cap = usage_cap(config)
    binops = [
        op
        for op in list_operators()
        if op.arity == 2
        and op.loop_class == "elementwise"
        and usage.get(op.name, 0) < cap
    ]
    if not binops:
        return False, "binary elementwise operators capped"
    op = rng.choice(binops)
    nid = graph.add_operator(op.name, [a, b], {})
    usage[op.name] += 1
    muts.append(("op", op.name, {}, (a, b)))
    return True, f"n{nid}={op.name}(n{a}, n{b})"


_ACTION_FNS = {
    "random_connection": _try_random_connection,
    "branch": _try_branch,
    "merge": _try_merge,
}

DIVERSITY_ACTIONS = tuple(_ACTION_FNS)


def apply_diversity_action(
    graph: ComputationGraph,
    rng: random.Random,
    config: BuilderConfig,
    usage: Counter | None = None,
    action: str | None = None,
    mutations: list | None = None,
) -> tuple[str, str]:
    """Execute exactly one diversity action on `graph` in place.

    Any validation or bounds failure rolls the whole action back; rollback
    is a normal outcome reported as ("rolled-back", reason).
    """
    usage = usage if usage is not None else Counter()
    if action is None:
        action = rng.choices(DIVERSITY_ACTIONS, weights=config.action_weights[1:4], k=1)[0]
    trial = graph.clone()
    trial_usage = usage.copy()
    muts: list = []
    try:
        ok, detail = _ACTION_FNS[action](trial, rng, config, trial_usage, muts)
    except InferenceError as exc:
        ok, detail = False, str(exc)
    if ok:
        report = validate(trial)
        if report.ok and len(trial) <= config.n_max and depth(trial) <= config.d_max:
            graph._nodes = trial._nodes
            graph.outputs = trial.outputs
            usage.clear()
            usage.update(trial_usage)
            if mutations is not None:
                mutations.extend(muts)
            return "ok", f"{action}: {detail}"
        detail = f"{detail}; post-validation failed"
    return "rolled-back", f"{action}: {detail}"


# ---------------------------------------------------------------------------
# Top-level construction


def _attempt_step(graph, rng, config, usage, muts) -> tuple[str, str, bool]:
    expand_ids = select_expansion_nodes(graph, rng)
    details = []
    added = 0
    for nid in expand_ids:
        ok, d = _expand_at(graph, nid, rng, config, usage, muts)
        if ok:
            added += 1
        details.append(d)
    action = rng.choices(
        ("expand", "random_connection", "branch", "merge"),
        weights=config.action_weights,
        k=1,
    )[0]
    if action != "expand" and len(graph) >= 2:
        status, d = apply_diversity_action(
            graph, rng, config, usage, action=action, mutations=muts
        )
        details.append(f"{d} [{status}]")
    return action, "; ".join(details), added > 0


def build_graph(config: BuilderConfig) -> tuple[ComputationGraph, BuildTrace]:
    """Construct a validated graph within (n_max, d_max) hard caps.

    Each step expands 1-2 frontier nodes, applies at most one diversity
    action, and is accepted only if the result passes flow validation under
    the bounds; otherwise the whole step is rolled back and retried with
    fresh randomness. Construction ends when the retry budget for a step is
    exhausted (no in-bounds expansion remains) or n_max is reached.
    """
    rng = random.Random(config.seed)
    trace: BuildTrace = []
    graph = ComputationGraph()
    init_spec = rng.choice(config.input_shape_pool)
    graph.add_input(init_spec)
    trace.append(
        TraceStep(
            0,
            "init",
            f"input {init_spec.shape}",
            True,
            "",
            (("input", init_spec.dtype.value, init_spec.shape),),
        )
    )
    usage: Counter = Counter()
    step = 1
    while len(graph) < config.n_max:
        accepted = None
        for attempt in range(config.max_retries):
            work = graph.clone()
            work_usage = usage.copy()
            muts: list = []
            action, detail, expanded = _attempt_step(work, rng, config, work_usage, muts)
            if not expanded:
                trace.append(TraceStep(step, action, detail, False, "no expansion"))
                continue
            report = validate(work)
            if report.ok and len(work) <= config.n_max and depth(work) <= config.d_max:
                accepted = (work, work_usage, action, detail, tuple(muts))
                break
            reason = (
                "; ".join(m for _, _, m in report.violations)
                if not report.ok
                else f"bounds exceeded (n={len(work)}, d={depth(work)})"
            )
            trace.append(TraceStep(step, action, detail, False, reason))
        if accepted is None:
            break
        work, usage, action, detail, muts = accepted
        graph = work
        trace.append(TraceStep(step, action, detail, True, "", muts))
        step += 1
    if len(graph) < 2:
        raise BuildExhausted(f"seed {config.seed}: no valid graph with >= 2 nodes")
    return graph, trace


def replay_trace(trace: BuildTrace) -> ComputationGraph:
    """Reconstruct the graph from the accepted steps of a trace."""
    graph = ComputationGraph()
    for entry in trace:
        if not entry.accepted:
            continue
        for m in entry.mutations:
            if m[0] == "input":
                graph.add_input(TensorSpec(DType(m[1]), tuple(m[2])))
            elif m[0] == "op":
                graph.add_operator(m[1], list(m[3]), dict(m[2]))
            elif m[0] == "rewire":
                graph.rewire_slot(m[1], m[2], m[3])
            else:
                raise ValueError(f"unknown trace mutation {m[0]!r}")
    return graph


def trace_to_jsonable(trace: BuildTrace) -> list[dict]:
    out = []
    for e in trace:
        out.append(
            {
                "step": e.step,
                "action": e.action,
                "detail": e.detail,
                "accepted": e.accepted,
                "reason": e.reason,
                "mutations": [
                    [m[0]] + [list(x) if isinstance(x, tuple) else x for x in m[1:]]
                    for m in e.mutations
                ],
            }
        )
    return out


def build_single_op_graph(op_name: str, seed: int) -> ComputationGraph:
    """Minimal valid graph holding exactly one operator node (level 1)."""
    op = get_operator(op_name)
    rng = random.Random(seed)
    anchors = [s for s in DEFAULT_SHAPE_POOL if _applicable(op, s)]
    if not anchors:
        raise BuildExhausted(f"no pool shape feeds operator {op_name}")
    anchor = rng.choice(anchors)
    graph = ComputationGraph()
    ids = [graph.add_input(anchor)]
    if op.arity == 2:
        pred = _operand_predicate(op, anchor)
        pool = [s for s in DEFAULT_SHAPE_POOL if pred(s)]
        spec = rng.choice(pool) if pool else _synth_operand_spec(op, anchor, rng)
        ids.append(graph.add_input(spec))
    graph.add_operator(op.name, ids, _synth_attrs(op, anchor, rng))
    return graph
