import math
import random
from collections import Counter

import pytest

from kernelgen.builder import (
    BuildExhausted,
    BuilderConfig,
    NoEligibleOperator,
    apply_diversity_action,
    build_graph,
    build_single_op_graph,
    pick_operator,
    replay_trace,
    select_expansion_nodes,
    usage_cap,
)
from kernelgen.graph import (
    ComputationGraph,
    KIND_OP,
    depth,
    to_canonical_json,
    validate,
)
from kernelgen.inventory import f32, list_operators


def test_seeded_builds_are_byte_identical():
    for seed in (0, 1, 7, 42, 1234):
        g1, t1 = build_graph(BuilderConfig(seed=seed))
        g2, t2 = build_graph(BuilderConfig(seed=seed))
        assert to_canonical_json(g1) == to_canonical_json(g2)
        assert t1 == t2


def test_default_builds_valid_and_bounded():
    cfg_defaults = BuilderConfig()
    for seed in range(150):
        g, _ = build_graph(BuilderConfig(seed=seed))
        assert validate(g).ok
        assert 2 <= len(g) <= cfg_defaults.n_max
        assert depth(g) <= cfg_defaults.d_max


def test_usage_cap_low_p_op():
    cfg = BuilderConfig(p_op=0.2)
    cap = usage_cap(cfg)
    assert cap == math.ceil(0.2 * len(list_operators())) == 4
    for seed in range(60):
        g, _ = build_graph(BuilderConfig(seed=seed, p_op=0.2))
        counts = Counter(n.op_name for n in g.nodes if n.kind == KIND_OP)
        assert all(c <= cap for c in counts.values()), counts


def test_build_exhausted_when_everything_capped():
    with pytest.raises(BuildExhausted):
        build_graph(BuilderConfig(seed=0, p_op=0.0))


def test_config_invariants():
    with pytest.raises(ValueError):
        BuilderConfig(n_max=1)
    with pytest.raises(ValueError):
        BuilderConfig(d_max=0)
    with pytest.raises(ValueError):
        BuilderConfig(action_weights=(0, 0, 0, 0))
    with pytest.raises(ValueError):
        BuilderConfig(p_op=1.5)


# -- select_expansion_nodes --------------------------------------------------


def test_expansion_single_node_graph():
    g = ComputationGraph()
    g.add_input(f32(4, 3))
    for seed in range(10):
        assert select_expansion_nodes(g, random.Random(seed)) == [0]


def test_expansion_chain_prefers_frontier():
    g = ComputationGraph()
    a = g.add_input(f32(36, 9))
    n1 = g.add_operator("cos", [a])
    g.add_operator("relu", [n1])
    # Enumerate rng outcomes: candidates are the sink and its feeder only.
    for seed in range(50):
        picked = select_expansion_nodes(g, random.Random(seed))
        assert picked
        assert set(picked) <= {1, 2}
        assert len(picked) in (1, 2)


def test_expansion_ids_exist():
    for seed in range(20):
        g, _ = build_graph(BuilderConfig(seed=seed))
        picked = select_expansion_nodes(g, random.Random(seed))
        ids = {n.id for n in g.nodes}
        assert set(picked) <= ids


# -- pick_operator -----------------------------------------------------------


def test_pick_operator_only_uncapped():
    cfg = BuilderConfig(p_op=0.2)
    cap = usage_cap(cfg)
    ops = list_operators()
    usage = Counter({op.name: cap for op in ops})
    usage["sin"] = 0
    rng = random.Random(0)
    for _ in range(20):
        assert pick_operator(usage, cfg, rng).name == "sin"


def test_pick_operator_all_capped():
    cfg = BuilderConfig(p_op=0.2)
    usage = Counter({op.name: usage_cap(cfg) for op in list_operators()})
    with pytest.raises(NoEligibleOperator):
        pick_operator(usage, cfg, random.Random(0))


def test_capped_operator_never_selected():
    cfg = BuilderConfig(p_op=0.2)
    usage = Counter({"cos": usage_cap(cfg)})
    rng = random.Random(1)
    picks = {pick_operator(usage, cfg, rng).name for _ in range(300)}
    assert "cos" not in picks


# -- diversity actions -------------------------------------------------------


def test_merge_rolls_back_on_single_sink():
    g = ComputationGraph()
    a = g.add_input(f32(36, 9))
    g.add_operator("cos", [a])
    before = to_canonical_json(g)
    status, detail = apply_diversity_action(
        g, random.Random(0), BuilderConfig(), action="merge"
    )
    assert status == "rolled-back"
    assert to_canonical_json(g) == before


def test_branch_adds_two_consumers():
    g = ComputationGraph()
    a = g.add_input(f32(36, 9))
    g.add_operator("cos", [a])
    status, detail = apply_diversity_action(
        g, random.Random(3), BuilderConfig(), action="branch"
    )
    assert status == "ok", detail
    assert len(g) == 4
    assert validate(g).ok


def test_merge_joins_two_sinks():
    g = ComputationGraph()
    a = g.add_input(f32(64, 64))
    g.add_operator("cos", [a])
    g.add_operator("sin", [a])
    status, detail = apply_diversity_action(
        g, random.Random(0), BuilderConfig(), action="merge"
    )
    assert status == "ok", detail
    assert len(g.outputs) == 1
    assert g.node(g.outputs[0]).op_name in ("add", "sub", "mul")


def test_random_connection_rewires_or_rolls_back():
    cfg = BuilderConfig()
    for seed in range(30):
        g, _ = build_graph(BuilderConfig(seed=seed))
        before = to_canonical_json(g)
        status, _ = apply_diversity_action(
            g, random.Random(seed), cfg, action="random_connection"
        )
        if status == "rolled-back":
            assert to_canonical_json(g) == before
        else:
            assert validate(g).ok


# -- traces ------------------------------------------------------------------


def test_replay_reconstructs_graph():
    for seed in range(40):
        g, trace = build_graph(BuilderConfig(seed=seed))
        assert to_canonical_json(replay_trace(trace)) == to_canonical_json(g)


def test_rolled_back_steps_carry_no_mutations():
    saw_rollback = False
    for seed in range(60):
        _, trace = build_graph(BuilderConfig(seed=seed))
        for entry in trace:
            if not entry.accepted:
                saw_rollback = True
                assert entry.mutations == ()
    assert saw_rollback  # the retry machinery is actually exercised


# -- level-1 construction ----------------------------------------------------


def test_single_op_graphs_for_every_operator():
    for op in list_operators():
        for seed in (0, 1, 2):
            g = build_single_op_graph(op.name, seed)
            assert validate(g).ok
            op_nodes = [n for n in g.nodes if n.kind == KIND_OP]
            assert len(op_nodes) == 1
            assert op_nodes[0].op_name == op.name
