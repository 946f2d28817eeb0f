import json

import pytest

from kernelgen.builder import BuilderConfig, build_graph, build_single_op_graph
from kernelgen.codegen import OPTIMIZED_OPTIONS
from kernelgen.dataset import (
    HardwareLabel,
    InsufficientPairs,
    MalformedRecord,
    SchemaVersionMismatch,
    assemble_pair,
    describe_graph,
    generate_corpus,
    package_benchmark,
    pair_from_record,
    parse_cache_size,
    parse_cpuinfo_model,
    probe_hardware,
    read_corpus,
    record_to_line,
    write_corpus,
    write_suite,
)
from kernelgen.graph import ComputationGraph, KIND_OP, to_canonical_json
from kernelgen.inventory import OperatorCategory, f32, list_operators

FIXED_HW = HardwareLabel(
    cpu_model="Test CPU", physical_cores=2, logical_cores=4,
    cache_bytes={"L1d": 32768}, memory_total=1 << 30,
)


def _cos_graph():
    g = ComputationGraph()
    a = g.add_input(f32(36, 9))
    g.add_operator("cos", [a])
    return g


def _matmul_graph():
    g = ComputationGraph()
    a = g.add_input(f32(4, 3))
    b = g.add_input(f32(3, 5))
    g.add_operator("matmul", [a, b])
    return g


# -- hardware ----------------------------------------------------------------


def test_probe_hardware_sanity():
    hw = probe_hardware()
    if hw.physical_cores is not None and hw.logical_cores is not None:
        assert hw.logical_cores >= hw.physical_cores >= 1
    assert hw.memory_total is None or hw.memory_total > 0
    for size in hw.cache_bytes.values():
        assert size > 0


def test_parse_xeon_cpuinfo_fixture():
    cpuinfo = (
        "processor\t: 0\n"
        "vendor_id\t: GenuineIntel\n"
        "model name\t: Intel(R) Xeon(R) Gold 6348 CPU @ 2.60GHz\n"
        "cache size\t: 43008 KB\n"
    )
    model = parse_cpuinfo_model(cpuinfo)
    assert model == "Intel(R) Xeon(R) Gold 6348 CPU @ 2.60GHz"
    label = HardwareLabel(cpu_model=model, physical_cores=112, logical_cores=112)
    assert HardwareLabel.from_dict(label.to_dict()) == label


def test_parse_cpuinfo_missing_model():
    assert parse_cpuinfo_model("processor: 0\n") is None


def test_parse_cache_size():
    assert parse_cache_size("32K") == 32768
    assert parse_cache_size("8192K") == 8192 * 1024
    assert parse_cache_size("1M") == 1 << 20
    assert parse_cache_size("48") == 48
    assert parse_cache_size("lots") is None


# -- annotations -------------------------------------------------------------


def test_describe_single_cos():
    description, notes = describe_graph(_cos_graph())
    assert "elementwise cosine over 324 elements" in description
    assert "fork-join" in notes


def test_describe_matmul_mentions_tiling_and_parallelism():
    _, notes = describe_graph(_matmul_graph())
    assert "tiling" in notes
    assert "parallelism" in notes


def test_describe_deterministic():
    g, _ = build_graph(BuilderConfig(seed=8))
    assert describe_graph(g) == describe_graph(g)


# -- pair assembly -----------------------------------------------------------


def test_assemble_level1_cos():
    pair = assemble_pair(_cos_graph(), seed=3, hardware=FIXED_HW)
    assert pair.level == 1
    assert pair.categories == [OperatorCategory.ELEMENTWISE]
    assert pair.compare.rel_tol == 1e-4
    record = pair.to_record()
    assert record["labels"]["generated"] is True


def test_assemble_compute_intensive_loosens_rel_tol():
    pair = assemble_pair(_matmul_graph(), seed=4, hardware=FIXED_HW)
    assert pair.compare.rel_tol == 1e-3


def test_assemble_is_reproducible_apart_from_hardware():
    g = _cos_graph()
    a = assemble_pair(g, seed=3, hardware=FIXED_HW).to_record()
    b = assemble_pair(g, seed=3, hardware=FIXED_HW).to_record()
    assert record_to_line(a) == record_to_line(b)
    other_hw = HardwareLabel(cpu_model="Other", physical_cores=1, logical_cores=1)
    c = assemble_pair(g, seed=3, hardware=other_hw).to_record()
    a["labels"].pop("hardware")
    c["labels"].pop("hardware")
    assert record_to_line(a) == record_to_line(c)


def test_level_assignment_and_category_labels():
    from kernelgen.inventory import get_operator

    for seed in (12, 13, 14):
        g, _ = build_graph(BuilderConfig(seed=seed))
        ops = [n for n in g.nodes if n.kind == KIND_OP]
        pair = assemble_pair(g, seed=seed, hardware=FIXED_HW)
        assert pair.level == (1 if len(ops) == 1 else 2)
        recomputed = {get_operator(n.op_name).category for n in ops}
        assert set(pair.categories) == recomputed


# -- corpus I/O --------------------------------------------------------------


def test_corpus_roundtrip(tmp_path):
    pairs = [
        assemble_pair(_cos_graph(), seed=1, hardware=FIXED_HW),
        assemble_pair(_matmul_graph(), seed=2, hardware=FIXED_HW),
        assemble_pair(build_single_op_graph("argmax", 3), seed=3, hardware=FIXED_HW),
    ]
    path = tmp_path / "c.jsonl"
    write_corpus(pairs, path)
    assert len(path.read_text().splitlines()) == 3
    loaded = read_corpus(path)
    assert len(loaded) == 3
    for orig, back in zip(pairs, loaded):
        assert record_to_line(orig.to_record()) == record_to_line(back.to_record())
        assert to_canonical_json(orig.graph) == to_canonical_json(back.graph)


def test_empty_corpus_roundtrip(tmp_path):
    path = tmp_path / "empty.jsonl"
    write_corpus([], path)
    assert path.read_text() == ""
    assert read_corpus(path) == []


def test_truncated_line_reports_line_number(tmp_path):
    pair = assemble_pair(_cos_graph(), seed=1, hardware=FIXED_HW)
    path = tmp_path / "t.jsonl"
    line = record_to_line(pair.to_record())
    path.write_text(line + "\n" + line[: len(line) // 2] + "\n")
    with pytest.raises(MalformedRecord) as err:
        read_corpus(path)
    assert err.value.line == 2


def test_unknown_field_rejected(tmp_path):
    pair = assemble_pair(_cos_graph(), seed=1, hardware=FIXED_HW)
    record = pair.to_record()
    record["surprise"] = 1
    path = tmp_path / "u.jsonl"
    path.write_text(record_to_line(record) + "\n")
    with pytest.raises(MalformedRecord):
        read_corpus(path)


def test_schema_version_mismatch(tmp_path):
    pair = assemble_pair(_cos_graph(), seed=1, hardware=FIXED_HW)
    record = pair.to_record()
    record["schema_version"] = 99
    path = tmp_path / "v.jsonl"
    path.write_text(record_to_line(record) + "\n")
    with pytest.raises(SchemaVersionMismatch):
        read_corpus(path)


def test_regeneration_reproduces_sources():
    from kernelgen.codegen import REFERENCE_OPTIONS, Target, emit_cpu, emit_cuda, emit_harness

    for seed in range(6):
        g, _ = build_graph(BuilderConfig(seed=seed))
        pair = assemble_pair(g, seed=seed, hardware=FIXED_HW)
        assert emit_cuda(pair.graph, pair.pair_id).source_text == pair.cuda_src
        assert (
            emit_cpu(pair.graph, OPTIMIZED_OPTIONS, pair.pair_id, Target.CPU_OPTIMIZED).source_text
            == pair.cpu_src
        )
        assert (
            emit_cpu(pair.graph, REFERENCE_OPTIONS, pair.pair_id, Target.CPU_REFERENCE).source_text
            == pair.cpu_ref_src
        )
        assert emit_harness(pair.graph, pair.pair_id).source_text == pair.harness_src


# -- corpus generation -------------------------------------------------------


def test_generate_corpus_levels_and_seeds():
    pairs = generate_corpus(12, start_seed=100, hardware=FIXED_HW)
    assert [p.seed for p in pairs] == list(range(100, 112))
    assert [p.pair_id for p in pairs] == list(range(100, 112))
    level1 = [p for p in pairs if p.level == 1]
    assert len(level1) == 3  # every 5th pair
    names = [
        next(n.op_name for n in p.graph.nodes if n.kind == KIND_OP) for p in level1
    ]
    assert names == ["add", "sub", "mul"]  # inventory round robin


# -- benchmark packaging -----------------------------------------------------


@pytest.fixture(scope="module")
def corpus95():
    return generate_corpus(95, start_seed=0, hardware=FIXED_HW)


def test_package_covers_every_operator_once(corpus95):
    suite = package_benchmark(corpus95, 18, 0, seed=5)
    names = [
        next(n.op_name for n in p.graph.nodes if n.kind == KIND_OP)
        for p in suite.level1
    ]
    assert sorted(names) == sorted(op.name for op in list_operators())
    assert suite.manifest["level1_count"] == 18


def test_package_deterministic(corpus95):
    a = package_benchmark(corpus95, 18, 10, seed=5)
    b = package_benchmark(corpus95, 18, 10, seed=5)
    assert a.manifest == b.manifest


def test_package_insufficient(corpus95):
    with pytest.raises(InsufficientPairs):
        package_benchmark(corpus95, 5000, 0)
    with pytest.raises(InsufficientPairs):
        package_benchmark(corpus95, 0, 5000)


def test_manifest_histogram_matches_members(corpus95):
    suite = package_benchmark(corpus95, 18, 10, seed=1)
    recount = {}
    for pair in suite.level1 + suite.level2:
        for cat in pair.categories:
            recount[cat.value] = recount.get(cat.value, 0) + 1
    assert suite.manifest["category_histogram"] == dict(sorted(recount.items()))


def test_write_suite_layout(tmp_path, corpus95):
    suite = package_benchmark(corpus95, 6, 4, seed=2)
    out = tmp_path / "suite"
    write_suite(suite, out)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["level1_count"] == 6
    level1_files = list((out / "level1").glob("*.json"))
    assert len(level1_files) == 6
    some = suite.level1[0]
    assert (out / "level1" / f"{some.pair_id}.cuda.cu").exists()
    assert (out / "level1" / f"{some.pair_id}.cpu.c").exists()
    assert (out / "level1" / f"{some.pair_id}.ref.c").exists()
    assert (out / "level1" / f"{some.pair_id}.harness.c").exists()
    loaded = pair_from_record(json.loads(level1_files[0].read_text()))
    assert loaded.level == 1
