"""Dataset assembly: hardware labels, generated annotations, CodePair
records, JSONL corpus I/O, and two-level benchmark packaging.

Records are canonical JSON (sorted keys, no whitespace) carrying no
timestamps and no absolute paths, so corpus files are byte-reproducible
apart from the probed hardware label.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

import psutil

from .builder import BuilderConfig, build_graph, build_single_op_graph
from .codegen import (
    OPTIMIZED_OPTIONS,
    REFERENCE_OPTIONS,
    EmitOptions,
    Target,
    emit_cpu,
    emit_cuda,
    emit_harness,
)
from .evalrt import CompareSpec
from .graph import (
    ComputationGraph,
    GraphJsonError,
    KIND_OP,
    from_canonical_dict,
    to_canonical_dict,
    topo_order,
)
from .inventory import OperatorCategory, get_operator, list_operators

SCHEMA_VERSION = 1


class DatasetError(Exception):
    pass


class SchemaVersionMismatch(DatasetError):
    pass


class MalformedRecord(DatasetError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class InsufficientPairs(DatasetError):
    pass


# ---------------------------------------------------------------------------
# Hardware probing


@dataclass(frozen=True)
class HardwareLabel:
    cpu_model: str | None = None
    physical_cores: int | None = None
    logical_cores: int | None = None
    cache_bytes: dict[str, int] = field(default_factory=dict)
    memory_total: int | None = None

    def to_dict(self) -> dict:
        return {
            "cpu_model": self.cpu_model,
            "physical_cores": self.physical_cores,
            "logical_cores": self.logical_cores,
            "cache_bytes": dict(sorted(self.cache_bytes.items())),
            "memory_total": self.memory_total,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HardwareLabel":
        return cls(
            cpu_model=d.get("cpu_model"),
            physical_cores=d.get("physical_cores"),
            logical_cores=d.get("logical_cores"),
            cache_bytes=dict(d.get("cache_bytes") or {}),
            memory_total=d.get("memory_total"),
        )


def parse_cpuinfo_model(text: str) -> str | None:
    """Extract the first `model name` entry from /proc/cpuinfo content."""
    match = re.search(r"^model name\s*:\s*(.+)$", text, re.MULTILINE)
    return match.group(1).strip() if match else None


def parse_cache_size(text: str) -> int | None:
    """Parse sysfs cache size strings like '32K' or '8192K' to bytes."""
    match = re.fullmatch(r"\s*(\d+)\s*([KMG]?)\s*", text)
    if not match:
        return None
    scale = {"": 1, "K": 1024, "M": 1024**2, "G": 1024**3}[match.group(2)]
    return int(match.group(1)) * scale


def _probe_caches() -> dict[str, int]:
    caches: dict[str, int] = {}
    root = Path("/sys/devices/system/cpu/cpu0/cache")
    if not root.is_dir():
        return caches
    for index in sorted(root.glob("index*")):
        try:
            level = (index / "level").read_text().strip()
            ctype = (index / "type").read_text().strip()
            size = parse_cache_size((index / "size").read_text())
        except OSError:
            continue
        if size is None:
            continue
        suffix = {"Data": "d", "Instruction": "i"}.get(ctype, "")
        caches[f"L{level}{suffix}"] = size
    return caches


def probe_hardware() -> HardwareLabel:
    """Best-effort host facts; unknown fields stay None, never fabricated."""
    model = None
    try:
        model = parse_cpuinfo_model(Path("/proc/cpuinfo").read_text())
    except OSError:
        pass
    return HardwareLabel(
        cpu_model=model,
        physical_cores=psutil.cpu_count(logical=False),
        logical_cores=psutil.cpu_count(logical=True),
        cache_bytes=_probe_caches(),
        memory_total=psutil.virtual_memory().total,
    )


# ---------------------------------------------------------------------------
# Generated annotations

_OP_PHRASE = {
    "add": "addition",
    "sub": "subtraction",
    "mul": "multiplication",
    "relu": "rectified linear unit",
    "sin": "sine",
    "cos": "cosine",
    "sqrt_abs": "square root of the absolute value",
    "sum": "sum reduction",
    "mean": "mean reduction",
    "max": "maximum reduction",
    "softmax": "softmax normalization",
    "argmax": "index of the maximum",
    "reshape": "reshape",
    "transpose": "axis permutation",
    "sort_last_axis": "descending sort of the last axis",
    "topk_values": "top-k value selection",
    "matmul": "matrix multiplication",
    "conv2d": "3x3 2-d convolution",
}

_CATEGORY_ADJ = {
    OperatorCategory.ELEMENTWISE: "elementwise",
    OperatorCategory.REDUCTION: "reduction",
    OperatorCategory.LAYOUT_TRANSFORM: "layout-transform",
    OperatorCategory.LOGIC_INTENSIVE: "logic-intensive",
    OperatorCategory.COMPUTE_INTENSIVE: "compute-intensive",
}

_CATEGORY_HINT = {
    OperatorCategory.ELEMENTWISE: (
        "parallelize the outermost independent axis with a fork-join loop"
    ),
    OperatorCategory.REDUCTION: (
        "parallelize the non-reduced axes only and keep a private accumulator per row"
    ),
    OperatorCategory.LAYOUT_TRANSFORM: (
        "keep writes sequential in the output layout to preserve locality"
    ),
    OperatorCategory.LOGIC_INTENSIVE: (
        "parallelize across independent rows; branching dominates the inner loop"
    ),
    OperatorCategory.COMPUTE_INTENSIVE: (
        "apply tiling to the contraction loop and outer-loop parallelism "
        "across independent output rows"
    ),
}


def graph_categories(graph: ComputationGraph) -> list[OperatorCategory]:
    cats = {
        get_operator(n.op_name).category for n in graph.nodes if n.kind == KIND_OP
    }
    return [c for c in OperatorCategory if c in cats]


def describe_graph(graph: ComputationGraph) -> tuple[str, str]:
    """Deterministic template text replacing hand-written annotations:
    a topo-ordered narrative plus per-category optimization hints."""
    op_nodes = [n for n in graph.nodes if n.kind == KIND_OP]
    n_inputs = len(graph.nodes) - len(op_nodes)
    parts = [
        f"Kernel computing {len(op_nodes)} tensor operator(s) over "
        f"{n_inputs} input tensor(s)."
    ]
    for step, nid in enumerate(
        n for n in topo_order(graph) if graph.node(n).kind == KIND_OP
    ):
        node = graph.node(nid)
        op = get_operator(node.op_name)
        spec = node.output_spec
        feeds = ", ".join(f"n{s}" for s in node.inputs)
        parts.append(
            f"Step {step}: {_CATEGORY_ADJ[op.category]} {_OP_PHRASE[node.op_name]} "
            f"over {spec.numel} elements, producing shape {spec.shape} "
            f"{spec.dtype.value} from {feeds}."
        )
    description = " ".join(parts)
    hints = [
        f"{_CATEGORY_ADJ[cat]}: {_CATEGORY_HINT[cat]}"
        for cat in graph_categories(graph)
    ]
    notes = "Optimization guidance - " + "; ".join(hints) + "." if hints else ""
    return description, notes


# ---------------------------------------------------------------------------
# CodePair


@dataclass
class CodePair:
    pair_id: int
    seed: int
    level: int  # 1 = single operator, 2 = fused graph
    graph: ComputationGraph
    cuda_src: str
    cpu_src: str  # optimized flavor
    cpu_ref_src: str
    harness_src: str
    hardware: HardwareLabel
    categories: list[OperatorCategory]
    description: str
    optimization_notes: str
    compare: CompareSpec

    def to_record(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "pair_id": self.pair_id,
            "seed": self.seed,
            "level": self.level,
            "graph": to_canonical_dict(self.graph),
            "cuda_src": self.cuda_src,
            "cpu_src": self.cpu_src,
            "cpu_ref_src": self.cpu_ref_src,
            "harness_src": self.harness_src,
            "labels": {
                "hardware": self.hardware.to_dict(),
                "categories": [c.value for c in self.categories],
                "description": self.description,
                "optimization_notes": self.optimization_notes,
                "generated": True,
            },
            "compare": {"abs_tol": self.compare.abs_tol, "rel_tol": self.compare.rel_tol},
        }


_RECORD_FIELDS = {
    "schema_version",
    "pair_id",
    "seed",
    "level",
    "graph",
    "cuda_src",
    "cpu_src",
    "cpu_ref_src",
    "harness_src",
    "labels",
    "compare",
}
_LABEL_FIELDS = {
    "hardware",
    "categories",
    "description",
    "optimization_notes",
    "generated",
}


def pair_from_record(record: dict) -> CodePair:
    labels = record["labels"]
    return CodePair(
        pair_id=record["pair_id"],
        seed=record["seed"],
        level=record["level"],
        graph=from_canonical_dict(record["graph"]),
        cuda_src=record["cuda_src"],
        cpu_src=record["cpu_src"],
        cpu_ref_src=record["cpu_ref_src"],
        harness_src=record["harness_src"],
        hardware=HardwareLabel.from_dict(labels["hardware"]),
        categories=[OperatorCategory(c) for c in labels["categories"]],
        description=labels["description"],
        optimization_notes=labels["optimization_notes"],
        compare=CompareSpec(record["compare"]["abs_tol"], record["compare"]["rel_tol"]),
    )


def compare_spec_for(graph: ComputationGraph) -> CompareSpec:
    cats = graph_categories(graph)
    rel = 1e-3 if OperatorCategory.COMPUTE_INTENSIVE in cats else 1e-4
    return CompareSpec(abs_tol=1e-5, rel_tol=rel)


def assemble_pair(
    graph: ComputationGraph,
    seed: int,
    options: EmitOptions | None = None,
    pair_id: int | None = None,
    hardware: HardwareLabel | None = None,
) -> CodePair:
    """Run every emitter plus labeling for one validated graph."""
    pair_id = seed if pair_id is None else pair_id
    options = options or OPTIMIZED_OPTIONS
    hardware = hardware if hardware is not None else probe_hardware()
    description, notes = describe_graph(graph)
    op_count = sum(1 for n in graph.nodes if n.kind == KIND_OP)
    return CodePair(
        pair_id=pair_id,
        seed=seed,
        level=1 if op_count == 1 else 2,
        graph=graph,
        cuda_src=emit_cuda(graph, pair_id).source_text,
        cpu_src=emit_cpu(graph, options, pair_id, target=Target.CPU_OPTIMIZED).source_text,
        cpu_ref_src=emit_cpu(
            graph, REFERENCE_OPTIONS, pair_id, target=Target.CPU_REFERENCE
        ).source_text,
        harness_src=emit_harness(graph, pair_id).source_text,
        hardware=hardware,
        categories=graph_categories(graph),
        description=description,
        optimization_notes=notes,
        compare=compare_spec_for(graph),
    )


LEVEL1_EVERY = 5  # every 5th generated pair is a single-operator pair


def generate_corpus(
    count: int,
    start_seed: int,
    config_overrides: dict | None = None,
    options: EmitOptions | None = None,
    hardware: HardwareLabel | None = None,
    with_traces: bool = False,
):
    """Build `count` pairs with seeds start_seed..start_seed+count-1.

    Every LEVEL1_EVERY-th pair is a level-1 single-operator graph cycling
    the inventory in order, so any reasonably sized corpus covers all
    operators; the rest come from the stochastic builder.
    """
    ops = list_operators()
    hardware = hardware if hardware is not None else probe_hardware()
    pairs, traces = [], []
    level1_ordinal = 0
    for i in range(count):
        seed = start_seed + i
        trace = None
        if i % LEVEL1_EVERY == 0:
            op = ops[level1_ordinal % len(ops)]
            level1_ordinal += 1
            graph = build_single_op_graph(op.name, seed)
        else:
            cfg = BuilderConfig(seed=seed, **(config_overrides or {}))
            graph, trace = build_graph(cfg)
        pairs.append(assemble_pair(graph, seed, options=options, hardware=hardware))
        traces.append(trace)
    return (pairs, traces) if with_traces else pairs


# ---------------------------------------------------------------------------
# Corpus I/O (JSONL, one canonical record per line)


def record_to_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def write_corpus(pairs, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(record_to_line(pair.to_record()) + "\n")


def _check_record(record: dict, lineno: int) -> None:
    if not isinstance(record, dict):
        raise MalformedRecord(lineno, "record is not an object")
    version = record.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"line {lineno}: schema_version {version!r} != {SCHEMA_VERSION}"
        )
    unknown = set(record) - _RECORD_FIELDS
    if unknown:
        raise MalformedRecord(lineno, f"unknown field(s) {sorted(unknown)}")
    missing = _RECORD_FIELDS - set(record)
    if missing:
        raise MalformedRecord(lineno, f"missing field(s) {sorted(missing)}")
    label_keys = set(record["labels"])
    if label_keys != _LABEL_FIELDS:
        raise MalformedRecord(
            lineno, f"labels fields {sorted(label_keys)} != {sorted(_LABEL_FIELDS)}"
        )


def read_corpus(path: str | Path) -> list[CodePair]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(lineno, f"invalid JSON ({exc})") from exc
            _check_record(record, lineno)
            try:
                pairs.append(pair_from_record(record))
            except (KeyError, TypeError, ValueError, GraphJsonError) as exc:
                raise MalformedRecord(
                    lineno, f"pair {record.get('pair_id')}: bad record content ({exc})"
                ) from exc
    return pairs


# ---------------------------------------------------------------------------
# Benchmark packaging


@dataclass
class BenchmarkSuite:
    name: str
    level1: list[CodePair]
    level2: list[CodePair]
    manifest: dict


def _category_key(pair: CodePair) -> tuple[str, ...]:
    return tuple(c.value for c in pair.categories)


def package_benchmark(
    corpus: list[CodePair],
    level1_count: int,
    level2_count: int,
    seed: int = 0,
    name: str = "benchmark",
) -> BenchmarkSuite:
    """Stratified deterministic selection.

    Level 1 covers every inventory operator once before any repeats; level
    2 greedily maximizes category-set diversity, ties broken by pair id.
    """
    rng = random.Random(seed)
    level1_pool = [p for p in corpus if p.level == 1]
    level2_pool = [p for p in corpus if p.level == 2]
    if len(level1_pool) < level1_count or len(level2_pool) < level2_count:
        raise InsufficientPairs(
            f"corpus has {len(level1_pool)} level-1 / {len(level2_pool)} level-2 "
            f"pairs; requested {level1_count}/{level2_count}"
        )

    by_op: dict[str, list[CodePair]] = {}
    for pair in sorted(level1_pool, key=lambda p: p.pair_id):
        op_name = next(
            n.op_name for n in pair.graph.nodes if n.kind == KIND_OP
        )
        by_op.setdefault(op_name, []).append(pair)
    for group in by_op.values():
        rng.shuffle(group)
    op_order = [op.name for op in list_operators() if op.name in by_op]
    level1: list[CodePair] = []
    sweep = 0
    while len(level1) < level1_count:
        progressed = False
        for op_name in op_order:
            if len(level1) >= level1_count:
                break
            group = by_op[op_name]
            if sweep < len(group):
                level1.append(group[sweep])
                progressed = True
        if not progressed:
            raise InsufficientPairs(
                f"only {len(level1)} distinct level-1 pairs available"
            )
        sweep += 1

    seen: dict[tuple[str, ...], int] = {}
    remaining = sorted(level2_pool, key=lambda p: p.pair_id)
    level2: list[CodePair] = []
    for _ in range(level2_count):
        best = min(remaining, key=lambda p: (seen.get(_category_key(p), 0), p.pair_id))
        level2.append(best)
        remaining.remove(best)
        key = _category_key(best)
        seen[key] = seen.get(key, 0) + 1

    histogram: dict[str, int] = {}
    for pair in level1 + level2:
        for cat in pair.categories:
            histogram[cat.value] = histogram.get(cat.value, 0) + 1
    manifest = {
        "name": name,
        "seed": seed,
        "schema_version": SCHEMA_VERSION,
        "level1_count": len(level1),
        "level2_count": len(level2),
        "level1_pair_ids": [p.pair_id for p in level1],
        "level2_pair_ids": [p.pair_id for p in level2],
        "category_histogram": dict(sorted(histogram.items())),
    }
    return BenchmarkSuite(name=name, level1=level1, level2=level2, manifest=manifest)


def write_suite(suite: BenchmarkSuite, out_dir: str | Path) -> None:
    """Write manifest plus per-pair record and source files."""
    out = Path(out_dir)
    for level, pairs in (("level1", suite.level1), ("level2", suite.level2)):
        level_dir = out / level
        level_dir.mkdir(parents=True, exist_ok=True)
        for pair in pairs:
            stem = str(pair.pair_id)
            (level_dir / f"{stem}.json").write_text(
                record_to_line(pair.to_record()) + "\n"
            )
            (level_dir / f"{stem}.cuda.cu").write_text(pair.cuda_src)
            (level_dir / f"{stem}.cpu.c").write_text(pair.cpu_src)
            (level_dir / f"{stem}.ref.c").write_text(pair.cpu_ref_src)
            (level_dir / f"{stem}.harness.c").write_text(pair.harness_src)
    (out / "manifest.json").write_text(
        json.dumps(suite.manifest, indent=2, sort_keys=True) + "\n"
    )
