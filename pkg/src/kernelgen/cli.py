"""Command-line driver: gen, validate, eval, bench, stats.

Machine output goes to stdout (or the --out/--report file); human summaries
go to stderr. Exit codes: 0 command completed, 1 runtime error or corpus
violation, 2 usage error. Candidate failures never flip `eval`'s exit code.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import Counter
from pathlib import Path

from . import dataset as ds
from .builder import trace_to_jsonable
from .codegen import (
    HARNESS_INCLUDES,
    KERNEL_INCLUDES,
    OPTIMIZED_OPTIONS,
    REFERENCE_OPTIONS,
    Target,
    emit_cpu,
    emit_cuda,
    emit_harness,
    scan_clean,
)
from .evalrt import ToolchainConfig, evaluate_corpus
from .graph import KIND_OP, validate
from .inventory import catalog_json


def _machine_out(text: str, out_path: str | None) -> None:
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)


def _human(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    overrides = {}
    if args.n_max is not None:
        overrides["n_max"] = args.n_max
    if args.d_max is not None:
        overrides["d_max"] = args.d_max
    if args.p_op is not None:
        overrides["p_op"] = args.p_op
    pairs, traces = ds.generate_corpus(
        args.count, args.seed, config_overrides=overrides, with_traces=True
    )
    lines = [ds.record_to_line(p.to_record()) for p in pairs]
    _machine_out("\n".join(lines) + "\n", args.out)
    if args.trace_dir:
        trace_dir = Path(args.trace_dir)
        trace_dir.mkdir(parents=True, exist_ok=True)
        for pair, trace in zip(pairs, traces):
            if trace is None:
                continue
            (trace_dir / f"{pair.pair_id}.trace.json").write_text(
                json.dumps(trace_to_jsonable(trace), indent=2) + "\n"
            )
    levels = Counter(p.level for p in pairs)
    cats = Counter(c.value for p in pairs for c in p.categories)
    _human(
        f"generated {len(pairs)} pairs "
        f"(level1={levels.get(1, 0)}, level2={levels.get(2, 0)})"
    )
    for name, n in sorted(cats.items()):
        _human(f"  {name}: present in {n} pairs")
    return 0


def _revalidate_pair(pair: ds.CodePair) -> list[str]:
    problems = []
    report = validate(pair.graph)
    if not report.ok:
        problems += [f"graph: {msg}" for _, _, msg in report.violations]
    regenerated = {
        "cuda_src": emit_cuda(pair.graph, pair.pair_id).source_text,
        "cpu_src": emit_cpu(
            pair.graph, OPTIMIZED_OPTIONS, pair.pair_id, target=Target.CPU_OPTIMIZED
        ).source_text,
        "cpu_ref_src": emit_cpu(
            pair.graph, REFERENCE_OPTIONS, pair.pair_id, target=Target.CPU_REFERENCE
        ).source_text,
        "harness_src": emit_harness(pair.graph, pair.pair_id).source_text,
    }
    for field_name, text in regenerated.items():
        if text != getattr(pair, field_name):
            problems.append(f"{field_name}: stored text differs from regeneration")
    scans = [
        ("cuda_src", pair.cuda_src, KERNEL_INCLUDES),
        ("cpu_src", pair.cpu_src, KERNEL_INCLUDES),
        ("cpu_ref_src", pair.cpu_ref_src, KERNEL_INCLUDES),
        ("harness_src", pair.harness_src, HARNESS_INCLUDES),
    ]
    for field_name, text, whitelist in scans:
        problems += [f"{field_name}: {v}" for v in scan_clean(text, whitelist)]
    return problems


def cmd_validate(args) -> int:
    try:
        pairs = ds.read_corpus(args.corpus)
    except ds.DatasetError as exc:
        _human(f"corpus unreadable: {exc}")
        return 1
    bad = 0
    for pair in pairs:
        problems = _revalidate_pair(pair)
        if problems:
            bad += 1
            for p in problems:
                _human(f"pair {pair.pair_id}: {p}")
    _human(f"validated {len(pairs)} pairs, {bad} with violations")
    return 1 if bad else 0


def cmd_eval(args) -> int:
    pairs = ds.read_corpus(args.pairs)
    toolchain = ToolchainConfig(
        cc=args.cc,
        timeout_compile=args.timeout_compile,
        timeout_run=args.timeout_run,
        work_dir=args.work_dir,
    )
    reports, aggregate = evaluate_corpus(
        pairs,
        args.candidates,
        toolchain,
        jobs=args.jobs,
        baseline=args.baseline,
        measure=not args.no_timing,
        serial_timing=args.serial_timing,
        warmups=args.warmups,
        reps=args.reps,
    )
    payload = {
        "pairs": [r.to_dict() for r in reports],
        "aggregate": aggregate,
    }
    _machine_out(json.dumps(payload, indent=2, sort_keys=True) + "\n", args.report)
    _human(
        f"evaluated {aggregate['pairs']} pairs: "
        f"compile_pass={aggregate['compile_pass']:.2f} "
        f"execute_pass={aggregate['execute_pass']:.2f} "
        f"mean_speedup={aggregate['mean_speedup']:.2f}"
    )
    return 0


def cmd_bench(args) -> int:
    pairs = ds.read_corpus(args.corpus)
    try:
        suite = ds.package_benchmark(
            pairs, args.level1, args.level2, seed=args.seed, name=args.name
        )
    except ds.InsufficientPairs as exc:
        _human(f"cannot package: {exc}")
        return 1
    ds.write_suite(suite, args.out)
    _human(
        f"packaged {suite.manifest['level1_count']} level-1 and "
        f"{suite.manifest['level2_count']} level-2 pairs into {args.out}"
    )
    return 0


def cmd_stats(args) -> int:
    if args.ops:
        _machine_out(json.dumps(catalog_json(), indent=2) + "\n", args.out)
        return 0
    if not args.corpus:
        _human("stats needs --corpus FILE or --ops")
        return 2
    pairs = ds.read_corpus(args.corpus)
    op_hist: Counter = Counter()
    cat_hist: Counter = Counter()
    for pair in pairs:
        for node in pair.graph.nodes:
            if node.kind == KIND_OP:
                op_hist[node.op_name] += 1
        for cat in pair.categories:
            cat_hist[cat.value] += 1
    payload = {
        "pairs": len(pairs),
        "level1": sum(1 for p in pairs if p.level == 1),
        "level2": sum(1 for p in pairs if p.level == 2),
        "operator_nodes": sum(op_hist.values()),
        "operator_histogram": dict(sorted(op_hist.items())),
        "category_histogram": dict(sorted(cat_hist.items())),
    }
    _machine_out(json.dumps(payload, indent=2, sort_keys=True) + "\n", args.out)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kernelgen",
        description=(
            "Generate computation-graph CUDA/CPU code pairs and score CPU "
            "translations by compiling and running them."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a corpus of code pairs")
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--n-max", type=int, default=None)
    gen.add_argument("--d-max", type=int, default=None)
    gen.add_argument("--p-op", type=float, default=None)
    gen.add_argument("--out", default=None, help="JSONL output path (default stdout)")
    gen.add_argument("--trace-dir", default=None, help="dump per-pair build traces")
    gen.set_defaults(func=cmd_gen)

    val = sub.add_parser("validate", help="revalidate a corpus end to end")
    val.add_argument("--corpus", required=True)
    val.set_defaults(func=cmd_validate)

    ev = sub.add_parser("eval", help="score candidate CPU translations")
    ev.add_argument("--pairs", required=True)
    ev.add_argument("--candidates", required=True)
    ev.add_argument("--cc", default="cc")
    ev.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    ev.add_argument("--serial-timing", action="store_true")
    ev.add_argument("--timeout-run", type=float, default=30.0)
    ev.add_argument("--timeout-compile", type=float, default=60.0)
    ev.add_argument("--baseline", choices=("ref", "naive"), default="ref")
    ev.add_argument("--no-timing", action="store_true")
    ev.add_argument("--warmups", type=int, default=2)
    ev.add_argument("--reps", type=int, default=10)
    ev.add_argument("--work-dir", default=None)
    ev.add_argument("--report", default=None, help="report path (default stdout)")
    ev.set_defaults(func=cmd_eval)

    bench = sub.add_parser("bench", help="benchmark packaging")
    bench_sub = bench.add_subparsers(dest="bench_command", required=True)
    package = bench_sub.add_parser("package", help="package a two-level suite")
    package.add_argument("--corpus", required=True)
    package.add_argument("--level1", type=int, required=True)
    package.add_argument("--level2", type=int, required=True)
    package.add_argument("--seed", type=int, default=0)
    package.add_argument("--name", default="benchmark")
    package.add_argument("--out", required=True)
    package.set_defaults(func=cmd_bench)

    stats = sub.add_parser("stats", help="corpus statistics or operator catalog")
    stats.add_argument("--corpus", default=None)
    stats.add_argument("--ops", action="store_true", help="dump the operator catalog")
    stats.add_argument("--out", default=None)
    stats.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "gen" and args.count < 1:
        parser.error("--count must be >= 1")
    try:
        return args.func(args)
    except ds.DatasetError as exc:
        _human(f"error: {exc}")
        return 1
    except OSError as exc:
        _human(f"i/o error: {exc}")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
