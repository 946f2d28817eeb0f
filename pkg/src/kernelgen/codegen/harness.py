"""Self-contained C test harness for one pair: fills inputs from an inline
splitmix64 PRNG seeded with the pair id, calls the per-pair entry symbol,
and either dumps `OUT <node> <index> <value>` lines or, with `--time W R`,
prints the median wall time of R timed repetitions after W warmups.
"""

from __future__ import annotations

from ..graph import ComputationGraph
from ..inventory import DType
from .common import (
    HarnessSource,
    ROLE_INPUT,
    buffer_name,
    buffer_plan,
    c_param,
    dtype_printf,
    neutral_entry,
)

# Timed repetitions are capped by the static sample buffer.
MAX_TIMED_REPS = 4096

_PRNG = """\
static uint64_t rng_state;

static uint64_t rng_next(void) {
    rng_state += 0x9E3779B97F4A7C15ULL;
    uint64_t z = rng_state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

static float rng_uniform(void) {
    return (float)((double)(rng_next() >> 40) * (1.0 / 16777216.0) * 2.0 - 1.0);
}
"""


def emit_harness(graph: ComputationGraph, pair_id: int) -> HarnessSource:
    """Emit the main program; deterministic for equal (graph, pair_id)."""
    plan = buffer_plan(graph)
    entry = neutral_entry(pair_id)
    params = ", ".join(c_param(s) for s in plan)
    args = ", ".join(buffer_name(s.node_id) for s in plan)

    lines = [
        "#include <stdio.h>",
        "#include <stdlib.h>",
        "#include <string.h>",
        "#include <stdint.h>",
        "#include <time.h>",
        "",
        _PRNG,
        f"void {entry}({params});",
        "",
    ]
    for slot in plan:
        lines.append(
            f"static {slot.spec.dtype.c_type} {buffer_name(slot.node_id)}"
            f"[{slot.spec.numel}];"
        )
    lines += [
        "",
        "static void fill_inputs(void) {",
        f"    rng_state = {pair_id}ULL;",
    ]
    for slot in plan:
        if slot.role == ROLE_INPUT:
            name = buffer_name(slot.node_id)
            lines += [
                f"    for (int32_t i = 0; i < {slot.spec.numel}; ++i) {{",
                f"        {name}[i] = rng_uniform();",
                "    }",
            ]
    lines += [
        "}",
        "",
        "static void run_once(void) {",
        f"    {entry}({args});",
        "}",
        "",
        "static long long elapsed_ns(struct timespec a, struct timespec b) {",
        "    return (b.tv_sec - a.tv_sec) * 1000000000LL + (b.tv_nsec - a.tv_nsec);",
        "}",
        "",
        "int main(int argc, char** argv) {",
        "    fill_inputs();",
        '    if (argc >= 4 && strcmp(argv[1], "--time") == 0) {',
        "        long warmups = strtol(argv[2], NULL, 10);",
        "        long reps = strtol(argv[3], NULL, 10);",
        f"        static long long samples[{MAX_TIMED_REPS}];",
        "        if (reps < 1) {",
        "            reps = 1;",
        "        }",
        f"        if (reps > {MAX_TIMED_REPS}) {{",
        f"            reps = {MAX_TIMED_REPS};",
        "        }",
        "        for (long w = 0; w < warmups; ++w) {",
        "            run_once();",
        "        }",
        "        for (long r = 0; r < reps; ++r) {",
        "            struct timespec t0, t1;",
        "            clock_gettime(CLOCK_MONOTONIC, &t0);",
        "            run_once();",
        "            clock_gettime(CLOCK_MONOTONIC, &t1);",
        "            samples[r] = elapsed_ns(t0, t1);",
        "        }",
        "        for (long i = 1; i < reps; ++i) {",
        "            long long key = samples[i];",
        "            long j = i - 1;",
        "            while (j >= 0 && samples[j] > key) {",
        "                samples[j + 1] = samples[j];",
        "                --j;",
        "            }",
        "            samples[j + 1] = key;",
        "        }",
        "        long long median = (reps % 2 == 1)",
        "            ? samples[reps / 2]",
        "            : (samples[reps / 2 - 1] + samples[reps / 2]) / 2;",
        '        printf("TIME_NS %lld\\n", median);',
        "        return 0;",
        "    }",
        "    run_once();",
    ]
    for nid in sorted(graph.outputs):
        spec = graph.node(nid).output_spec
        name = buffer_name(nid)
        fmt = dtype_printf(spec.dtype)
        cast = "(double)" if spec.dtype is DType.F32 else "(int)"
        lines += [
            f"    for (int32_t i = 0; i < {spec.numel}; ++i) {{",
            f'        printf("OUT {nid} %d {fmt}\\n", (int)i, {cast}{name}[i]);',
            "    }",
        ]
    lines += [
        "    return 0;",
        "}",
        "",
    ]
    return HarnessSource(pair_id, entry, "\n".join(lines), plan)
