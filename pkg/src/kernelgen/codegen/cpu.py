"""CPU C emitter: one loop nest per node in topological order, explicit
intermediate buffers, no cross-node fusion.

The reference flavor is plain single-threaded C; the optimized flavor adds
fork-join `parallel for` pragmas on the outermost independent axis of each
nest (reductions parallelize the non-reduced axes only) plus register
tiling for matmul. Reductions, matmul, and conv accumulate in double and
round once, mirroring the interpreter oracle.
"""

from __future__ import annotations

from ..graph import KIND_OP, ComputationGraph, GraphNode, topo_order
from ..inventory import CONV2D_KERNEL, get_operator
from .common import (
    EmitOptions,
    KernelSource,
    REFERENCE_OPTIONS,
    Target,
    UnsupportedOp,
    buffer_name,
    buffer_plan,
    c_param,
    index_expr,
    mangle_entry,
    neutral_entry,
    strides,
)

_PARALLEL_FOR = "#pragma omp parallel for"

_UNARY_EXPR = {
    "relu": lambda x: f"({x} > 0.0f ? {x} : 0.0f)",
    "sin": lambda x: f"sinf({x})",
    "cos": lambda x: f"cosf({x})",
    "sqrt_abs": lambda x: f"sqrtf(fabsf({x}))",
}

_BINARY_SYMBOL = {"add": "+", "sub": "-", "mul": "*"}

_SORT_HELPERS = """\
static void sift_down(float* a, int32_t start, int32_t end) {
    int32_t root = start;
    while (2 * root + 1 <= end) {
        int32_t child = 2 * root + 1;
        if (child + 1 <= end && a[child] < a[child + 1]) {
            child = child + 1;
        }
        if (a[root] < a[child]) {
            float tmp = a[root];
            a[root] = a[child];
            a[child] = tmp;
            root = child;
        } else {
            return;
        }
    }
}

static void sort_desc(float* a, int32_t n) {
    for (int32_t start = n / 2 - 1; start >= 0; --start) {
        sift_down(a, start, n - 1);
    }
    for (int32_t end = n - 1; end > 0; --end) {
        float tmp = a[end];
        a[end] = a[0];
        a[0] = tmp;
        sift_down(a, 0, end - 1);
    }
    for (int32_t i = 0, j = n - 1; i < j; ++i, --j) {
        float tmp = a[i];
        a[i] = a[j];
        a[j] = tmp;
    }
}
"""


def _loop_nest(dims, body, indent, pragmas=()):
    """Nested counted loops around `body` (lines with embedded relative
    indent); `dims` is a list of (var, extent)."""
    lines = []
    pad = indent
    for i, (var, extent) in enumerate(dims):
        if i == 0:
            for p in pragmas:
                lines.append(f"{pad}{p}")
        lines.append(f"{pad}for (int32_t {var} = 0; {var} < {extent}; ++{var}) {{")
        pad += "    "
    lines.extend(f"{pad}{b}" if b else "" for b in body)
    for _ in dims:
        pad = pad[:-4]
        lines.append(f"{pad}}}")
    return lines


def _reduce_base(in_shape, axis, kept_vars):
    """Declaration of the flat base offset over the kept input dims, plus
    the stride of the reduced axis."""
    in_strides = strides(in_shape)
    terms = []
    k = 0
    for d in range(len(in_shape)):
        if d == axis:
            continue
        s = in_strides[d]
        terms.append(kept_vars[k] if s == 1 else f"{kept_vars[k]} * {s}")
        k += 1
    base = " + ".join(terms) if terms else "0"
    return base, in_strides[axis]


def _axis_term(stride):
    return "r" if stride == 1 else f"r * {stride}"


def _emit_elementwise(node, graph, opts, indent):
    shape = node.output_spec.shape
    dims = [(f"i{d}", e) for d, e in enumerate(shape)]
    idx = index_expr([v for v, _ in dims], shape)
    out = buffer_name(node.id)
    ins = [buffer_name(s) for s in node.inputs]
    if node.op_name in _BINARY_SYMBOL:
        expr = f"{ins[0]}[{idx}] {_BINARY_SYMBOL[node.op_name]} {ins[1]}[{idx}]"
    else:
        expr = _UNARY_EXPR[node.op_name](f"{ins[0]}[{idx}]")
    pragmas = (_PARALLEL_FOR,) if opts.parallel else ()
    return _loop_nest(dims, [f"{out}[{idx}] = {expr};"], indent, pragmas)


def _emit_reduce(node, graph, opts, indent):
    in_spec = graph.node(node.inputs[0]).output_spec
    axis = int(node.attrs["axis"])
    extent = in_spec.shape[axis]
    out_shape = node.output_spec.shape
    kept = [f"i{d}" for d in range(len(out_shape))]
    dims = list(zip(kept, out_shape))
    base, axis_stride = _reduce_base(in_spec.shape, axis, kept)
    term = _axis_term(axis_stride)
    src = buffer_name(node.inputs[0])
    out = buffer_name(node.id)
    out_idx = index_expr(kept, out_shape)
    body = [f"int32_t base = {base};"]
    if node.op_name in ("sum", "mean"):
        body += [
            "double acc = 0.0;",
            f"for (int32_t r = 0; r < {extent}; ++r) {{",
            f"    acc += (double){src}[base + {term}];",
            "}",
        ]
        store = "(float)acc" if node.op_name == "sum" else f"(float)(acc / {extent}.0)"
        body.append(f"{out}[{out_idx}] = {store};")
    elif node.op_name == "max":
        body += [
            f"float best = {src}[base];",
            f"for (int32_t r = 1; r < {extent}; ++r) {{",
            f"    float v = {src}[base + {term}];",
            "    if (v > best) {",
            "        best = v;",
            "    }",
            "}",
            f"{out}[{out_idx}] = best;",
        ]
    else:  # argmax: first maximising index wins
        body += [
            f"float best = {src}[base];",
            "int32_t best_r = 0;",
            f"for (int32_t r = 1; r < {extent}; ++r) {{",
            f"    float v = {src}[base + {term}];",
            "    if (v > best) {",
            "        best = v;",
            "        best_r = r;",
            "    }",
            "}",
            f"{out}[{out_idx}] = best_r;",
        ]
    pragmas = (_PARALLEL_FOR,) if opts.parallel else ()
    return _loop_nest(dims, body, indent, pragmas)


def _emit_softmax(node, graph, opts, indent):
    in_spec = graph.node(node.inputs[0]).output_spec
    axis = int(node.attrs["axis"])
    extent = in_spec.shape[axis]
    kept_shape = tuple(e for d, e in enumerate(in_spec.shape) if d != axis)
    kept = [f"i{d}" for d in range(len(kept_shape))]
    dims = list(zip(kept, kept_shape))
    base, axis_stride = _reduce_base(in_spec.shape, axis, kept)
    term = _axis_term(axis_stride)
    src = buffer_name(node.inputs[0])
    out = buffer_name(node.id)
    body = [
        f"int32_t base = {base};",
        f"float m = {src}[base];",
        f"for (int32_t r = 1; r < {extent}; ++r) {{",
        f"    float v = {src}[base + {term}];",
        "    if (v > m) {",
        "        m = v;",
        "    }",
        "}",
        "double s = 0.0;",
        f"for (int32_t r = 0; r < {extent}; ++r) {{",
        f"    s += (double)expf({src}[base + {term}] - m);",
        "}",
        f"for (int32_t r = 0; r < {extent}; ++r) {{",
        f"    {out}[base + {term}] = (float)((double)expf({src}[base + {term}] - m) / s);",
        "}",
    ]
    pragmas = (_PARALLEL_FOR,) if opts.parallel and dims else ()
    if not dims:  # rank-1 softmax has no independent outer axis
        return [f"{indent}{{"] + [f"{indent}    {b}" for b in body] + [f"{indent}}}"]
    return _loop_nest(dims, body, indent, pragmas)


def _emit_reshape(node, graph, opts, indent):
    n = node.output_spec.numel
    out = buffer_name(node.id)
    src = buffer_name(node.inputs[0])
    pragmas = (_PARALLEL_FOR,) if opts.parallel else ()
    return _loop_nest([("i0", n)], [f"{out}[i0] = {src}[i0];"], indent, pragmas)


def _emit_transpose(node, graph, opts, indent):
    in_spec = graph.node(node.inputs[0]).output_spec
    perm = tuple(int(p) for p in node.attrs["perm"])
    out_shape = node.output_spec.shape
    dims = [(f"i{d}", e) for d, e in enumerate(out_shape)]
    in_strides = strides(in_spec.shape)
    terms = []
    for d in range(len(out_shape)):
        s = in_strides[perm[d]]
        terms.append(f"i{d}" if s == 1 else f"i{d} * {s}")
    in_idx = " + ".join(terms)
    out_idx = index_expr([v for v, _ in dims], out_shape)
    out = buffer_name(node.id)
    src = buffer_name(node.inputs[0])
    pragmas = (_PARALLEL_FOR,) if opts.parallel else ()
    return _loop_nest(dims, [f"{out}[{out_idx}] = {src}[{in_idx}];"], indent, pragmas)


def _emit_sort(node, graph, opts, indent):
    shape = node.output_spec.shape
    row = shape[-1]
    rows = node.output_spec.numel // row
    out = buffer_name(node.id)
    src = buffer_name(node.inputs[0])
    body = [
        f"int32_t base = r0 * {row};",
        f"for (int32_t j = 0; j < {row}; ++j) {{",
        f"    {out}[base + j] = {src}[base + j];",
        "}",
        f"sort_desc({out} + base, {row});",
    ]
    pragmas = (_PARALLEL_FOR,) if opts.parallel else ()
    return _loop_nest([("r0", rows)], body, indent, pragmas)


def _emit_topk(node, graph, opts, indent):
    in_spec = graph.node(node.inputs[0]).output_spec
    row = in_spec.shape[-1]
    rows = in_spec.numel // row
    k = int(node.attrs["k"])
    out = buffer_name(node.id)
    src = buffer_name(node.inputs[0])
    body = [
        f"float tmp[{row}];",
        f"int32_t base = r0 * {row};",
        f"for (int32_t j = 0; j < {row}; ++j) {{",
        f"    tmp[j] = {src}[base + j];",
        "}",
        f"sort_desc(tmp, {row});",
        f"for (int32_t j = 0; j < {k}; ++j) {{",
        f"    {out}[r0 * {k} + j] = tmp[j];",
        "}",
    ]
    pragmas = (_PARALLEL_FOR,) if opts.parallel else ()
    return _loop_nest([("r0", rows)], body, indent, pragmas)


def _emit_matmul(node, graph, opts, indent):
    a_spec = graph.node(node.inputs[0]).output_spec
    b_spec = graph.node(node.inputs[1]).output_spec
    m, kdim = a_spec.shape
    n = b_spec.shape[1]
    a = buffer_name(node.inputs[0])
    b = buffer_name(node.inputs[1])
    c = buffer_name(node.id)
    if not opts.parallel and opts.tile is None:
        body = [
            "double acc = 0.0;",
            f"for (int32_t k = 0; k < {kdim}; ++k) {{",
            f"    acc += (double){a}[i * {kdim} + k] * (double){b}[k * {n} + j];",
            "}",
            f"{c}[i * {n} + j] = (float)acc;",
        ]
        return _loop_nest([("i", m), ("j", n)], body, indent)
    # Row-parallel form with a per-row double accumulator; the contraction
    # axis keeps ascending order so results match the naive nest.
    unroll = [f"#pragma GCC unroll {opts.unroll}"] if opts.unroll else []
    body = [f"double acc[{n}];"]
    body += [
        f"for (int32_t j = 0; j < {n}; ++j) {{",
        "    acc[j] = 0.0;",
        "}",
    ]
    inner = [
        f"double av = (double){a}[i * {kdim} + k];",
        *unroll,
        f"for (int32_t j = 0; j < {n}; ++j) {{",
        f"    acc[j] += av * (double){b}[k * {n} + j];",
        "}",
    ]
    if opts.tile:
        body += [
            f"for (int32_t k0 = 0; k0 < {kdim}; k0 += {opts.tile}) {{",
            f"    int32_t kend = k0 + {opts.tile} < {kdim} ? k0 + {opts.tile} : {kdim};",
            "    for (int32_t k = k0; k < kend; ++k) {",
            *[f"        {line}" for line in inner],
            "    }",
            "}",
        ]
    else:
        body += [
            f"for (int32_t k = 0; k < {kdim}; ++k) {{",
            *[f"    {line}" for line in inner],
            "}",
        ]
    body += [
        f"for (int32_t j = 0; j < {n}; ++j) {{",
        f"    {c}[i * {n} + j] = (float)acc[j];",
        "}",
    ]
    pragmas = (_PARALLEL_FOR,) if opts.parallel else ()
    return _loop_nest([("i", m)], body, indent, pragmas)


def _emit_conv2d(node, graph, opts, indent):
    x_spec = graph.node(node.inputs[0]).output_spec
    w_spec = graph.node(node.inputs[1]).output_spec
    nb, cin, h, w = x_spec.shape
    fout = w_spec.shape[0]
    kk = CONV2D_KERNEL
    pad = kk // 2
    x = buffer_name(node.inputs[0])
    wt = buffer_name(node.inputs[1])
    out = buffer_name(node.id)
    x_str = strides(x_spec.shape)
    w_str = strides(w_spec.shape)
    o_str = strides(node.output_spec.shape)
    x_idx = f"n0 * {x_str[0]} + c0 * {x_str[1]} + iy * {x_str[2]} + ix"
    w_idx = f"f0 * {w_str[0]} + c0 * {w_str[1]} + kh * {w_str[2]} + kw"
    o_idx = f"n0 * {o_str[0]} + f0 * {o_str[1]} + oy * {o_str[2]} + ox"
    unroll = [f"#pragma GCC unroll {opts.unroll}"] if opts.unroll else []
    accum = [
        "double acc = 0.0;",
        f"for (int32_t c0 = 0; c0 < {cin}; ++c0) {{",
        f"    for (int32_t kh = 0; kh < {kk}; ++kh) {{",
        *[f"        {p}" for p in unroll],
        f"        for (int32_t kw = 0; kw < {kk}; ++kw) {{",
        f"            int32_t iy = oy + kh - {pad};",
        f"            int32_t ix = ox + kw - {pad};",
        f"            if (iy >= 0 && iy < {h} && ix >= 0 && ix < {w}) {{",
        f"                acc += (double){x}[{x_idx}] * (double){wt}[{w_idx}];",
        "            }",
        "        }",
        "    }",
        "}",
        f"{out}[{o_idx}] = (float)acc;",
    ]
    if opts.tile:
        body = [
            f"for (int32_t x0 = 0; x0 < {w}; x0 += {opts.tile}) {{",
            f"    int32_t xend = x0 + {opts.tile} < {w} ? x0 + {opts.tile} : {w};",
            "    for (int32_t ox = x0; ox < xend; ++ox) {",
            *[f"        {line}" for line in accum],
            "    }",
            "}",
        ]
    else:
        body = [
            f"for (int32_t ox = 0; ox < {w}; ++ox) {{",
            *[f"    {line}" for line in accum],
            "}",
        ]
    pragmas = (f"{_PARALLEL_FOR} collapse(2)",) if opts.parallel else ()
    return _loop_nest([("n0", nb), ("f0", fout), ("oy", h)], body, indent, pragmas)


_EMITTERS = {
    "elementwise": _emit_elementwise,
    "reduce": _emit_reduce,
    "softmax": _emit_softmax,
    "reshape": _emit_reshape,
    "transpose": _emit_transpose,
    "sort_rows": _emit_sort,
    "topk_rows": _emit_topk,
    "matmul": _emit_matmul,
    "conv2d": _emit_conv2d,
}


def _emit_node_cpu(node: GraphNode, graph: ComputationGraph, opts: EmitOptions):
    emitter = _EMITTERS.get(get_operator(node.op_name).loop_class)
    if emitter is None:
        raise UnsupportedOp(f"no CPU template for operator {node.op_name!r}")
    header = f"    // n{node.id}: {node.op_name} {node.output_spec.shape}"
    return [header, "    {"] + emitter(node, graph, opts, "        ") + ["    }"]


def emit_cpu(
    graph: ComputationGraph,
    options: EmitOptions = REFERENCE_OPTIONS,
    pair_id: int = 0,
    target: Target | None = None,
) -> KernelSource:
    """Emit the combined CPU entry function for a validated graph.

    Output is deterministic: equal (graph, options, pair_id) yield
    byte-identical text.
    """
    if target is None:
        tuned = options.parallel or options.tile or options.unroll
        target = Target.CPU_OPTIMIZED if tuned else Target.CPU_REFERENCE
    plan = buffer_plan(graph)
    entry = mangle_entry(pair_id, target)
    params = ", ".join(c_param(s) for s in plan)
    arg_names = ", ".join(buffer_name(s.node_id) for s in plan)

    lines = ["#include <math.h>", "#include <stdint.h>", ""]
    needs_sort = any(
        n.kind == KIND_OP
        and get_operator(n.op_name).loop_class in ("sort_rows", "topk_rows")
        for n in graph.nodes
    )
    if needs_sort:
        lines.append(_SORT_HELPERS)
    lines.append(f"void {entry}({params}) {{")
    for nid in topo_order(graph):
        node = graph.node(nid)
        if node.kind == KIND_OP:
            lines.extend(_emit_node_cpu(node, graph, options))
    lines.append("}")
    lines += [
        "",
        f"void {neutral_entry(pair_id)}({params}) {{",
        f"    {entry}({arg_names});",
        "}",
        "",
    ]
    return KernelSource(target, entry, "\n".join(lines), plan)
