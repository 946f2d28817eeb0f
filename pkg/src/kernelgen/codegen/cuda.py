"""CUDA emitter: one SPMD `__global__` kernel per node mapping a flat
element index to `blockIdx.x * B + threadIdx.x`, plus a host launcher that
stages device buffers and launches kernels in topological order.

Emitted for dataset pairing only; it is never executed here, so unary
transcendentals use the fast-math device intrinsics.
"""

from __future__ import annotations

from ..graph import KIND_INPUT, KIND_OP, ComputationGraph, GraphNode, topo_order
from ..inventory import CONV2D_KERNEL, DType, get_operator
from .common import (
    KernelSource,
    ROLE_INPUT,
    ROLE_OUTPUT,
    Target,
    UnsupportedOp,
    buffer_name,
    buffer_plan,
    mangle_entry,
    strides,
)

MAX_BLOCK = 256

_UNARY_EXPR = {
    "relu": lambda x: f"({x} > 0.0f ? {x} : 0.0f)",
    "sin": lambda x: f"__sinf({x})",
    "cos": lambda x: f"__cosf({x})",
    "sqrt_abs": lambda x: f"sqrtf(fabsf({x}))",
}

_BINARY_SYMBOL = {"add": "+", "sub": "-", "mul": "*"}


def _c_type(dtype: DType) -> str:
    return "float" if dtype is DType.F32 else "int"


def _decompose(shape, names, source="idx"):
    """Flat index -> per-dimension coordinates via div/mod chains."""
    if len(shape) == 1:
        return [f"int {names[0]} = {source};"]
    st = strides(shape)
    lines = [f"int rem = {source};"]
    for d in range(len(shape) - 1):
        lines.append(f"int {names[d]} = rem / {st[d]};")
        lines.append(f"rem = rem - {names[d]} * {st[d]};")
    lines.append(f"int {names[-1]} = rem;")
    return lines


def _kept_base(in_shape, axis, kept_names):
    st = strides(in_shape)
    terms = []
    k = 0
    for d in range(len(in_shape)):
        if d == axis:
            continue
        terms.append(kept_names[k] if st[d] == 1 else f"{kept_names[k]} * {st[d]}")
        k += 1
    return " + ".join(terms) if terms else "0", st[axis]


def _axis_at(stride, var="r"):
    return var if stride == 1 else f"{var} * {stride}"


def _body_elementwise(node, graph):
    if node.op_name in _BINARY_SYMBOL:
        expr = f"a[idx] {_BINARY_SYMBOL[node.op_name]} b[idx]"
    else:
        expr = _UNARY_EXPR[node.op_name]("a[idx]")
    return [f"out[idx] = {expr};"]


def _body_reshape(node, graph):
    return ["out[idx] = a[idx];"]


def _body_transpose(node, graph):
    in_spec = graph.node(node.inputs[0]).output_spec
    perm = tuple(int(p) for p in node.attrs["perm"])
    out_shape = node.output_spec.shape
    names = [f"i{d}" for d in range(len(out_shape))]
    in_st = strides(in_spec.shape)
    terms = []
    for d in range(len(out_shape)):
        s = in_st[perm[d]]
        terms.append(names[d] if s == 1 else f"{names[d]} * {s}")
    return _decompose(out_shape, names) + [f"out[idx] = a[{' + '.join(terms)}];"]


def _body_reduce(node, graph):
    in_spec = graph.node(node.inputs[0]).output_spec
    axis = int(node.attrs["axis"])
    extent = in_spec.shape[axis]
    out_shape = node.output_spec.shape
    names = [f"i{d}" for d in range(len(out_shape))]
    base, stride = _kept_base(in_spec.shape, axis, names)
    lines = _decompose(out_shape, names) + [f"int base = {base};"]
    term = _axis_at(stride)
    if node.op_name in ("sum", "mean"):
        lines += [
            "float acc = 0.0f;",
            f"for (int r = 0; r < {extent}; ++r) {{",
            f"    acc += a[base + {term}];",
            "}",
        ]
        lines.append(
            "out[idx] = acc;" if node.op_name == "sum" else f"out[idx] = acc / {extent}.0f;"
        )
    elif node.op_name == "max":
        lines += [
            "float best = a[base];",
            f"for (int r = 1; r < {extent}; ++r) {{",
            f"    float v = a[base + {term}];",
            "    if (v > best) {",
            "        best = v;",
            "    }",
            "}",
            "out[idx] = best;",
        ]
    else:  # argmax
        lines += [
            "float best = a[base];",
            "int best_r = 0;",
            f"for (int r = 1; r < {extent}; ++r) {{",
            f"    float v = a[base + {term}];",
            "    if (v > best) {",
            "        best = v;",
            "        best_r = r;",
            "    }",
            "}",
            "out[idx] = best_r;",
        ]
    return lines


def _body_softmax(node, graph):
    in_spec = graph.node(node.inputs[0]).output_spec
    axis = int(node.attrs["axis"])
    extent = in_spec.shape[axis]
    st = strides(in_spec.shape)
    names = [f"i{d}" for d in range(in_spec.rank)]
    term = _axis_at(st[axis])
    return _decompose(in_spec.shape, names) + [
        f"int base = idx - {names[axis]}{'' if st[axis] == 1 else f' * {st[axis]}'};",
        "float m = a[base];",
        f"for (int r = 1; r < {extent}; ++r) {{",
        f"    float v = a[base + {term}];",
        "    if (v > m) {",
        "        m = v;",
        "    }",
        "}",
        "float s = 0.0f;",
        f"for (int r = 0; r < {extent}; ++r) {{",
        f"    s += __expf(a[base + {term}] - m);",
        "}",
        "out[idx] = __expf(a[idx] - m) / s;",
    ]


def _body_sort(node, graph):
    row = node.output_spec.shape[-1]
    return [
        f"int base = idx * {row};",
        f"for (int j = 0; j < {row}; ++j) {{",
        "    out[base + j] = a[base + j];",
        "}",
        f"for (int i = 1; i < {row}; ++i) {{",
        "    float key = out[base + i];",
        "    int j = i - 1;",
        "    while (j >= 0 && out[base + j] < key) {",
        "        out[base + j + 1] = out[base + j];",
        "        --j;",
        "    }",
        "    out[base + j + 1] = key;",
        "}",
    ]


def _body_topk(node, graph):
    in_spec = graph.node(node.inputs[0]).output_spec
    row = in_spec.shape[-1]
    k = int(node.attrs["k"])
    return [
        f"float tmp[{row}];",
        f"int base = idx * {row};",
        f"for (int j = 0; j < {row}; ++j) {{",
        "    tmp[j] = a[base + j];",
        "}",
        f"for (int i = 1; i < {row}; ++i) {{",
        "    float key = tmp[i];",
        "    int j = i - 1;",
        "    while (j >= 0 && tmp[j] < key) {",
        "        tmp[j + 1] = tmp[j];",
        "        --j;",
        "    }",
        "    tmp[j + 1] = key;",
        "}",
        f"for (int j = 0; j < {k}; ++j) {{",
        f"    out[idx * {k} + j] = tmp[j];",
        "}",
    ]


def _body_matmul(node, graph):
    kdim = graph.node(node.inputs[0]).output_spec.shape[1]
    n = node.output_spec.shape[1]
    return [
        f"int i = idx / {n};",
        f"int j = idx - i * {n};",
        "float acc = 0.0f;",
        f"for (int k = 0; k < {kdim}; ++k) {{",
        f"    acc += a[i * {kdim} + k] * b[k * {n} + j];",
        "}",
        "out[idx] = acc;",
    ]


def _body_conv2d(node, graph):
    x_spec = graph.node(node.inputs[0]).output_spec
    w_spec = graph.node(node.inputs[1]).output_spec
    _, cin, h, w = x_spec.shape
    kk = CONV2D_KERNEL
    pad = kk // 2
    x_st = strides(x_spec.shape)
    w_st = strides(w_spec.shape)
    names = ["n0", "f0", "oy", "ox"]
    return _decompose(node.output_spec.shape, names) + [
        "float acc = 0.0f;",
        f"for (int c0 = 0; c0 < {cin}; ++c0) {{",
        f"    for (int kh = 0; kh < {kk}; ++kh) {{",
        f"        for (int kw = 0; kw < {kk}; ++kw) {{",
        f"            int iy = oy + kh - {pad};",
        f"            int ix = ox + kw - {pad};",
        f"            if (iy >= 0 && iy < {h} && ix >= 0 && ix < {w}) {{",
        f"                acc += a[n0 * {x_st[0]} + c0 * {x_st[1]} + iy * {x_st[2]} + ix]"
        f" * b[f0 * {w_st[0]} + c0 * {w_st[1]} + kh * {w_st[2]} + kw];",
        "            }",
        "        }",
        "    }",
        "}",
        "out[idx] = acc;",
    ]


_BODIES = {
    "elementwise": _body_elementwise,
    "reshape": _body_reshape,
    "transpose": _body_transpose,
    "reduce": _body_reduce,
    "softmax": _body_softmax,
    "sort_rows": _body_sort,
    "topk_rows": _body_topk,
    "matmul": _body_matmul,
    "conv2d": _body_conv2d,
}

# Kernels whose parallel domain is rows of the last axis, not elements.
_ROW_DOMAIN = ("sort_rows", "topk_rows")


def _domain(node: GraphNode, loop_class: str) -> int:
    if loop_class in _ROW_DOMAIN:
        return node.output_spec.numel // node.output_spec.shape[-1]
    return node.output_spec.numel


def kernel_name(pair_id: int, nid: int) -> str:
    return f"{mangle_entry(pair_id, Target.CUDA)}_k{nid}"


def _emit_kernel(node: GraphNode, graph: ComputationGraph, pair_id: int) -> list[str]:
    op = get_operator(node.op_name)
    body_fn = _BODIES.get(op.loop_class)
    if body_fn is None:
        raise UnsupportedOp(f"no CUDA template for operator {node.op_name!r}")
    domain = _domain(node, op.loop_class)
    block = min(MAX_BLOCK, domain)
    out_ty = _c_type(node.output_spec.dtype)
    params = [f"{out_ty}* __restrict__ out"]
    for slot, src in enumerate(node.inputs):
        ty = _c_type(graph.node(src).output_spec.dtype)
        params.append(f"const {ty}* __restrict__ {'a' if slot == 0 else 'b'}")
    lines = [
        f'extern "C" __global__ void __launch_bounds__({block}) '
        f"{kernel_name(pair_id, node.id)}({', '.join(params)}) {{",
        f"    int idx = (int)blockIdx.x * {block} + (int)threadIdx.x;",
    ]
    body = body_fn(node, graph)
    if domain % block != 0:
        lines.append(f"    if (idx < {domain}) {{")
        lines.extend(f"        {b}" for b in body)
        lines.append("    }")
    else:
        lines.extend(f"    {b}" for b in body)
    lines.append("}")
    lines.append("")
    return lines


def emit_cuda(graph: ComputationGraph, pair_id: int = 0) -> KernelSource:
    """Emit per-node kernels plus the host-side launcher for a validated
    graph. Deterministic text; no includes, no framework identifiers."""
    entry = mangle_entry(pair_id, Target.CUDA)
    full_plan = buffer_plan(graph)
    io_plan = tuple(s for s in full_plan if s.role in (ROLE_OUTPUT, ROLE_INPUT))

    lines: list[str] = []
    for nid in topo_order(graph):
        node = graph.node(nid)
        if node.kind == KIND_OP:
            lines.extend(_emit_kernel(node, graph, pair_id))

    params = []
    for slot in io_plan:
        const = "const " if slot.role == ROLE_INPUT else ""
        params.append(f"{const}{_c_type(slot.spec.dtype)}* {buffer_name(slot.node_id)}")
    lines.append(f'extern "C" void {entry}({", ".join(params)}) {{')
    for node in graph.nodes:
        ty = _c_type(node.output_spec.dtype)
        dev = f"d_{buffer_name(node.id)}"
        bytes_expr = f"{node.output_spec.numel} * sizeof({ty})"
        lines.append(f"    {ty}* {dev};")
        lines.append(f"    cudaMalloc((void**)&{dev}, {bytes_expr});")
        if node.kind == KIND_INPUT:
            lines.append(
                f"    cudaMemcpy({dev}, {buffer_name(node.id)}, {bytes_expr}, "
                "cudaMemcpyHostToDevice);"
            )
    for nid in topo_order(graph):
        node = graph.node(nid)
        if node.kind != KIND_OP:
            continue
        op = get_operator(node.op_name)
        domain = _domain(node, op.loop_class)
        block = min(MAX_BLOCK, domain)
        grid = (domain + block - 1) // block
        args = [f"d_{buffer_name(node.id)}"] + [
            f"d_{buffer_name(s)}" for s in node.inputs
        ]
        lines.append(
            f"    {kernel_name(pair_id, node.id)}<<<{grid}, {block}>>>({', '.join(args)});"
        )
    for slot in io_plan:
        if slot.role != ROLE_OUTPUT:
            continue
        ty = _c_type(slot.spec.dtype)
        name = buffer_name(slot.node_id)
        lines.append(
            f"    cudaMemcpy({name}, d_{name}, {slot.spec.numel} * sizeof({ty}), "
            "cudaMemcpyDeviceToHost);"
        )
    for node in graph.nodes:
        lines.append(f"    cudaFree(d_{buffer_name(node.id)});")
    lines.append("}")
    lines.append("")
    return KernelSource(Target.CUDA, entry, "\n".join(lines), io_plan)
