"""In-process graph interpreter: the numerical ground truth all emitted
code is differentially tested against.

Reductions, matrix products, and convolutions accumulate in double
precision and round once to f32. Sort/top-k use stable descending order
with lower original indices first among ties; argmax returns the first
maximising index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import KIND_INPUT, KIND_OP, ComputationGraph, NodeId, topo_order
from .inventory import CONV2D_KERNEL, DType, TensorSpec, get_operator


class InterpreterError(Exception):
    pass


class MissingInput(InterpreterError):
    pass


class SpecMismatch(InterpreterError):
    pass


@dataclass(frozen=True)
class TensorValue:
    spec: TensorSpec
    data: np.ndarray  # shaped, row-major, dtype float32 or int32

    def __post_init__(self):
        if tuple(self.data.shape) != self.spec.shape:
            raise SpecMismatch(
                f"value shape {self.data.shape} != spec shape {self.spec.shape}"
            )

    def flat(self) -> np.ndarray:
        return np.ascontiguousarray(self.data).reshape(-1)


_NP_DTYPE = {DType.F32: np.float32, DType.I32: np.int32}


# ---------------------------------------------------------------------------
# Deterministic input generation (bit-identical to the emitted C harness)

_SM_GAMMA = 0x9E3779B97F4A7C15
_SM_MUL1 = 0xBF58476D1CE4E5B9
_SM_MUL2 = 0x94D049BB133111EB
_U64 = (1 << 64) - 1


def splitmix64(seed: int, count: int) -> list[int]:
    """The splitmix64 stream used by every emitted harness."""
    state = seed & _U64
    out = []
    for _ in range(count):
        state = (state + _SM_GAMMA) & _U64
        z = state
        z = ((z ^ (z >> 30)) * _SM_MUL1) & _U64
        z = ((z ^ (z >> 27)) * _SM_MUL2) & _U64
        out.append(z ^ (z >> 31))
    return out


def uniform_floats(seed: int, count: int) -> np.ndarray:
    """float32 values uniform in [-1, 1), one per splitmix64 draw.

    Mirrors the harness arithmetic exactly: top 24 bits scaled by 2^-24,
    then mapped to [-1, 1); every step is exact in float32.
    """
    words = splitmix64(seed, count)
    vals = [(w >> 40) * (1.0 / 16777216.0) * 2.0 - 1.0 for w in words]
    return np.array(vals, dtype=np.float32)


def input_values(graph: ComputationGraph, seed: int) -> dict[NodeId, TensorValue]:
    """Fill every Input node from one shared stream, ascending node id —
    the same order and bits the harness of pair `seed` uses."""
    inputs = [n for n in graph.nodes if n.kind == KIND_INPUT]
    total = sum(n.output_spec.numel for n in inputs)
    stream = uniform_floats(seed, total)
    values: dict[NodeId, TensorValue] = {}
    offset = 0
    for node in inputs:
        n = node.output_spec.numel
        chunk = stream[offset : offset + n].reshape(node.output_spec.shape)
        values[node.id] = TensorValue(node.output_spec, chunk)
        offset += n
    return values


# ---------------------------------------------------------------------------
# Evaluation


def _eval_node(op_name: str, attrs, args: list[np.ndarray]) -> np.ndarray:
    op = get_operator(op_name)
    lc = op.loop_class
    if lc == "elementwise":
        if op_name == "add":
            return args[0] + args[1]
        if op_name == "sub":
            return args[0] - args[1]
        if op_name == "mul":
            return args[0] * args[1]
        if op_name == "relu":
            return np.maximum(args[0], np.float32(0.0))
        x64 = args[0].astype(np.float64)
        if op_name == "sin":
            return np.sin(x64).astype(np.float32)
        if op_name == "cos":
            return np.cos(x64).astype(np.float32)
        if op_name == "sqrt_abs":
            return np.sqrt(np.abs(x64)).astype(np.float32)
    if lc == "reduce":
        axis = int(attrs["axis"])
        x64 = args[0].astype(np.float64)
        if op_name == "sum":
            return x64.sum(axis=axis).astype(np.float32)
        if op_name == "mean":
            return x64.mean(axis=axis).astype(np.float32)
        if op_name == "max":
            return args[0].max(axis=axis)
        if op_name == "argmax":
            return np.argmax(args[0], axis=axis).astype(np.int32)
    if lc == "softmax":
        axis = int(attrs["axis"])
        x64 = args[0].astype(np.float64)
        shifted = np.exp(x64 - x64.max(axis=axis, keepdims=True))
        return (shifted / shifted.sum(axis=axis, keepdims=True)).astype(np.float32)
    if lc == "reshape":
        return args[0].reshape(tuple(attrs["target"]))
    if lc == "transpose":
        return np.ascontiguousarray(np.transpose(args[0], tuple(attrs["perm"])))
    if lc == "sort_rows":
        return np.sort(args[0], axis=-1, kind="stable")[..., ::-1].copy()
    if lc == "topk_rows":
        k = int(attrs["k"])
        return np.sort(args[0], axis=-1, kind="stable")[..., ::-1][..., :k].copy()
    if lc == "matmul":
        a64 = args[0].astype(np.float64)
        b64 = args[1].astype(np.float64)
        return (a64 @ b64).astype(np.float32)
    if lc == "conv2d":
        return _conv2d(args[0], args[1])
    raise InterpreterError(f"no evaluator for operator {op_name!r}")


def _conv2d(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    n, c, h, wd = x.shape
    f = w.shape[0]
    pad = CONV2D_KERNEL // 2
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    w64 = w.astype(np.float64)
    out = np.zeros((n, f, h, wd), dtype=np.float64)
    for kh in range(CONV2D_KERNEL):
        for kw in range(CONV2D_KERNEL):
            window = xp[:, :, kh : kh + h, kw : kw + wd]
            out += np.einsum("nchw,fc->nfhw", window, w64[:, :, kh, kw])
    return out.astype(np.float32)


def interpret(
    graph: ComputationGraph, inputs: dict[NodeId, TensorValue]
) -> dict[NodeId, TensorValue]:
    """Evaluate every node in topo order; returns values for all nodes
    (output nodes included)."""
    input_ids = {n.id for n in graph.nodes if n.kind == KIND_INPUT}
    missing = input_ids - set(inputs)
    if missing:
        raise MissingInput(f"no values for input node(s) {sorted(missing)}")
    extra = set(inputs) - input_ids
    if extra:
        raise SpecMismatch(f"values supplied for non-input node(s) {sorted(extra)}")
    for nid, value in inputs.items():
        want = graph.node(nid).output_spec
        if value.spec != want:
            raise SpecMismatch(f"input {nid}: spec {value.spec} != expected {want}")

    values: dict[NodeId, TensorValue] = dict(inputs)
    for nid in topo_order(graph):
        node = graph.node(nid)
        if node.kind != KIND_OP:
            continue
        args = [values[s].data for s in node.inputs]
        result = _eval_node(node.op_name, node.attrs, args)
        expected = _NP_DTYPE[node.output_spec.dtype]
        values[nid] = TensorValue(
            node.output_spec, np.ascontiguousarray(result, dtype=expected)
        )
    return values
