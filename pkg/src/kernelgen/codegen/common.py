"""Shared codegen machinery: targets, buffer plans, entry-point mangling,
and the clean-source scan (no framework tokens, whitelisted includes only).
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import NamedTuple

from ..graph import KIND_INPUT, ComputationGraph, NodeId
from ..inventory import DType, TensorSpec


class UnsupportedOp(Exception):
    """Inventory/emitter drift: an operator with no emission template."""


class Target(enum.Enum):
    CPU_REFERENCE = "cpu_ref"
    CPU_OPTIMIZED = "cpu_opt"
    CUDA = "cuda"


ROLE_INPUT = "input"
ROLE_OUTPUT = "output"
ROLE_INTERMEDIATE = "intermediate"


class BufferSlot(NamedTuple):
    node_id: NodeId
    role: str
    spec: TensorSpec


@dataclass(frozen=True)
class EmitOptions:
    """Fixed optimization template knobs for the CPU emitter."""

    parallel: bool = False
    tile: int | None = None
    unroll: int | None = None

    def __post_init__(self):
        for name, value in (("tile", self.tile), ("unroll", self.unroll)):
            if value is None:
                continue
            if not (2 <= value <= 64 and value & (value - 1) == 0):
                raise ValueError(f"{name} must be a power of two in [2, 64], got {value}")


REFERENCE_OPTIONS = EmitOptions()
OPTIMIZED_OPTIONS = EmitOptions(parallel=True, tile=8)


@dataclass(frozen=True)
class KernelSource:
    target: Target
    entry_name: str
    source_text: str
    buffer_plan: tuple[BufferSlot, ...]


@dataclass(frozen=True)
class HarnessSource:
    pair_id: int
    entry_name: str
    source_text: str
    buffer_plan: tuple[BufferSlot, ...]


def mangle_entry(pair_id: int, target: Target) -> str:
    """Stable, collision-free C identifier for a (pair, target) entry."""
    if pair_id < 0:
        raise ValueError("pair_id must be non-negative")
    return f"pair{pair_id}_{target.value}"


def neutral_entry(pair_id: int) -> str:
    """The per-pair symbol the harness links against; every CPU kernel
    source defines it as a one-line wrapper around its mangled entry, so
    one harness serves reference, optimized, and external candidates."""
    if pair_id < 0:
        raise ValueError("pair_id must be non-negative")
    return f"pair{pair_id}_entry"


def buffer_name(nid: NodeId) -> str:
    return f"t{nid}"


def buffer_plan(graph: ComputationGraph) -> tuple[BufferSlot, ...]:
    """Parameter order of the CPU entry: outputs, inputs, intermediates,
    each ascending by node id. Every node owns one buffer (no reuse)."""
    sinks = set(graph.outputs)
    outputs, inputs, mids = [], [], []
    for node in graph.nodes:
        if node.kind == KIND_INPUT:
            inputs.append(BufferSlot(node.id, ROLE_INPUT, node.output_spec))
        elif node.id in sinks:
            outputs.append(BufferSlot(node.id, ROLE_OUTPUT, node.output_spec))
        else:
            mids.append(BufferSlot(node.id, ROLE_INTERMEDIATE, node.output_spec))
    return tuple(outputs + inputs + mids)


def c_param(slot: BufferSlot) -> str:
    const = "const " if slot.role == ROLE_INPUT else ""
    return f"{const}{slot.spec.dtype.c_type}* {buffer_name(slot.node_id)}"


def strides(shape: tuple[int, ...]) -> tuple[int, ...]:
    out = [1] * len(shape)
    for d in range(len(shape) - 2, -1, -1):
        out[d] = out[d + 1] * shape[d + 1]
    return tuple(out)


def index_expr(var_names: list[str], shape: tuple[int, ...]) -> str:
    """Row-major flat index as C source, e.g. "i0 * 9 + i1"."""
    terms = []
    for var, stride in zip(var_names, strides(shape)):
        terms.append(var if stride == 1 else f"{var} * {stride}")
    return " + ".join(terms) if terms else "0"


# ---------------------------------------------------------------------------
# Clean-code scanning

FORBIDDEN_TOKENS = ("TVM", "DLTensor", "TVMValue", "v_handle", "resource_handle")

KERNEL_INCLUDES = frozenset({"math.h", "stdint.h", "stddef.h", "omp.h"})
# The harness prints results and times runs; it additionally needs the
# C standard I/O, string, and clock interfaces.
HARNESS_INCLUDES = KERNEL_INCLUDES | {"stdio.h", "stdlib.h", "string.h", "time.h"}

_INCLUDE_RE = re.compile(r'^\s*#\s*include\s*[<"]([^>"]+)[>"]', re.MULTILINE)


def scan_clean(source_text: str, whitelist: frozenset[str] | set[str]) -> list[str]:
    """Violations found in one emitted source: forbidden framework tokens
    and includes outside the whitelist. Empty list means clean."""
    violations = []
    for token in FORBIDDEN_TOKENS:
        if token in source_text:
            violations.append(f"forbidden token {token!r}")
    for header in _INCLUDE_RE.findall(source_text):
        if header not in whitelist:
            violations.append(f"non-whitelisted include <{header}>")
    return violations


def c_literal_f32(value: float) -> str:
    return f"{value!r}f"


def dtype_printf(dtype: DType) -> str:
    return "%.9g" if dtype is DType.F32 else "%d"
