"""Source emitters: reference/optimized CPU C, CUDA, and the test harness."""

from .common import (
    BufferSlot,
    EmitOptions,
    FORBIDDEN_TOKENS,
    HARNESS_INCLUDES,
    HarnessSource,
    KERNEL_INCLUDES,
    KernelSource,
    OPTIMIZED_OPTIONS,
    REFERENCE_OPTIONS,
    ROLE_INPUT,
    ROLE_INTERMEDIATE,
    ROLE_OUTPUT,
    Target,
    UnsupportedOp,
    buffer_name,
    buffer_plan,
    mangle_entry,
    neutral_entry,
    scan_clean,
)
from .cpu import emit_cpu
from .cuda import emit_cuda
from .harness import emit_harness

__all__ = [
    "BufferSlot",
    "EmitOptions",
    "FORBIDDEN_TOKENS",
    "HARNESS_INCLUDES",
    "HarnessSource",
    "KERNEL_INCLUDES",
    "KernelSource",
    "OPTIMIZED_OPTIONS",
    "REFERENCE_OPTIONS",
    "ROLE_INPUT",
    "ROLE_INTERMEDIATE",
    "ROLE_OUTPUT",
    "Target",
    "UnsupportedOp",
    "buffer_name",
    "buffer_plan",
    "mangle_entry",
    "neutral_entry",
    "scan_clean",
    "emit_cpu",
    "emit_cuda",
    "emit_harness",
]
