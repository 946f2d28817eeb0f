"""kernelgen: stochastic tensor-graph construction, paired CUDA / CPU C
emission, and a compile-and-run evaluation runtime for scoring CPU
translations on compile pass, execute pass, and speedup ratio."""

__version__ = "0.1.0"

from .builder import BuilderConfig, build_graph, build_single_op_graph
from .dataset import CodePair, assemble_pair, read_corpus, write_corpus
from .evalrt import CompareSpec, EvalReport, ToolchainConfig, evaluate_candidate
from .graph import ComputationGraph, topo_order, validate
from .interpreter import interpret
from .inventory import (
    DType,
    OperatorCategory,
    TensorSpec,
    infer_output_spec,
    list_operators,
)

__all__ = [
    "BuilderConfig",
    "CodePair",
    "CompareSpec",
    "ComputationGraph",
    "DType",
    "EvalReport",
    "OperatorCategory",
    "TensorSpec",
    "ToolchainConfig",
    "assemble_pair",
    "build_graph",
    "build_single_op_graph",
    "evaluate_candidate",
    "infer_output_spec",
    "interpret",
    "list_operators",
    "read_corpus",
    "topo_order",
    "validate",
    "write_corpus",
]
