"""Operator catalog: the fixed v1 inventory with categories, attribute
schemas, and shape inference.

Every operator carries a total shape rule: given input specs and attrs it
either produces exactly one output spec or raises a typed rejection
(ShapeMismatch / AttrOutOfRange / RankUnsupported). Inventory data is
immutable after import and safe to share across threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

# Element-count cap keeping generated workloads desk-scale.
MAX_TENSOR_ELEMENTS = 1 << 26

MIN_RANK = 1
MAX_RANK = 4


class InferenceError(Exception):
    """Base class for typed shape-inference rejections."""


class ShapeMismatch(InferenceError):
    pass


class AttrOutOfRange(InferenceError):
    pass


class RankUnsupported(InferenceError):
    pass


class DType(enum.Enum):
    F32 = "f32"
    I32 = "i32"

    @property
    def c_type(self) -> str:
        return "float" if self is DType.F32 else "int32_t"


class OperatorCategory(enum.Enum):
    ELEMENTWISE = "Elementwise"
    REDUCTION = "Reduction"
    LAYOUT_TRANSFORM = "LayoutTransform"
    LOGIC_INTENSIVE = "LogicIntensive"
    COMPUTE_INTENSIVE = "ComputeIntensive"


@dataclass(frozen=True)
class TensorSpec:
    """Dtype plus shape of one value flowing along a graph edge."""

    dtype: DType
    shape: tuple[int, ...]

    def __post_init__(self):
        shape = tuple(int(d) for d in self.shape)
        object.__setattr__(self, "shape", shape)
        if not MIN_RANK <= len(shape) <= MAX_RANK:
            raise ValueError(f"rank {len(shape)} outside [{MIN_RANK}, {MAX_RANK}]")
        if any(d < 1 for d in shape):
            raise ValueError(f"non-positive extent in shape {shape}")
        if self.numel > MAX_TENSOR_ELEMENTS:
            raise ValueError(
                f"element count {self.numel} exceeds cap {MAX_TENSOR_ELEMENTS}"
            )

    @property
    def rank(self) -> int:
        return len(self.shape)

    @property
    def numel(self) -> int:
        return math.prod(self.shape)


def f32(*shape: int) -> TensorSpec:
    return TensorSpec(DType.F32, shape)


@dataclass(frozen=True)
class AttrSpec:
    """One attribute slot: name, value kind, and an input-independent
    legality check (input-dependent bounds live in the shape rule)."""

    name: str
    kind: str  # "int" | "int_tuple"
    legal: str
    check: Callable[[object], bool]


ShapeRule = Callable[[Sequence[TensorSpec], Mapping[str, object]], TensorSpec]


@dataclass(frozen=True)
class OperatorSpec:
    name: str
    category: OperatorCategory
    arity: int
    attr_schema: tuple[AttrSpec, ...]
    shape_rule: ShapeRule = field(repr=False)
    # Loop-nest class consumed by the emitters.
    loop_class: str = "elementwise"
    # True for reductions that remove the reduced axis (sum/mean/max/argmax).
    reduces_axis: bool = False


def _require(cond: bool, err: type[InferenceError], msg: str) -> None:
    if not cond:
        raise err(msg)


def _require_f32(inputs: Sequence[TensorSpec], op_name: str) -> None:
    for i, spec in enumerate(inputs):
        _require(
            spec.dtype is DType.F32,
            ShapeMismatch,
            f"{op_name}: input {i} must be f32, got {spec.dtype.value}",
        )


def _axis_of(attrs: Mapping[str, object], rank: int, op_name: str) -> int:
    axis = int(attrs["axis"])  # presence/type guaranteed by validate_attrs
    _require(
        0 <= axis < rank,
        AttrOutOfRange,
        f"{op_name}: axis {axis} out of range for rank {rank}",
    )
    return axis


def _binary_elementwise_rule(op_name: str) -> ShapeRule:
    def rule(inputs, attrs):
        a, b = inputs
        _require_f32(inputs, op_name)
        _require(
            a.shape == b.shape,
            ShapeMismatch,
            f"{op_name}: shapes {a.shape} and {b.shape} differ (no broadcasting)",
        )
        return a

    return rule


def _unary_elementwise_rule(op_name: str) -> ShapeRule:
    def rule(inputs, attrs):
        (a,) = inputs
        _require_f32(inputs, op_name)
        return a

    return rule


def _reduce_rule(op_name: str, out_dtype: DType) -> ShapeRule:
    def rule(inputs, attrs):
        (a,) = inputs
        _require_f32(inputs, op_name)
        _require(
            a.rank >= 2,
            RankUnsupported,
            f"{op_name}: rank-1 input would reduce to rank 0",
        )
        axis = _axis_of(attrs, a.rank, op_name)
        shape = a.shape[:axis] + a.shape[axis + 1 :]
        return TensorSpec(out_dtype, shape)

    return rule


def _softmax_rule(inputs, attrs):
    (a,) = inputs
    _require_f32(inputs, "softmax")
    _axis_of(attrs, a.rank, "softmax")
    return a


def _reshape_rule(inputs, attrs):
    (a,) = inputs
    target = tuple(int(d) for d in attrs["target"])
    _require(
        math.prod(target) == a.numel,
        ShapeMismatch,
        f"reshape: target {target} has {math.prod(target)} elements, input has {a.numel}",
    )
    return TensorSpec(a.dtype, target)


def _transpose_rule(inputs, attrs):
    (a,) = inputs
    perm = tuple(int(d) for d in attrs["perm"])
    _require(
        len(perm) == a.rank,
        AttrOutOfRange,
        f"transpose: perm {perm} does not match rank {a.rank}",
    )
    return TensorSpec(a.dtype, tuple(a.shape[p] for p in perm))


def _sort_rule(inputs, attrs):
    (a,) = inputs
    _require_f32(inputs, "sort_last_axis")
    return a


def _topk_rule(inputs, attrs):
    (a,) = inputs
    _require_f32(inputs, "topk_values")
    k = int(attrs["k"])
    _require(
        k <= a.shape[-1],
        AttrOutOfRange,
        f"topk_values: k={k} exceeds last-axis extent {a.shape[-1]}",
    )
    return TensorSpec(DType.F32, a.shape[:-1] + (k,))


def _matmul_rule(inputs, attrs):
    a, b = inputs
    _require_f32(inputs, "matmul")
    _require(a.rank == 2 and b.rank == 2, RankUnsupported, "matmul: inputs must be rank 2")
    _require(
        a.shape[1] == b.shape[0],
        ShapeMismatch,
        f"matmul: inner dimensions {a.shape[1]} and {b.shape[0]} differ",
    )
    return TensorSpec(DType.F32, (a.shape[0], b.shape[1]))


# conv2d is fixed to NCHW, 3x3 kernel, stride 1, padding 1 (shape-preserving).
CONV2D_KERNEL = 3


def _conv2d_rule(inputs, attrs):
    x, w = inputs
    _require_f32(inputs, "conv2d")
    _require(x.rank == 4 and w.rank == 4, RankUnsupported, "conv2d: inputs must be rank 4")
    _require(
        w.shape[2] == CONV2D_KERNEL and w.shape[3] == CONV2D_KERNEL,
        ShapeMismatch,
        f"conv2d: weight spatial dims must be {CONV2D_KERNEL}x{CONV2D_KERNEL}, got {w.shape[2:]}",
    )
    _require(
        w.shape[1] == x.shape[1],
        ShapeMismatch,
        f"conv2d: weight in-channels {w.shape[1]} != input channels {x.shape[1]}",
    )
    n, _, h, wd = x.shape
    return TensorSpec(DType.F32, (n, w.shape[0], h, wd))


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_int_tuple(v) -> bool:
    return isinstance(v, (tuple, list)) and len(v) > 0 and all(_is_int(d) for d in v)


_AXIS_ATTR = AttrSpec("axis", "int", "0 <= axis < input rank", lambda v: int(v) >= 0)
_K_ATTR = AttrSpec("k", "int", "1 <= k <= last-axis extent", lambda v: int(v) >= 1)
_PERM_ATTR = AttrSpec(
    "perm",
    "int_tuple",
    "permutation of [0, rank)",
    lambda v: sorted(int(d) for d in v) == list(range(len(v))),
)
_TARGET_ATTR = AttrSpec(
    "target",
    "int_tuple",
    "1-4 positive extents whose product preserves element count",
    lambda v: MIN_RANK <= len(v) <= MAX_RANK and all(int(d) >= 1 for d in v),
)


def _op(name, category, arity, attr_schema, rule, loop_class, reduces_axis=False):
    return OperatorSpec(
        name=name,
        category=category,
        arity=arity,
        attr_schema=tuple(attr_schema),
        shape_rule=rule,
        loop_class=loop_class,
        reduces_axis=reduces_axis,
    )


_EW = OperatorCategory.ELEMENTWISE
_RD = OperatorCategory.REDUCTION
_LT = OperatorCategory.LAYOUT_TRANSFORM
_LI = OperatorCategory.LOGIC_INTENSIVE
_CI = OperatorCategory.COMPUTE_INTENSIVE

_INVENTORY: tuple[OperatorSpec, ...] = (
    _op("add", _EW, 2, (), _binary_elementwise_rule("add"), "elementwise"),
    _op("sub", _EW, 2, (), _binary_elementwise_rule("sub"), "elementwise"),
    _op("mul", _EW, 2, (), _binary_elementwise_rule("mul"), "elementwise"),
    _op("relu", _EW, 1, (), _unary_elementwise_rule("relu"), "elementwise"),
    _op("sin", _EW, 1, (), _unary_elementwise_rule("sin"), "elementwise"),
    _op("cos", _EW, 1, (), _unary_elementwise_rule("cos"), "elementwise"),
    _op("sqrt_abs", _EW, 1, (), _unary_elementwise_rule("sqrt_abs"), "elementwise"),
    _op("sum", _RD, 1, (_AXIS_ATTR,), _reduce_rule("sum", DType.F32), "reduce", True),
    _op("mean", _RD, 1, (_AXIS_ATTR,), _reduce_rule("mean", DType.F32), "reduce", True),
    _op("max", _RD, 1, (_AXIS_ATTR,), _reduce_rule("max", DType.F32), "reduce", True),
    _op("softmax", _RD, 1, (_AXIS_ATTR,), _softmax_rule, "softmax"),
    _op("argmax", _RD, 1, (_AXIS_ATTR,), _reduce_rule("argmax", DType.I32), "reduce", True),
    _op("reshape", _LT, 1, (_TARGET_ATTR,), _reshape_rule, "reshape"),
    _op("transpose", _LT, 1, (_PERM_ATTR,), _transpose_rule, "transpose"),
    _op("sort_last_axis", _LI, 1, (), _sort_rule, "sort_rows"),
    _op("topk_values", _LI, 1, (_K_ATTR,), _topk_rule, "topk_rows"),
    _op("matmul", _CI, 2, (), _matmul_rule, "matmul"),
    _op("conv2d", _CI, 2, (), _conv2d_rule, "conv2d"),
)

_BY_NAME: dict[str, OperatorSpec] = {op.name: op for op in _INVENTORY}
assert len(_BY_NAME) == len(_INVENTORY), "duplicate operator name"


def list_operators() -> tuple[OperatorSpec, ...]:
    """The fixed v1 inventory in stable order."""
    return _INVENTORY


def get_operator(name: str) -> OperatorSpec:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise KeyError(f"unknown operator {name!r}") from None


def validate_attrs(op: OperatorSpec, attrs: Mapping[str, object]) -> str | None:
    """Check attrs against the schema; returns None when ok, else a reason.

    Only input-independent legality is checked here; bounds that depend on
    the input specs (axis < rank, k <= extent, ...) are the shape rule's job.
    """
    expected = {a.name: a for a in op.attr_schema}
    extra = set(attrs) - set(expected)
    if extra:
        return f"{op.name}: unexpected attrs {sorted(extra)}"
    for spec in op.attr_schema:
        if spec.name not in attrs:
            return f"{op.name}: missing attr {spec.name!r}"
        value = attrs[spec.name]
        if spec.kind == "int" and not _is_int(value):
            return f"{op.name}: attr {spec.name!r} must be an int"
        if spec.kind == "int_tuple" and not _is_int_tuple(value):
            return f"{op.name}: attr {spec.name!r} must be a tuple of ints"
        if not spec.check(value):
            return f"{op.name}: attr {spec.name!r}={value!r} violates: {spec.legal}"
    return None


def infer_output_spec(
    op: OperatorSpec,
    inputs: Sequence[TensorSpec],
    attrs: Mapping[str, object] | None = None,
) -> TensorSpec:
    """Derive the unique output spec or raise a typed rejection."""
    attrs = dict(attrs or {})
    if len(inputs) != op.arity:
        raise ShapeMismatch(f"{op.name}: expected {op.arity} inputs, got {len(inputs)}")
    reason = validate_attrs(op, attrs)
    if reason is not None:
        raise AttrOutOfRange(reason)
    try:
        return op.shape_rule(tuple(inputs), attrs)
    except InferenceError:
        raise
    except ValueError as exc:  # TensorSpec rank/extent/element-cap violations
        raise ShapeMismatch(f"{op.name}: {exc}") from exc


def catalog_json() -> list[dict]:
    """Operator catalog in the shape served by `stats --ops`."""
    return [
        {
            "name": op.name,
            "category": op.category.value,
            "arity": op.arity,
            "attrs": [
                {"name": a.name, "kind": a.kind, "legal": a.legal}
                for a in op.attr_schema
            ],
        }
        for op in _INVENTORY
    ]
