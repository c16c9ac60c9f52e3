"""Sharded dense-tensor dataflow: annotation algebra, plan compiler, and an
actor-based runtime over a simulated device mesh, verified against a
single-device reference interpreter."""

from .backend import backend_name
from .graph import LogicalGraph, LogicalOp, Placement, Transform, eval_logical, flat
from .ops import Add, Identity, MatMul, ReLU, ReduceSum, Source
from .sbp import B, NdSbp, OpSbpSignature, P, S, materialize, reconstruct
from .compiler import compile_plan, dump_plan
from .runtime import run_plan
from .tensor import DenseTensor

__all__ = [
    "Add",
    "B",
    "DenseTensor",
    "Identity",
    "LogicalGraph",
    "LogicalOp",
    "MatMul",
    "NdSbp",
    "OpSbpSignature",
    "P",
    "Placement",
    "ReLU",
    "ReduceSum",
    "S",
    "Source",
    "Transform",
    "backend_name",
    "compile_plan",
    "dump_plan",
    "eval_logical",
    "flat",
    "materialize",
    "reconstruct",
    "run_plan",
]
__version__ = "0.1.0"
