from scaleformer.autodiff import ops, profiler
from scaleformer.autodiff.profiler import MacCounter, mac_scope, profile
from scaleformer.autodiff.tensor import (
    ComputationTape,
    Tensor,
    add,
    as_tensor,
    concat,
    default_dtype,
    div,
    exp,
    finite_checks,
    getitem,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    precision,
    reshape,
    set_default_dtype,
    set_finite_checks,
    split,
    sub,
    transpose,
    tsum,
)

__all__ = [
    "ComputationTape",
    "MacCounter",
    "Tensor",
    "add",
    "as_tensor",
    "concat",
    "default_dtype",
    "div",
    "exp",
    "finite_checks",
    "getitem",
    "log",
    "mac_scope",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "ops",
    "precision",
    "profile",
    "profiler",
    "reshape",
    "set_default_dtype",
    "set_finite_checks",
    "split",
    "sub",
    "transpose",
    "tsum",
]
