"""Dense tensors with a reverse-mode gradient tape."""
from .tensor import (Tensor, GradMap, ShapeError, as_tensor, backward, current_task,
                     parameter, task_scope)
from .ops import (add, causal_masked_attention, concat, cross_entropy, dropout, embedding,
                  exp, gelu, getitem, grad_reverse, l2_normalize, layernorm, log, log_softmax,
                  matmul, mul, reduce_mean, reduce_sum, relu, reshape, scale, soft_cross_entropy,
                  softmax, sub, tied_softmax_xent, transpose)
from .optim import Adam, NonFiniteGradient, adam_step
from .blocks import read_blocks, write_blocks

__all__ = [
    "Tensor", "GradMap", "ShapeError", "as_tensor", "backward", "current_task", "parameter",
    "task_scope", "add", "causal_masked_attention", "concat", "cross_entropy", "dropout",
    "embedding", "exp", "gelu", "getitem", "grad_reverse", "l2_normalize", "layernorm", "log",
    "log_softmax", "matmul", "mul", "reduce_mean", "reduce_sum", "relu", "reshape", "scale",
    "soft_cross_entropy", "softmax", "sub", "tied_softmax_xent", "transpose", "Adam",
    "NonFiniteGradient", "adam_step", "read_blocks", "write_blocks",
]
