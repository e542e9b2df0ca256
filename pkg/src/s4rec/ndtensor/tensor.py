"""Tensor type and the reverse-mode gradient tape."""
from __future__ import annotations

import itertools
import time
from contextlib import contextmanager
from collections import defaultdict

import numpy as np

_node_ids = itertools.count(1)
_task_stack = ["main"]


class ShapeError(ValueError):
    pass


@contextmanager
def task_scope(name):
    """Tag every node created inside the block with ``name``.

    Backward time is attributed per tag so a training step can be split into
    main / cluster / distill / adversarial buckets.
    """
    _task_stack.append(name)
    try:
        yield
    finally:
        _task_stack.pop()


def current_task():
    return _task_stack[-1]


class Tensor:
    """Dense array that records how it was produced.

    ``backward_fn`` maps the upstream gradient to a tuple with one entry per
    parent (``None`` for parents that receive nothing). Node ids grow
    monotonically, so parents always precede children on the tape.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn",
                 "id", "name", "task")

    def __init__(self, data, requires_grad=False, name=None, parents=(),
                 backward_fn=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = tuple(parents) if requires_grad else ()
        self.backward_fn = backward_fn if requires_grad else None
        self.id = next(_node_ids)
        self.name = name
        self.task = _task_stack[-1]

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def item(self):
        return float(self.data.reshape(()))

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    # operator sugar; the kernels live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, as_tensor(other, self.dtype))

    def __radd__(self, other):
        from . import ops
        return ops.add(as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, as_tensor(other, self.dtype))

    def __mul__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scale(self, other)
        return ops.mul(self, as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, key):
        from . import ops
        return ops.getitem(self, key)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def parameter(data, name=None):
    return Tensor(np.array(data), requires_grad=True, name=name)


def make_node(data, parents, backward_fn):
    requires_grad = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=requires_grad, parents=parents,
                  backward_fn=backward_fn)


class GradMap(dict):
    """Leaf tensor -> gradient array, plus per-task backward seconds."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.task_seconds = {}

    def __missing__(self, key):
        return np.zeros_like(key.data)


def _topological(loss):
    seen = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node.id in seen or not node.requires_grad:
            continue
        seen[node.id] = node
        stack.extend(node.parents)
    return [seen[k] for k in sorted(seen, reverse=True)]


def backward(loss, params=None, timed=False):
    """Reverse sweep from a scalar ``loss``.

    Returns a GradMap keyed by leaf tensor. Leaves listed in ``params`` that the
    loss does not reach are present with zero gradient. Each leaf's ``.grad``
    is also set.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads = GradMap()
    if params is not None:
        for p in params:
            grads[p] = np.zeros_like(p.data)
    if not loss.requires_grad:
        for p in grads:
            p.grad = grads[p]
        return grads

    pending = {loss.id: np.ones_like(loss.data)}
    seconds = defaultdict(float)
    clock = time.perf_counter
    for node in _topological(loss):
        g = pending.pop(node.id, None)
        if g is None:
            continue
        if node.backward_fn is None:
            if node in grads:
                grads[node] = grads[node] + g
            else:
                grads[node] = g
            continue
        t0 = clock() if timed else 0.0
        parent_grads = node.backward_fn(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.id in pending:
                pending[parent.id] = pending[parent.id] + pg
            else:
                pending[parent.id] = pg
        if timed:
            seconds[node.task] += clock() - t0
    for leaf, g in grads.items():
        leaf.grad = g
    grads.task_seconds = dict(seconds)
    return grads
