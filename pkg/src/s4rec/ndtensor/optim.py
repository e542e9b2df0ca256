"""Adam with bias correction."""
from __future__ import annotations

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


def adam_step(param, grad, m, v, t, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, name="param"):
    """One in-place Adam update of ``param`` (t counts from 1)."""
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")
    b1, b2 = betas
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    mhat = m / (1.0 - b1 ** t)
    vhat = v / (1.0 - b2 ** t)
    param -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(param.dtype)
    return param


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads):
        # validate everything first so a bad gradient leaves state untouched
        for name, p in self.params.items():
            g = grads[p]
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")
        self.t += 1
        for name, p in self.params.items():
            adam_step(p.data, grads[p], self.m[name], self.v[name], self.t,
                      self.lr, self.betas, self.eps, name)

    def state_arrays(self):
        out = {}
        for name in self.params:
            out[f"adam.m/{name}"] = self.m[name]
            out[f"adam.v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays, t):
        for name in self.params:
            self.m[name][...] = arrays[f"adam.m/{name}"]
            self.v[name][...] = arrays[f"adam.v/{name}"]
        self.t = int(t)
