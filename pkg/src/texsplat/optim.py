"""Adam over named parameter arrays, with moment remapping on topology change."""
from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, lrs: dict, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-15):
        self.lrs = dict(lrs)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def step(self, params: dict, grads: dict, lr_scale: dict | None = None) -> None:
        """In-place update of every array in ``params`` that has a learning rate."""
        for name, p in params.items():
            lr = self.lrs.get(name, 0.0)
            if not lr or name not in grads:
                continue
            lr = lr * (lr_scale or {}).get(name, 1.0)
            g = grads[name]
            if name not in self.m or self.m[name].shape != p.shape:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
                self.t[name] = 0
            self.t[name] += 1
            t = self.t[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            mhat = m / (1 - self.beta1 ** t)
            vhat = v / (1 - self.beta2 ** t)
            p -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def remap(self, name: str, source: np.ndarray) -> None:
        """Reorder moments along axis 0; rows with ``source < 0`` start at zero."""
        if name not in self.m:
            return
        source = np.asarray(source, dtype=np.int64)
        for store in (self.m, self.v):
            old = store[name]
            new = np.zeros((len(source),) + old.shape[1:])
            ok = source >= 0
            new[ok] = old[source[ok]]
            store[name] = new

    def state_shapes(self) -> dict:
        return {k: (self.m[k].shape, self.v[k].shape) for k in self.m}
