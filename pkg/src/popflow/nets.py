"""Minimal float64 multilayer perceptron with hand-rolled backprop and Adam.

Training here is desk scale and must be bitwise reproducible across runs with
a fixed seed, which rules out GPU frameworks and thread-count-dependent BLAS
reductions inside autograd engines. A plain numpy implementation keeps every
reduction order fixed and makes 64-bit gradient checks tight.
"""

from __future__ import annotations

import numpy as np


class MLP:
    """Fully connected net: `layers` linear maps, leaky rectifier between them."""

    def __init__(self, in_dim: int, out_dim: int, hidden: int = 256,
                 layers: int = 5, slope: float = 0.01, rng: np.random.Generator | None = None):
        if layers < 1:
            raise ValueError("need at least one linear layer")
        rng = rng or np.random.default_rng(0)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = hidden
        self.layers = layers
        self.slope = slope
        sizes = [in_dim] + [hidden] * (layers - 1) + [out_dim]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            scale = np.sqrt(2.0 / fan_in)
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x: np.ndarray, want_cache: bool = False):
        """Batch forward; cache holds pre-activations for backward."""
        h = x
        pre: list[np.ndarray] = []
        acts: list[np.ndarray] = [x]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if k < self.layers - 1:
                h = np.where(z > 0, z, self.slope * z)
                if want_cache:
                    pre.append(z)
                    acts.append(h)
            else:
                h = z
        if want_cache:
            return h, (pre, acts)
        return h

    def backward(self, dout: np.ndarray, cache) -> list[np.ndarray]:
        """Gradients in parameters() order given d(loss)/d(output)."""
        pre, acts = cache
        grads_w = [None] * self.layers
        grads_b = [None] * self.layers
        d = dout
        for k in range(self.layers - 1, -1, -1):
            a_in = acts[k]
            grads_w[k] = a_in.T @ d
            grads_b[k] = d.sum(axis=0)
            if k > 0:
                d = d @ self.weights[k].T
                z = pre[k - 1]
                d = d * np.where(z > 0, 1.0, self.slope)
        out = []
        for gw, gb in zip(grads_w, grads_b):
            out.append(gw)
            out.append(gb)
        return out


class Adam:
    """Adam with bias correction; state per parameter array, updates in place."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p) for p in params]
        self._v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
