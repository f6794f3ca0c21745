"""Bias-corrected Adam, from scratch."""

import numpy as np


def adam_step(param, grad, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place Adam update. state holds m, v, t for this parameter."""
    state["t"] += 1
    t = state["t"]
    m = state["m"]
    v = state["v"]
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


class Adam:
    """Adam over named parameter tensors with a per-name learning rate."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        """params: list of (name, Tensor); lr: float or callable(name) -> float."""
        self.params = list(params)
        self.lr = lr if callable(lr) else (lambda name, _lr=float(lr): _lr)
        self.lr_scale = 1.0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {
            name: {"m": np.zeros_like(t.data), "v": np.zeros_like(t.data), "t": 0}
            for name, t in self.params
        }

    def step(self):
        for name, t in self.params:
            if t.grad is None:
                continue
            adam_step(t.data, t.grad, self.state[name],
                      self.lr(name) * self.lr_scale,
                      self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for _, t in self.params:
            t.grad = None

    def state_arrays(self, prefix="opt."):
        out = {}
        for name, st in self.state.items():
            out[prefix + name + ".m"] = st["m"]
            out[prefix + name + ".v"] = st["v"]
            out[prefix + name + ".t"] = np.array([st["t"]], dtype=np.int64)
        return out

    def load_state(self, arrays, prefix="opt."):
        for name, st in self.state.items():
            st["m"] = np.array(arrays[prefix + name + ".m"], copy=True)
            st["v"] = np.array(arrays[prefix + name + ".v"], copy=True)
            st["t"] = int(arrays[prefix + name + ".t"][0])
