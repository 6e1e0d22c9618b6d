"""Adam optimizer over a network's trainable parameters."""

import numpy as np

from .errors import AlignmentError

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class AdamState:
    """First/second moment buffers keyed like the network's parameters."""

    def __init__(self, net):
        self.m = {k: np.zeros_like(net.get_param(k)) for k, _, _ in net.trainable_keys()}
        self.v = {k: np.zeros_like(v) for k, v in self.m.items()}
        self.t = 0


def adam_step(net, grads, state, lr, beta1=BETA1, beta2=BETA2, eps=EPS):
    """One bias-corrected Adam update; fixed layers are untouched by design
    (they expose no trainable parameters)."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for key, _, _ in net.trainable_keys():
        g = grads.get(key)
        if g is None:
            continue
        p = net.get_param(key)
        if g.shape != p.shape or state.m[key].shape != p.shape:
            raise AlignmentError(f"gradient/state shape mismatch for {key}")
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return net, state
