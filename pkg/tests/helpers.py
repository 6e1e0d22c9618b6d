"""Shared test utilities: oracles and small random network factories."""

import struct

import numpy as np

from rewc.layers import Bias, Conv2D, Dense, FixedConv1x1, FixedDense, Flatten, MeanPool2D, ReLU
from rewc.network import Network, backward, forward, log_softmax


def mean_xent(net, x, y):
    logits, _ = forward(net, x)
    return -float(log_softmax(logits)[np.arange(len(y)), y].mean())


def fd_param_gradient(net, x, y, key, h=1e-5):
    """Central-difference gradient of the mean cross-entropy wrt one parameter."""
    p = net.get_param(key)
    g = np.zeros_like(p)
    flat = p.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = mean_xent(net, x, y)
        flat[i] = orig - h
        dn = mean_xent(net, x, y)
        flat[i] = orig
        gflat[i] = (up - dn) / (2.0 * h)
    return g


def max_rel_error(analytic, numeric, floor=1e-6):
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def random_mlp(rng, with_fixed=False):
    d_in = int(rng.integers(3, 9))
    widths = [int(rng.integers(3, 10)) for _ in range(int(rng.integers(1, 3)))]
    head = int(rng.integers(2, 5))
    layers = []
    d = d_in
    for w in widths:
        layers += [Dense(rng.normal(0, 0.5, (w, d)), rng.normal(0, 0.1, w)), ReLU()]
        d = w
    if with_fixed:
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        layers += [FixedDense(q), Bias(rng.normal(0, 0.1, d))]
    layers.append(Dense(rng.normal(0, 0.5, (head, d)), rng.normal(0, 0.1, head)))
    return Network(layers, head, 0, (d_in,))


def random_convnet(rng, with_fixed=False, size=8):
    c_in = int(rng.integers(1, 4))
    c1 = int(rng.integers(2, 6))
    c2 = int(rng.integers(2, 6))
    head = int(rng.integers(2, 5))
    padding = int(rng.integers(0, 2))
    layers = [
        Conv2D(rng.normal(0, 0.4, (3, 3, c_in, c1)), rng.normal(0, 0.1, c1), 1, padding),
        ReLU(),
        MeanPool2D(2) if (size + 2 * padding - 2) % 2 == 0 else ReLU(),
    ]
    h = size + 2 * padding - 2
    if isinstance(layers[-1], MeanPool2D):
        h //= 2
    layers += [Conv2D(rng.normal(0, 0.4, (3, 3, c1, c2)), rng.normal(0, 0.1, c2)), ReLU()]
    h -= 2
    if with_fixed:
        q, _ = np.linalg.qr(rng.normal(size=(c2, c2)))
        layers += [FixedConv1x1(q), Bias(rng.normal(0, 0.1, c2))]
    layers += [Flatten(), Dense(rng.normal(0, 0.3, (head, h * h * c2)), rng.normal(0, 0.1, head))]
    return Network(layers, head, 0, (size, size, c_in))


def conv_direct(x, K, b=None, stride=1, padding=0):
    """Direct-summation convolution oracle (quadruple loop)."""
    n, h, w, c = x.shape
    kh, kw, d1, d2 = K.shape
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
        h, w = h + 2 * padding, w + 2 * padding
    h2 = (h - kh) // stride + 1
    w2 = (w - kw) // stride + 1
    y = np.zeros((n, h2, w2, d2))
    for ni in range(n):
        for i in range(h2):
            for j in range(w2):
                for o in range(d2):
                    acc = 0.0
                    for a in range(kh):
                        for bb in range(kw):
                            for q in range(d1):
                                acc += K[a, bb, q, o] * x[ni, i * stride + a, j * stride + bb, q]
                    y[ni, i, j, o] = acc + (b[o] if b is not None else 0.0)
    return y


def make_idx_pair(images, labels):
    """Serialize uint8 images/labels into IDX byte blobs."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    img = struct.pack(">IIII", 0x00000803, n, rows, cols) + images.tobytes()
    lab = struct.pack(">II", 0x00000801, len(labels)) + labels.tobytes()
    return img, lab
