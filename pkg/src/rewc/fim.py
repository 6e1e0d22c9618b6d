"""Fisher information estimation and the elastic weight consolidation penalty.

The diagonal estimator follows the outer-product (first-order) form: per
input, labels are drawn from the model's own softmax ("sampled" mode) or the
expectation is enumerated over all classes weighted by their probabilities
("expected" mode).  Per-parameter entries are averages of squared
log-likelihood gradients, so they are non-negative by construction.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, CapacityError, DataFormatError, DimensionError
from .layers import Conv2D, Dense
from .network import backward, forward, layout_signature, softmax
from .util import rng_for


@dataclass
class FimDiagonal:
    """Per-parameter curvature proxies aligned with one network layout."""

    values: dict
    layout_hash: str

    def median(self):
        return float(np.median(np.concatenate([v.ravel() for v in self.values.values()])))


@dataclass
class FimBlock:
    """Full curvature matrix over one layer's flattened weights (diagnostic)."""

    layer_index: int
    matrix: np.ndarray


@dataclass
class EwcAnchor:
    """Previous-task parameter snapshot with its curvature and strength."""

    theta_star: dict
    fim: FimDiagonal
    lam: float
    layout_hash: str
    head_key_prefix: str

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.fim.layout_hash != self.layout_hash:
            raise AlignmentError("anchor FIM was computed on a different layout")


FULL_FIM_PARAM_CAP = 2000


def select_samples(n, budget, rng, labels=None):
    """Indices of ``budget`` distinct samples; stratified per class when the
    budget divides evenly and every class is large enough."""
    if budget > n:
        raise DimensionError(f"sample budget {budget} exceeds dataset size {n}")
    if labels is not None:
        classes = np.unique(labels)
        per = budget // len(classes)
        if per > 0 and budget % len(classes) == 0:
            counts = np.array([(labels == c).sum() for c in classes])
            if np.all(counts >= per):
                picks = []
                for c in classes:
                    idx = np.flatnonzero(labels == c)
                    picks.append(rng.choice(idx, size=per, replace=False))
                return np.concatenate(picks)
    return rng.choice(n, size=budget, replace=False)


def _label_weight_stream(net, inputs, budget, mode, rng, labels):
    """Yield ``(forward_cache, [(label, weight), ...])`` per chosen input, with
    a fixed RNG consumption order shared by the diagonal and full-block
    estimators so both see identical samples and label draws."""
    inputs = np.asarray(inputs, dtype=np.float64)
    n = inputs.shape[0]
    if n == 0:
        raise DimensionError("empty dataset")
    idx = select_samples(n, budget, rng, labels)
    for i in idx:
        logits, cache = forward(net, inputs[i : i + 1])
        p = softmax(logits)[0]
        if mode == "sampled":
            y = int(rng.choice(len(p), p=p))
            yield cache, [(y, 1.0)]
        elif mode == "expected":
            yield cache, [(c, float(p[c])) for c in range(len(p))]
        else:
            raise ValueError(f"unknown FIM mode {mode!r}")


def estimate_diag_fim(net, inputs, sample_budget=200, mode="sampled", rng=None, labels=None):
    """Diagonal FIM estimate over ``sample_budget`` inputs (without replacement)."""
    rng = rng if rng is not None else rng_for(net.rng_seed, "fim")
    acc = {k: np.zeros_like(net.get_param(k)) for k, _, _ in net.trainable_keys()}
    count = 0
    for cache, pairs in _label_weight_stream(net, inputs, sample_budget, mode, rng, labels):
        for y, w in pairs:
            _, gset = backward(net, cache, np.array([y]))
            for key, g in gset.grads.items():
                acc[key] += w * (g * g)
        count += 1
    for key in acc:
        acc[key] /= count
    return FimDiagonal(values=acc, layout_hash=layout_signature(net))


def estimate_full_fim_layer(net, inputs, layer_index, sample_budget=200, mode="sampled",
                            rng=None, labels=None):
    """Full FIM over one layer's flattened weights; diagnostic scale only."""
    if not 0 <= layer_index < len(net.layers):
        raise DimensionError(f"layer index {layer_index} out of range")
    layer = net.layers[layer_index]
    if isinstance(layer, Dense):
        weight_key = f"{layer_index}.W"
    elif isinstance(layer, Conv2D):
        weight_key = f"{layer_index}.K"
    else:
        raise DimensionError(f"layer {layer_index} ({layer.kind}) has no weight matrix")
    size = net.get_param(weight_key).size
    if size > FULL_FIM_PARAM_CAP:
        raise CapacityError(
            f"layer has {size} weights; full-FIM diagnostics capped at {FULL_FIM_PARAM_CAP}"
        )
    rng = rng if rng is not None else rng_for(net.rng_seed, "fim")
    acc = np.zeros((size, size))
    count = 0
    for cache, pairs in _label_weight_stream(net, inputs, sample_budget, mode, rng, labels):
        for y, w in pairs:
            _, gset = backward(net, cache, np.array([y]))
            g = gset.grads[weight_key].ravel()
            acc += w * np.outer(g, g)
        count += 1
    return FimBlock(layer_index=layer_index, matrix=acc / count)


def make_anchor(net, fim, lam):
    return EwcAnchor(
        theta_star=net.parameter_snapshot(),
        fim=fim,
        lam=float(lam),
        layout_hash=layout_signature(net),
        head_key_prefix=f"{net.head_index}.",
    )


def _anchor_slices(net, anchor):
    """Pair anchor entries with current parameters, allowing the head dense
    layer to have grown extra rows since the anchor was taken."""
    current_keys = [k for k, _, _ in net.trainable_keys()]
    if set(anchor.theta_star) - set(current_keys):
        raise AlignmentError("anchor refers to parameters absent from this network")
    for key, theta0 in anchor.theta_star.items():
        theta = net.get_param(key)
        if theta.shape == theta0.shape:
            yield key, theta, theta0, None
        elif key.startswith(anchor.head_key_prefix) and theta.shape[1:] == theta0.shape[1:] \
                and theta.shape[0] >= theta0.shape[0]:
            yield key, theta[: theta0.shape[0]], theta0, theta.shape
        else:
            raise AlignmentError(
                f"parameter {key}: shape {theta.shape} incompatible with anchor {theta0.shape}"
            )


def ewc_penalty(net, anchor):
    """Quadratic pull toward the anchored parameters, weighted per entry.

    Returns ``(penalty, gradient_dict)``; both are exactly zero for lam == 0.
    Head rows added after the anchor was taken carry no penalty.
    """
    if anchor.lam == 0.0:
        return 0.0, {}
    penalty = 0.0
    grads = {}
    for key, theta, theta0, full_shape in _anchor_slices(net, anchor):
        f = anchor.fim.values[key]
        delta = theta - theta0
        penalty += 0.5 * anchor.lam * float(np.sum(f * delta * delta))
        g = anchor.lam * f * delta
        if full_shape is not None:
            padded = np.zeros(full_shape)
            padded[: g.shape[0]] = g
            g = padded
        grads[key] = g
    return penalty, grads


FIM_MAGIC = b"RFIM"
FIM_VERSION = 1


def save_fim(fim, path):
    with open(path, "wb") as f:
        f.write(FIM_MAGIC)
        f.write(struct.pack("<I", FIM_VERSION))
        h = fim.layout_hash.encode()
        f.write(struct.pack("<I", len(h)))
        f.write(h)
        f.write(struct.pack("<I", len(fim.values)))
        for key in sorted(fim.values):
            kb = key.encode()
            arr = fim.values[key]
            f.write(struct.pack("<I", len(kb)))
            f.write(kb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack("<" + "I" * arr.ndim, *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_fim(path):
    with open(path, "rb") as f:
        if f.read(4) != FIM_MAGIC:
            raise DataFormatError("bad FIM snapshot magic (expected RFIM)")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FIM_VERSION:
            raise DataFormatError(f"unsupported FIM snapshot version {version}")
        (hlen,) = struct.unpack("<I", f.read(4))
        layout_hash = f.read(hlen).decode()
        (n,) = struct.unpack("<I", f.read(4))
        values = {}
        for _ in range(n):
            (klen,) = struct.unpack("<I", f.read(4))
            key = f.read(klen).decode()
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack("<" + "I" * ndim, f.read(4 * ndim))
            count = int(np.prod(shape))
            buf = f.read(8 * count)
            if len(buf) != 8 * count:
                raise DataFormatError("FIM snapshot truncated")
            values[key] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
    return FimDiagonal(values=values, layout_hash=layout_hash)
