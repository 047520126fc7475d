"""Minimal deterministic feedforward engine with activation instrumentation.

Supports dense and small conv2d layers (valid padding, square kernels),
relu, and flatten. A forward pass can record, per datapoint, one
aggregated pre-activation value for each depth-mapped layer; the
resulting matrix (N datapoints x L layers) is the raw material for the
activation-slope metric. Recording never perturbs the computation.

Depth map: the layers counted as depth 1..L are the parameterized hidden
layers, in network order. The final parameterized layer (the one
producing the logits) is excluded unless the network was built with
include_output=True.

Everything runs single-threaded with numpy's fixed reduction order, so
(seed, config) determines every result bitwise.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError
from .rng import seeded_rng
from .tensor import check_finite

PARAM_KINDS = ("dense", "conv2d")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    bias: bool = True

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_dict(d):
        return LayerSpec(**d)


def dense(n_in, n_out, bias=True):
    return LayerSpec(kind="dense", in_features=int(n_in), out_features=int(n_out), bias=bias)


def conv2d(c_in, c_out, kernel, stride=1, bias=True):
    return LayerSpec(kind="conv2d", in_channels=int(c_in), out_channels=int(c_out),
                     kernel=int(kernel), stride=int(stride), bias=bias)


def relu():
    return LayerSpec(kind="relu")


def flatten():
    return LayerSpec(kind="flatten")


def _propagate_shape(spec, shape):
    """Output shape of one layer given its per-datapoint input shape."""
    if spec.kind == "dense":
        if len(shape) != 1 or shape[0] != spec.in_features:
            raise ShapeError(f"dense layer expects ({spec.in_features},), got {shape}")
        return (spec.out_features,)
    if spec.kind == "conv2d":
        if len(shape) != 3 or shape[0] != spec.in_channels:
            raise ShapeError(f"conv2d layer expects ({spec.in_channels}, h, w), got {shape}")
        c, h, w = shape
        k, s = spec.kernel, spec.stride
        if h < k or w < k:
            raise ShapeError(f"conv2d kernel {k} larger than input {h}x{w}")
        return (spec.out_channels, (h - k) // s + 1, (w - k) // s + 1)
    if spec.kind == "relu":
        return shape
    if spec.kind == "flatten":
        return (int(np.prod(shape)),)
    raise ShapeError(f"unknown layer kind {spec.kind!r}")


@dataclass
class Network:
    """Ordered layer specs, parameter tensors, and the depth map."""

    specs: list
    params: dict          # layer index -> {"W": array, "b": array}
    input_shape: tuple
    layer_shapes: list    # per-layer output shapes (per datapoint)
    depth_map: list       # layer indices counted as depths 1..L
    aggregation: str = "mean"   # "mean" or "sum" over a layer's pre-activations
    include_output: bool = False
    init_seed: int = 0

    @property
    def n_layers(self):
        """L: number of depth-mapped layers."""
        return len(self.depth_map)

    @property
    def n_classes(self):
        return self.layer_shapes[-1][0]

    def param_items(self):
        """(layer_index, name, array) triples in a fixed order."""
        for idx in sorted(self.params):
            for name in ("W", "b"):
                if name in self.params[idx]:
                    yield idx, name, self.params[idx][name]

    def weight_matrices(self):
        """Per parameterized layer, the weights as a 2-D matrix.

        Conv kernels are reshaped to (out_channels, in_channels*k*k).
        """
        mats = []
        for idx in sorted(self.params):
            w = self.params[idx]["W"]
            mats.append(w if w.ndim == 2 else w.reshape(w.shape[0], -1))
        return mats


def build_network(specs, init_seed, input_shape, aggregation="mean", include_output=False):
    """Construct a network with deterministically initialized parameters.

    Weights use the fan-scaled uniform scheme +-sqrt(6/(fan_in+fan_out));
    biases start at zero. The same (specs, init_seed) always yields
    bit-identical parameters.
    """
    if not specs:
        raise ShapeError("empty layer spec list")
    if aggregation not in ("mean", "sum"):
        raise ValueError(f"aggregation must be 'mean' or 'sum', got {aggregation!r}")
    input_shape = tuple(int(d) for d in input_shape)

    shape = input_shape
    layer_shapes = []
    for spec in specs:
        shape = _propagate_shape(spec, shape)
        layer_shapes.append(shape)
    if len(layer_shapes[-1]) != 1:
        raise ShapeError(f"network must end in a class-score vector, got shape {layer_shapes[-1]}")

    rng = seeded_rng(init_seed, "init")
    params = {}
    for idx, spec in enumerate(specs):
        if spec.kind == "dense":
            fan_in, fan_out = spec.in_features, spec.out_features
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            p = {"W": rng.uniform(-limit, limit, size=(fan_in, fan_out))}
            if spec.bias:
                p["b"] = np.zeros(fan_out)
            params[idx] = p
        elif spec.kind == "conv2d":
            k = spec.kernel
            fan_in = spec.in_channels * k * k
            fan_out = spec.out_channels * k * k
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            p = {"W": rng.uniform(-limit, limit, size=(spec.out_channels, spec.in_channels, k, k))}
            if spec.bias:
                p["b"] = np.zeros(spec.out_channels)
            params[idx] = p

    param_indices = sorted(params)
    depth_map = param_indices if include_output else param_indices[:-1]

    return Network(specs=list(specs), params=params, input_shape=input_shape,
                   layer_shapes=layer_shapes, depth_map=depth_map,
                   aggregation=aggregation, include_output=include_output,
                   init_seed=int(init_seed))


@dataclass
class ActivationTrace:
    """Per-datapoint aggregated pre-activations, one column per depth."""

    z: np.ndarray          # (N, L)
    aggregation: str

    def __post_init__(self):
        check_finite(self.z, "activation trace")


def _im2col(x, k, s):
    """Extract conv patches: (N, C, H, W) -> (N*oh*ow, C*k*k)."""
    n, c, h, w = x.shape
    oh = (h - k) // s + 1
    ow = (w - k) // s + 1
    sn, sc, sh, sw = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, shape=(n, oh, ow, c, k, k), strides=(sn, sh * s, sw * s, sc, sh, sw))
    return view.reshape(n * oh * ow, c * k * k), oh, ow


def _col2im(dcols, x_shape, k, s, oh, ow):
    """Scatter-add patch gradients back to the input image grid."""
    n, c, h, w = x_shape
    dx = np.zeros(x_shape)
    d = dcols.reshape(n, oh, ow, c, k, k).transpose(0, 3, 4, 5, 1, 2)  # n,c,k,k,oh,ow
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + s * oh:s, j:j + s * ow:s] += d[:, :, i, j]
    return dx


def _aggregate(pre, mode):
    """Collapse a layer's pre-activation block to one value per datapoint."""
    flat = pre.reshape(pre.shape[0], -1)
    return flat.mean(axis=1) if mode == "mean" else flat.sum(axis=1)


def _run_forward(net, batch, record, keep_cache):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim < 2:
        raise ShapeError("batch must have a leading datapoint dimension")
    if tuple(batch.shape[1:]) != net.input_shape:
        raise ShapeError(f"batch shape {tuple(batch.shape[1:])} does not match "
                         f"network input {net.input_shape}")
    n = batch.shape[0]
    depth_set = set(net.depth_map)
    z_cols = []
    caches = []
    a = batch
    for idx, spec in enumerate(net.specs):
        if spec.kind == "dense":
            w = net.params[idx]["W"]
            pre = a @ w
            if spec.bias:
                pre = pre + net.params[idx]["b"]
            if keep_cache:
                caches.append(("dense", idx, a))
            if record and idx in depth_set:
                z_cols.append(_aggregate(pre, net.aggregation))
            a = pre
        elif spec.kind == "conv2d":
            w = net.params[idx]["W"]
            k, s = spec.kernel, spec.stride
            cols, oh, ow = _im2col(a, k, s)
            pre = cols @ w.reshape(w.shape[0], -1).T
            if spec.bias:
                pre = pre + net.params[idx]["b"]
            pre = pre.reshape(n, oh, ow, w.shape[0]).transpose(0, 3, 1, 2)
            if keep_cache:
                caches.append(("conv2d", idx, (cols, a.shape, oh, ow)))
            if record and idx in depth_set:
                z_cols.append(_aggregate(pre, net.aggregation))
            a = pre
        elif spec.kind == "relu":
            if keep_cache:
                caches.append(("relu", idx, a))
            a = np.maximum(a, 0.0)
        elif spec.kind == "flatten":
            if keep_cache:
                caches.append(("flatten", idx, a.shape))
            a = a.reshape(n, -1)
    check_finite(a, "logits")
    trace = None
    if record:
        trace = ActivationTrace(z=np.column_stack(z_cols) if z_cols else np.zeros((n, 0)),
                                aggregation=net.aggregation)
    return a, trace, caches


def forward(net, batch, record=False):
    """Forward pass. Returns (logits, trace) where trace is None unless
    record is set."""
    logits, trace, _ = _run_forward(net, batch, record, keep_cache=False)
    return logits, trace


def layer_preactivations(net, batch):
    """Full pre-activation blocks of every depth-mapped layer.

    Returns a list of (N, ...) arrays in depth order, one per mapped
    layer, before any aggregation. This is the full-neuron recording mode
    used for fidelity checks on tiny networks; the per-layer aggregate of
    each block reproduces the standard trace exactly.
    """
    batch = np.asarray(batch, dtype=np.float64)
    depth_set = set(net.depth_map)
    blocks = {}
    a = batch
    n = batch.shape[0]
    for idx, spec in enumerate(net.specs):
        if spec.kind == "dense":
            pre = a @ net.params[idx]["W"]
            if spec.bias:
                pre = pre + net.params[idx]["b"]
            a = pre
        elif spec.kind == "conv2d":
            w = net.params[idx]["W"]
            cols, oh, ow = _im2col(a, spec.kernel, spec.stride)
            pre = cols @ w.reshape(w.shape[0], -1).T
            if spec.bias:
                pre = pre + net.params[idx]["b"]
            a = pre.reshape(n, oh, ow, w.shape[0]).transpose(0, 3, 1, 2)
        elif spec.kind == "relu":
            a = np.maximum(a, 0.0)
        elif spec.kind == "flatten":
            a = a.reshape(n, -1)
        if idx in depth_set:
            blocks[idx] = a.copy()
    return [check_finite(blocks[idx], f"pre-activations of layer {idx}")
            for idx in net.depth_map]


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean cross-entropy of logits (N, C) against integer labels (N,)."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(log_z - shifted[np.arange(n), labels]))


def _check_labels(labels, n_classes):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"label out of range [0, {n_classes})")
    return labels.astype(np.int64)


def loss_and_gradients(net, batch, labels):
    """Mean cross-entropy loss, its gradients, and the batch logits.

    Returns (loss, grads, logits) with grads keyed like net.params.
    """
    labels = _check_labels(labels, net.n_classes)
    logits, _, caches = _run_forward(net, batch, record=False, keep_cache=True)
    n = logits.shape[0]
    loss = cross_entropy(logits, labels)

    probs = softmax(logits)
    probs[np.arange(n), labels] -= 1.0
    grad = probs / n

    grads = {}
    for kind, idx, cache in reversed(caches):
        if kind == "dense":
            a_prev = cache
            spec = net.specs[idx]
            g = {"W": a_prev.T @ grad}
            if spec.bias:
                g["b"] = grad.sum(axis=0)
            grads[idx] = g
            grad = grad @ net.params[idx]["W"].T
        elif kind == "conv2d":
            cols, in_shape, oh, ow = cache
            spec = net.specs[idx]
            w = net.params[idx]["W"]
            oc = w.shape[0]
            dpre = grad.transpose(0, 2, 3, 1).reshape(-1, oc)  # (n*oh*ow, oc)
            g = {"W": (dpre.T @ cols).reshape(w.shape)}
            if spec.bias:
                g["b"] = dpre.sum(axis=0)
            grads[idx] = g
            dcols = dpre @ w.reshape(oc, -1)
            grad = _col2im(dcols, in_shape, spec.kernel, spec.stride, oh, ow)
        elif kind == "relu":
            grad = grad * (cache > 0)
        elif kind == "flatten":
            grad = grad.reshape(cache)
    for idx in grads:
        for name, g in grads[idx].items():
            check_finite(g, f"gradient of layer {idx} {name}")
    return loss, grads, logits


def backward(net, batch, labels):
    """Gradients of the mean cross-entropy w.r.t. every parameter."""
    _, grads, _ = loss_and_gradients(net, batch, labels)
    return grads
