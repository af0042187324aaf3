"""Minimal CNN stack: layers, inference, input gradients and SGD training.

Images enter the network as ``(C, H, W)`` float32 arrays (or ``(B, C, H, W)``
batches) with pixels in ``[0, 1]``. Convolution and pooling run internally in
NHWC layout so that im2col is a plain reshape; dense layers flatten in
``(C, H, W)`` row-major order, which is what the checkpoint format and the
test oracles assume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, InputError, NumericError, TrainingError

DTYPE = np.float32
LOSS_STABILIZER = 1e-12

VGG_CHANNELS = (64, 128, 256, 512, 512)
WIDTH_DIVISORS = (1, 2, 4, 8, 16)


# ---------------------------------------------------------------------------
# layers


class Layer:
    kind = "layer"

    def output_shape(self, in_shape):
        return in_shape

    def init_params(self, in_shape, rng, scale, dtype=DTYPE):
        pass

    def params(self):
        return []

    def set_params(self, arrays):
        if arrays:
            raise ValueError(f"{self.kind} has no parameters")

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy, cache, param_grads=False, need_dx=True):
        raise NotImplementedError

    def descriptor(self):
        return (self.kind,)

    def __repr__(self):
        return f"{type(self).__name__}{self.descriptor()[1:]}"


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, out_channels, kernel=3, stride=1, pad=1):
        if min(out_channels, kernel, stride) < 1 or pad < 0:
            raise ConfigError(f"invalid conv2d({out_channels}, {kernel}, {stride}, {pad})")
        self.out_channels = int(out_channels)
        self.kernel = int(kernel)
        self.stride = int(stride)
        self.pad = int(pad)
        self.weight = None
        self.bias = None

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ConfigError(f"conv2d needs a (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        ho = (h + 2 * self.pad - self.kernel) // self.stride + 1
        wo = (w + 2 * self.pad - self.kernel) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ConfigError(f"conv2d kernel {self.kernel} does not fit input {in_shape}")
        return (self.out_channels, ho, wo)

    def init_params(self, in_shape, rng, scale, dtype=DTYPE):
        fan_in = in_shape[0] * self.kernel * self.kernel
        s = scale / math.sqrt(fan_in)
        shape = (self.out_channels, in_shape[0], self.kernel, self.kernel)
        self.weight = rng.uniform(-s, s, size=shape).astype(dtype)
        self.bias = np.zeros(self.out_channels, dtype=dtype)

    def params(self):
        return [self.weight, self.bias]

    def set_params(self, arrays):
        self.weight, self.bias = arrays

    def descriptor(self):
        return (self.kind, self.out_channels, self.kernel, self.stride, self.pad)

    def forward(self, x):
        # x: (B, H, W, C)
        b = x.shape[0]
        k, s, p = self.kernel, self.stride, self.pad
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
        ho, wo = win.shape[1], win.shape[2]
        cols = win.reshape(b * ho * wo, -1)
        wmat = self.weight.reshape(self.out_channels, -1)
        y = cols @ wmat.T + self.bias
        return y.reshape(b, ho, wo, self.out_channels), (x.shape, cols)

    def backward(self, dy, cache, param_grads=False, need_dx=True):
        x_shape, cols = cache
        b, h, w, c = x_shape
        k, s, p = self.kernel, self.stride, self.pad
        ho, wo = dy.shape[1], dy.shape[2]
        dym = dy.reshape(-1, self.out_channels)
        wmat = self.weight.reshape(self.out_channels, -1)
        grads = None
        if param_grads:
            grads = [(dym.T @ cols).reshape(self.weight.shape), dym.sum(axis=0)]
        if not need_dx:
            return None, grads
        dcols = (dym @ wmat).reshape(b, ho, wo, c, k, k)
        dxp = np.zeros((b, h + 2 * p, w + 2 * p, c), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * ho:s, j:j + s * wo:s, :] += dcols[..., i, j]
        return dxp[:, p:p + h, p:p + w, :], grads


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, cache, param_grads=False, need_dx=True):
        return dy * cache, None


class MaxPool(Layer):
    """Non-overlapping max pooling; ties go to the first element in scan order."""

    kind = "maxpool"

    def __init__(self, window=2, stride=None):
        stride = window if stride is None else stride
        if stride != window or window < 1:
            raise ConfigError("only non-overlapping pooling (stride == window) is supported")
        self.window = int(window)
        self.stride = int(stride)

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ConfigError(f"maxpool needs a (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        return (c, h // self.window, w // self.window)

    def descriptor(self):
        return (self.kind, self.window, self.stride)

    def forward(self, x):
        b, h, w, c = x.shape
        q = self.window
        ho, wo = h // q, w // q
        xr = (x[:, :ho * q, :wo * q, :]
              .reshape(b, ho, q, wo, q, c)
              .transpose(0, 1, 3, 5, 2, 4)
              .reshape(b, ho, wo, c, q * q))
        idx = np.argmax(xr, axis=-1)[..., None]
        y = np.take_along_axis(xr, idx, axis=-1)[..., 0]
        return y, (x.shape, idx)

    def backward(self, dy, cache, param_grads=False, need_dx=True):
        x_shape, idx = cache
        b, h, w, c = x_shape
        q = self.window
        ho, wo = dy.shape[1], dy.shape[2]
        dxr = np.zeros((b, ho, wo, c, q * q), dtype=dy.dtype)
        np.put_along_axis(dxr, idx, dy[..., None], axis=-1)
        dxr = dxr.reshape(b, ho, wo, c, q, q).transpose(0, 1, 4, 2, 5, 3).reshape(b, ho * q, wo * q, c)
        if ho * q == h and wo * q == w:
            return dxr, None
        dx = np.zeros(x_shape, dtype=dy.dtype)
        dx[:, :ho * q, :wo * q, :] = dxr
        return dx, None


class Dense(Layer):
    kind = "dense"

    def __init__(self, out_units):
        if out_units < 1:
            raise ConfigError(f"invalid dense({out_units})")
        self.out_units = int(out_units)
        self.weight = None
        self.bias = None

    def output_shape(self, in_shape):
        return (self.out_units,)

    def init_params(self, in_shape, rng, scale, dtype=DTYPE):
        fan_in = int(np.prod(in_shape))
        s = scale / math.sqrt(fan_in)
        self.weight = rng.uniform(-s, s, size=(self.out_units, fan_in)).astype(dtype)
        self.bias = np.zeros(self.out_units, dtype=dtype)

    def params(self):
        return [self.weight, self.bias]

    def set_params(self, arrays):
        self.weight, self.bias = arrays

    def descriptor(self):
        return (self.kind, self.out_units)

    def forward(self, x):
        shape = x.shape
        if x.ndim == 4:
            # NHWC -> (C, H, W) row-major flatten
            x = x.transpose(0, 3, 1, 2)
        flat = x.reshape(shape[0], -1)
        return flat @ self.weight.T + self.bias, (shape, flat)

    def backward(self, dy, cache, param_grads=False, need_dx=True):
        shape, flat = cache
        grads = [dy.T @ flat, dy.sum(axis=0)] if param_grads else None
        dx = dy @ self.weight
        if len(shape) == 4:
            b, h, w, c = shape
            dx = dx.reshape(b, c, h, w).transpose(0, 2, 3, 1)
        return dx, grads


class Softmax(Layer):
    """Terminal layer; its backward pass is fused with the cross-entropy loss."""

    kind = "softmax"

    def forward(self, z):
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        s = e.sum(axis=1, keepdims=True)
        return e / s, (z, s)  # shifted logits and partition, for log-probabilities


LAYER_KINDS = {cls.kind: cls for cls in (Conv2D, ReLU, MaxPool, Dense, Softmax)}


def layer_from_descriptor(desc):
    kind, *args = desc
    try:
        cls = LAYER_KINDS[kind]
    except KeyError:
        raise ConfigError(f"unknown layer kind {kind!r}") from None
    return cls(*args)


# ---------------------------------------------------------------------------
# network


@dataclass(frozen=True)
class Prediction:
    probabilities: np.ndarray

    @property
    def num_classes(self) -> int:
        return len(self.probabilities)

    @property
    def top1(self) -> int:
        return int(np.argmax(self.probabilities))

    @property
    def confidence(self) -> float:
        return float(self.probabilities[self.top1])

    def top_k(self, k: int) -> list[tuple[int, float]]:
        order = top_k_indices(self.probabilities, k)
        return [(int(c), float(self.probabilities[c])) for c in order]


def top_k_indices(probs, k):
    """Indices of the k largest entries along the last axis, ties to the lower id."""
    order = np.argsort(-np.asarray(probs), axis=-1, kind="stable")
    return order[..., :k]


class GradResult(NamedTuple):
    losses: np.ndarray
    input_grad: np.ndarray | None
    param_grads: list | None
    probabilities: np.ndarray


class Network:
    """Ordered layer list ending in softmax.

    Parameters live on the layer objects; ``parameters()`` returns them in
    layer order (weight then bias), which is also the checkpoint order.
    """

    def __init__(self, layers, input_shape, num_classes=None):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        if not self.layers or not isinstance(self.layers[-1], Softmax):
            raise ConfigError("network must end with a softmax layer")
        if any(isinstance(layer, Softmax) for layer in self.layers[:-1]):
            raise ConfigError("softmax is only allowed as the final layer")
        self.shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                self.shapes.append(tuple(layer.output_shape(self.shapes[-1])))
            except ConfigError as exc:
                raise ConfigError(f"layer {i} ({layer.kind}): {exc}") from None
        out = self.shapes[-1]
        if len(out) != 1:
            raise ConfigError("a dense layer must precede softmax")
        if num_classes is not None and out[0] != num_classes:
            raise ConfigError(f"network emits {out[0]} classes, expected {num_classes}")
        self.num_classes = out[0]
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")

    # -- parameters -------------------------------------------------------

    def initialize(self, seed=0, weight_init_scale=1.0):
        if weight_init_scale <= 0:
            raise ConfigError("weight_init_scale must be > 0")
        rng = np.random.default_rng(seed)
        for layer, shape in zip(self.layers, self.shapes):
            layer.init_params(shape, rng, weight_init_scale)
        return self

    def parameters(self):
        return [p for layer in self.layers for p in layer.params()]

    def set_parameters(self, arrays):
        arrays = list(arrays)
        for layer in self.layers:
            n = len(layer.params())
            layer.set_params([np.asarray(a) for a in arrays[:n]])
            arrays = arrays[n:]
        if arrays:
            raise ValueError("too many parameter arrays")

    @property
    def dtype(self):
        params = self.parameters()
        return params[0].dtype if params else DTYPE

    def astype(self, dtype):
        """Deep copy with every parameter cast to ``dtype`` (f64 for oracles)."""
        net = Network([layer_from_descriptor(l.descriptor()) for l in self.layers],
                      self.input_shape)
        net.set_parameters([p.astype(dtype, copy=True) for p in self.parameters()])
        return net

    def copy(self):
        return self.astype(self.dtype)

    def __repr__(self):
        return f"Network(input_shape={self.input_shape}, layers={self.layers})"

    # -- passes -----------------------------------------------------------

    def _as_batch(self, x):
        x = np.asarray(x)
        single = x.shape == self.input_shape
        if single:
            x = x[None]
        elif x.shape[1:] != self.input_shape:
            raise InputError(f"input shape {x.shape} does not match network input {self.input_shape}")
        return x.astype(self.dtype, copy=False), single

    def _run(self, xb, keep=False):
        h = xb.transpose(0, 2, 3, 1) if xb.ndim == 4 else xb
        caches = []
        for i, layer in enumerate(self.layers):
            h, cache = layer.forward(h)
            if not np.isfinite(h).all():
                raise NumericError(f"non-finite activation in layer {i} ({layer.kind})", layer_index=i)
            if keep:
                caches.append(cache)
        return h, caches

    def predict_proba(self, x):
        """Class probabilities for one image ``(C,H,W)`` or a batch ``(B,C,H,W)``."""
        xb, single = self._as_batch(x)
        probs, _ = self._run(xb)
        return probs[0] if single else probs

    def loss_and_gradients(self, x, targets, input_grad=True, param_grads=False, reduction="sum",
                           exact=False):
        """Cross-entropy loss with its gradients.

        ``reduction="sum"`` keeps per-sample input gradients independent of the
        batch (what attacks want); ``"mean"`` is used by training.
        ``exact=True`` drops the stabilizer and evaluates ``-log p_t`` from the
        logits, which stays informative when ``p_t`` underflows; the gradient
        differs from the stabilized one by a positive per-sample factor only.
        Returns a ``GradResult``; ``input_grad`` has the shape of ``x``.
        """
        xb, single = self._as_batch(x)
        t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
        if t.shape != (xb.shape[0],):
            raise InputError("one target class per sample is required")
        if t.min() < 0 or t.max() >= self.num_classes:
            raise InputError(f"target class out of range [0, {self.num_classes})")
        probs, caches = self._run(xb, keep=True)
        rows = np.arange(len(t))
        pt = probs[rows, t]
        if exact:
            z, part = caches[-1]
            losses = np.log(part[:, 0].astype(np.float64)) - z[rows, t]
            dz = probs.copy()
            dz[rows, t] -= 1
        else:
            losses = -np.log(pt + LOSS_STABILIZER)
            # d/dz of -log(p_t + eps) through softmax
            dz = probs * (pt / (pt + LOSS_STABILIZER))[:, None]
            dz[rows, t] -= pt / (pt + LOSS_STABILIZER)
        if reduction == "mean":
            dz = dz / len(t)
        dz = dz.astype(probs.dtype, copy=False)
        grads = [] if param_grads else None
        g = dz
        for i in range(len(self.layers) - 2, -1, -1):
            layer = self.layers[i]
            need_dx = input_grad or i > 0
            g, pg = layer.backward(g, caches[i], param_grads=param_grads, need_dx=need_dx)
            if param_grads and pg is not None:
                grads[:0] = pg
        dx = None
        if input_grad:
            dx = g.transpose(0, 3, 1, 2) if g.ndim == 4 else g
            dx = np.ascontiguousarray(dx).reshape(xb.shape)
            if single:
                dx = dx[0]
        return GradResult(losses, dx, grads, probs)


def build_network(descriptors, input_shape, num_classes=None, seed=0, weight_init_scale=1.0):
    net = Network([layer_from_descriptor(d) for d in descriptors], input_shape, num_classes)
    return net.initialize(seed, weight_init_scale)


def vgg_channels(width_divisor):
    if width_divisor not in WIDTH_DIVISORS:
        raise ConfigError(f"width_divisor must be one of {WIDTH_DIVISORS}, got {width_divisor}")
    return [max(4, c // width_divisor) for c in VGG_CHANNELS]


def build_vgg_mini(input_shape=(3, 32, 32), num_classes=10, width_divisor=8,
                   seed=0, weight_init_scale=1.0) -> Network:
    """Five conv blocks (3x3, pad 1, ReLU) with 2x2 pooling after blocks 1-4, then dense + softmax."""
    channels = vgg_channels(width_divisor)
    if num_classes < 6:
        raise ConfigError(f"num_classes must be >= 6, got {num_classes}")
    c, h, w = input_shape
    size = min(h, w)
    for block in range(1, 5):
        size //= 2
        if size < 1:
            raise ConfigError(
                f"input {h}x{w} is too small: spatial size is exhausted by the pooling after block {block}")
    if min(h, w) < 16:
        raise ConfigError(f"input spatial size must be >= 16x16, got {h}x{w}")
    layers = []
    for block, ch in enumerate(channels, start=1):
        layers += [Conv2D(ch, 3, 1, 1), ReLU()]
        if block <= 4:
            layers.append(MaxPool(2, 2))
    layers += [Dense(num_classes), Softmax()]
    net = Network(layers, input_shape, num_classes)
    return net.initialize(seed, weight_init_scale)


# ---------------------------------------------------------------------------
# functional API


def forward(net: Network, x) -> Prediction:
    return Prediction(net.predict_proba(x))


def loss(net: Network, x, target_class: int) -> float:
    return float(net.loss_and_gradients(x, [target_class], input_grad=False).losses[0])


def input_gradient(net: Network, x, target_class: int) -> np.ndarray:
    """Gradient of the cross-entropy loss for ``target_class`` w.r.t. the input image."""
    return net.loss_and_gradients(x, [target_class]).input_grad


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.02
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    weight_init_scale: float = 1.0
    momentum: float = 0.9

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("train.learning_rate must be > 0")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ConfigError("train.epochs must be an integer >= 1")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError("train.batch_size must be an integer >= 1")
        if not self.weight_init_scale > 0:
            raise ConfigError("train.weight_init_scale must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("train.momentum must be in [0, 1)")
        if not -2**63 <= self.seed < 2**64:
            raise ConfigError("train.seed must fit in 64 bits")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainResult:
    network: Network
    trace: list = field(default_factory=list)


def train(net: Network, data, cfg: TrainConfig, log=None) -> TrainResult:
    """Mini-batch SGD with momentum on mean cross-entropy.

    ``data`` needs ``images`` ``(N, C, H, W)`` and ``labels`` ``(N,)``. The
    network is updated in place. The shuffle order comes from ``cfg.seed`` only.
    """
    images = np.asarray(data.images, dtype=DTYPE)
    labels = np.asarray(data.labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise TrainingError("training set is empty", epoch=0)
    if labels.min() < 0 or labels.max() >= net.num_classes:
        raise TrainingError("label outside the network's class range", epoch=0)
    rng = np.random.default_rng(cfg.seed)
    params = net.parameters()
    velocity = [np.zeros_like(p) for p in params]
    lr = DTYPE(cfg.learning_rate)
    mu = DTYPE(cfg.momentum)
    result = TrainResult(net)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                res = net.loss_and_gradients(
                    images[idx], labels[idx], input_grad=False, param_grads=True, reduction="mean")
            except NumericError as exc:
                raise TrainingError(f"training diverged in epoch {epoch}: {exc}", epoch=epoch) from exc
            batch_loss = float(res.losses.sum())
            if not math.isfinite(batch_loss):
                raise TrainingError(f"training diverged in epoch {epoch} (loss is NaN)", epoch=epoch)
            total_loss += batch_loss
            # running accuracy, measured before each update
            correct += int(np.sum(np.argmax(res.probabilities, axis=1) == labels[idx]))
            for p, v, g in zip(params, velocity, res.param_grads):
                v *= mu
                v -= lr * g
                p += v
        if not all(np.isfinite(p).all() for p in params):
            raise TrainingError(f"non-finite parameters after epoch {epoch}", epoch=epoch)
        stats = EpochStats(epoch, total_loss / n, correct / n)
        result.trace.append(stats)
        if log is not None:
            log(stats)
    return result


def accuracy(net: Network, images, labels, batch_size=256) -> float:
    preds = predict_classes(net, images, batch_size)
    return float(np.mean(preds == np.asarray(labels)))


def predict_classes(net: Network, images, batch_size=256) -> np.ndarray:
    return np.argmax(predict_proba_batched(net, images, batch_size), axis=1)


def predict_proba_batched(net: Network, images, batch_size=256) -> np.ndarray:
    images = np.asarray(images)
    if len(images) == 0:
        return np.zeros((0, net.num_classes), dtype=net.dtype)
    return np.concatenate([net.predict_proba(images[i:i + batch_size])
                           for i in range(0, len(images), batch_size)])
