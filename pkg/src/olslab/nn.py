"""Dense float64 network kernel: layers, batched soft-target losses, gradients.

Every array is a numpy float64 ndarray in row-major (C) order. Layers cache
whatever their backward pass needs, so a Network instance has a single owner
and must not be shared between concurrent training loops. All primitives
reduce in a fixed order, so identical inputs reproduce bit-identical outputs
within one environment.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatchError

# Probabilities are clamped here before any log so that saturated predictions
# produce a large finite loss instead of -inf.
LOG_FLOOR = 1e-12


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Checked matrix product of two 2-D arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"cannot matrix-multiply shapes {a.shape} and {b.shape}")
    return a @ b


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, max-subtracted so huge logits cannot overflow."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


class Parameter:
    """A trainable tensor with its gradient and momentum buffers."""

    __slots__ = ("name", "value", "grad", "momentum")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.momentum = np.zeros_like(self.value)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    """Affine layer: y = x @ W + b, with W of shape (in_dim, out_dim)."""

    def __init__(self, in_dim: int, out_dim: int, *, name: str, rng: np.random.Generator):
        self.weight = Parameter(f"{name}.weight", _kaiming_uniform(rng, (in_dim, out_dim), in_dim))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_dim))
        self.params = [self.weight, self.bias]
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.weight.value.shape[0]:
            raise ShapeMismatchError(
                f"linear layer expects (n, {self.weight.value.shape[0]}), got {x.shape}"
            )
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        self.weight.grad += self._x.T @ grad_out
        self.bias.grad += grad_out.sum(axis=0)
        return grad_out @ self.weight.value.T


class ReLU:
    def __init__(self):
        self.params = []
        self.last_input = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.last_input = x
        return np.maximum(x, 0.0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out * (self.last_input > 0.0)


class Conv2d:
    """2-D convolution, stride 1, symmetric zero padding, via im2col."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 padding: int = 1, *, name: str, rng: np.random.Generator):
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(
            f"{name}.weight",
            _kaiming_uniform(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in),
        )
        self.bias = Parameter(f"{name}.bias", np.zeros(out_channels))
        self.params = [self.weight, self.bias]
        self.kernel_size = kernel_size
        self.padding = padding
        self._cols = None
        self._x_shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.weight.value.shape[1]:
            raise ShapeMismatchError(
                f"conv expects (n, {self.weight.value.shape[1]}, h, w), got {x.shape}"
            )
        k, p = self.kernel_size, self.padding
        n, c, h, w = x.shape
        oh, ow = h + 2 * p - k + 1, w + 2 * p - k + 1
        if oh < 1 or ow < 1:
            raise ShapeMismatchError(f"conv kernel {k} too large for input {x.shape}")
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * k * k)
        self._cols = cols
        self._x_shape = x.shape
        wmat = self.weight.value.reshape(self.weight.value.shape[0], -1)
        out = cols @ wmat.T + self.bias.value
        return np.ascontiguousarray(
            out.reshape(n, oh, ow, -1).transpose(0, 3, 1, 2)
        )

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        k, p = self.kernel_size, self.padding
        n, c, h, w = self._x_shape
        oc = self.weight.value.shape[0]
        oh, ow = grad_out.shape[2], grad_out.shape[3]
        gflat = grad_out.transpose(0, 2, 3, 1).reshape(-1, oc)
        self.weight.grad += (gflat.T @ self._cols).reshape(self.weight.value.shape)
        self.bias.grad += gflat.sum(axis=0)
        wmat = self.weight.value.reshape(oc, -1)
        gwin = (gflat @ wmat).reshape(n, oh, ow, c, k, k).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros((n, c, h + 2 * p, w + 2 * p))
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + oh, j:j + ow] += gwin[:, :, :, :, i, j]
        return gxp[:, :, p:p + h, p:p + w]


class MaxPool2x2:
    """2x2 max pooling with stride 2; ties resolve to the first window entry."""

    def __init__(self):
        self.params = []
        self.last_windows = None
        self._idx = None
        self._x_shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeMismatchError(f"max-pool 2x2 needs even spatial dims, got {x.shape}")
        win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        win = np.ascontiguousarray(win).reshape(n, c, h // 2, w // 2, 4)
        self.last_windows = win
        self._idx = win.argmax(axis=-1)
        self._x_shape = x.shape
        return np.take_along_axis(win, self._idx[..., None], axis=-1)[..., 0]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        n, c, h, w = self._x_shape
        gwin = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(gwin, self._idx[..., None], grad_out[..., None], axis=-1)
        gx = gwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return np.ascontiguousarray(gx).reshape(n, c, h, w)


class Flatten:
    def __init__(self):
        self.params = []
        self._x_shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out.reshape(self._x_shape)


class Network:
    """A sequential stack of layers producing class logits."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            out = layer.forward(out)
        return out

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; return the gradient w.r.t. the input."""
        grad = grad_logits
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.params]

    def zero_grads(self):
        for p in self.parameters():
            p.grad.fill(0.0)


def batch_combined_loss(probs: np.ndarray, labels: np.ndarray, targets: np.ndarray,
                        hard_weight: float) -> tuple[float, float, float]:
    """Mean hard-label CE, mean soft-target CE, and their weighted blend.

    Returns (total, hard, soft) where total = hard_weight * hard +
    (1 - hard_weight) * soft, averaged over the batch.
    """
    n = probs.shape[0]
    logp = np.log(np.maximum(probs, LOG_FLOOR))
    hard = float(-logp[np.arange(n), labels].mean())
    soft = float(-(targets * logp).sum(axis=1).mean())
    total = hard_weight * hard + (1.0 - hard_weight) * soft
    return total, hard, soft


def blended_targets(labels: np.ndarray, targets: np.ndarray, hard_weight: float) -> np.ndarray:
    """Effective per-sample target of the blended loss: hw*onehot + (1-hw)*target."""
    return hard_weight * one_hot(labels, targets.shape[1]) + (1.0 - hard_weight) * targets


def loss_logit_gradient(probs: np.ndarray, labels: np.ndarray, targets: np.ndarray,
                        hard_weight: float) -> np.ndarray:
    """Gradient of the mean blended CE w.r.t. the logits: (p - q_eff) / n.

    Exact for the unclamped loss; the LOG_FLOOR clamp only binds where a
    probability has fully saturated to < 1e-12.
    """
    return (probs - blended_targets(labels, targets, hard_weight)) / probs.shape[0]


class ForwardBackward:
    __slots__ = ("total", "hard", "soft", "probs")

    def __init__(self, total, hard, soft, probs):
        self.total = total
        self.hard = hard
        self.soft = soft
        self.probs = probs


def forward_backward(net: Network, x: np.ndarray, labels: np.ndarray,
                     targets: np.ndarray, hard_weight: float = 1.0) -> ForwardBackward:
    """One training step's math: forward pass, loss, parameter gradients.

    Gradients are freshly populated (previous contents cleared). The returned
    probabilities are the softmax outputs of this forward pass, i.e. computed
    before any parameter update.
    """
    targets = np.asarray(targets, dtype=np.float64)
    logits = net.forward(x)
    if targets.shape != logits.shape:
        raise ShapeMismatchError(f"targets shape {targets.shape} != logits shape {logits.shape}")
    probs = softmax(logits)
    total, hard, soft = batch_combined_loss(probs, labels, targets, hard_weight)
    net.zero_grads()
    net.backward(loss_logit_gradient(probs, labels, targets, hard_weight))
    return ForwardBackward(total, hard, soft, probs)


def input_gradient(net: Network, x: np.ndarray, labels: np.ndarray,
                   targets: np.ndarray | None = None, hard_weight: float = 1.0) -> np.ndarray:
    """Gradient of the mean loss w.r.t. the input; defaults to hard-label CE.

    Parameter values are untouched; parameter gradient buffers are scratch
    space and are left zeroed.
    """
    logits = net.forward(np.asarray(x, dtype=np.float64))
    probs = softmax(logits)
    if targets is None:
        targets = one_hot(labels, probs.shape[1])
    net.zero_grads()
    grad_in = net.backward(loss_logit_gradient(probs, labels, targets, hard_weight))
    net.zero_grads()
    return grad_in
