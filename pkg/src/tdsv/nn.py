"""Minimal differentiable building blocks with hand-derived gradients.

Every layer follows the same contract: ``forward`` caches whatever the
analytic backward pass needs, ``backward`` consumes the upstream gradient
and accumulates parameter gradients in place while returning the gradient
with respect to the layer input.  All math is plain numpy; float64 is used
throughout the test/oracle paths.

Shapes: convolutions operate on (channels, frames) matrices or batches
(batch, channels, frames); dense layers on (features,) vectors or
(batch, features) matrices.
"""

import numpy as np

__all__ = [
    "Param",
    "Conv1d",
    "Dense",
    "ReLU",
    "Adam",
    "sigmoid",
    "softmax",
    "log_softmax",
    "cosine_similarity",
    "cosine_similarity_backward",
]


class Param:
    """A parameter tensor together with its gradient accumulator."""

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


def _as_batch(x, ndim):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == ndim - 1:
        return x[None, ...], True
    if x.ndim == ndim:
        return x, False
    raise ValueError(f"expected {ndim - 1}D or {ndim}D input, got {x.ndim}D")


class Conv1d:
    """Same-length 1-D convolution over the temporal axis.

    Kernel size must be odd; the input is zero-padded so the frame count
    of the output equals that of the input.
    """

    def __init__(self, in_channels, out_channels, kernel_size, rng=None):
        if kernel_size % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        if rng is None:
            weight = np.zeros((out_channels, in_channels, kernel_size))
        else:
            scale = 1.0 / np.sqrt(in_channels * kernel_size)
            weight = rng.normal(0.0, scale, (out_channels, in_channels, kernel_size))
        self.weight = Param(weight)
        self.bias = Param(np.zeros(out_channels))
        self._cache = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x):
        x, squeeze = _as_batch(x, 3)
        n, c, t = x.shape
        if c != self.in_channels:
            raise ValueError(
                f"input has {c} channels, kernel expects {self.in_channels}"
            )
        k = self.kernel_size
        half = k // 2
        xpad = np.pad(x, ((0, 0), (0, 0), (half, half)))
        # windows[n, c, j, t] = xpad[n, c, t + j]
        windows = np.stack([xpad[:, :, j : j + t] for j in range(k)], axis=2)
        out = np.einsum("dcj,ncjt->ndt", self.weight.value, windows)
        out += self.bias.value[None, :, None]
        self._cache = (windows, x.shape, squeeze)
        return out[0] if squeeze else out

    def backward(self, grad_out):
        windows, in_shape, squeeze = self._cache
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if squeeze:
            grad_out = grad_out[None, ...]
        n, c, t = in_shape
        if grad_out.shape != (n, self.out_channels, t):
            raise ValueError("upstream gradient shape does not match forward output")
        self.weight.grad += np.einsum("ndt,ncjt->dcj", grad_out, windows)
        self.bias.grad += grad_out.sum(axis=(0, 2))
        k = self.kernel_size
        half = k // 2
        gpad = np.zeros((n, self.in_channels, t + 2 * half))
        contrib = np.einsum("dcj,ndt->ncjt", self.weight.value, grad_out)
        for j in range(k):
            gpad[:, :, j : j + t] += contrib[:, :, j, :]
        grad_in = gpad[:, :, half : half + t]
        return grad_in[0] if squeeze else grad_in


class Dense:
    """Fully connected layer y = W x + b."""

    def __init__(self, in_features, out_features, rng=None):
        if rng is None:
            weight = np.zeros((out_features, in_features))
        else:
            scale = 1.0 / np.sqrt(in_features)
            weight = rng.normal(0.0, scale, (out_features, in_features))
        self.weight = Param(weight)
        self.bias = Param(np.zeros(out_features))
        self._cache = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x):
        x, squeeze = _as_batch(x, 2)
        if x.shape[1] != self.weight.shape[1]:
            raise ValueError(
                f"input has {x.shape[1]} features, weight expects {self.weight.shape[1]}"
            )
        out = x @ self.weight.value.T + self.bias.value
        self._cache = (x, squeeze)
        return out[0] if squeeze else out

    def backward(self, grad_out):
        x, squeeze = self._cache
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if squeeze:
            grad_out = grad_out[None, ...]
        if grad_out.shape != (x.shape[0], self.weight.shape[0]):
            raise ValueError("upstream gradient shape does not match forward output")
        self.weight.grad += grad_out.T @ x
        self.bias.grad += grad_out.sum(axis=0)
        grad_in = grad_out @ self.weight.value
        return grad_in[0] if squeeze else grad_in


class ReLU:
    def __init__(self):
        self._mask = None

    def params(self):
        return []

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._mask = x > 0.0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out):
        return np.where(self._mask, np.asarray(grad_out, dtype=np.float64), 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def cosine_similarity(a, b):
    """Cosine of the angle between two nonzero vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("cosine_similarity expects two equal-length vectors")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(a @ b / (na * nb))


def cosine_similarity_backward(a, b, upstream=1.0):
    """Gradients of ``upstream * cosine_similarity(a, b)`` wrt a and b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    s = a @ b / (na * nb)
    grad_a = upstream * (b / (na * nb) - s * a / (na * na))
    grad_b = upstream * (a / (na * nb) - s * b / (nb * nb))
    return grad_a, grad_b


class Adam:
    """Adam with bias correction over a list of :class:`Param`."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.step_count += 1
        t = self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / (1.0 - self.beta1**t)
            vhat = v / (1.0 - self.beta2**t)
            p.value -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
