"""Minimal neural-network kernel with explicit forward/backward contracts.

Layers cache what their exact backward pass needs, parameter gradients
accumulate until an optimizer step consumes them, and every stochastic choice
(initialization) comes from an explicit :class:`~stagekit.utils.RngStream`.
The kernel is deliberately small: dense, conv1d (valid padding), embedding,
relu, global max pooling, flatten, and gradient reversal.
"""

from dataclasses import dataclass

import numpy as np

from . import loaddata
from .utils import RngStream

_SUPPORTED_LOSSES = ("softmax_cross_entropy", "mse", "hinge")


def _shape_tuple(shape) -> tuple:
    return tuple(int(s) for s in shape)


class Layer:
    """Base layer: stateless unless it declares parameters."""

    kind = "base"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def out_shape(self, in_shape: tuple) -> tuple:
        raise NotImplementedError

    def init_params(self, rng: RngStream) -> None:
        """Draw parameters from ``rng``; default layers have none."""

    def zero_grads(self) -> None:
        self.grads = {name: np.zeros_like(p) for name, p in self.params.items()}

    def forward(self, x: np.ndarray):
        raise NotImplementedError

    def backward(self, cache, gy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec_dict(self) -> dict:
        return {"kind": self.kind}


class Dense(Layer):
    """Affine map x @ w + b with Glorot-uniform weight init."""

    kind = "dense"

    def __init__(self, n_in: int, n_out: int):
        super().__init__()
        if n_in <= 0 or n_out <= 0:
            raise ValueError(f"dense dims must be positive, got ({n_in}, {n_out})")
        self.n_in, self.n_out = int(n_in), int(n_out)
        self.params = {"w": np.zeros((n_in, n_out)), "b": np.zeros(n_out)}
        self.zero_grads()

    def out_shape(self, in_shape):
        if in_shape != (self.n_in,):
            raise ValueError(f"dense({self.n_in},{self.n_out}) cannot take input {in_shape}")
        return (self.n_out,)

    def init_params(self, rng):
        limit = np.sqrt(6.0 / (self.n_in + self.n_out))
        u = rng.uniforms(self.n_in * self.n_out)
        self.params["w"] = (limit * (2.0 * u - 1.0)).reshape(self.n_in, self.n_out)
        self.params["b"] = np.zeros(self.n_out)

    def forward(self, x):
        return x @ self.params["w"] + self.params["b"], x

    def backward(self, cache, gy):
        x = cache
        self.grads["w"] += x.T @ gy
        self.grads["b"] += gy.sum(axis=0)
        return gy @ self.params["w"].T

    def spec_dict(self):
        return {"kind": self.kind, "n_in": self.n_in, "n_out": self.n_out}


class Conv1d(Layer):
    """1-D convolution over (batch, channels, length), valid padding."""

    kind = "conv1d"

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1):
        super().__init__()
        if min(in_ch, out_ch, kernel, stride) <= 0:
            raise ValueError(
                f"conv1d dims must be positive, got ({in_ch},{out_ch},{kernel},{stride})"
            )
        self.in_ch, self.out_ch = int(in_ch), int(out_ch)
        self.kernel, self.stride = int(kernel), int(stride)
        self.params = {"w": np.zeros((out_ch, in_ch, kernel)), "b": np.zeros(out_ch)}
        self.zero_grads()

    def out_shape(self, in_shape):
        if len(in_shape) != 2 or in_shape[0] != self.in_ch:
            raise ValueError(
                f"conv1d expects ({self.in_ch}, length) input, got {in_shape}"
            )
        length = in_shape[1]
        if length < self.kernel:
            raise ValueError(
                f"conv1d kernel {self.kernel} exceeds input length {length}"
            )
        return (self.out_ch, (length - self.kernel) // self.stride + 1)

    def init_params(self, rng):
        fan_in = self.in_ch * self.kernel
        fan_out = self.out_ch * self.kernel
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        u = rng.uniforms(self.out_ch * self.in_ch * self.kernel)
        self.params["w"] = (limit * (2.0 * u - 1.0)).reshape(
            self.out_ch, self.in_ch, self.kernel
        )
        self.params["b"] = np.zeros(self.out_ch)

    def _window(self, x, k, l_out):
        return x[:, :, k : k + self.stride * l_out : self.stride]

    def forward(self, x):
        w = self.params["w"]
        l_out = (x.shape[2] - self.kernel) // self.stride + 1
        out = np.zeros((x.shape[0], self.out_ch, l_out))
        for k in range(self.kernel):
            # (out_ch, in_ch) contracted against (batch, in_ch, l_out)
            part = np.tensordot(w[:, :, k], self._window(x, k, l_out), axes=([1], [1]))
            out += np.moveaxis(part, 0, 1)
        out += self.params["b"][None, :, None]
        return out, x

    def backward(self, cache, gy):
        x = cache
        w = self.params["w"]
        l_out = gy.shape[2]
        gx = np.zeros_like(x)
        for k in range(self.kernel):
            window = self._window(x, k, l_out)
            self.grads["w"][:, :, k] += np.tensordot(gy, window, axes=([0, 2], [0, 2]))
            part = np.tensordot(gy, w[:, :, k], axes=([1], [0]))  # (batch, l_out, in_ch)
            self._window(gx, k, l_out)[...] += np.moveaxis(part, 1, 2)
        self.grads["b"] += gy.sum(axis=(0, 2))
        return gx

    def spec_dict(self):
        return {
            "kind": self.kind,
            "in_ch": self.in_ch,
            "out_ch": self.out_ch,
            "kernel": self.kernel,
            "stride": self.stride,
        }


class Embedding(Layer):
    """Token lookup producing channels-first (batch, dim, length) maps.

    Inputs are integer-valued arrays; index 0 conventionally carries padding
    and is embedded like any other token.
    """

    kind = "embedding"

    def __init__(self, vocab: int, dim: int):
        super().__init__()
        if vocab <= 0 or dim <= 0:
            raise ValueError(f"embedding dims must be positive, got ({vocab}, {dim})")
        self.vocab, self.dim = int(vocab), int(dim)
        self.params = {"w": np.zeros((vocab, dim))}
        self.zero_grads()

    def out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ValueError(f"embedding expects (length,) input, got {in_shape}")
        return (self.dim, in_shape[0])

    def init_params(self, rng):
        scale = 1.0 / np.sqrt(self.dim)
        self.params["w"] = (scale * rng.normals(self.vocab * self.dim)).reshape(
            self.vocab, self.dim
        )

    def forward(self, x):
        idx = np.asarray(x)
        if idx.dtype.kind == "f":
            rounded = np.rint(idx)
            if not np.array_equal(rounded, idx):
                raise ValueError("embedding input must be integer-valued")
            idx = rounded
        idx = idx.astype(np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.vocab):
            raise ValueError(
                f"embedding index out of range [0, {self.vocab}): "
                f"min {idx.min()}, max {idx.max()}"
            )
        out = self.params["w"][idx]  # (batch, length, dim)
        return np.moveaxis(out, 1, 2), idx

    def backward(self, cache, gy):
        idx = cache
        flat = np.moveaxis(gy, 1, 2).reshape(-1, self.dim)
        np.add.at(self.grads["w"], idx.reshape(-1), flat)
        return np.zeros(idx.shape)

    def spec_dict(self):
        return {"kind": self.kind, "vocab": self.vocab, "dim": self.dim}


class Relu(Layer):
    kind = "relu"

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        mask = x > 0.0
        return x * mask, mask

    def backward(self, cache, gy):
        return gy * cache


class GlobalMaxPool(Layer):
    """Max over the trailing (length) axis; ties route gradient to the first max."""

    kind = "global_max_pool"

    def out_shape(self, in_shape):
        if len(in_shape) != 2:
            raise ValueError(f"global_max_pool expects (channels, length), got {in_shape}")
        return (in_shape[0],)

    def forward(self, x):
        arg = np.argmax(x, axis=2)
        out = np.take_along_axis(x, arg[:, :, None], axis=2)[:, :, 0]
        return out, (arg, x.shape)

    def backward(self, cache, gy):
        arg, shape = cache
        gx = np.zeros(shape)
        np.put_along_axis(gx, arg[:, :, None], gy[:, :, None], axis=2)
        return gx


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape, dtype=np.int64)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, gy):
        return gy.reshape(cache)


class GradReverse(Layer):
    """Identity forward; backward multiplies the upstream gradient by -lam."""

    kind = "grad_reverse"

    def __init__(self, lam: float = 1.0):
        super().__init__()
        self.lam = float(lam)

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        return x, None

    def backward(self, cache, gy):
        return -self.lam * gy

    def spec_dict(self):
        return {"kind": self.kind, "lam": self.lam}


_LAYER_KINDS = {
    cls.kind: cls
    for cls in (Dense, Conv1d, Embedding, Relu, GlobalMaxPool, Flatten, GradReverse)
}


def layer_from_spec(spec: dict) -> Layer:
    kwargs = {k: v for k, v in spec.items() if k != "kind"}
    try:
        cls = _LAYER_KINDS[spec["kind"]]
    except KeyError:
        raise ValueError(f"unknown layer kind {spec.get('kind')!r}") from None
    return cls(**kwargs)


@dataclass
class Activations:
    """Output of a forward pass plus the caches an exact backward needs."""

    output: np.ndarray
    caches: list


class Net:
    """Ordered layer stack with construction-time shape checking.

    Args:
        input_shape: per-sample input shape (without the batch axis).
        layers: layer instances applied in order.
        rng: when given, parameters are drawn from it layer by layer in
            order, making two builds from equal seeds identical.
    """

    def __init__(self, input_shape, layers: list, rng: RngStream | None = None):
        self.input_shape = _shape_tuple(input_shape)
        self.layers = list(layers)
        self.shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                self.shapes.append(_shape_tuple(layer.out_shape(self.shapes[-1])))
            except ValueError as exc:
                raise ValueError(f"layer {i} ({layer.kind}): {exc}") from exc
        if rng is not None:
            for layer in self.layers:
                layer.init_params(rng)

    @property
    def output_shape(self) -> tuple:
        return self.shapes[-1]

    def forward(self, x: np.ndarray) -> Activations:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ValueError(
                f"layer 0 ({self.layers[0].kind if self.layers else 'output'}): "
                f"expected input {self.input_shape}, got {x.shape[1:]}"
            )
        caches = []
        for i, layer in enumerate(self.layers):
            try:
                x, cache = layer.forward(x)
            except ValueError as exc:
                raise ValueError(f"layer {i} ({layer.kind}): {exc}") from exc
            caches.append(cache)
        return Activations(output=x, caches=caches)

    def backward(self, activations: Activations, grad_output: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; returns the gradient at the input."""
        gy = np.asarray(grad_output, dtype=np.float64)
        for layer, cache in zip(reversed(self.layers), reversed(activations.caches)):
            gy = layer.backward(cache, gy)
        return gy

    def zero_grads(self) -> None:
        for layer in self.layers:
            layer.zero_grads()

    def param_items(self):
        """Yield (layer_index, name, layer) for every parameter tensor."""
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                yield i, name, layer

    def num_params(self) -> int:
        return sum(layer.params[name].size for _, name, layer in self.param_items())


def net_forward(net: Net, batch: np.ndarray) -> Activations:
    """Forward pass returning the final output and cached intermediates."""
    return net.forward(batch)


@dataclass(frozen=True)
class LossSpec:
    """Loss kind with mean reduction."""

    kind: str
    reduction: str = "mean"

    def __post_init__(self):
        if self.kind not in _SUPPORTED_LOSSES:
            raise ValueError(f"loss kind must be one of {_SUPPORTED_LOSSES}, got {self.kind!r}")
        if self.reduction != "mean":
            raise ValueError(f"only mean reduction is supported, got {self.reduction!r}")


def loss_value_and_grad(spec: LossSpec, pred: np.ndarray, targets: np.ndarray):
    """Loss value and its gradient with respect to ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    if spec.kind == "softmax_cross_entropy":
        targets = np.asarray(targets)
        if pred.ndim != 2:
            raise ValueError(f"cross-entropy expects (batch, classes) logits, got {pred.shape}")
        if targets.shape != (pred.shape[0],):
            raise ValueError(
                f"targets of shape {targets.shape} do not match batch {pred.shape[0]}"
            )
        idx = targets.astype(np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= pred.shape[1]):
            raise ValueError("class targets out of range")
        shift = pred - pred.max(axis=1, keepdims=True)
        exp = np.exp(shift)
        total = exp.sum(axis=1, keepdims=True)
        log_probs = shift - np.log(total)
        n = pred.shape[0]
        loss = -float(log_probs[np.arange(n), idx].mean())
        grad = exp / total
        grad[np.arange(n), idx] -= 1.0
        return loss, grad / n

    if spec.kind == "mse":
        targets = np.asarray(targets, dtype=np.float64)
        if targets.shape != pred.shape:
            raise ValueError(f"mse targets {targets.shape} do not match prediction {pred.shape}")
        diff = pred - targets
        loss = float(np.mean(diff * diff))
        return loss, 2.0 * diff / diff.size

    # hinge on a single score per row, labels in {0, 1}
    targets = np.asarray(targets, dtype=np.float64)
    scores = pred.reshape(pred.shape[0]) if pred.ndim == 2 and pred.shape[1] == 1 else pred
    if scores.ndim != 1 or targets.shape != scores.shape:
        raise ValueError(
            f"hinge expects one score per row, got pred {pred.shape} targets {targets.shape}"
        )
    sign = 2.0 * targets - 1.0
    margins = 1.0 - sign * scores
    active = margins > 0.0  # margin exactly at the hinge contributes nothing
    loss = float(np.mean(np.where(active, margins, 0.0)))
    grad = (-sign * active) / scores.size
    return loss, grad.reshape(pred.shape)


def net_backward(net: Net, activations: Activations, targets, loss: LossSpec) -> float:
    """Populate parameter gradients for ``loss`` and return its value."""
    value, grad = loss_value_and_grad(loss, activations.output, targets)
    net.backward(activations, grad)
    return value


class Optimizer:
    """SGD-with-momentum or Adam over the parameters of one or more nets."""

    def __init__(
        self,
        kind: str,
        nets,
        lr: float,
        momentum: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"optimizer kind must be 'sgd' or 'adam', got {kind!r}")
        self.kind = kind
        self.nets = list(nets) if isinstance(nets, (list, tuple)) else [nets]
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.beta1, self.beta2, self.eps = float(beta1), float(beta2), float(eps)
        self.t = 0
        self._state: dict = {}
        for ni, net in enumerate(self.nets):
            for li, name, layer in net.param_items():
                shape = layer.params[name].shape
                if kind == "sgd":
                    self._state[ni, li, name] = {"v": np.zeros(shape)}
                else:
                    self._state[ni, li, name] = {"m": np.zeros(shape), "v": np.zeros(shape)}

    def step(self, net: Net | None = None) -> None:
        """Apply one update and zero the consumed gradients.

        With ``net=None`` all registered nets are stepped together; Adam's
        bias-correction counter ticks once per call either way.
        """
        self.t += 1
        for ni, candidate in enumerate(self.nets):
            if net is not None and candidate is not net:
                continue
            for li, name, layer in candidate.param_items():
                g = layer.grads[name]
                state = self._state[ni, li, name]
                if self.kind == "sgd":
                    state["v"] = self.momentum * state["v"] + g
                    layer.params[name] -= self.lr * state["v"]
                else:
                    state["m"] = self.beta1 * state["m"] + (1.0 - self.beta1) * g
                    state["v"] = self.beta2 * state["v"] + (1.0 - self.beta2) * g * g
                    m_hat = state["m"] / (1.0 - self.beta1**self.t)
                    v_hat = state["v"] / (1.0 - self.beta2**self.t)
                    layer.params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            candidate.zero_grads()


def optimizer_step(opt: Optimizer, net: Net | None = None) -> None:
    """Module-level alias for :meth:`Optimizer.step`."""
    opt.step(net)


def mmd_rbf(x: np.ndarray, y: np.ndarray, bandwidths):
    """Biased squared MMD with a Gaussian kernel, averaged over bandwidths.

    Uses k(u, v) = exp(-||u - v||^2 / (2 sigma^2)) including diagonal terms,
    so the estimate is non-negative by construction.

    Returns:
        (value, grad_x, grad_y): the scalar estimate and its exact gradients
        with respect to the rows of ``x`` and ``y``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise ValueError(f"mmd_rbf expects 2-D sample matrices, got {x.shape} and {y.shape}")
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ValueError("mmd_rbf requires at least one sample per side")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"feature dims differ: {x.shape[1]} vs {y.shape[1]}")
    bandwidths = [float(b) for b in bandwidths]
    if not bandwidths or any(b <= 0 for b in bandwidths):
        raise ValueError("bandwidths must be a non-empty list of positive reals")

    n, m = x.shape[0], y.shape[0]
    xx = x @ x.T
    yy = y @ y.T
    xy = x @ y.T
    sx = np.diag(xx)
    sy = np.diag(yy)
    dxx = np.maximum(sx[:, None] + sx[None, :] - 2.0 * xx, 0.0)
    dyy = np.maximum(sy[:, None] + sy[None, :] - 2.0 * yy, 0.0)
    dxy = np.maximum(sx[:, None] + sy[None, :] - 2.0 * xy, 0.0)

    value = 0.0
    gx = np.zeros_like(x)
    gy = np.zeros_like(y)
    for sigma in bandwidths:
        s2 = sigma * sigma
        kxx = np.exp(-dxx / (2.0 * s2))
        kyy = np.exp(-dyy / (2.0 * s2))
        kxy = np.exp(-dxy / (2.0 * s2))
        value += kxx.mean() + kyy.mean() - 2.0 * kxy.mean()
        gx += (2.0 / (n * n * s2)) * (kxx @ x - kxx.sum(axis=1)[:, None] * x)
        gx -= (2.0 / (n * m * s2)) * (kxy @ y - kxy.sum(axis=1)[:, None] * x)
        gy += (2.0 / (m * m * s2)) * (kyy @ y - kyy.sum(axis=1)[:, None] * y)
        gy -= (2.0 / (n * m * s2)) * (kxy.T @ x - kxy.sum(axis=0)[:, None] * y)
    count = len(bandwidths)
    return value / count, gx / count, gy / count


def finite_diff_grad_check(net: Net, batch, targets, loss: LossSpec, h: float) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Every parameter entry is perturbed by ±h; the relative error denominator
    is max(|analytic|, |numeric|, 1e-8). The net's gradients are zeroed on
    exit.
    """
    if h <= 0:
        raise ValueError(f"step size h must be positive, got {h}")
    batch = np.asarray(batch, dtype=np.float64)

    net.zero_grads()
    acts = net.forward(batch)
    net_backward(net, acts, targets, loss)
    analytic = {
        (li, name): layer.grads[name].copy() for li, name, layer in net.param_items()
    }
    net.zero_grads()

    def loss_only() -> float:
        value, _ = loss_value_and_grad(loss, net.forward(batch).output, targets)
        return value

    worst = 0.0
    for li, name, layer in net.param_items():
        param = layer.params[name]
        flat = param.reshape(-1)
        grad_flat = analytic[li, name].reshape(-1)
        for i in range(flat.size):
            theta = flat[i]
            flat[i] = theta + h
            f_plus = loss_only()
            flat[i] = theta - h
            f_minus = loss_only()
            flat[i] = theta
            numeric = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(grad_flat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(grad_flat[i] - numeric) / denom)
    return worst


def save_net(net: Net, directory) -> None:
    """Serialize layer kinds, shapes, and parameters as a KTF bundle."""
    meta = {
        "kind": "net",
        "input_shape": list(net.input_shape),
        "layers": [layer.spec_dict() for layer in net.layers],
    }
    tensors = {}
    for li, name, layer in net.param_items():
        tensors[f"layer{li}_{name}"] = layer.params[name]
    loaddata.save_bundle(directory, tensors, meta)


def load_net(directory) -> Net:
    """Rebuild a net saved by :func:`save_net`."""
    tensors, meta = loaddata.load_bundle(directory)
    if meta.get("kind") != "net":
        raise ValueError(f"bundle at {directory} is not a serialized net")
    layers = [layer_from_spec(spec) for spec in meta["layers"]]
    net = Net(meta["input_shape"], layers)
    for li, name, layer in net.param_items():
        stored = tensors[f"layer{li}_{name}"]
        if stored.shape != layer.params[name].shape:
            raise ValueError(
                f"parameter layer{li}_{name} has shape {stored.shape}, "
                f"expected {layer.params[name].shape}"
            )
        layer.params[name] = stored
    return net
