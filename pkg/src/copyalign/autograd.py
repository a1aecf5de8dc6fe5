"""Dense-tensor arithmetic with reverse-mode differentiation.

A deliberately small engine: tensors wrap numpy arrays, every operation
records a backward closure, and ``Tensor.backward`` replays the tape in
reverse topological order. It is single threaded and deterministic; the
op set covers exactly what the similarity model needs (matmul, conv2d,
relu, channel softmax, layer norm, attention, a few reductions) plus an
SGD optimizer and a finite-difference gradient checker.

Training runs in float32; ``grad_check`` expects float64 inputs so that
central differences have enough headroom.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, OptimizerError

Array = np.ndarray


def _as_float_array(data, dtype=None) -> Array:
    arr = np.asarray(data, dtype=dtype)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """A dense nd-array with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data: Array = _as_float_array(data, dtype)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple["Tensor", ...] = ()
        self._backward_fn: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self, grad: Array | None = None) -> None:
        """Accumulate gradients of this tensor w.r.t. every ancestor."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(
                    "backward() without an explicit gradient needs a scalar, "
                    f"got shape {self.data.shape}"
                )
            grad = np.ones_like(self.data)
        # Iterative topological sort; graphs can be a few hundred nodes deep.
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        _accumulate(self, grad)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn()

    # Operator sugar; scalars are lifted to constant tensors.
    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    def __radd__(self, other):
        return add(_lift(other, self.dtype), self)

    def __sub__(self, other):
        return add(self, scale(_lift(other, self.dtype), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _lift(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _accumulate(t: Tensor, g: Array) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient back down to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _swap_last2(arr: Array) -> Array:
    return np.swapaxes(arr, -1, -2)


def _result(data: Array, parents: Sequence[Tensor], backward: Callable[[Tensor], Callable[[], None]]) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward_fn = backward(out)
    return out


# ---------------------------------------------------------------------------
# Elementwise and structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if a.requires_grad:
                _accumulate(a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(g, b.data.shape))
        return fn

    return _result(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if a.requires_grad:
                _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(g * a.data, b.data.shape))
        return fn

    return _result(data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    data = a.data * s

    def backward(out: Tensor):
        def fn():
            _accumulate(a, out.grad * s)
        return fn

    return _result(data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def backward(out: Tensor):
        mask = a.data > 0

        def fn():
            _accumulate(a, out.grad * mask)
        return fn

    return _result(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(out: Tensor):
        def fn():
            _accumulate(a, out.grad / a.data)
        return fn

    return _result(data, (a,), backward)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    data = np.maximum(a.data, floor)

    def backward(out: Tensor):
        mask = a.data >= floor

        def fn():
            _accumulate(a, out.grad * mask)
        return fn

    return _result(data, (a,), backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
        return fn

    return _result(data, (a,), backward)


def tmean(a: Tensor) -> Tensor:
    return scale(tsum(a), 1.0 / a.data.size)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)

    def backward(out: Tensor):
        def fn():
            _accumulate(a, out.grad.reshape(a.data.shape))
        return fn

    return _result(data, (a,), backward)


def permute(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    data = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward(out: Tensor):
        def fn():
            _accumulate(a, out.grad.transpose(inverse))
        return fn

    return _result(data, (a,), backward)


def swap_last2(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(a, tuple(axes))


# ---------------------------------------------------------------------------
# Linear algebra and neural ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}"
        )
    data = np.matmul(a.data, b.data)

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if a.requires_grad:
                _accumulate(a, _unbroadcast(np.matmul(g, _swap_last2(b.data)), a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(np.matmul(_swap_last2(a.data), g), b.data.shape))
        return fn

    return _result(data, (a, b), backward)


def softmax(a: Tensor, axis: int) -> Tensor:
    if a.shape[axis] == 0:
        raise DimensionError(f"softmax over an empty axis {axis} of shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(out: Tensor):
        def fn():
            g = out.grad
            y = out.data
            dot = (g * y).sum(axis=axis, keepdims=True)
            _accumulate(a, y * (g - dot))
        return fn

    return _result(data, (a,), backward)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean, unit variance, then affine."""
    n = a.shape[-1]
    if n == 0:
        raise DimensionError("layer_norm over an empty last axis")
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gain.data + bias.data

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if gain.requires_grad:
                _accumulate(gain, _unbroadcast(g * xhat, gain.data.shape))
            if bias.requires_grad:
                _accumulate(bias, _unbroadcast(g, bias.data.shape))
            if a.requires_grad:
                dxhat = g * gain.data
                m1 = dxhat.mean(axis=-1, keepdims=True)
                m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
                _accumulate(a, inv * (dxhat - m1 - xhat * m2))
        return fn

    return _result(data, (a, gain, bias), backward)


def l2_normalize_rows(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each vector along the last axis to unit Euclidean norm."""
    norms = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    if np.any(norms < eps):
        raise DimensionError("cannot normalize a zero-norm row")
    data = a.data / norms

    def backward(out: Tensor):
        def fn():
            g = out.grad
            y = out.data
            dot = (g * y).sum(axis=-1, keepdims=True)
            _accumulate(a, (g - y * dot) / norms)
        return fn

    return _result(data, (a,), backward)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, padding: int = 0) -> Tensor:
    """2-D cross-correlation with per-output-channel bias.

    ``x`` is (C_in, H, W) or batched (B, C_in, H, W); ``kernel`` is
    (C_out, C_in, k, k). Output spatial size is H + 2*padding - k + 1.
    """
    squeeze = x.ndim == 3
    xb = reshape(x, (1,) + x.shape) if squeeze else x
    if xb.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(
            f"conv2d expects (B,C,H,W) input and (Co,Ci,k,k) kernel, got {x.shape} and {kernel.shape}"
        )
    batch, c_in, height, width = xb.shape
    c_out, kc_in, kh, kw = kernel.shape
    if kh != kw:
        raise DimensionError(f"conv2d kernels must be square, got {kernel.shape}")
    k = kh
    if k not in (2, 3):
        raise DimensionError(f"conv2d supports kernel sizes 2 and 3, got {k}")
    if padding not in (0, 1):
        raise DimensionError(f"conv2d supports padding 0 and 1, got {padding}")
    if kc_in != c_in:
        raise DimensionError(
            f"conv2d channel mismatch: input has {c_in}, kernel expects {kc_in}"
        )
    out_h = height + 2 * padding - k + 1
    out_w = width + 2 * padding - k + 1
    if out_h < 1 or out_w < 1:
        raise DimensionError(
            f"kernel {k}x{k} larger than padded input {height + 2 * padding}x{width + 2 * padding}"
        )
    out = _conv2d_impl(xb, kernel, bias, padding, out_h, out_w)
    if squeeze:
        out = reshape(out, out.shape[1:])
    return out


def _conv2d_impl(x: Tensor, kernel: Tensor, bias: Tensor, padding: int,
                 out_h: int, out_w: int) -> Tensor:
    batch, c_in, height, width = x.shape
    c_out, _, k, _ = kernel.shape
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    # im2col: gather k*k shifted views, one matmul does all positions.
    cols = np.empty((batch, c_in, k * k, out_h * out_w), dtype=x.data.dtype)
    for di in range(k):
        for dj in range(k):
            patch = xp[:, :, di:di + out_h, dj:dj + out_w]
            cols[:, :, di * k + dj, :] = patch.reshape(batch, c_in, -1)
    cols = cols.reshape(batch, c_in * k * k, out_h * out_w)
    wmat = kernel.data.reshape(c_out, -1)
    data = np.matmul(wmat, cols) + bias.data.reshape(1, c_out, 1)
    data = data.reshape(batch, c_out, out_h, out_w)

    def backward(out: Tensor):
        def fn():
            g = out.grad.reshape(batch, c_out, -1)
            if kernel.requires_grad:
                gw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
                _accumulate(kernel, gw.reshape(kernel.data.shape))
            if bias.requires_grad:
                _accumulate(bias, g.sum(axis=(0, 2)))
            if x.requires_grad:
                gcols = np.matmul(wmat.T, g)
                gcols = gcols.reshape(batch, c_in, k, k, out_h, out_w)
                gxp = np.zeros_like(xp)
                for di in range(k):
                    for dj in range(k):
                        gxp[:, :, di:di + out_h, dj:dj + out_w] += gcols[:, :, di, dj]
                if padding:
                    gx = gxp[:, :, padding:padding + height, padding:padding + width]
                else:
                    gx = gxp
                _accumulate(x, gx)
        return fn

    return _result(data, (x, kernel, bias), backward)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention over the sequence axis.

    Inputs are (M, W) or (B, M, W); W must be divisible by ``heads``.
    """
    squeeze = q.ndim == 2
    if squeeze:
        q = reshape(q, (1,) + q.shape)
        k = reshape(k, (1,) + k.shape)
        v = reshape(v, (1,) + v.shape)
    batch, seq, width = q.shape
    if width % heads != 0:
        raise DimensionError(f"model dim {width} not divisible by {heads} heads")
    dh = width // heads

    def split(t: Tensor) -> Tensor:
        t = reshape(t, (batch, t.shape[1], heads, dh))
        return permute(t, (0, 2, 1, 3))  # (B, h, M, dh)

    qh, kh, vh = split(q), split(k), split(v)
    scores = scale(matmul(qh, swap_last2(kh)), 1.0 / math.sqrt(dh))
    weights = softmax(scores, axis=-1)
    ctx = matmul(weights, vh)                      # (B, h, M, dh)
    ctx = permute(ctx, (0, 2, 1, 3))               # (B, M, h, dh)
    out = reshape(ctx, (batch, seq, width))
    if squeeze:
        out = reshape(out, (seq, width))
    return out


# ---------------------------------------------------------------------------
# Parameters and optimization


class Parameter:
    """A named trainable tensor with SGD momentum state."""

    def __init__(self, name: str, data, dtype=np.float32):
        self.name = name
        self.tensor = Tensor(np.array(data, dtype=dtype), requires_grad=True)
        self.momentum = np.zeros_like(self.tensor.data)

    @property
    def data(self) -> Array:
        return self.tensor.data

    @property
    def grad(self) -> Array | None:
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.zero_grad()

    def clear_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


def check_unique_names(params: Iterable[Parameter]) -> None:
    seen: set[str] = set()
    for p in params:
        if p.name in seen:
            raise OptimizerError(f"duplicate parameter name {p.name!r}")
        seen.add(p.name)


def sgd_step(params: Sequence[Parameter], lr: float,
             momentum: float = 0.0, weight_decay: float = 0.0) -> None:
    """One SGD update: buf <- m*buf + grad + wd*value; value <- value - lr*buf."""
    for p in params:
        if p.tensor.grad is None:
            raise OptimizerError(f"parameter {p.name!r} has no gradient")
        g = p.tensor.grad + weight_decay * p.tensor.data
        p.momentum *= momentum
        p.momentum += g
        p.tensor.data -= lr * p.momentum


def fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                   fan_in: int, dtype=np.float32) -> Array:
    """Fan-in scaled uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# Gradient checking


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor],
               epsilon: float = 1e-5, rng: np.random.Generator | None = None,
               max_checks_per_input: int | None = None) -> float:
    """Compare reverse-mode gradients of ``fn`` against central differences.

    Non-scalar outputs are reduced with a fixed random projection so that
    every output element influences the check (a plain sum would cancel
    softmax gradients identically). Inputs should be float64 tensors;
    only those with ``requires_grad`` are checked. Returns the maximum
    relative error ``|a - n| / max(|a|, |n|, 1e-3)``.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    proj = rng.standard_normal(out.shape)
    loss = tsum(mul(out, Tensor(proj)))
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else None for t in inputs]

    def evaluate() -> float:
        return float((fn(*inputs).data * proj).sum())

    max_err = 0.0
    for t, a_grad in zip(inputs, analytic):
        if not t.requires_grad:
            continue
        if a_grad is None:
            a_grad = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_checks_per_input is not None and flat.size > max_checks_per_input:
            indices = rng.choice(flat.size, size=max_checks_per_input, replace=False)
        for i in indices:
            original = flat[i]
            flat[i] = original + epsilon
            f_plus = evaluate()
            flat[i] = original - epsilon
            f_minus = evaluate()
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = float(a_grad.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            if err > max_err:
                max_err = err
    return max_err
