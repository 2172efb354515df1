"""Dense-tensor reverse-mode differentiation on float64 numpy arrays.

Every operation's backward rule is itself written in terms of tensor
operations, so a gradient produced by :func:`grad` is an ordinary graph
node and can be differentiated once more.  That is exactly the amount of
higher-order structure gradient matching needs: parameter gradients stay
differentiable with respect to the images that produced them, while the
parameters themselves remain leaves.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand shapes incompatible with an operation's shape rule."""


class DomainError(ValueError):
    """Operand values outside an operation's domain (e.g. zero-norm cosine)."""


class GradError(RuntimeError):
    """Backward-pass misuse: non-scalar loss, missing grad, and friends."""


class Tensor:
    """Dense n-dimensional float64 array with an optional gradient buffer.

    Non-leaf tensors remember their parents and a backward rule; leaves
    (``_backward is None``) are where :func:`backward` deposits gradients.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise DomainError("tensor %r initialized with non-finite values" % (name or "<unnamed>"))
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.op: Optional[str] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() on tensor of shape %s" % (self.shape,))
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = self.name or self.op or "leaf"
        return "Tensor(%s, shape=%s, requires_grad=%s)" % (tag, self.shape, self.requires_grad)


def _result(data: np.ndarray, op: str, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap an op result, recording the backward rule only when needed."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out.op = op
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.op = op
        out._parents = ()
        out._backward = None
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


# ---------------------------------------------------------------------------
# primitive elementwise / structural ops
# ---------------------------------------------------------------------------

def _broadcastable(a: tuple, b: tuple) -> bool:
    for x, y in zip(a[::-1], b[::-1]):
        if x != y and x != 1 and y != 1:
            return False
    return True


def _unbroadcast(g: Tensor, shape: tuple) -> Tensor:
    """Reduce a broadcast gradient back onto the original operand shape."""
    if g.shape == shape:
        return g
    extra = len(g.shape) - len(shape)
    axes = tuple(range(extra)) + tuple(
        i + extra for i, n in enumerate(shape) if n == 1 and g.shape[i + extra] != 1
    )
    out = sum_axes(g, axes, keepdims=False) if axes else g
    return reshape(out, shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError("add: shapes %s and %s do not broadcast" % (a.shape, b.shape))
    return _result(
        a.data + b.data, "add", (a, b),
        lambda g, needs: (_unbroadcast(g, a.shape) if needs[0] else None,
                          _unbroadcast(g, b.shape) if needs[1] else None),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError("sub: shapes %s and %s do not broadcast" % (a.shape, b.shape))
    return _result(
        a.data - b.data, "sub", (a, b),
        lambda g, needs: (_unbroadcast(g, a.shape) if needs[0] else None,
                          _unbroadcast(scalar_mul(g, -1.0), b.shape) if needs[1] else None),
    )


def scalar_mul(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _result(a.data * c, "scalar_mul", (a,), lambda g, needs: (scalar_mul(g, c),))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError("mul: shapes %s and %s do not broadcast" % (a.shape, b.shape))
    return _result(
        a.data * b.data, "mul", (a, b),
        lambda g, needs: (_unbroadcast(mul(g, b), a.shape) if needs[0] else None,
                          _unbroadcast(mul(g, a), b.shape) if needs[1] else None),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError("div: shapes %s and %s do not broadcast" % (a.shape, b.shape))
    return _result(
        a.data / b.data, "div", (a, b),
        lambda g, needs: (
            _unbroadcast(div(g, b), a.shape) if needs[0] else None,
            _unbroadcast(scalar_mul(div(mul(g, a), mul(b, b)), -1.0), b.shape)
            if needs[1] else None,
        ),
    )


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = _result(np.exp(a.data), "exp", (a,), None)
    out._backward = (lambda g, needs: (mul(g, out),)) if out.requires_grad else None
    return out


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log: non-positive input")
    return _result(np.log(a.data), "log", (a,), lambda g, needs: (div(g, a),))


def sqrt(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt: negative input")
    out = _result(np.sqrt(a.data), "sqrt", (a,), None)
    out._backward = (lambda g, needs: (div(g, scalar_mul(out, 2.0)),)) if out.requires_grad else None
    return out


def absolute(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    # sign(0) == 0, matching the relu convention
    return _result(np.abs(a.data), "abs", (a,),
                   lambda g, needs: (mul(g, constant(np.sign(a.data))),))


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    # mask built lazily: the zero subgradient at 0 comes from strict >
    return _result(np.maximum(a.data, 0.0), "relu", (a,),
                   lambda g, needs: (mul(g, constant((a.data > 0).astype(np.float64))),))


def sum_axes(a: Tensor, axes, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(range(a.data.ndim))
    elif isinstance(axes, int):
        axes = (axes,)
    else:
        axes = tuple(axes)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g, needs):
        gk = g
        if not keepdims:
            kshape = list(a.shape)
            for ax in axes:
                kshape[ax] = 1
            gk = reshape(g, tuple(kshape))
        return (broadcast_to(gk, a.shape),)

    return _result(data, "sum_axes", (a,), backward)


def broadcast_to(a: Tensor, shape: tuple) -> Tensor:
    a = _as_tensor(a)
    if a.shape == tuple(shape):
        return a
    data = np.broadcast_to(a.data, shape).copy()
    return _result(data, "broadcast_to", (a,), lambda g, needs: (_unbroadcast(g, a.shape),))


def mean_axis(a: Tensor, axis: int) -> Tensor:
    a = _as_tensor(a)
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError("mean_axis: axis %d out of range for shape %s" % (axis, a.shape))
    n = a.shape[axis]
    return scalar_mul(sum_axes(a, axis, keepdims=False), 1.0 / n)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    if np.prod(shape, dtype=np.int64) != a.size and -1 not in shape:
        raise ShapeError("reshape: cannot view %s as %s" % (a.shape, shape))
    return _result(a.data.reshape(shape), "reshape", (a,), lambda g, needs: (reshape(g, a.shape),))


def flatten(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim < 1:
        raise ShapeError("flatten: scalar input")
    return reshape(a, (a.shape[0], -1))


def transpose(a: Tensor, axes: Optional[tuple] = None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(range(a.data.ndim))[::-1]
    inv = tuple(int(i) for i in np.argsort(axes))
    # view, not copy: tensor data is never mutated in place, so views are safe
    return _result(a.data.transpose(axes), "transpose", (a,), lambda g, needs: (transpose(g, inv),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul: shapes %s and %s" % (a.shape, b.shape))
    return _result(
        a.data @ b.data, "matmul", (a, b),
        lambda g, needs: (matmul(g, transpose(b)) if needs[0] else None,
                          matmul(transpose(a), g) if needs[1] else None),
    )


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input list")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g, needs):
        return tuple(
            slice_axis(g, axis, int(offsets[i]), int(offsets[i + 1])) if needs[i] else None
            for i in range(len(tensors))
        )

    return _result(data, "concat", tensors, backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    if not (0 <= start <= stop <= a.shape[axis]):
        raise ShapeError("slice_axis: [%d, %d) out of range on axis %d of %s"
                         % (start, stop, axis, a.shape))
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g, needs):
        return (pad_axis(g, axis, start, a.shape[axis]),)

    return _result(a.data[index].copy(), "slice_axis", (a,), backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    return slice_axis(a, 0, start, stop)


def pad_axis(a: Tensor, axis: int, start: int, total: int) -> Tensor:
    """Embed ``a`` into zeros of extent ``total`` along ``axis`` (adjoint of slice)."""
    a = _as_tensor(a)
    shape = list(a.shape)
    stop = start + shape[axis]
    shape[axis] = total
    data = np.zeros(shape, dtype=np.float64)
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    data[tuple(index)] = a.data
    return _result(data, "pad_axis", (a,), lambda g, needs: (slice_axis(g, axis, start, stop),))


# ---------------------------------------------------------------------------
# image primitives: convolution trio and 2x2 average pooling
# ---------------------------------------------------------------------------

def _padded_windows(x: np.ndarray, k: int) -> np.ndarray:
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    return sliding_window_view(xp, (k, k), axis=(2, 3))  # view (B, C, H, W, k, k)


def conv_core(x: Tensor, weight: Tensor) -> Tensor:
    """Bias-free stride-1 same-padding correlation of [B,C,H,W] with [OC,C,k,k].

    The gradient trio is closed under itself: the input gradient is a
    correlation with the rotated kernel, the weight gradient is
    :func:`conv_weight_grad`, and both are again expressible this way.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.data.ndim != 4 or weight.data.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv_core: input %s vs weight %s" % (x.shape, weight.shape))
    k = weight.shape[2]
    if k != weight.shape[3] or k % 2 == 0:
        raise ShapeError("conv_core: odd square kernels only, got %s" % (weight.shape,))
    win = _padded_windows(x.data, k)
    out = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    return _result(
        np.ascontiguousarray(out), "conv_core", (x, weight),
        lambda g, needs: (conv_core(g, rotate_kernel(weight)) if needs[0] else None,
                          conv_weight_grad(x, g, k) if needs[1] else None),
    )


def rotate_kernel(weight: Tensor) -> Tensor:
    """Swap in/out channels and flip both spatial axes (an involution)."""
    weight = _as_tensor(weight)
    if weight.data.ndim != 4:
        raise ShapeError("rotate_kernel: expected [OC,C,k,k], got %s" % (weight.shape,))
    data = np.ascontiguousarray(weight.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    return _result(data, "rotate_kernel", (weight,), lambda g, needs: (rotate_kernel(g),))


def conv_weight_grad(x: Tensor, g: Tensor, k: int) -> Tensor:
    """Adjoint of conv_core with respect to a [*,C,k,k] kernel.

    Bilinear in (x, g), so its own gradients are a conv_core and a rotated
    conv_core; the trio is closed and differentiates to any order.
    """
    x, g = _as_tensor(x), _as_tensor(g)
    if x.data.ndim != 4 or g.data.ndim != 4 or x.shape[0] != g.shape[0]:
        raise ShapeError("conv_weight_grad: input %s vs grad %s" % (x.shape, g.shape))
    if x.shape[2:] != g.shape[2:]:
        raise ShapeError("conv_weight_grad: spatial dims %s vs %s" % (x.shape, g.shape))
    win = _padded_windows(x.data, k)  # (B, C, H, W, k, k)
    out = np.tensordot(win, g.data, axes=([0, 2, 3], [0, 2, 3]))  # (C, k, k, OC)
    return _result(
        np.ascontiguousarray(out.transpose(3, 0, 1, 2)), "conv_weight_grad", (x, g),
        lambda gg, needs: (conv_core(g, rotate_kernel(gg)) if needs[0] else None,
                          conv_core(x, gg) if needs[1] else None),
    )


def avg_pool2(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError("avg_pool2: expected [B,C,2m,2n], got %s" % (x.shape,))
    b, c, h, w = x.shape
    data = x.data.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return _result(data, "avg_pool2", (x,), lambda g, needs: (scalar_mul(upsample2(g), 0.25),))


def upsample2(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError("upsample2: expected [B,C,H,W], got %s" % (x.shape,))
    data = x.data.repeat(2, axis=2).repeat(2, axis=3)
    return _result(data, "upsample2", (x,), lambda g, needs: (scalar_mul(avg_pool2(g), 4.0),))


# ---------------------------------------------------------------------------
# composite ops: conv2d, losses, distances
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, pool: bool = False) -> Tensor:
    """Stride-1 same-padding convolution with odd square kernels.

    With ``pool=True`` a 2x2 average pooling follows, matching the
    conv+pool blocks used by the feature extractors.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.data.ndim != 4 or weight.data.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv2d: weight %s incompatible with input %s"
                         % (weight.shape, x.shape))
    out = conv_core(x, weight)
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError("conv2d: bias %s for %d output channels"
                             % (bias.shape, weight.shape[0]))
        out = add(out, reshape(bias, (weight.shape[0], 1, 1)))
    if pool:
        out = avg_pool2(out)
    return out


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared difference over all coordinates."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("mse: shapes %s and %s differ" % (a.shape, b.shape))
    d = sub(a, b)
    return scalar_mul(sum_axes(mul(d, d), None), 1.0 / max(a.size, 1))


def mae(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference over all coordinates."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("mae: shapes %s and %s differ" % (a.shape, b.shape))
    return scalar_mul(sum_axes(absolute(sub(a, b)), None), 1.0 / max(a.size, 1))


def dot(a: Tensor, b: Tensor) -> Tensor:
    return sum_axes(mul(a, b), None)


def cosine_distance(a: Tensor, b: Tensor) -> Tensor:
    """1 - a.b / (|a||b|): zero iff the vectors are parallel, same direction."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape or a.data.ndim != 1:
        raise ShapeError("cosine_distance: expected equal-length vectors, got %s and %s"
                         % (a.shape, b.shape))
    na, nb = np.linalg.norm(a.data), np.linalg.norm(b.data)
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine_distance: zero-norm input")
    cos = div(dot(a, b), mul(sqrt(dot(a, a)), sqrt(dot(b, b))))
    return sub(constant(1.0), cos)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of row-wise softmax against integer labels."""
    logits = _as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError("softmax_cross_entropy: expected [B,K] logits, got %s" % (logits.shape,))
    labels = np.asarray(labels, dtype=np.int64)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ShapeError("softmax_cross_entropy: %d logits rows vs labels %s" % (b, labels.shape))
    if labels.min() < 0 or labels.max() >= k:
        raise DomainError("softmax_cross_entropy: label out of range [0, %d)" % k)
    shift = constant(logits.data.max(axis=1, keepdims=True))
    z = sub(logits, shift)
    lse = log(sum_axes(exp(z), 1, keepdims=False))
    onehot = np.zeros((b, k))
    onehot[np.arange(b), labels] = 1.0
    picked = sum_axes(mul(z, constant(onehot)), 1, keepdims=False)
    return scalar_mul(sum_axes(sub(lse, picked), None), 1.0 / b)


_FORWARD_OPS = {
    "add": add,
    "sub": sub,
    "scalar_mul": scalar_mul,
    "matmul": matmul,
    "conv2d": conv2d,
    "relu": relu,
    "mean_axis": mean_axis,
    "flatten": flatten,
    "concat": concat,
    "mse": mse,
    "mae": mae,
    "cosine_distance": cosine_distance,
    "softmax_cross_entropy": softmax_cross_entropy,
}


def forward_op(kind: str, inputs: Sequence[Tensor], **kwargs) -> Tensor:
    """Dispatch one of the supported op kinds on a list of input tensors."""
    if kind not in _FORWARD_OPS:
        raise ValueError("unknown op kind %r" % kind)
    fn = _FORWARD_OPS[kind]
    if kind == "concat":
        return fn(list(inputs), **kwargs)
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# tape and backward
# ---------------------------------------------------------------------------

class Tape:
    """Topological record of the operations reaching a root tensor.

    ``nodes`` is ordered parents-before-children; backward walks it once
    in reverse, so every node is visited exactly once.
    """

    def __init__(self, nodes: list):
        self.nodes = nodes

    @staticmethod
    def trace(root: Tensor) -> "Tape":
        order: list = []
        seen = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return Tape(order)


def _backprop(root: Tensor, seed: Tensor) -> tuple:
    tape = Tape.trace(root)
    grads: dict = {id(root): seed}
    for node in reversed(tape.nodes):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        needs = tuple(p.requires_grad for p in node._parents)
        parent_grads = node._backward(g, needs)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else add(prev, pg)
    return tape, grads


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires-grad leaf in the loss graph.

    Gradients accumulate across calls; leaves the loss does not depend on
    receive zeros.  Repeated backward therefore realizes the sum rule.
    """
    if loss.shape != ():
        raise GradError("backward: loss must be scalar, got shape %s" % (loss.shape,))
    tape, grads = _backprop(loss, constant(1.0))
    for node in tape.nodes:
        if node._backward is not None or not node.requires_grad:
            continue
        g = grads.get(id(node))
        delta = np.zeros_like(node.data) if g is None else g.data
        node.grad = delta.copy() if node.grad is None else node.grad + delta


def grad(loss: Tensor, wrt: Sequence[Tensor]) -> list:
    """Functional gradients of a scalar loss as graph tensors.

    The returned tensors stay differentiable with respect to any
    requires-grad inputs of the loss other than ``wrt`` themselves, which
    is what lets a matching loss over parameter gradients reach pixels.
    """
    if loss.shape != ():
        raise GradError("grad: loss must be scalar, got shape %s" % (loss.shape,))
    _, grads = _backprop(loss, constant(1.0))
    out = []
    for t in wrt:
        g = grads.get(id(t))
        out.append(constant(np.zeros_like(t.data)) if g is None else g)
    return out


# ---------------------------------------------------------------------------
# optimizer step and the finite-difference oracle
# ---------------------------------------------------------------------------

def sgd_update(params: Iterable[Tensor], lr: float) -> None:
    """In-place ``param -= lr * grad`` followed by clearing the grads."""
    if lr < 0:
        raise ValueError("sgd_update: negative learning rate %g" % lr)
    params = list(params)
    for p in params:
        if p.grad is None:
            raise GradError("sgd_update: parameter %r has no gradient" % (p.name or "<unnamed>"))
    for p in params:
        p.data = p.data - lr * p.grad
        if not np.all(np.isfinite(p.data)):
            raise DomainError("sgd_update: parameter %r became non-finite" % (p.name or "<unnamed>"))
        p.grad = None


def finite_diff_check(fn: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative gap between analytic and central-difference gradients.

    Relative error per coordinate is |analytic - fd| / max(1, |analytic|);
    the maximum over coordinates is returned.
    """
    if h <= 0:
        raise ValueError("finite_diff_check: h must be positive")
    probe = Tensor(x.data.copy(), requires_grad=True, name=x.name)
    out = fn(probe)
    if out.shape != ():
        raise ShapeError("finite_diff_check: fn returned shape %s, expected scalar" % (out.shape,))
    analytic = grad(out, [probe])[0].data.ravel()

    flat = x.data.ravel()
    fd = np.empty_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        hi = fn(constant(bumped.reshape(x.shape))).item()
        bumped[i] = flat[i] - h
        lo = fn(constant(bumped.reshape(x.shape))).item()
        fd[i] = (hi - lo) / (2.0 * h)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - fd) / denom)) if flat.size else 0.0
