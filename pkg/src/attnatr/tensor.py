"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a contiguous row-major numpy array.  Operations on tensors
that require gradients record a TapeNode (op name, input tensors, backward
rule); calling ``backward()`` on a scalar result replays the recorded graph
in reverse topological order.

Gradient semantics: each backward pass computes the full gradient of the
loss in a per-pass buffer and then adds it into ``.grad``, so gradients
accumulate additively across passes and across fan-out within a pass.
Callers zero grads explicitly between optimizer steps.

Tensors are not mutated by operations once produced and may be shared
across threads; a tape (the node graph hanging off a result) is confined
to the thread that built it.  Storage is always at least rank 1, so full
reductions and losses have shape (1,).
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes cannot be combined."""


class AutodiffError(RuntimeError):
    """Raised on invalid backward calls (non-scalar loss, empty tape)."""


_grad_enabled = True


class no_grad:
    """Context manager disabling tape recording (e.g. bulk evaluation)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


def broadcast_shape(a: tuple, b: tuple) -> tuple:
    """Broadcast two shapes by left-padding and singleton-extent expansion."""
    rank = max(len(a), len(b))
    pa = (1,) * (rank - len(a)) + tuple(a)
    pb = (1,) * (rank - len(b)) + tuple(b)
    out = []
    for da, db in zip(pa, pb):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ShapeError(f"cannot broadcast shape {tuple(a)} with {tuple(b)}")
    return tuple(out)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class TapeNode:
    """One recorded differentiable operation.

    ``backward`` maps the output gradient to a tuple of input gradients
    (numpy arrays, or None for inputs that need none).  Saved intermediates
    live in the closure.
    """

    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op: str, inputs: tuple, backward):
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        return _binary("add", self, other,
                       lambda a, b: a + b,
                       lambda g, a, b: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        return _binary("sub", self, other,
                       lambda a, b: a - b,
                       lambda g, a, b: (g, -g))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        return _binary("mul", self, other,
                       lambda a, b: a * b,
                       lambda g, a, b: (g * b, g * a))

    __rmul__ = __mul__

    def __neg__(self):
        return apply_op("neg", -self.data, (self,), lambda g: (-g,))

    def __pow__(self, p):
        p = float(p)
        x = self.data
        return apply_op("pow", x**p, (self,), lambda g: (g * p * x ** (p - 1.0),))

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.ndim != 2 or other.ndim != 2:
            raise ShapeError(
                f"matmul expects rank-2 operands, got {self.shape} and {other.shape}")
        if self.shape[1] != other.shape[0]:
            raise ShapeError(
                f"matmul inner dimensions differ: {self.shape} x {other.shape}")
        a, b = self.data, other.data

        def back(g):
            return g @ b.T, a.T @ g

        return apply_op("matmul", a @ b, (self, other), back)

    # -- shape ---------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return apply_op("reshape", self.data.reshape(shape), (self,),
                        lambda g: (g.reshape(old),))

    def transpose(self, axes=None) -> "Tensor":
        if axes is None:
            axes = tuple(reversed(range(self.ndim)))
        else:
            axes = tuple(a % self.ndim for a in axes)
        inv = tuple(np.argsort(axes))
        return apply_op("transpose", self.data.transpose(axes), (self,),
                        lambda g: (g.transpose(inv),))

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    # -- reductions ----------------------------------------------------

    def sum(self, axes=None, keepdims: bool = False) -> "Tensor":
        axes = _check_axes(axes, self.ndim)
        shape = self.shape

        def back(g):
            return (_expand_reduced(g, shape, axes, keepdims),)

        return apply_op("sum", self.data.sum(axis=axes, keepdims=keepdims),
                        (self,), back)

    def mean(self, axes=None, keepdims: bool = False) -> "Tensor":
        axes = _check_axes(axes, self.ndim)
        shape = self.shape
        count = _reduced_count(shape, axes)

        def back(g):
            return (_expand_reduced(g, shape, axes, keepdims) / count,)

        return apply_op("mean", self.data.mean(axis=axes, keepdims=keepdims),
                        (self,), back)

    def max(self, axes=None, keepdims: bool = False) -> "Tensor":
        # ties route the whole gradient to the first maximal element in
        # row-major scan order, keeping backward deterministic
        axes = _check_axes(axes, self.ndim)
        shape = self.shape
        if axes is None:
            axes_t = tuple(range(self.ndim))
        else:
            axes_t = axes if isinstance(axes, tuple) else (axes,)
        kept = tuple(i for i in range(self.ndim) if i not in axes_t)
        perm = kept + axes_t
        red = int(np.prod([shape[i] for i in axes_t])) if axes_t else 1
        moved = self.data.transpose(perm).reshape(
            tuple(shape[i] for i in kept) + (red,))
        # first maximal element per reduced slice, in row-major scan order
        arg = np.argmax(moved, axis=-1)
        out = np.take_along_axis(moved, arg[..., None], axis=-1)[..., 0]

        def back(g):
            gm = np.zeros_like(moved)
            np.put_along_axis(gm, arg[..., None], g.reshape(arg.shape + (1,)), axis=-1)
            gx = gm.reshape(tuple(shape[i] for i in perm)).transpose(np.argsort(perm))
            return (gx,)

        if keepdims:
            out_shape = tuple(1 if i in axes_t else shape[i] for i in range(self.ndim))
            out = out.reshape(out_shape)

            def back_keep(g):
                return back(g.reshape(arg.shape))

            return apply_op("max", out, (self,), back_keep)
        return apply_op("max", out, (self,), back)

    # -- autodiff --------------------------------------------------------

    def backward(self):
        """Populate ``.grad`` for every requires-grad tensor reachable from here.

        The loss must be a scalar produced by at least one recorded op.
        Each call adds one full gradient pass into ``.grad``: calling twice
        without zeroing doubles every gradient exactly.
        """
        if self.size != 1:
            raise AutodiffError(
                f"backward requires a scalar loss, got shape {self.shape}")
        if self.node is None:
            raise AutodiffError("backward on a tensor with no recorded operations")

        topo: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                topo.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t.node is not None:
                for inp in t.node.inputs:
                    if inp.requires_grad and id(inp) not in seen:
                        stack.append((inp, False))

        passes: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for t in reversed(topo):
            g = passes.pop(id(t), None)
            if g is None:
                continue
            t.grad = g if t.grad is None else t.grad + g
            if t.node is None:
                continue
            for inp, gin in zip(t.node.inputs, t.node.backward(g)):
                if gin is None or not inp.requires_grad:
                    continue
                key = id(inp)
                passes[key] = gin if key not in passes else passes[key] + gin


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def apply_op(op: str, data: np.ndarray, inputs: tuple, backward) -> Tensor:
    """Wrap an op result, recording a TapeNode when gradients are live.

    ``backward(g)`` must return per-input gradient arrays aligned with
    ``inputs`` (None allowed for inputs that need no gradient).
    """
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = TapeNode(op, inputs, backward)
    return out


def _binary(op, a, b, fwd, bwd) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)  # raises ShapeError naming both shapes
    ad, bd = a.data, b.data

    def back(g):
        ga, gb = bwd(g, ad, bd)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return apply_op(op, fwd(ad, bd), (a, b), back)


def _check_axes(axes, rank):
    """Normalize a reduction axis spec; None means all axes."""
    if axes is None:
        return None
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    axes = tuple(int(a) for a in axes)
    norm = []
    for a in axes:
        if not -rank <= a < rank:
            raise ShapeError(f"axis {a} invalid for rank-{rank} tensor")
        norm.append(a % rank)
    if len(set(norm)) != len(norm):
        raise ShapeError(f"duplicate reduction axes {axes}")
    return tuple(sorted(norm))


def _reduced_count(shape, axes) -> float:
    if axes is None:
        return float(int(np.prod(shape))) if shape else 1.0
    return float(int(np.prod([shape[a] for a in axes]))) if axes else 1.0


def _expand_reduced(g, shape, axes, keepdims) -> np.ndarray:
    """Broadcast a reduced gradient back over the reduced extents."""
    if axes is None:
        return np.broadcast_to(np.asarray(g), shape).copy()
    if not keepdims:
        for a in axes:
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape).copy()


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return apply_op("relu", np.maximum(xd, 0.0), (x,),
                    lambda g: (g * (xd > 0.0),))


# Smallest/largest doubles inside the open interval (0, 1): finite inputs
# saturate the exponential, so clamp keeps the gate contract strict.
_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)
    np.clip(out, _SIG_LO, _SIG_HI, out=out)
    return apply_op("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate along an axis; backward splits the gradient."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)

    def back(g):
        grads = []
        start = 0
        for sz in sizes:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + sz)
            grads.append(g[tuple(sl)])
            start += sz
        return tuple(grads)

    return apply_op("concat", data, tuple(tensors), back)
