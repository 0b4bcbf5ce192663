"""Shared test oracles: finite differences and naive loop references.

These stay independent of the library code paths they check: the convolution
and pooling oracles are direct nested loops, and the gradient oracle is a
central finite difference over the raw parameter arrays.
"""

import numpy as np

from attnatr.tensor import no_grad


def rel_error(analytic, numeric, floor=1e-8) -> float:
    """Max-norm relative error with a scale floor.

    The floor keeps near-zero gradient tensors comparable: central differences
    on an O(1) loss resolve nothing below ~1e-11 per probe, so errors are
    measured against max(grad scale, floor) rather than the raw tiny values.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0),
                np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numeric_grad(value_fn, arr, indices=None, step=1e-5):
    """Central differences of ``value_fn()`` w.r.t. entries of ``arr`` in place.

    Returns (indices, gradient values at those indices); indices defaults to
    every entry.
    """
    flat = arr.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    indices = list(indices)
    grads = np.zeros(len(indices))
    for pos, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + step
        hi = value_fn()
        flat[i] = orig - step
        lo = value_fn()
        flat[i] = orig
        grads[pos] = (hi - lo) / (2.0 * step)
    return indices, grads


def check_gradients(make_loss, tensors, tol, step=1e-5, sample=None,
                    sample_seed=0, reset=None, floor=1e-8) -> float:
    """Compare tape gradients of ``make_loss()`` against finite differences.

    ``make_loss`` rebuilds the scalar loss from current parameter data;
    ``reset``, when given, restores any state the forward pass mutates (e.g.
    batchnorm running stats) and runs before every evaluation.  ``sample``
    limits the probed entries per tensor.  Returns the worst relative error
    and asserts it is below ``tol``.
    """
    if reset is not None:
        reset()
    for t in tensors:
        t.grad = None
    make_loss().backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]

    def value():
        if reset is not None:
            reset()
        with no_grad():
            return make_loss().item()

    picker = np.random.default_rng(sample_seed)
    worst = 0.0
    for t, full in zip(tensors, analytic):
        size = t.data.size
        if sample is not None and sample < size:
            indices = sorted(picker.choice(size, size=sample, replace=False).tolist())
        else:
            indices = None
        idx, numeric = numeric_grad(value, t.data, indices=indices, step=step)
        err = rel_error(full.reshape(-1)[list(idx)], numeric, floor=floor)
        worst = max(worst, err)
    assert worst < tol, f"gradient check failed: rel error {worst:.3e} >= {tol:g}"
    return worst


def conv2d_naive(x, w, b=None, stride=(1, 1), padding=(0, 0)):
    """Direct six-loop cross-correlation reference."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((n, cout, oh, ow))
    for ni in range(n):
        for co in range(cout):
            for oi in range(oh):
                for oj in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[ni, ci, oi * sh + i, oj * sw + j] \
                                    * w[co, ci, i, j]
                    if b is not None:
                        acc += b[co]
                    out[ni, co, oi, oj] = acc
    return out


def pool2d_naive(kind, x, window, stride, padding=(0, 0)):
    """Direct windowed pooling reference (zero/-inf padding to match)."""
    n, c, h, w = x.shape
    kh, kw = window
    sh, sw = stride
    ph, pw = padding
    fill = -np.inf if kind == "max" else 0.0
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=fill)
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    out = np.zeros((n, c, oh, ow))
    for ni in range(n):
        for ci in range(c):
            for oi in range(oh):
                for oj in range(ow):
                    win = xp[ni, ci, oi * sh:oi * sh + kh, oj * sw:oj * sw + kw]
                    out[ni, ci, oi, oj] = win.max() if kind == "max" else win.mean()
    return out
