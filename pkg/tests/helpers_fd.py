"""Central finite-difference oracle shared by the gradient tests.

Kept independent of the autodiff engine: it only calls an opaque
``loss_fn(flat_params) -> float`` and never inspects the tape.
"""

import numpy as np


def finite_difference_grad(loss_fn, x0, h=1e-5):
    """Central differences of a scalar function of a flat parameter vector."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (loss_fn(xp) - loss_fn(xm)) / (2.0 * h)
    return grad


def max_rel_error(analytic, numeric, floor=1e-3):
    """Worst-case relative error with a small absolute floor.

    The floor keeps near-zero gradients (for example weights behind a fully
    dropped-out unit) from dividing central-difference roundoff, which is
    about 1e-11 * |loss| at h=1e-5 in double precision, by zero.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    b = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def flatten_tensors(tensors):
    """Concatenate tensor data into one flat vector (for FD probing)."""
    return np.concatenate([t.data.ravel() for t in tensors])


def write_back(tensors, flat):
    """Scatter a flat vector back into tensor storage, in order."""
    offset = 0
    for t in tensors:
        n = t.data.size
        t.data[...] = flat[offset : offset + n].reshape(t.data.shape)
        offset += n
    assert offset == flat.size


def gather_grads(tensors):
    out = []
    for t in tensors:
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        out.append(g.ravel())
    return np.concatenate(out)
