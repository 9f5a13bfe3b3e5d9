"""Reverse-mode automatic differentiation over a small, fixed primitive set.

The model graph never changes shape between steps, so a recorded tape over
a closed set of array primitives is all we need: each operation produces a
node remembering its parents and a vector-Jacobian closure, and ``backward``
replays the nodes in exact reverse execution order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

# Guard added inside every logarithm so a zero probability cannot produce -inf.
EPS_LOG = 1e-10

# Published self-normalizing constants for the SeLU activation.
SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717

_SEQ = itertools.count()

# When enabled, every primitive checks its forward output for non-finite
# values and raises NumericalError naming the offending node.
_DEBUG_NAN = False


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes."""


class NumericalError(FloatingPointError):
    """A forward computation produced NaN or inf in debug mode."""


class GraphError(RuntimeError):
    """The recorded graph cannot support the requested operation."""


def set_debug(flag: bool) -> None:
    """Toggle per-node NaN/inf checking on every forward computation."""
    global _DEBUG_NAN
    _DEBUG_NAN = bool(flag)


class Tensor:
    """An n-d array plus the bookkeeping needed for reverse-mode gradients.

    Leaves are built directly (optionally with ``requires_grad=True``);
    everything else is produced by the primitives below. Gradients are only
    materialized on leaves: ``backward`` accumulates into ``.grad``, and
    repeated calls keep accumulating until ``zero_grad`` resets them.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp", "_seq")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64 if not isinstance(data, np.ndarray) else None)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._vjp = None
        self._seq = next(_SEQ)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data.item())

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # Operator sugar; everything routes through the primitive set.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def make_node(data, op_name, parents, vjp) -> Tensor:
    """Record one primitive application as a graph node.

    ``vjp`` maps the output adjoint to a tuple of per-parent adjoint
    contributions (aligned with ``parents``; entries for constant parents
    are ignored). Nodes whose parents are all constant are detached.
    """
    if _DEBUG_NAN and not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite values in forward output of '{op_name}'")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    out.name = op_name
    return out


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeMismatchError(f"add: shapes {a.data.shape} and {b.data.shape} do not broadcast")
    return make_node(
        out,
        "add",
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeMismatchError(f"mul: shapes {a.data.shape} and {b.data.shape} do not broadcast")
    return make_node(
        out,
        "mul",
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return make_node(a.data * c, "scale", (a,), lambda g: (g * c,))


def matmul(a, b, transpose_b: bool = False) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatchError(f"matmul expects 2-d operands, got {a.data.shape} and {b.data.shape}")
    bmat = b.data.T if transpose_b else b.data
    if a.data.shape[1] != bmat.shape[0]:
        raise ShapeMismatchError(f"matmul: inner dims of {a.data.shape} and {bmat.shape} differ")
    out = a.data @ bmat

    if transpose_b:
        vjp = lambda g: (g @ b.data, g.T @ a.data)
    else:
        vjp = lambda g: (g @ b.data.T, a.data.T @ g)
    return make_node(out, "matmul", (a, b), vjp)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, "exp", (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    """Natural log with the EPS_LOG guard: log(x + 1e-10)."""
    a = _as_tensor(a)
    shifted = a.data + EPS_LOG
    return make_node(np.log(shifted), "log", (a,), lambda g: (g / shifted,))


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return ((g - dot) * out,)

    return make_node(out, "softmax", (a,), vjp)


def selu(a) -> Tensor:
    a = _as_tensor(a)
    pos = a.data > 0
    expx = np.exp(np.minimum(a.data, 0.0))
    out = SELU_LAMBDA * np.where(pos, a.data, SELU_ALPHA * (expx - 1.0))
    deriv = SELU_LAMBDA * np.where(pos, 1.0, SELU_ALPHA * expx)
    return make_node(out, "selu", (a,), lambda g: (g * deriv,))


def dropout(a, rate: float, train: bool, mask=None, rng=None) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-rate) so eval is identity.

    In train mode the keep mask is either supplied explicitly (so a loss can
    be re-evaluated with identical noise) or drawn from ``rng``.
    """
    a = _as_tensor(a)
    if not train or rate <= 0.0:
        return a
    if not 0.0 < rate < 1.0:
        raise ValueError(f"dropout rate must be in (0, 1), got {rate}")
    if mask is None:
        if rng is None:
            raise ValueError("train-mode dropout needs a mask or an rng")
        mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    mask = np.asarray(mask, dtype=a.data.dtype)
    return make_node(a.data * mask, "dropout", (a,), lambda g: (g * mask,))


@dataclass
class BatchNormState:
    """Per-feature affine parameters plus running statistics.

    ``gamma`` and ``beta`` are trainable leaves; the running mean/var are
    plain arrays updated as a side effect of train-mode forwards and frozen
    in eval mode.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    num_batches: int = 0

    @classmethod
    def create(cls, num_features: int, dtype=np.float64, momentum: float = 0.1) -> "BatchNormState":
        return cls(
            gamma=Tensor(np.ones(num_features, dtype=dtype), requires_grad=True, name="bn_gamma"),
            beta=Tensor(np.zeros(num_features, dtype=dtype), requires_grad=True, name="bn_beta"),
            running_mean=np.zeros(num_features, dtype=dtype),
            running_var=np.ones(num_features, dtype=dtype),
            momentum=momentum,
        )


def batch_norm(x, state: BatchNormState, train: bool) -> Tensor:
    """Per-feature batch normalization over axis 0 with learnable affine."""
    x = _as_tensor(x)
    if x.data.ndim != 2 or x.data.shape[1] != state.gamma.data.shape[0]:
        raise ShapeMismatchError(
            f"batch_norm: input {x.data.shape} does not match {state.gamma.data.shape[0]} features"
        )
    gamma, beta = state.gamma, state.beta
    if train:
        n = x.data.shape[0]
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.data - mu) * inv
        # Running stats track the unbiased variance, as is conventional.
        m = state.momentum
        unbiased = var * (n / (n - 1)) if n > 1 else var
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * unbiased
        state.num_batches += 1

        def vjp(g):
            gx = g * gamma.data
            dx = inv * (gx - gx.mean(axis=0) - xhat * (gx * xhat).mean(axis=0))
            return (dx, (g * xhat).sum(axis=0), g.sum(axis=0))

    else:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean) * inv

        def vjp(g):
            return (g * gamma.data * inv, (g * xhat).sum(axis=0), g.sum(axis=0))

    out = gamma.data * xhat + beta.data
    return make_node(out, "batch_norm", (x, gamma, beta), vjp)


def reparameterize(mu, log_sigma, noise) -> Tensor:
    """Gaussian reparameterization mu + exp(log_sigma) * noise with fixed noise."""
    mu, log_sigma = _as_tensor(mu), _as_tensor(log_sigma)
    noise = np.asarray(noise)
    if noise.shape != mu.data.shape or mu.data.shape != log_sigma.data.shape:
        raise ShapeMismatchError(
            f"reparameterize: shapes {mu.data.shape}, {log_sigma.data.shape}, {noise.shape} differ"
        )
    sig = np.exp(log_sigma.data)
    out = mu.data + sig * noise
    return make_node(out, "reparameterize", (mu, log_sigma), lambda g: (g, g * sig * noise))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - numpy-style name
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape),)

    return make_node(out, "sum", (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.shape[axis]

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape) / count,)

    return make_node(out, "mean", (a,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node(out, "concat", tuple(tensors), vjp)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor, seed_grad=None) -> None:
    """Populate ``.grad`` on every requires_grad leaf reachable from ``loss``.

    Nodes are visited in exact reverse execution order. Leaf gradients
    accumulate across calls; use ``zero_grads`` between steps.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor with requires_grad=True")

    # Gather reachable graph nodes, then replay them newest-first.
    seen = {id(loss)}
    stack, nodes = [loss], []
    while stack:
        node = stack.pop()
        nodes.append(node)
        for p in node._parents:
            if p._vjp is not None and id(p) not in seen:
                seen.add(id(p))
                stack.append(p)

    adjoints = {id(loss): np.ones_like(loss.data) if seed_grad is None else np.asarray(seed_grad)}
    for node in sorted(nodes, key=lambda n: n._seq, reverse=True):
        g = adjoints.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:  # the loss itself is a leaf
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        contribs = node._vjp(g)
        for parent, pg in zip(node._parents, contribs):
            if not parent.requires_grad:
                continue
            if parent._vjp is None:  # leaf
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += pg
            else:
                key = id(parent)
                if key in adjoints:
                    adjoints[key] = adjoints[key] + pg
                else:
                    adjoints[key] = pg


def zero_grads(params) -> None:
    """Reset accumulated gradients on an iterable of leaf tensors."""
    for p in params:
        p.zero_grad()
