"""Minimal dense tensor engine with reverse-mode automatic differentiation.

Tape-style: every operation records a node holding its inputs and cached
output, and :func:`backward` walks the graph once in reverse topological
order.  The graph is intended to be rebuilt per training step; leaf tensors
(parameters) persist across steps.

All values are float64.  The op vocabulary is deliberately small and every
kind has an exhaustively gradient-checked backward rule:

    add, mul, matmul, concat, scale, square, sqrt, exp, log, tanh,
    softplus, reciprocal

Element-wise transcendentals dispatch through :mod:`profnet.kernels`, which
selects a numba or pure-numpy implementation.
"""

from __future__ import annotations

import numpy as np

from . import kernels as K
from .errors import ContractError, NumericalError, ShapeError

OP_KINDS = (
    "add", "mul", "matmul", "concat", "scale", "square", "sqrt",
    "exp", "log", "tanh", "softplus", "reciprocal",
)


class Tensor:
    """A dense float64 array plus its place in the computation graph.

    Leaf tensors are created directly; op tensors are created by the
    functions below.  ``requires_grad`` marks trainable leaves; gradients
    accumulate into ``grad`` during :func:`backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "name",
                 "_kind", "_parents", "_args", "_needs_grad")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _kind: str | None = None, _parents: tuple = (), _args: tuple = ()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._kind = _kind
        self._parents = _parents
        self._args = _args
        self._needs_grad = requires_grad or any(p._needs_grad for p in _parents)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = self.name or self._kind or "leaf"
        return f"Tensor({tag}, shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __neg__(self):
        return scale(self, -1.0)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(kind, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


# --- forward rules (pure functions of parent data, used for replay too) ----

def _f_add(datas, args):
    return datas[0] + datas[1]


def _f_mul(datas, args):
    return datas[0] * datas[1]


def _f_matmul(datas, args):
    return np.dot(datas[0], datas[1])


def _f_concat(datas, args):
    return np.concatenate(datas, axis=args[0])


def _f_scale(datas, args):
    return datas[0] * args[0]


def _f_square(datas, args):
    return K.square_fwd(datas[0])


def _f_sqrt(datas, args):
    return K.sqrt_fwd(datas[0])


def _f_exp(datas, args):
    return K.exp_fwd(datas[0])


def _f_log(datas, args):
    return K.log_fwd(datas[0])


def _f_tanh(datas, args):
    return K.tanh_fwd(datas[0])


def _f_softplus(datas, args):
    return K.softplus_fwd(datas[0])


def _f_reciprocal(datas, args):
    return K.recip_fwd(datas[0])


_FORWARD = {
    "add": _f_add, "mul": _f_mul, "matmul": _f_matmul, "concat": _f_concat,
    "scale": _f_scale, "square": _f_square, "sqrt": _f_sqrt, "exp": _f_exp,
    "log": _f_log, "tanh": _f_tanh, "softplus": _f_softplus,
    "reciprocal": _f_reciprocal,
}


# --- backward rules: node, needs-mask -> per-parent grads (None = skip) ----

def _b_add(n, needs):
    a, b = n._parents
    g = n.grad
    return (_unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(g, b.shape) if needs[1] else None)


def _b_mul(n, needs):
    a, b = n._parents
    g = n.grad
    return (_unbroadcast(g * b.data, a.shape) if needs[0] else None,
            _unbroadcast(g * a.data, b.shape) if needs[1] else None)


def _b_matmul(n, needs):
    a, b = n._parents
    g = n.grad
    ga = np.dot(g, b.data.T) if needs[0] else None
    gb = np.dot(a.data.T, g) if needs[1] else None
    return (ga, gb)


def _b_concat(n, needs):
    axis = n._args[0]
    sizes = [p.data.shape[axis] for p in n._parents]
    splits = np.cumsum(sizes)[:-1]
    pieces = np.split(n.grad, splits, axis=axis)
    return [p if need else None for p, need in zip(pieces, needs)]


def _b_scale(n, needs):
    return (n.grad * n._args[0] if needs[0] else None,)


def _b_square(n, needs):
    return (K.square_bwd(n.grad, n._parents[0].data) if needs[0] else None,)


def _b_sqrt(n, needs):
    return (K.sqrt_bwd(n.grad, n.data) if needs[0] else None,)


def _b_exp(n, needs):
    return (K.exp_bwd(n.grad, n.data) if needs[0] else None,)


def _b_log(n, needs):
    return (K.log_bwd(n.grad, n._parents[0].data) if needs[0] else None,)


def _b_tanh(n, needs):
    return (K.tanh_bwd(n.grad, n.data) if needs[0] else None,)


def _b_softplus(n, needs):
    return (K.softplus_bwd(n.grad, n._parents[0].data) if needs[0] else None,)


def _b_reciprocal(n, needs):
    return (K.recip_bwd(n.grad, n.data) if needs[0] else None,)


_BACKWARD = {
    "add": _b_add, "mul": _b_mul, "matmul": _b_matmul, "concat": _b_concat,
    "scale": _b_scale, "square": _b_square, "sqrt": _b_sqrt, "exp": _b_exp,
    "log": _b_log, "tanh": _b_tanh, "softplus": _b_softplus,
    "reciprocal": _b_reciprocal,
}


# --- op constructors -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("add", a, b)
    return Tensor(_f_add((a.data, b.data), ()), _kind="add", _parents=(a, b))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("mul", a, b)
    return Tensor(_f_mul((a.data, b.data), ()), _kind="mul", _parents=(a, b))


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return Tensor(_f_matmul((a.data, b.data), ()), _kind="matmul", _parents=(a, b))


def concat(tensors, axis: int = 1) -> Tensor:
    ts = tuple(_lift(t) for t in tensors)
    if not ts:
        raise ShapeError("concat: empty input list")
    ref = ts[0].data.shape
    for t in ts[1:]:
        s = t.data.shape
        if len(s) != len(ref) or any(s[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise ShapeError(f"concat(axis={axis}): incompatible shapes "
                             f"{[t.shape for t in ts]}")
    return Tensor(_f_concat([t.data for t in ts], (axis,)),
                  _kind="concat", _parents=ts, _args=(axis,))


def scale(a, s: float) -> Tensor:
    a = _lift(a)
    s = float(s)
    return Tensor(_f_scale((a.data,), (s,)), _kind="scale", _parents=(a,), _args=(s,))


def square(a) -> Tensor:
    a = _lift(a)
    return Tensor(_f_square((a.data,), ()), _kind="square", _parents=(a,))


def sqrt(a) -> Tensor:
    a = _lift(a)
    if np.any(a.data < 0.0):
        raise NumericalError("sqrt: negative input")
    return Tensor(_f_sqrt((a.data,), ()), _kind="sqrt", _parents=(a,))


def exp(a) -> Tensor:
    a = _lift(a)
    return Tensor(_f_exp((a.data,), ()), _kind="exp", _parents=(a,))


def log(a) -> Tensor:
    a = _lift(a)
    if np.any(a.data <= 0.0):
        raise NumericalError("log: non-positive input")
    return Tensor(_f_log((a.data,), ()), _kind="log", _parents=(a,))


def tanh(a) -> Tensor:
    a = _lift(a)
    return Tensor(_f_tanh((a.data,), ()), _kind="tanh", _parents=(a,))


def softplus(a) -> Tensor:
    a = _lift(a)
    return Tensor(_f_softplus((a.data,), ()), _kind="softplus", _parents=(a,))


def reciprocal(a) -> Tensor:
    a = _lift(a)
    if np.any(a.data == 0.0):
        raise NumericalError("reciprocal: zero input")
    return Tensor(_f_reciprocal((a.data,), ()), _kind="reciprocal", _parents=(a,))


_CONSTRUCTORS = {
    "add": add, "mul": mul, "matmul": matmul, "concat": concat,
    "scale": scale, "square": square, "sqrt": sqrt, "exp": exp,
    "log": log, "tanh": tanh, "softplus": softplus, "reciprocal": reciprocal,
}


def forward_op(kind: str, inputs, **kwargs) -> Tensor:
    """Generic dispatcher: apply the named op kind to a list of inputs."""
    if kind not in _CONSTRUCTORS:
        raise ShapeError(f"unknown op kind {kind!r}")
    fn = _CONSTRUCTORS[kind]
    if kind == "concat":
        return fn(inputs, **kwargs)
    if kind == "scale":
        return fn(inputs[0], kwargs["s"] if "s" in kwargs else inputs[1])
    return fn(*inputs, **kwargs)


# --- graph traversal -------------------------------------------------------

def _toposort(out: Tensor) -> list:
    order, seen, stack = [], set(), [(out, False)]
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
    return order


def backward(out: Tensor) -> dict:
    """Reverse-mode sweep from a scalar output.

    Fills ``grad`` on every reachable tensor that requires (or feeds into)
    one, and returns a map from parameter name to gradient array for every
    named ``requires_grad`` leaf in the graph.
    """
    if out.data.size != 1:
        raise ContractError(f"backward: output must be scalar, got shape {out.shape}")
    topo = _toposort(out)
    for n in topo:
        n.grad = None
    out.grad = np.ones_like(out.data)
    for n in reversed(topo):
        if n._kind is None or n.grad is None or not n._needs_grad:
            continue
        needs = [p._needs_grad for p in n._parents]
        grads = _BACKWARD[n._kind](n, needs)
        for p, g in zip(n._parents, grads):
            if g is None:
                continue
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            p.grad += g
    result = {}
    for n in topo:
        if n._kind is None and n.requires_grad:
            key = n.name if n.name is not None else f"@{id(n)}"
            result[key] = n.grad if n.grad is not None else np.zeros_like(n.data)
    return result


def refresh(out: Tensor) -> Tensor:
    """Recompute every op node's value from current leaf data (graph replay)."""
    for n in _toposort(out):
        if n._kind is not None:
            n.data = _FORWARD[n._kind]([p.data for p in n._parents], n._args)
    return out


def grad_check(out: Tensor, params: dict, step: float = 1e-5,
               atol: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``params`` maps name -> leaf Tensor.  The graph hanging off ``out`` is
    replayed under elementwise perturbations of each parameter, so the check
    covers exactly the computation that produced ``out``.  The error is
    |analytic - fd| / max(|analytic|, |fd|, atol); the floor keeps
    finite-difference roundoff on near-zero entries from registering as
    gradient error while still flagging any systematic mistake.
    """
    if step <= 0:
        raise ContractError("grad_check: step must be positive")
    if atol <= 0:
        raise ContractError("grad_check: atol must be positive")
    analytic = backward(out)
    worst = 0.0
    for name, p in params.items():
        a = analytic.get(name)
        if a is None:
            a = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = refresh(out).item()
            flat[i] = orig - step
            f_minus = refresh(out).item()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            err = abs(aflat[i] - fd) / max(abs(aflat[i]), abs(fd), atol)
            if err > worst:
                worst = err
    refresh(out)
    return worst


def sgd_step(params: dict, grads: dict, lr: float) -> dict:
    """In-place SGD update p <- p - lr * g over named parameters."""
    if lr < 0:
        raise ContractError("sgd_step: negative learning rate")
    missing = [k for k in params if k not in grads]
    if missing:
        raise ContractError(f"sgd_step: missing gradient entries {missing}")
    for k, p in params.items():
        p.data -= lr * grads[k]
    return params


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple | None = None, gain: float = 1.0) -> np.ndarray:
    """Uniform init on gain * [-sqrt(6/(fan_in+fan_out)), +sqrt(...)]."""
    bound = gain * np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-bound, bound, size=shape)
