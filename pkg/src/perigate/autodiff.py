"""Define-by-run reverse-mode differentiation over the operation vocabulary.

Each traced function computes its value with the exact kernel from
:mod:`perigate.ops` (so traced and untraced forwards are bitwise identical)
and, while a tape is active, records a node holding the backward closure.
Without an active tape the same functions run as plain forwards.

Kernel arguments may be ``Var`` (gradients flow) or plain arrays (treated as
constants: gradients flow *through* them to other inputs but none are
produced for the constant itself).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import ops
from .errors import (
    ConfigurationError,
    InputError,
    NumericError,
    UnsupportedOperationError,
)

__all__ = [
    "Var", "Tape", "ParamStore", "tape_active", "forward_traced", "backward",
    "grad_check", "add", "sub", "mul", "scale", "tanh", "sigmoid", "leaky_relu",
    "relu", "sqrt", "absolute", "dwconv_1d_h", "dwconv_1d_v", "sep_conv",
    "dwconv_2d", "conv2d", "pwconv", "avg_pool3", "softmax_channels", "grn",
    "group_norm", "upsample2x", "concat_channels", "split_channels",
    "pack_time", "unpack_time", "mean_channels", "mean_all", "drop_path",
]


class Var:
    """A value in the computation graph; leaves carry parameters or inputs."""

    __slots__ = ("value", "grad", "parents", "vjp", "name")

    def __init__(self, value, name: str = ""):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = ()
        self.vjp = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" '{self.name}'" if self.name else ""
        return f"Var{tag}(shape={self.value.shape}, dtype={self.value.dtype})"


class Tape:
    """Ordered record of graph nodes; backward walks it in exact reverse order."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.outputs: tuple[Var, ...] = ()

    def __enter__(self):
        _stack.append(self)
        return self

    def __exit__(self, *exc):
        _stack.pop()
        return False


_stack: list[Tape] = []


def tape_active() -> Tape | None:
    return _stack[-1] if _stack else None


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x)


def _track(value: np.ndarray, parents: tuple, vjp) -> Var:
    out = Var(value)
    tape = tape_active()
    if tape is not None:
        out.parents = parents
        out.vjp = vjp
        tape.nodes.append(out)
    return out


def _accumulate(parent, grad):
    if not isinstance(parent, Var) or grad is None:
        return
    parent.grad = grad if parent.grad is None else parent.grad + grad


def backward(tape: Tape, seed_grad: np.ndarray):
    """Propagate ``seed_grad`` from the tape's single output back to all leaves."""
    if len(tape.outputs) != 1:
        raise InputError(f"backward needs exactly one recorded output, got {len(tape.outputs)}")
    out = tape.outputs[0]
    seed = np.asarray(seed_grad, dtype=out.value.dtype)
    if seed.shape != out.value.shape:
        raise ConfigurationError(f"seed shape {seed.shape} != output shape {out.value.shape}")
    _accumulate(out, seed)
    for node in reversed(tape.nodes):
        if node.grad is None or node.vjp is None:
            continue
        grads = node.vjp(node.grad)
        for parent, g in zip(node.parents, grads):
            _accumulate(parent, g)
        node.grad = None  # free intermediate adjoints


def forward_traced(graph_fn, inputs, params=None):
    """Run ``graph_fn`` under a fresh tape.

    ``inputs`` is a sequence of arrays or Vars; arrays are wrapped as leaves.
    ``params`` (a :class:`ParamStore` or anything graph_fn closes over) is
    passed through as the trailing argument when given.
    """
    wrapped = [x if isinstance(x, Var) else Var(x) for x in inputs]
    tape = Tape()
    with tape:
        try:
            if params is None:
                out = graph_fn(*wrapped)
            else:
                out = graph_fn(*wrapped, params)
        except TypeError as exc:
            # e.g. applying python/numpy operators directly to Var
            raise UnsupportedOperationError(
                f"graph_fn used an operation outside the traced vocabulary: {exc}"
            ) from exc
    tape.outputs = tuple(out) if isinstance(out, (tuple, list)) else (out,)
    return out, tape


class ParamStore:
    """Named learnable tensors with parallel gradient storage.

    Names are unique '/'-separated paths; gradient arrays always match their
    parameter's shape, and parameters untouched by a backward pass read back
    as zero gradients.
    """

    def __init__(self):
        self._vars: dict[str, Var] = {}

    def add(self, name: str, value: np.ndarray) -> Var:
        if name in self._vars:
            raise ConfigurationError(f"duplicate parameter name '{name}'")
        v = Var(np.asarray(value), name=name)
        self._vars[name] = v
        return v

    def var(self, name: str) -> Var:
        return self._vars[name]

    def value(self, name: str) -> np.ndarray:
        return self._vars[name].value

    def grad(self, name: str) -> np.ndarray:
        v = self._vars[name]
        return np.zeros_like(v.value) if v.grad is None else v.grad

    def zero_grads(self):
        for v in self._vars.values():
            v.grad = None

    def names(self) -> list[str]:
        return list(self._vars)

    def variables(self) -> list[Var]:
        return list(self._vars.values())

    def items(self):
        return ((k, v.value) for k, v in self._vars.items())

    def num_scalars(self) -> int:
        return sum(v.value.size for v in self._vars.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self._vars.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        missing = set(self._vars) - set(state)
        if missing:
            raise InputError(f"missing parameters in state: {sorted(missing)}")
        for k, v in self._vars.items():
            arr = np.asarray(state[k])
            if arr.shape != v.value.shape:
                raise InputError(
                    f"parameter '{k}' shape {arr.shape} != expected {v.value.shape}"
                )
            v.value = arr.astype(v.value.dtype, copy=True)


# ---------------------------------------------------------------------------
# Traced operations
# ---------------------------------------------------------------------------


def _sum_to_operand(grad_full: np.ndarray, operand_value: np.ndarray) -> np.ndarray:
    """Reduce a full-shape gradient back to a broadcast operand's shape."""
    if operand_value.shape == grad_full.shape:
        return grad_full
    if operand_value.ndim == 0:
        return grad_full.sum()
    return grad_full.sum(axis=(1, 2))  # per-channel [C] broadcast over [C,H,W]


def add(a, b):
    av, bv = _val(a), _val(b)
    y = ops.add(av, bv)

    def vjp(g):
        return g, _sum_to_operand(g, bv)

    return _track(y, (a, b), vjp)


def sub(a, b):
    av, bv = _val(a), _val(b)
    y = ops.sub(av, bv)

    def vjp(g):
        return g, -_sum_to_operand(g, bv)

    return _track(y, (a, b), vjp)


def mul(a, b):
    av, bv = _val(a), _val(b)
    y = ops.mul(av, bv)

    def vjp(g):
        bb = ops._broadcast_operand(av, bv)
        return g * bb, _sum_to_operand(g * av, bv)

    return _track(y, (a, b), vjp)


def scale(x, s: float):
    y = ops.scale(_val(x), s)
    return _track(y, (x,), lambda g: (g * s,))


def tanh(x):
    y = ops.tanh(_val(x))
    return _track(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    y = ops.sigmoid(_val(x))
    return _track(y, (x,), lambda g: (g * y * (1.0 - y),))


def leaky_relu(x, alpha: float = 0.2):
    xv = _val(x)
    y = ops.leaky_relu(xv, alpha)
    return _track(y, (x,), lambda g: (g * np.where(xv > 0, 1.0, alpha),))


def relu(x):
    xv = _val(x)
    y = ops.relu(xv)
    return _track(y, (x,), lambda g: (g * (xv > 0),))


def sqrt(x):
    y = ops.sqrt(_val(x))
    return _track(y, (x,), lambda g: (g / (2.0 * y),))


def absolute(x):
    xv = _val(x)
    y = ops.absolute(xv)
    return _track(y, (x,), lambda g: (g * np.sign(xv),))


def _kernel_grad_1d(g, win, kernel_value):
    gk = np.einsum("chw,chwk->ck", g, win)
    if kernel_value.ndim == 1:  # shared kernel: sum channel contributions
        gk = gk.sum(axis=0)
    return gk


def dwconv_1d_h(x, h):
    xv, hv = _val(x), _val(h)
    y = ops.dwconv_1d_h(xv, hv)

    def vjp(g):
        k = hv.shape[-1]
        p = (k - 1) // 2
        h2 = ops._per_channel(hv, xv.shape[0], 1)
        gx = ops.dwconv_1d_h(g, h2[:, ::-1])
        gh = None
        if isinstance(h, Var):
            win = sliding_window_view(ops.pad_width(xv, p), k, axis=2)
            gh = _kernel_grad_1d(g, win, hv)
        return gx, gh

    return _track(y, (x, h), vjp)


def dwconv_1d_v(x, v):
    xv, vv = _val(x), _val(v)
    y = ops.dwconv_1d_v(xv, vv)

    def vjp(g):
        k = vv.shape[-1]
        p = (k - 1) // 2
        v2 = ops._per_channel(vv, xv.shape[0], 1)
        gx = ops.dwconv_1d_v(g, v2[:, ::-1])
        gv = None
        if isinstance(v, Var):
            win = sliding_window_view(ops.pad_height(xv, p), k, axis=1)
            gv = _kernel_grad_1d(g, win, vv)
        return gx, gv

    return _track(y, (x, v), vjp)


def sep_conv(x, h, v):
    return dwconv_1d_v(dwconv_1d_h(x, h), v)


def dwconv_2d(x, kernel):
    xv, kv = _val(x), _val(kernel)
    y = ops.dwconv_2d(xv, kv)

    def vjp(g):
        k2 = ops._per_channel(kv, xv.shape[0], 2)
        gx = ops.dwconv_2d(g, k2[:, ::-1, ::-1])
        gk = None
        if isinstance(kernel, Var):
            p = (k2.shape[1] - 1) // 2
            win = sliding_window_view(ops.pad_hw(xv, p), k2.shape[1:], axis=(1, 2))
            gk = np.einsum("chw,chwuv->cuv", g, win)
            if kv.ndim == 2:
                gk = gk.sum(axis=0)
        return gx, gk

    return _track(y, (x, kernel), vjp)


def conv2d(x, w, b=None, stride: int = 1):
    xv, wv = _val(x), _val(w)
    y = ops.conv2d(xv, wv, None if b is None else _val(b), stride)

    def vjp(g):
        co, ci, kh, kw = wv.shape
        p = (kh - 1) // 2
        xp = ops.pad_hw(xv, p)
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
        if stride > 1:
            win = win[:, ::stride, ::stride]
        gw = np.einsum("ohw,ihwuv->oiuv", g, win) if isinstance(w, Var) else None
        gb = g.sum(axis=(1, 2)) if isinstance(b, Var) else None
        gxp = np.zeros_like(xp)
        ho, wo = g.shape[1:]
        for u in range(kh):
            for v_ in range(kw):
                patch = np.einsum("ohw,oi->ihw", g, wv[:, :, u, v_])
                gxp[:, u : u + stride * ho : stride, v_ : v_ + stride * wo : stride] += patch
        gx = gxp[:, p : p + xv.shape[1], p : p + xv.shape[2]]
        return gx, gw, gb

    return _track(y, (x, w, b), vjp)


def pwconv(x, w, b):
    xv, wv, bv = _val(x), _val(w), _val(b)
    y = ops.pwconv(xv, wv, bv)

    def vjp(g):
        gx = np.einsum("oc,ohw->chw", wv, g)
        gw = np.einsum("ohw,chw->oc", g, xv) if isinstance(w, Var) else None
        gb = g.sum(axis=(1, 2)) if isinstance(b, Var) else None
        return gx, gw, gb

    return _track(y, (x, w, b), vjp)


def avg_pool3(x):
    y = ops.avg_pool3(_val(x))
    # zero-padded 3x3 mean with fixed divisor is self-adjoint
    return _track(y, (x,), lambda g: (ops.avg_pool3(g),))


def softmax_channels(x):
    y = ops.softmax_channels(_val(x))

    def vjp(g):
        return (y * (g - (g * y).sum(axis=0, keepdims=True)),)

    return _track(y, (x,), vjp)


def grn(x, gamma, beta, eps: float = 1e-6):
    xv, gav, bev = _val(x), _val(gamma), _val(beta)
    if eps <= 0:
        raise ConfigurationError("grn eps must be positive")
    gnorm = np.sqrt(np.sum(xv * xv, axis=(1, 2)))
    denom = gnorm.mean() + eps
    n = gnorm / denom
    y = gav[:, None, None] * (xv * n[:, None, None]) + bev[:, None, None] + xv

    def vjp(g):
        c = xv.shape[0]
        dgamma = (g * xv * n[:, None, None]).sum(axis=(1, 2)) if isinstance(gamma, Var) else None
        dbeta = g.sum(axis=(1, 2)) if isinstance(beta, Var) else None
        # adjoint of n_c = gnorm_c / (mean(gnorm) + eps)
        q = (g * xv).sum(axis=(1, 2)) * gav
        dgnorm = q / denom - (q * gnorm).sum() / (denom * denom * c)
        safe = np.where(gnorm > 0, gnorm, 1.0)
        coef = np.where(gnorm > 0, dgnorm / safe, 0.0)
        dx = g * (gav * n)[:, None, None] + g + coef[:, None, None] * xv
        return dx, dgamma, dbeta

    return _track(y, (x, gamma, beta), vjp)


def group_norm(x, gamma, beta, groups: int = 2, eps: float = 1e-5):
    xv, gav, bev = _val(x), _val(gamma), _val(beta)
    c = xv.shape[0]
    if c % groups != 0:
        raise ConfigurationError(f"{c} channels not divisible into {groups} groups")
    xg = xv.reshape(groups, c // groups, *xv.shape[1:])
    mu = xg.mean(axis=(1, 2, 3), keepdims=True)
    var = ((xg - mu) ** 2).mean(axis=(1, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat_g = (xg - mu) * inv
    xhat = xhat_g.reshape(xv.shape)
    y = gav[:, None, None] * xhat + bev[:, None, None]

    def vjp(g):
        dgamma = (g * xhat).sum(axis=(1, 2)) if isinstance(gamma, Var) else None
        dbeta = g.sum(axis=(1, 2)) if isinstance(beta, Var) else None
        gh = (g * gav[:, None, None]).reshape(xg.shape)
        m1 = gh.mean(axis=(1, 2, 3), keepdims=True)
        m2 = (gh * xhat_g).mean(axis=(1, 2, 3), keepdims=True)
        dx = (inv * (gh - m1 - xhat_g * m2)).reshape(xv.shape)
        return dx, dgamma, dbeta

    return _track(y, (x, gamma, beta), vjp)


def upsample2x(x):
    xv = _val(x)
    y = ops.upsample2x(xv)

    def vjp(g):
        c, h, w = xv.shape
        return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)

    return _track(y, (x,), vjp)


def concat_channels(xs):
    vals = [_val(x) for x in xs]
    y = ops.concat_channels(vals)
    sizes = [v.shape[0] for v in vals]

    def vjp(g):
        return tuple(ops.split_channels(g, sizes))

    return _track(y, tuple(xs), vjp)


def _slice_channels(x, lo: int, hi: int):
    xv = _val(x)
    y = xv[lo:hi]

    def vjp(g):
        gx = np.zeros_like(xv)
        gx[lo:hi] = g
        return (gx,)

    return _track(y, (x,), vjp)


def split_channels(x, sizes):
    if sum(sizes) != _val(x).shape[0]:
        raise ConfigurationError(f"split sizes {tuple(sizes)} do not sum to {_val(x).shape[0]}")
    out, lo = [], 0
    for s in sizes:
        out.append(_slice_channels(x, lo, lo + s))
        lo += s
    return out


def pack_time(frames):
    return concat_channels(frames)


def unpack_time(z, t: int):
    c_total = _val(z).shape[0]
    if c_total % t != 0:
        raise ConfigurationError(f"{c_total} channels not divisible by {t} frames")
    return split_channels(z, [c_total // t] * t)


def mean_channels(x):
    xv = _val(x)
    y = ops.mean_channels(xv)
    c = xv.shape[0]

    def vjp(g):
        return (np.broadcast_to(g / c, xv.shape).copy(),)

    return _track(y, (x,), vjp)


def mean_all(x):
    """Scalar mean over all elements (loss reduction)."""
    xv = _val(x)
    y = np.asarray(xv.mean())

    def vjp(g):
        return (np.full(xv.shape, g / xv.size, dtype=xv.dtype),)

    return _track(y, (x,), vjp)


def drop_path(x, rate: float, mode: str, keep_u: float | None = None):
    """Stochastic depth on a residual branch.

    Eval mode is the identity. In train mode the branch is zeroed with
    probability ``rate`` (when the pre-drawn uniform ``keep_u`` < rate),
    otherwise scaled by 1/(1-rate).
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"drop_path rate must lie in [0,1), got {rate}")
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"unknown mode '{mode}'")
    if mode == "eval" or rate == 0.0:
        return x
    if keep_u is None:
        raise ConfigurationError("train-mode drop_path needs a pre-drawn uniform")
    if keep_u < rate:
        xv = _val(x)
        return _track(np.zeros_like(xv), (x,), lambda g: (np.zeros_like(g),))
    return scale(x, 1.0 / (1.0 - rate))


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def grad_check(graph_fn, point, eps: float = 1e-5, probe_seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``point`` is a sequence covering every differentiable argument of
    ``graph_fn``: plain float64 arrays are wrapped as fresh leaves, existing
    ``Var`` leaves are used as-is (their values are perturbed in place), which
    lets ``graph_fn`` close over a parameter store. Vector-valued graphs are
    probed through a fixed random linear functional so the comparison reduces
    to one scalar per input coordinate: err = |a - d| / (|a| + |d| + 1e-12).

    Finite-difference evaluations run in extended precision where the
    platform provides it; deep graphs otherwise drown small gradient
    coordinates in float64 cancellation noise.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ConfigurationError(f"eps {eps} outside [1e-6, 1e-4]")
    leaves = []
    for p in point:
        leaf = p if isinstance(p, Var) else Var(np.asarray(p, dtype=np.float64).copy())
        if leaf.value.dtype != np.float64:
            raise ConfigurationError("grad_check requires float64 inputs")
        leaf.grad = None
        leaves.append(leaf)
    out, tape = forward_traced(graph_fn, leaves)
    if isinstance(out, (tuple, list)):
        raise InputError("grad_check expects a single-output graph")
    if not np.all(np.isfinite(out.value)):
        raise NumericError("graph produced non-finite values")
    probe = np.random.Generator(np.random.Philox(key=np.uint64(probe_seed))).standard_normal(
        out.value.shape
    )
    backward(tape, probe)
    analytic = [
        leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.value)
        for leaf in leaves
    ]

    fd_dtype = np.longdouble
    saved = [leaf.value for leaf in leaves]
    for leaf in leaves:
        leaf.value = leaf.value.astype(fd_dtype)
    probe_fd = probe.astype(fd_dtype)
    step = fd_dtype(eps)

    def eval_scalar():
        y = graph_fn(*leaves)
        return (probe_fd * y.value).sum()

    try:
        worst = 0.0
        for leaf, grad in zip(leaves, analytic):
            flat = leaf.value.reshape(-1)
            a_flat = grad.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + step
                f_plus = eval_scalar()
                flat[j] = orig - step
                f_minus = eval_scalar()
                flat[j] = orig
                numeric = float((f_plus - f_minus) / (2.0 * step))
                if not np.isfinite(numeric):
                    raise NumericError("non-finite finite-difference value")
                a = float(a_flat[j])
                err = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
                worst = max(worst, err)
    finally:
        for leaf, value in zip(leaves, saved):
            leaf.value = value
    return worst
