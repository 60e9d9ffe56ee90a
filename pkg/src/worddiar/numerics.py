"""Minimal reverse-mode primitives on 2-D float64 arrays.

Every differentiable quantity is a :class:`Tensor` holding a 2-D numpy
array. Operations build a backward closure only when some input requires
gradients, so forward passes over frozen parameters cost plain numpy.
Gradient accumulation is explicit: the trainer zeroes ``grad`` between
steps.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where finite math was required."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (decode/eval paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_2d(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D array, got shape {arr.shape}")
    return arr


class Tensor:
    """A 2-D float64 value node in the backward graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), backward: Callable | None = None):
        self.data = _as_2d(data)
        self.requires_grad = requires_grad and _GRAD_ENABLED
        self.grad: np.ndarray | None = None
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Reverse-mode sweep from this node; accumulates into ``.grad``."""
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that requires no grad")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        if seed is None:
            seed = np.ones_like(self.data)
        self._accumulate(seed)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A trainable leaf. ``frozen`` parameters are skipped by optimizers."""

    __slots__ = ("frozen", "name")

    def __init__(self, data, name: str = "", frozen: bool = False):
        arr = _as_2d(data)
        super().__init__(arr, requires_grad=True)
        # leaves stay in the graph even inside no_grad blocks
        self.requires_grad = True
        self.grad = np.zeros_like(arr)
        self.frozen = frozen
        self.name = name

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _needs_grad(*ts: Tensor) -> bool:
    return _GRAD_ENABLED and any(t.requires_grad for t in ts)


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {where}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data
    if not _needs_grad(a, b):
        return constant(out_data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor(out_data, True, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; ``b`` may be a 1-row bias broadcast over rows."""
    if a.shape != b.shape and not (b.rows == 1 and b.cols == a.cols):
        raise DimensionError(f"add: {a.shape} + {b.shape}")
    out_data = a.data + b.data
    if not _needs_grad(a, b):
        return constant(out_data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g if b.shape == a.shape else g.sum(axis=0, keepdims=True))

    return Tensor(out_data, True, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul: {a.shape} * {b.shape}")
    out_data = a.data * b.data
    if not _needs_grad(a, b):
        return constant(out_data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return Tensor(out_data, True, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    out_data = a.data * c
    if not _needs_grad(a):
        return constant(out_data)

    def bwd(g):
        a._accumulate(g * c)

    return Tensor(out_data, True, (a,), bwd)


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """y = x @ W + b with ``b`` broadcast over rows."""
    if x.cols != W.rows:
        raise DimensionError(f"affine: x {x.shape} incompatible with W {W.shape}")
    if b.rows != 1 or b.cols != W.cols:
        raise DimensionError(f"affine: bias {b.shape} must be 1x{W.cols}")
    y = add(matmul(x, W), b)
    _check_finite(y.data, "affine output")
    return y


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)
    if not _needs_grad(x):
        return constant(out_data)

    def bwd(g):
        x._accumulate(g * (1.0 - out_data * out_data))

    return Tensor(out_data, True, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    out_data = _sigmoid_np(x.data)
    if not _needs_grad(x):
        return constant(out_data)

    def bwd(g):
        x._accumulate(g * out_data * (1.0 - out_data))

    return Tensor(out_data, True, (x,), bwd)


def softmax(x: Tensor) -> Tensor:
    if x.cols == 0:
        raise DimensionError("softmax over an empty row")
    out_data = _softmax_np(x.data)
    if not _needs_grad(x):
        return constant(out_data)

    def bwd(g):
        dot = (g * out_data).sum(axis=1, keepdims=True)
        x._accumulate(out_data * (g - dot))

    return Tensor(out_data, True, (x,), bwd)


def log_softmax(x: Tensor) -> Tensor:
    if x.cols == 0:
        raise DimensionError("log_softmax over an empty row")
    out_data = _log_softmax_np(x.data)
    if not _needs_grad(x):
        return constant(out_data)

    def bwd(g):
        p = np.exp(out_data)
        x._accumulate(g - p * g.sum(axis=1, keepdims=True))

    return Tensor(out_data, True, (x,), bwd)


_ACTIVATIONS = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "log_softmax": log_softmax,
}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    _check_finite(x.data, f"{kind} input")
    return fn(x)


def log_sigmoid(x: Tensor) -> Tensor:
    out_data = log_sigmoid_np(x.data)
    if not _needs_grad(x):
        return constant(out_data)

    def bwd(g):
        x._accumulate(g * _sigmoid_np(-x.data))

    return Tensor(out_data, True, (x,), bwd)


def reshape(x: Tensor, rows: int, cols: int) -> Tensor:
    if rows * cols != x.data.size:
        raise DimensionError(f"reshape: {x.shape} -> ({rows}, {cols})")
    out_data = x.data.reshape(rows, cols).copy()
    if not _needs_grad(x):
        return constant(out_data)

    def bwd(g):
        x._accumulate(g.reshape(x.shape))

    return Tensor(out_data, True, (x,), bwd)


def detach(x: Tensor) -> Tensor:
    return constant(x.data.copy())


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    out_data = x.data[:, start:stop].copy()
    if not _needs_grad(x):
        return constant(out_data)

    def bwd(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        x._accumulate(full)

    return Tensor(out_data, True, (x,), bwd)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    out_data = x.data[start:stop, :].copy()
    if not _needs_grad(x):
        return constant(out_data)

    def bwd(g):
        full = np.zeros_like(x.data)
        full[start:stop, :] = g
        x._accumulate(full)

    return Tensor(out_data, True, (x,), bwd)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = parts[0].rows
    if any(p.rows != rows for p in parts):
        raise DimensionError("concat_cols: row counts differ")
    out_data = np.concatenate([p.data for p in parts], axis=1)
    if not _needs_grad(*parts):
        return constant(out_data)

    def bwd(g):
        ofs = 0
        for p in parts:
            if p.requires_grad:
                p._accumulate(g[:, ofs:ofs + p.cols])
            ofs += p.cols

    return Tensor(out_data, True, tuple(parts), bwd)


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    cols = parts[0].cols
    if any(p.cols != cols for p in parts):
        raise DimensionError("stack_rows: column counts differ")
    out_data = np.concatenate([p.data for p in parts], axis=0)
    if not _needs_grad(*parts):
        return constant(out_data)

    def bwd(g):
        ofs = 0
        for p in parts:
            if p.requires_grad:
                p._accumulate(g[ofs:ofs + p.rows, :])
            ofs += p.rows

    return Tensor(out_data, True, tuple(parts), bwd)


def embed_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of an embedding table; backward scatter-adds."""
    idx = np.asarray(ids, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.rows):
        raise IndexError(f"embedding id out of range [0, {table.rows})")
    out_data = table.data[idx, :]
    if not _needs_grad(table):
        return constant(out_data)

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        table._accumulate(full)

    return Tensor(out_data, True, (table,), bwd)


def outer_sum(a: Tensor, b: Tensor) -> Tensor:
    """All pairwise row sums: out[i*b.rows + j] = a[i] + b[j].

    The flattened (a.rows * b.rows) x d layout keeps transducer lattices
    inside the 2-D tensor discipline.
    """
    if a.cols != b.cols:
        raise DimensionError(f"outer_sum: {a.shape} vs {b.shape}")
    na, nb = a.rows, b.rows
    out_data = (a.data[:, None, :] + b.data[None, :, :]).reshape(na * nb, a.cols)
    if not _needs_grad(a, b):
        return constant(out_data)

    def bwd(g):
        g3 = g.reshape(na, nb, a.cols)
        if a.requires_grad:
            a._accumulate(g3.sum(axis=1))
        if b.requires_grad:
            b._accumulate(g3.sum(axis=0))

    return Tensor(out_data, True, (a, b), bwd)


def sum_all(x: Tensor) -> Tensor:
    out_data = np.array([[x.data.sum()]])
    if not _needs_grad(x):
        return constant(out_data)

    def bwd(g):
        x._accumulate(np.full_like(x.data, g[0, 0]))

    return Tensor(out_data, True, (x,), bwd)


def pick(x: Tensor, row_ids: Sequence[int], col_ids: Sequence[int]) -> Tensor:
    """Select entries x[row_ids[k], col_ids[k]] into a 1-row tensor."""
    ri = np.asarray(row_ids, dtype=np.intp)
    ci = np.asarray(col_ids, dtype=np.intp)
    if ri.shape != ci.shape:
        raise DimensionError("pick: index lists differ in length")
    out_data = x.data[ri, ci].reshape(1, -1)
    if not _needs_grad(x):
        return constant(out_data)

    def bwd(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (ri, ci), g.ravel())
        x._accumulate(full)

    return Tensor(out_data, True, (x,), bwd)


# ---------------------------------------------------------------------------
# LSTM cell

class LstmParams:
    """One 4-gate LSTM layer: gate order [input, forget, cell, output]."""

    def __init__(self, w_x: Parameter, w_h: Parameter, b: Parameter):
        self.w_x = w_x
        self.w_h = w_h
        self.b = b
        if w_x.cols != w_h.cols or w_x.cols != b.cols or w_x.cols % 4:
            raise DimensionError("LstmParams: gate widths disagree")
        if w_h.rows * 4 != w_h.cols:
            raise DimensionError("LstmParams: recurrent matrix must be Hx4H")

    @property
    def hidden(self) -> int:
        return self.w_h.rows

    @property
    def d_in(self) -> int:
        return self.w_x.rows

    def parameters(self) -> list[Parameter]:
        return [self.w_x, self.w_h, self.b]


def lstm_init_state(params: LstmParams) -> tuple[Tensor, Tensor]:
    h = constant(np.zeros((1, params.hidden)))
    c = constant(np.zeros((1, params.hidden)))
    return h, c


def recurrent_cell_step(state: tuple[Tensor, Tensor], x_t: Tensor,
                        params: LstmParams) -> tuple[tuple[Tensor, Tensor], Tensor]:
    """One LSTM step with a fused analytic backward. Returns ((h', c'), y)
    with y == h'."""
    h, c = state
    if x_t.cols != params.d_in:
        raise DimensionError(f"lstm step: input {x_t.shape} vs d_in {params.d_in}")
    if h.cols != params.hidden or c.cols != params.hidden:
        raise DimensionError("lstm step: state width mismatch")
    nh = params.hidden
    w_x, w_h, b = params.w_x, params.w_h, params.b
    pre = x_t.data @ w_x.data + h.data @ w_h.data + b.data
    ig = _sigmoid_np(pre[:, :nh])
    fg = _sigmoid_np(pre[:, nh:2 * nh])
    gg = np.tanh(pre[:, 2 * nh:3 * nh])
    og = _sigmoid_np(pre[:, 3 * nh:])
    c_new_data = fg * c.data + ig * gg
    tc = np.tanh(c_new_data)
    h_new_data = og * tc

    if not _needs_grad(x_t, h, c, w_x, w_h, b):
        return (constant(h_new_data), constant(c_new_data)), constant(h_new_data)

    def route_gate_grads(dpre: np.ndarray, lo: int, hi: int) -> None:
        if x_t.requires_grad:
            x_t._accumulate(dpre @ w_x.data[:, lo:hi].T)
        if h.requires_grad:
            h._accumulate(dpre @ w_h.data[:, lo:hi].T)
        if w_x.requires_grad:
            full = np.zeros_like(w_x.data)
            full[:, lo:hi] = x_t.data.T @ dpre
            w_x._accumulate(full)
        if w_h.requires_grad:
            full = np.zeros_like(w_h.data)
            full[:, lo:hi] = h.data.T @ dpre
            w_h._accumulate(full)
        if b.requires_grad:
            full = np.zeros_like(b.data)
            full[:, lo:hi] = dpre.sum(axis=0, keepdims=True)
            b._accumulate(full)

    def bwd_c(dc):
        dpre = np.concatenate([
            dc * gg * ig * (1 - ig),        # input gate
            dc * c.data * fg * (1 - fg),    # forget gate
            dc * ig * (1 - gg * gg),        # cell candidate
        ], axis=1)
        route_gate_grads(dpre, 0, 3 * nh)
        if c.requires_grad:
            c._accumulate(dc * fg)

    c_new = Tensor(c_new_data, True, (c, x_t, h, w_x, w_h, b), bwd_c)

    def bwd_h(dh):
        if c_new.requires_grad:
            c_new._accumulate(dh * og * (1 - tc * tc))
        dpre_o = dh * tc * og * (1 - og)
        route_gate_grads(dpre_o, 3 * nh, 4 * nh)

    h_new = Tensor(h_new_data, True, (c_new, x_t, h, w_x, w_h, b), bwd_h)
    return (h_new, c_new), h_new


def lstm_run(params: LstmParams, xs: Tensor) -> Tensor:
    """Run a whole sequence (rows of ``xs`` are time steps)."""
    state = lstm_init_state(params)
    outs = []
    for t in range(xs.rows):
        state, y = recurrent_cell_step(state, slice_rows(xs, t, t + 1), params)
        outs.append(y)
    return stack_rows(outs)


# ---------------------------------------------------------------------------
# Finite differences

def finite_difference_check(f: Callable[[], Tensor],
                            params: Iterable[Parameter],
                            eps: float = 1e-4) -> float:
    """Worst relative error of analytic grads vs central differences.

    ``f`` rebuilds the scalar loss from scratch on every call.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = f()
    if loss.data.size != 1:
        raise DimensionError("finite_difference_check needs a scalar loss")
    if not np.isfinite(loss.data[0, 0]):
        raise NumericError("non-finite loss")
    loss.backward()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, ag in zip(params, analytic):
        flat = p.data.ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            lo_hi = f().item()
            flat[k] = orig - eps
            lo_lo = f().item()
            flat[k] = orig
            if not (np.isfinite(lo_hi) and np.isfinite(lo_lo)):
                raise NumericError("non-finite loss during perturbation")
            num = (lo_hi - lo_lo) / (2.0 * eps)
            ana = ag.ravel()[k]
            err = abs(ana - num) / max(1.0, abs(ana), abs(num))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# plain-ndarray helpers shared with the no-grad paths

def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def log_sigmoid_np(x: np.ndarray) -> np.ndarray:
    # log sigmoid(x) = -softplus(-x), stable on both tails
    return -np.logaddexp(0.0, -x)
