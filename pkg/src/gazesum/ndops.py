"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the primitives the gaze and summarization models need are provided.
Operations record onto the innermost active :class:`Tape` whenever an
input requires a gradient::

    with Tape() as tape:
        loss = mse(model(x), y)
    backward(tape, loss)
"""
from __future__ import annotations

import hashlib
import io
import json
import zipfile
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .exceptions import ConfigError, ShapeError, UsageError

CHECKPOINT_FORMAT = "gazesum-checkpoint"
CHECKPOINT_VERSION = 1

_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.is_leaf = True
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise UsageError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of executed operations; replayed in reverse by backward."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple, Callable]] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple, fn: Callable):
        self.records.append((out, inputs, fn))

    def clear(self):
        self.records.clear()

    def backward(self, loss: Tensor, params: Iterable[Tensor] = ()):
        backward(self, loss, params)


def _op(data: np.ndarray, inputs: Sequence[Tensor], fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.grad = None
    out.is_leaf = False
    out.name = None
    if out.requires_grad and _ACTIVE:
        _ACTIVE[-1].record(out, tuple(inputs), fn)
    return out


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] = ()):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Leaves listed in ``params`` that the loss does not depend on receive a
    zero gradient. The tape is cleared afterwards.
    """
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not any(rec[0] is loss for rec in tape.records):
        raise UsageError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, fn in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, fn(g)):
            if gi is None or not t.requires_grad:
                continue
            if t.is_leaf:
                t.grad = gi.copy() if t.grad is None else t.grad + gi
            else:
                key = id(t)
                grads[key] = gi if key not in grads else grads[key] + gi
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    tape.clear()


# --------------------------------------------------------------------------
# primitives


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, opname: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def fn(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)
    return _op(a.data + b.data, (a, b), fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def fn(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)
    return _op(a.data - b.data, (a, b), fn)


def mul(a, b) -> Tensor:
    """Elementwise product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def fn(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)
    return _op(a.data * b.data, (a, b), fn)


elementwise_mul = mul


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            if b.ndim == 2:
                ga = g @ b.data.T
            else:
                ga = np.outer(g, b.data) if a.ndim == 2 else g * b.data
        if b.requires_grad:
            if a.ndim == 2:
                gb = a.data.T @ g
            else:
                gb = np.outer(a.data, g) if b.ndim == 2 else g * a.data
        return ga, gb
    return _op(np.asarray(a.data @ b.data, dtype=np.float64), (a, b), fn)


def transpose(a: Tensor) -> Tensor:
    return _op(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    return _op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def flatten(a: Tensor) -> Tensor:
    """Row-major flatten to one dimension."""
    return reshape(a, (-1,))


def take(a: Tensor, idx) -> Tensor:
    """Indexing (slices, integers or integer arrays) with scatter-add backward."""
    def fn(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return (z,)
    return _op(np.array(a.data[idx]), (a,), fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes "
                         + ", ".join(str(t.shape) for t in tensors)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=axis))
    return _op(data, tensors, fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if len({t.shape for t in tensors}) > 1:
        raise ShapeError("stack: shapes differ " + ", ".join(str(t.shape) for t in tensors))
    data = np.stack([t.data for t in tensors], axis=axis)

    def fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))
    return _op(data, tensors, fn)


def unbind(x: Tensor, axis: int = 0) -> list[Tensor]:
    """Split ``x`` into slices along ``axis``.

    Slice gradients are written into one shared buffer that is released to
    ``x`` in a single step, so a length-T split costs O(size), not O(T * size).
    """
    acc = np.zeros_like(x.data) if x.requires_grad else None
    # sink stands in for x: slices report a dummy 0.0 to it and deposit real grads in acc
    sink = _op(x.data, (x,), lambda g: (acc,))
    parts = []
    for i in range(x.shape[axis]):
        index = (slice(None),) * axis + (i,)

        def fn(g, index=index):
            acc[index] += g
            return (np.float64(0.0),)
        parts.append(_op(np.array(x.data[index]), (sink,), fn))
    return parts


def embed_lookup(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` selected by integer ``ids`` (any shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embed_lookup: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range for table of {table.shape[0]} rows")

    def fn(g):
        z = np.zeros_like(table.data)
        np.add.at(z, ids, g)
        return (z,)
    return _op(table.data[ids], (table,), fn)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _op(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _op(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def softmax(x, axis: int = -1, mask=None) -> Tensor:
    """Softmax along ``axis``; positions where ``mask`` is False get exactly 0."""
    x = as_tensor(x)
    d = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), d.shape)
        if not mask.any(axis=axis).all():
            raise UsageError("softmax: a slice is entirely masked")
        d = np.where(mask, d, -np.inf)
    z = d - d.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _op(out, (x,), fn)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return _op(np.asarray(out, dtype=np.float64), (x,), fn)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return sum_(x, axis) * (1.0 / n)


def masked_mean(x: Tensor, mask, axis: int = 0) -> Tensor:
    """Mean of ``x`` along ``axis`` counting only positions where ``mask`` holds."""
    m = np.asarray(mask, dtype=np.float64)
    m = m.reshape(m.shape + (1,) * (x.ndim - m.ndim))
    m = np.broadcast_to(m, x.shape)
    count = m.sum(axis=axis, keepdims=True)
    if np.any(count == 0):
        raise UsageError("masked_mean: empty mask")
    out = ((x.data * m).sum(axis=axis, keepdims=True) / count)

    def fn(g):
        return (np.broadcast_to(g.reshape(out.shape), x.shape) * m / count,)
    return _op(np.squeeze(out, axis=axis), (x,), fn)


def mse(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def fn(g):
        gp = g * 2.0 * diff / n
        return (gp if pred.requires_grad else None,
                -gp if target.requires_grad else None)
    return _op(np.asarray(np.mean(diff * diff)), (pred, target), fn)


def cross_entropy(logits: Tensor, target, mask=None) -> Tensor:
    """-log softmax(logits)[target]; for 2-D logits, the (masked) mean over rows."""
    single = logits.ndim == 1
    x = logits.data[None, :] if single else logits.data
    tgt = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if x.ndim != 2 or tgt.shape != (x.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {tgt.shape}")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= x.shape[1]):
        raise IndexError(f"target id out of range for {x.shape[1]} classes")
    w = np.ones(x.shape[0]) if mask is None else np.asarray(mask, dtype=np.float64)
    count = w.sum()
    if count == 0:
        raise UsageError("cross_entropy: empty mask")
    z = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(x.shape[0])
    losses = lse - z[rows, tgt]
    value = float((losses * w).sum() / count)

    def fn(g):
        p = np.exp(z - lse[:, None])
        p[rows, tgt] -= 1.0
        grad = p * (w / count)[:, None] * g
        return (grad[0] if single else grad,)
    return _op(np.asarray(value), (logits,), fn)


# --------------------------------------------------------------------------
# composite layers


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


GRU_KEYS = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")


def init_gru(rng: np.random.Generator, d_in: int, d_h: int, prefix: str = "") -> dict:
    params = {}
    for gate in "zrh":
        params[f"W_{gate}"] = Tensor(glorot(rng, d_in, d_h), True, f"{prefix}W_{gate}")
    for gate in "zrh":
        params[f"U_{gate}"] = Tensor(glorot(rng, d_h, d_h), True, f"{prefix}U_{gate}")
    for gate in "zrh":
        params[f"b_{gate}"] = Tensor(np.zeros(d_h), True, f"{prefix}b_{gate}")
    return params


def gru_cell(x: Tensor, h: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """One GRU step; ``x`` is (d_in,) or (batch, d_in), ``h`` matches on d_h."""
    missing = [k for k in GRU_KEYS if k not in params]
    if missing:
        raise ConfigError(f"gru_cell: missing parameters {missing}")
    if x.shape[-1] != params["W_z"].shape[0] or h.shape[-1] != params["U_z"].shape[0]:
        raise ShapeError(f"gru_cell: x {x.shape} / h {h.shape} vs W {params['W_z'].shape}, "
                         f"U {params['U_z'].shape}")
    z = sigmoid(x @ params["W_z"] + h @ params["U_z"] + params["b_z"])
    r = sigmoid(x @ params["W_r"] + h @ params["U_r"] + params["b_r"])
    h_tilde = tanh(x @ params["W_h"] + (r * h) @ params["U_h"] + params["b_h"])
    return (1.0 - z) * h + z * h_tilde


def degree_normalize(adj) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalized adjacency and the mask of rows with non-zero degree."""
    adj = np.asarray(adj.data if isinstance(adj, Tensor) else adj, dtype=np.float64)
    deg = adj.sum(axis=1)
    live = deg > 0
    norm = np.zeros_like(adj)
    norm[live] = adj[live] / deg[live, None]
    return norm, live


def gnn_hop(states: Tensor, adj, W: Tensor, b: Tensor, normalized=None) -> Tensor:
    """tanh(D^-1 A S W + b), with zero-degree (padding) rows forced to zero."""
    m = states.shape[0]
    adj_shape = np.shape(adj.data if isinstance(adj, Tensor) else adj)
    if states.ndim != 2 or adj_shape != (m, m):
        raise ShapeError(f"gnn_hop: states {states.shape} vs adjacency {adj_shape}")
    if W.shape != (states.shape[1], states.shape[1]) or b.shape[-1] != states.shape[1]:
        raise ShapeError(f"gnn_hop: states {states.shape} vs W {W.shape}, b {b.shape}")
    norm, live = normalized if normalized is not None else degree_normalize(adj)
    pre = Tensor(norm) @ states @ W + b
    return tanh(pre) * Tensor(live[:, None].astype(np.float64))


# --------------------------------------------------------------------------
# optimizers


class SGD:
    kind = "sgd"

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-2):
        self.params = list(params)
        self.lr = lr
        self.step_count = 0

    def step(self):
        _check_grads(self.params)
        for p in self.params:
            p.data -= self.lr * p.grad
            p.zero_grad()
        self.step_count += 1


class Adam:
    kind = "adam"

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self):
        _check_grads(self.params)
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.zero_grad()


def _check_grads(params):
    missing = [p.name or repr(p) for p in params if p.grad is None]
    if missing:
        raise UsageError(f"no gradient for {missing[:3]}; run backward first")


def make_optimizer(kind: str, params: Sequence[Tensor], lr: float):
    if kind == "sgd":
        return SGD(params, lr)
    if kind == "adam":
        return Adam(params, lr)
    raise ConfigError(f"unknown optimizer {kind!r}")


def optimizer_step(opt) -> None:
    opt.step()


# --------------------------------------------------------------------------
# checkpoint container

_ZIP_DATE = (2000, 1, 1, 0, 0, 0)


def _zip_write(zf: zipfile.ZipFile, name: str, payload: bytes):
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def _tensor_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr, dtype="<f8"), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(path, params: Mapping[str, Tensor | np.ndarray], meta: Mapping) -> None:
    """Zip container: ``meta.json``, ``manifest.txt`` and one ``.npy`` per tensor.

    Byte-identical output for identical inputs (fixed timestamps, sorted keys).
    """
    lines = []
    with zipfile.ZipFile(path, "w") as zf:
        header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, **meta}
        _zip_write(zf, "meta.json", json.dumps(header, sort_keys=True, indent=1).encode())
        for name in sorted(params):
            arr = params[name]
            arr = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
            payload = _tensor_bytes(arr)
            digest = hashlib.sha256(np.ascontiguousarray(arr, dtype="<f8").tobytes()).hexdigest()
            shape = "x".join(str(s) for s in arr.shape) or "scalar"
            lines.append(f"{name}\t{shape}\t{digest}")
            _zip_write(zf, f"tensors/{name}.npy", payload)
        _zip_write(zf, "manifest.txt", ("\n".join(lines) + "\n").encode())


def load_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(arrays, meta)``; checksums from the manifest are verified."""
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"{path}: not a gazesum checkpoint")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        arrays = {}
        for line in zf.read("manifest.txt").decode().splitlines():
            name, _, digest = line.split("\t")
            arr = np.load(io.BytesIO(zf.read(f"tensors/{name}.npy")), allow_pickle=False)
            if hashlib.sha256(arr.astype("<f8").tobytes()).hexdigest() != digest:
                raise ConfigError(f"{path}: checksum mismatch for tensor {name}")
            arrays[name] = arr.astype(np.float64)
    return arrays, meta
