"""Dense float64 tensors with a reverse-mode gradient tape.

Just enough machinery for message-passing networks and their losses: matmul,
broadcast arithmetic, relu family, segment aggregation (sum/mean/max) keyed by
destination node, segment and row softmax, l2 normalization, cosine
similarity, and mse. Gradients are exact; segment_max routes its gradient to
one argmax element per segment with ties broken by lowest edge index.
"""
from __future__ import annotations

import json
import weakref
from pathlib import Path

import numpy as np

PARAMSTORE_FORMAT_VERSION = 1

_grad_enabled = True
_live_bytes = 0
_peak_bytes = 0
_empty_segment_max_count = 0


class no_grad:
    """Context manager: ops inside build no tape and free intermediates eagerly."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


_kink_margins: list | None = None


class watch_kinks:
    """Record how close each non-smooth op comes to its kink during a forward.

    grad_check's contract requires a point where the computation is
    differentiable; `margin` after the block tells callers whether the point
    is safely generic (relu zero crossings, segment_max ties, vanishing norms).
    """

    def __enter__(self):
        global _kink_margins
        self._prev = _kink_margins
        _kink_margins = []
        return self

    def __exit__(self, *exc):
        global _kink_margins
        self.margins = _kink_margins
        _kink_margins = self._prev
        return False

    @property
    def margin(self) -> float:
        return min(self.margins, default=np.inf)


def _note_margin(value: float) -> None:
    if _kink_margins is not None:
        _kink_margins.append(float(value))


def reset_peak_memory() -> None:
    global _peak_bytes
    _peak_bytes = _live_bytes


def peak_memory_bytes() -> int:
    return _peak_bytes


def live_memory_bytes() -> int:
    return _live_bytes


def empty_segment_max_count() -> int:
    return _empty_segment_max_count


def reset_empty_segment_max_count() -> None:
    global _empty_segment_max_count
    _empty_segment_max_count = 0


def _track_free(nbytes: int) -> None:
    global _live_bytes
    _live_bytes -= nbytes


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "parents", "backward_fn", "name", "__weakref__")

    def __init__(self, values, requires_grad: bool = False, parents=(), backward_fn=None, name: str = ""):
        global _live_bytes, _peak_bytes
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name
        _live_bytes += self.values.nbytes
        if _live_bytes > _peak_bytes:
            _peak_bytes = _live_bytes
        weakref.finalize(self, _track_free, self.values.nbytes)

    @property
    def shape(self):
        return self.values.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.values)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"<Tensor{tag} shape={self.values.shape} grad={'yes' if self.requires_grad else 'no'}>"

    def __add__(self, other): return add(self, other)
    def __sub__(self, other): return sub(self, other)
    def __mul__(self, other): return mul(self, other)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _result(values, parents, backward_fn) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(values, requires_grad=True, parents=tuple(parents), backward_fn=backward_fn)
    return Tensor(values)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b):
    a, b = _coerce(a), _coerce(b)
    def bw(g, out):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _result(a.values + b.values, (a, b), bw)


def sub(a, b):
    a, b = _coerce(a), _coerce(b)
    def bw(g, out):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _result(a.values - b.values, (a, b), bw)


def mul(a, b):
    a, b = _coerce(a), _coerce(b)
    def bw(g, out):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)
    return _result(a.values * b.values, (a, b), bw)


def matmul(a, b):
    a, b = _coerce(a), _coerce(b)
    def bw(g, out):
        return g @ b.values.T, a.values.T @ g
    return _result(a.values @ b.values, (a, b), bw)


def relu(x):
    x = _coerce(x)
    if x.values.size:
        _note_margin(np.min(np.abs(x.values)))
    def bw(g, out):
        return (np.where(x.values > 0.0, g, 0.0),)
    return _result(np.maximum(x.values, 0.0), (x,), bw)


def leaky_relu(x, alpha: float = 0.2):
    x = _coerce(x)
    if x.values.size:
        _note_margin(np.min(np.abs(x.values)))
    def bw(g, out):
        return (np.where(x.values > 0.0, g, alpha * g),)
    return _result(np.where(x.values > 0.0, x.values, alpha * x.values), (x,), bw)


def concat(tensors, axis: int = 1):
    tensors = [_coerce(t) for t in tensors]
    sizes = [t.values.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    def bw(g, out):
        return tuple(np.take(g, np.arange(offsets[k], offsets[k + 1]), axis=axis)
                     for k in range(len(tensors)))
    return _result(np.concatenate([t.values for t in tensors], axis=axis), tensors, bw)


def reshape(x, shape):
    x = _coerce(x)
    def bw(g, out):
        return (g.reshape(x.values.shape),)
    return _result(x.values.reshape(shape), (x,), bw)


def gather_rows(x, idx):
    x = _coerce(x)
    idx = np.asarray(idx, dtype=np.int64)
    def bw(g, out):
        gx = np.zeros_like(x.values)
        np.add.at(gx, idx, g)
        return (gx,)
    return _result(x.values[idx], (x,), bw)


def segment_sum(x, seg, n_segments: int):
    x = _coerce(x)
    seg = np.asarray(seg, dtype=np.int64)
    out = np.zeros((n_segments,) + x.values.shape[1:], dtype=np.float64)
    np.add.at(out, seg, x.values)
    def bw(g, out_t):
        return (g[seg],)
    return _result(out, (x,), bw)


def segment_mean(x, seg, n_segments: int):
    x = _coerce(x)
    seg = np.asarray(seg, dtype=np.int64)
    counts = np.bincount(seg, minlength=n_segments).astype(np.float64)
    denom = np.maximum(counts, 1.0)
    total = np.zeros((n_segments,) + x.values.shape[1:], dtype=np.float64)
    np.add.at(total, seg, x.values)
    shape = (n_segments,) + (1,) * (x.values.ndim - 1)
    out = total / denom.reshape(shape)
    def bw(g, out_t):
        return (g[seg] / denom.reshape(shape)[seg],)
    return _result(out, (x,), bw)


def segment_max(x, seg, n_segments: int):
    """Per-segment elementwise max; empty segments yield zeros and are counted.

    The gradient goes to exactly one element per (segment, column): the lowest
    row index attaining the max.
    """
    global _empty_segment_max_count
    x = _coerce(x)
    seg = np.asarray(seg, dtype=np.int64)
    n_rows = x.values.shape[0]
    vals2d = x.values if x.values.ndim == 2 else x.values[:, None]
    n_cols = vals2d.shape[1]
    out = np.full((n_segments, n_cols), -np.inf)
    np.maximum.at(out, seg, vals2d)
    empty = ~np.isin(np.arange(n_segments), seg)
    if np.any(empty):
        _empty_segment_max_count += int(np.count_nonzero(empty))
        out[empty] = 0.0
    # Lowest row index attaining the segment max, per column.
    winner = np.full((n_segments, n_cols), n_rows, dtype=np.int64)
    if n_rows:
        is_max = vals2d == out[seg]
        candidate = np.where(is_max, np.arange(n_rows)[:, None], n_rows)
        np.minimum.at(winner, seg, candidate)
    if _kink_margins is not None and n_rows:
        # Gap between the selected winner and the best other row; exact ties -> 0.
        not_winner = np.arange(n_rows)[:, None] != winner[seg]
        runner = np.full((n_segments, n_cols), -np.inf)
        np.maximum.at(runner, seg, np.where(not_winner, vals2d, -np.inf))
        gaps = out - runner
        finite = np.isfinite(gaps)
        if np.any(finite):
            _note_margin(np.min(gaps[finite]))
    if x.values.ndim == 1:
        out = out[:, 0]
    def bw(g, out_t):
        g2d = g if g.ndim == 2 else g[:, None]
        gx = np.zeros_like(vals2d)
        rows, cols = np.nonzero(winner < n_rows)
        gx[winner[rows, cols], cols] += g2d[rows, cols]
        return (gx if x.values.ndim == 2 else gx[:, 0],)
    return _result(out, (x,), bw)


def segment_softmax(scores, seg, n_segments: int):
    """Softmax of scores within each segment (per column for 2-D scores)."""
    scores = _coerce(scores)
    seg = np.asarray(seg, dtype=np.int64)
    vals = scores.values if scores.values.ndim == 2 else scores.values[:, None]
    peak = np.full((n_segments, vals.shape[1]), -np.inf)
    np.maximum.at(peak, seg, vals)
    shifted = np.exp(vals - peak[seg])
    denom = np.zeros((n_segments, vals.shape[1]))
    np.add.at(denom, seg, shifted)
    soft = shifted / denom[seg]
    if scores.values.ndim == 1:
        soft = soft[:, 0]
    def bw(g, out_t):
        s = soft if soft.ndim == 2 else soft[:, None]
        g2d = g if g.ndim == 2 else g[:, None]
        dot = np.zeros((n_segments, s.shape[1]))
        np.add.at(dot, seg, g2d * s)
        gx = s * (g2d - dot[seg])
        return (gx if scores.values.ndim == 2 else gx[:, 0],)
    return _result(soft, (scores,), bw)


def softmax_rows(x):
    x = _coerce(x)
    shifted = np.exp(x.values - x.values.max(axis=1, keepdims=True))
    soft = shifted / shifted.sum(axis=1, keepdims=True)
    def bw(g, out):
        dot = (g * soft).sum(axis=1, keepdims=True)
        return (soft * (g - dot),)
    return _result(soft, (x,), bw)


def l2_normalize(x, eps: float = 1e-12):
    x = _coerce(x)
    norms = np.sqrt((x.values**2).sum(axis=1))
    clamped = np.maximum(norms, eps)
    out = x.values / clamped[:, None]
    def bw(g, out_t):
        inv = 1.0 / clamped
        along = (g * x.values).sum(axis=1)
        gx = g * inv[:, None]
        active = norms > eps
        gx -= x.values * (along * inv**3 * active)[:, None]
        return (gx,)
    return _result(out, (x,), bw)


def row_sum(x):
    x = _coerce(x)
    def bw(g, out):
        return (np.repeat(g[:, None], x.values.shape[1], axis=1),)
    return _result(x.values.sum(axis=1), (x,), bw)


def cosine_similarity(a, b):
    """Row-wise cosine between two (n, d) tensors -> (n,)."""
    return row_sum(mul(l2_normalize(a), l2_normalize(b)))


def mse(pred, target):
    """Mean over all elements of the squared difference -> scalar tensor."""
    pred, target = _coerce(pred), _coerce(target)
    diff = pred.values - target.values
    def bw(g, out):
        scale = 2.0 * g / diff.size
        return scale * diff, -scale * diff
    return _result(np.array(np.mean(diff**2)), (pred, target), bw)


def mean_all(x):
    x = _coerce(x)
    def bw(g, out):
        return (np.full_like(x.values, g / x.values.size),)
    return _result(np.array(np.mean(x.values)), (x,), bw)


def sum_all(x):
    x = _coerce(x)
    def bw(g, out):
        return (np.full_like(x.values, g),)
    return _result(np.array(np.sum(x.values)), (x,), bw)


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss through the tape."""
    if loss.values.ndim != 0:
        raise ValueError(f"backward expects a scalar, got shape {loss.values.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.accumulate(np.ones_like(loss.values))
    for node in reversed(topo):
        if node.backward_fn is None or node.grad is None:
            continue
        grads = node.backward_fn(node.grad, node)
        for parent, g in zip(node.parents, grads):
            if parent.requires_grad and g is not None:
                parent.accumulate(g)


class ParamStore:
    """Named trainable tensors; supports freezing and concatenated views."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, values, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=trainable, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def n_elements(self) -> int:
        return sum(t.values.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def freeze(self) -> None:
        for t in self._params.values():
            t.requires_grad = False

    def unfreeze(self) -> None:
        for t in self._params.values():
            t.requires_grad = True

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self._params.items()}

    @classmethod
    def union(cls, *stores: "ParamStore") -> "ParamStore":
        """Concatenated view [x || y]: shares tensors, so updates hit the originals."""
        merged = cls()
        for store in stores:
            for name, t in store.items():
                if name in merged._params:
                    raise ValueError(f"duplicate parameter name {name!r} in union")
                merged._params[name] = t
        return merged

    def to_payload(self) -> dict:
        return {
            "format_version": PARAMSTORE_FORMAT_VERSION,
            "params": {
                name: {
                    "shape": list(t.values.shape),
                    "values": t.values.ravel().tolist(),
                    "trainable": bool(t.requires_grad),
                }
                for name, t in self._params.items()
            },
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_payload(), sort_keys=True) + "\n")

    @classmethod
    def from_payload(cls, payload: dict) -> "ParamStore":
        if payload.get("format_version") != PARAMSTORE_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format_version {payload.get('format_version')}")
        store = cls()
        for name, rec in payload["params"].items():
            values = np.array(rec["values"], dtype=np.float64).reshape(rec["shape"])
            store.add(name, values, trainable=bool(rec["trainable"]))
        return store

    @classmethod
    def load(cls, path: str | Path) -> "ParamStore":
        return cls.from_payload(json.loads(Path(path).read_text()))


class Adam:
    """Standard Adam over a ParamStore; frozen parameters are skipped entirely."""

    def __init__(self, store: ParamStore, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self) -> None:
        self.t += 1
        for name, p in self.store.items():
            if not p.requires_grad or p.grad is None:
                continue
            m = self._m.setdefault(name, np.zeros_like(p.values))
            v = self._v.setdefault(name, np.zeros_like(p.values))
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad**2
            m_hat = m / (1.0 - self.beta1**self.t)
            v_hat = v / (1.0 - self.beta2**self.t)
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        self.store.zero_grad()


def grad_check(f, params, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central finite differences.

    f is a zero-argument closure over the given parameter tensors returning a
    scalar Tensor.
    """
    tensors = params.tensors() if isinstance(params, ParamStore) else list(params)
    for t in tensors:
        t.zero_grad()
    loss = f()
    if not np.isfinite(loss.values):
        raise ValueError("non-finite loss in grad_check")
    backward(loss)
    analytic = [np.zeros_like(t.values) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    for t, g_ad in zip(tensors, analytic):
        flat = t.values.ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            hi = float(f().values)
            flat[k] = orig - eps
            lo = float(f().values)
            flat[k] = orig
            g_fd = (hi - lo) / (2.0 * eps)
            if not np.isfinite(g_fd):
                raise ValueError("non-finite finite-difference value in grad_check")
            ga = g_ad.ravel()[k]
            err = abs(ga - g_fd) / max(1e-8, abs(ga) + abs(g_fd))
            worst = max(worst, err)
    return worst
