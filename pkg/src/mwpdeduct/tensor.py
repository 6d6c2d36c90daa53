"""Minimal dense-tensor math with reverse-mode automatic differentiation.

Float64 throughout; numpy supplies array storage and elementwise kernels,
the tape and every backward rule are implemented here. Shapes are explicit
(1-D vectors and 2-D matrices); the only broadcasting is bias-add of a
vector onto matrix rows.

A single tape is active at a time (see `tape()`); ops run forward-only when
no tape is active, which is how inference avoids bookkeeping.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import RuntimeFailure

LAYER_NORM_EPS = 1e-5

_ACTIVE_TAPE: "Tape | None" = None


class TensorError(RuntimeFailure):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def acc_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"


class Tape:
    def __init__(self):
        self.nodes: list[Tensor] = []
        self.consumed = False

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward) -> Tensor:
        out._parents = parents
        out._backward = backward
        self.nodes.append(out)
        return out


@contextmanager
def tape():
    global _ACTIVE_TAPE
    if _ACTIVE_TAPE is not None:
        raise TensorError("a tape is already active; tapes do not nest")
    t = Tape()
    _ACTIVE_TAPE = t
    try:
        yield t
    finally:
        _ACTIVE_TAPE = None


def _record(out: Tensor, parents: tuple[Tensor, ...], backward) -> Tensor:
    if _ACTIVE_TAPE is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _ACTIVE_TAPE.record(out, parents, backward)
    return out


def backward(loss: Tensor, tape_obj: Tape) -> None:
    """Populate .grad for every tensor contributing to the scalar `loss`."""
    if loss.shape != ():
        raise TensorError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape_obj.consumed:
        raise TensorError("backward called twice on the same tape")
    tape_obj.consumed = True
    loss.grad = np.ones(())
    for node in reversed(tape_obj.nodes):
        if node.grad is None or node._backward is None:
            continue
        node._backward(node.grad)
    # break reference cycles; intermediates are dead after this pass
    for node in tape_obj.nodes:
        node._parents = ()
        node._backward = None
    tape_obj.nodes.clear()


def _check_finite(arr: np.ndarray, op: str):
    if __debug__ and not np.all(np.isfinite(arr)):
        raise TensorError(f"non-finite value produced by {op}")


# ---------------------------------------------------------------- core ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim == 1 and bd.ndim == 1:
        if ad.shape != bd.shape:
            raise TensorError(f"matmul shape mismatch {ad.shape} vs {bd.shape}")
        out = Tensor(ad @ bd)

        def back(g):
            if a.requires_grad:
                a.acc_grad(g * bd)
            if b.requires_grad:
                b.acc_grad(g * ad)
    elif ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise TensorError(f"matmul shape mismatch {ad.shape} vs {bd.shape}")
        out = Tensor(ad @ bd)

        def back(g):
            if a.requires_grad:
                a.acc_grad(g @ bd.T)
            if b.requires_grad:
                b.acc_grad(ad.T @ g)
    elif ad.ndim == 1 and bd.ndim == 2:
        if ad.shape[0] != bd.shape[0]:
            raise TensorError(f"matmul shape mismatch {ad.shape} vs {bd.shape}")
        out = Tensor(ad @ bd)

        def back(g):
            if a.requires_grad:
                a.acc_grad(bd @ g)
            if b.requires_grad:
                b.acc_grad(np.outer(ad, g))
    elif ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise TensorError(f"matmul shape mismatch {ad.shape} vs {bd.shape}")
        out = Tensor(ad @ bd)

        def back(g):
            if a.requires_grad:
                a.acc_grad(np.outer(g, bd))
            if b.requires_grad:
                b.acc_grad(ad.T @ g)
    else:
        raise TensorError(f"matmul does not support shapes {ad.shape} and {bd.shape}")
    _check_finite(out.data, "matmul")
    return _record(out, (a, b), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:
        out = Tensor(ad + bd)

        def back(g):
            if a.requires_grad:
                a.acc_grad(g)
            if b.requires_grad:
                b.acc_grad(g)
    elif ad.ndim == 2 and bd.ndim == 1 and ad.shape[1] == bd.shape[0]:
        # bias add over rows, the single permitted broadcast
        out = Tensor(ad + bd)

        def back(g):
            if a.requires_grad:
                a.acc_grad(g)
            if b.requires_grad:
                b.acc_grad(g.sum(axis=0))
    else:
        raise TensorError(f"add shape mismatch {ad.shape} vs {bd.shape}")
    return _record(out, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise TensorError(f"sub shape mismatch {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data - b.data)

    def back(g):
        if a.requires_grad:
            a.acc_grad(g)
        if b.requires_grad:
            b.acc_grad(-g)
    return _record(out, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise TensorError(f"mul shape mismatch {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data)

    def back(g):
        if a.requires_grad:
            a.acc_grad(g * b.data)
        if b.requires_grad:
            b.acc_grad(g * a.data)
    return _record(out, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c)

    def back(g):
        if a.requires_grad:
            a.acc_grad(g * c)
    return _record(out, (a,), back)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0))

    def back(g):
        if a.requires_grad:
            a.acc_grad(g * mask)
    return _record(out, (a,), back)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)

    def back(g):
        if a.requires_grad:
            a.acc_grad(g * (1.0 - y * y))
    return _record(out, (a,), back)


def sigmoid(a: Tensor) -> Tensor:
    # tanh form is overflow-safe for large |x|
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    out = Tensor(y)

    def back(g):
        if a.requires_grad:
            a.acc_grad(g * y * (1.0 - y))
    return _record(out, (a,), back)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis (1-D vector or per-row on a matrix)."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def back(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=-1, keepdims=True)
            a.acc_grad(y * (g - dot))
    return _record(out, (a,), back)


def layer_norm(a: Tensor) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine);
    a constant vector maps to zeros thanks to the epsilon guard."""
    mean = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    y = centered * inv
    out = Tensor(y)

    def back(g):
        if a.requires_grad:
            a.acc_grad(inv * (g - g.mean(axis=-1, keepdims=True)
                              - y * (g * y).mean(axis=-1, keepdims=True)))
    return _record(out, (a,), back)


def dropout(a: Tensor, p: float, train_mode: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not train_mode or p <= 0.0:
        return a
    if rng is None:
        raise TensorError("dropout in train mode needs an rng")
    keep = (rng.random(a.data.shape) >= p) / (1.0 - p)
    out = Tensor(a.data * keep)

    def back(g):
        if a.requires_grad:
            a.acc_grad(g * keep)
    return _record(out, (a,), back)


def tsum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())

    def back(g):
        if a.requires_grad:
            a.acc_grad(np.full_like(a.data, float(g)))
    return _record(out, (a,), back)


def concat_vecs(parts: list[Tensor]) -> Tensor:
    for p in parts:
        if p.data.ndim != 1:
            raise TensorError(f"concat_vecs needs vectors, got shape {p.data.shape}")
    out = Tensor(np.concatenate([p.data for p in parts]))
    sizes = [p.data.shape[0] for p in parts]

    def back(g):
        off = 0
        for p, s in zip(parts, sizes):
            if p.requires_grad:
                p.acc_grad(g[off:off + s])
            off += s
    return _record(out, tuple(parts), back)


def hconcat(parts: list[Tensor]) -> Tensor:
    """Concatenate matrices along columns."""
    rows = parts[0].data.shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != rows:
            raise TensorError("hconcat needs matrices with equal row counts")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    sizes = [p.data.shape[1] for p in parts]

    def back(g):
        off = 0
        for p, s in zip(parts, sizes):
            if p.requires_grad:
                p.acc_grad(g[:, off:off + s])
            off += s
    return _record(out, tuple(parts), back)


def vconcat(a: Tensor, b_row: Tensor) -> Tensor:
    """Append a vector as a new bottom row of a matrix."""
    if a.data.ndim != 2 or b_row.data.ndim != 1 or a.data.shape[1] != b_row.data.shape[0]:
        raise TensorError(f"vconcat shape mismatch {a.data.shape} vs {b_row.data.shape}")
    out = Tensor(np.vstack([a.data, b_row.data]))

    def back(g):
        if a.requires_grad:
            a.acc_grad(g[:-1])
        if b_row.requires_grad:
            b_row.acc_grad(g[-1])
    return _record(out, (a, b_row), back)


def stack_rows(rows: list[Tensor]) -> Tensor:
    for r in rows:
        if r.data.ndim != 1:
            raise TensorError(f"stack_rows needs vectors, got shape {r.data.shape}")
    out = Tensor(np.stack([r.data for r in rows]))

    def back(g):
        for k, r in enumerate(rows):
            if r.requires_grad:
                r.acc_grad(g[k])
    return _record(out, tuple(rows), back)


def row(a: Tensor, k: int) -> Tensor:
    if a.data.ndim != 2:
        raise TensorError(f"row needs a matrix, got shape {a.data.shape}")
    out = Tensor(a.data[k].copy())

    def back(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[k] = g
            a.acc_grad(full)
    return _record(out, (a,), back)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    if a.data.ndim != 2:
        raise TensorError(f"gather_rows needs a matrix, got shape {a.data.shape}")
    idx = np.asarray(idx, dtype=np.intp)
    out = Tensor(a.data[idx])

    def back(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a.acc_grad(full)
    return _record(out, (a,), back)


def gather(a: Tensor, idx: np.ndarray) -> Tensor:
    if a.data.ndim != 1:
        raise TensorError(f"gather needs a vector, got shape {a.data.shape}")
    idx = np.asarray(idx, dtype=np.intp)
    out = Tensor(a.data[idx])

    def back(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a.acc_grad(full)
    return _record(out, (a,), back)


def pick_slice(a: Tensor, lo: int, hi: int) -> Tensor:
    if a.data.ndim != 1:
        raise TensorError(f"pick_slice needs a vector, got shape {a.data.shape}")
    out = Tensor(a.data[lo:hi].copy())

    def back(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[lo:hi] = g
            a.acc_grad(full)
    return _record(out, (a,), back)


def col_slice(a: Tensor, lo: int, hi: int) -> Tensor:
    if a.data.ndim != 2:
        raise TensorError(f"col_slice needs a matrix, got shape {a.data.shape}")
    out = Tensor(a.data[:, lo:hi].copy())

    def back(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, lo:hi] = g
            a.acc_grad(full)
    return _record(out, (a,), back)


def mul_rows(a: Tensor, v: Tensor) -> Tensor:
    """Multiply every row of a matrix by a vector (affine gain after
    layer_norm); the multiplicative twin of the bias-add broadcast."""
    if a.data.ndim != 2 or v.data.ndim != 1 or a.data.shape[1] != v.data.shape[0]:
        raise TensorError(f"mul_rows shape mismatch {a.data.shape} vs {v.data.shape}")
    out = Tensor(a.data * v.data)

    def back(g):
        if a.requires_grad:
            a.acc_grad(g * v.data)
        if v.requires_grad:
            v.acc_grad((g * a.data).sum(axis=0))
    return _record(out, (a, v), back)


def vstack2(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[1]:
        raise TensorError(f"vstack2 shape mismatch {a.data.shape} vs {b.data.shape}")
    out = Tensor(np.vstack([a.data, b.data]))
    na = a.data.shape[0]

    def back(g):
        if a.requires_grad:
            a.acc_grad(g[:na])
        if b.requires_grad:
            b.acc_grad(g[na:])
    return _record(out, (a, b), back)


def ones_like(a: Tensor) -> Tensor:
    return Tensor(np.ones_like(a.data))


def flatten(a: Tensor) -> Tensor:
    out = Tensor(a.data.reshape(-1))
    shape = a.data.shape

    def back(g):
        if a.requires_grad:
            a.acc_grad(g.reshape(shape))
    return _record(out, (a,), back)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    old = a.data.shape

    def back(g):
        if a.requires_grad:
            a.acc_grad(g.reshape(old))
    return _record(out, (a,), back)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise TensorError(f"transpose needs a matrix, got shape {a.data.shape}")
    out = Tensor(a.data.T.copy())

    def back(g):
        if a.requires_grad:
            a.acc_grad(g.T)
    return _record(out, (a,), back)


def embedding(weight: Tensor, ids: list[int] | np.ndarray) -> Tensor:
    return gather_rows(weight, np.asarray(ids, dtype=np.intp))


def vec_max(a: Tensor) -> Tensor:
    """Max over a vector; the subgradient flows to the first argmax, which
    matches the decoder's lexicographic tie rule."""
    if a.data.ndim != 1 or a.data.size == 0:
        raise TensorError(f"vec_max needs a nonempty vector, got shape {a.data.shape}")
    k = int(np.argmax(a.data))
    out = Tensor(a.data[k])

    def back(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[k] = float(g)
            a.acc_grad(full)
    return _record(out, (a,), back)


def pick(a: Tensor, k: int) -> Tensor:
    if a.data.ndim != 1:
        raise TensorError(f"pick needs a vector, got shape {a.data.shape}")
    out = Tensor(a.data[k])

    def back(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[k] = float(g)
            a.acc_grad(full)
    return _record(out, (a,), back)


def detach(a: Tensor) -> Tensor:
    return Tensor(a.data.copy())


# ------------------------------------------------------------- parameters

@dataclass
class ParamStore:
    """Ordered, named parameter registry; iteration order is creation order
    and defines the checkpoint layout."""

    params: dict[str, Tensor] = field(default_factory=dict)
    decay: dict[str, bool] = field(default_factory=dict)

    def new(self, name: str, shape: tuple[int, ...], rng: np.random.Generator,
            init: str = "uniform", decay: bool = True) -> Tensor:
        if name in self.params:
            raise TensorError(f"duplicate parameter name {name!r}")
        if init == "uniform":
            fan_in = shape[0] if len(shape) > 1 else shape[0]
            bound = 1.0 / np.sqrt(max(fan_in, 1))
            data = rng.uniform(-bound, bound, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise TensorError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self.params[name] = t
        self.decay[name] = decay
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def zero_grads(self):
        for t in self.params.values():
            t.grad = None

    def scale_grads(self, c: float):
        for t in self.params.values():
            if t.grad is not None:
                t.grad *= c

    def n_values(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def export_raw(self) -> dict[str, list]:
        return {name: t.data.tolist() for name, t in self.params.items()}

    def clone_data(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_data(self, blob: dict[str, np.ndarray]):
        for name, t in self.params.items():
            t.data[...] = blob[name]


# ------------------------------------------------------------------- adam

@dataclass
class AdamState:
    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(store: ParamStore, state: AdamState) -> None:
    """Bias-corrected Adam with decoupled weight decay (decay is added to
    the update, never folded into the gradient moments); parameters flagged
    decay=False (biases, layer-norm affines) are exempt."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in store.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay and store.decay.get(name, True):
            update = update + state.weight_decay * p.data
        p.data -= state.lr * update


# ------------------------------------------------------------ checkpoints

CHECKPOINT_MAGIC = "mwpdeduct-params-v1"


def save_checkpoint(store: ParamStore, prefix: str, meta: dict | None = None) -> None:
    """Write `<prefix>.bin` (flat float64 little-endian values) and
    `<prefix>.json` (ordered names/shapes plus caller metadata)."""
    manifest = {
        "format": CHECKPOINT_MAGIC,
        "params": [{"name": n, "shape": list(t.data.shape)} for n, t in store.params.items()],
        "decay": {n: bool(d) for n, d in store.decay.items()},
    }
    if meta:
        manifest.update(meta)
    with open(prefix + ".bin", "wb") as f:
        for t in store.params.values():
            f.write(t.data.astype("<f8").tobytes())
    with open(prefix + ".json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1)


def load_checkpoint(store: ParamStore, prefix: str) -> dict:
    """Load values back into an identically-shaped store; returns manifest."""
    with open(prefix + ".json", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("format") != CHECKPOINT_MAGIC:
        raise TensorError(f"unrecognized checkpoint format in {prefix}.json")
    listed = [(p["name"], tuple(p["shape"])) for p in manifest["params"]]
    current = [(n, t.data.shape) for n, t in store.params.items()]
    if listed != current:
        detail = "parameter count differs"
        for a, b in zip(listed, current):
            if a != b:
                detail = f"checkpoint has {a}, model expects {b}"
                break
        raise TensorError(f"checkpoint layout mismatch ({len(listed)} vs {len(current)} params): {detail}")
    raw = open(prefix + ".bin", "rb").read()
    need = sum(int(np.prod(s)) for _, s in listed) * 8
    if len(raw) != need:
        raise TensorError(f"checkpoint binary is {len(raw)} bytes, expected {need}")
    off = 0
    for name, shape in listed:
        n = int(np.prod(shape)) * 8
        store.params[name].data[...] = np.frombuffer(raw[off:off + n], dtype="<f8").reshape(shape)
        off += n
    return manifest
