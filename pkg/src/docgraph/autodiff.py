"""Minimal dense-tensor engine with reverse-mode differentiation.

Every op returns a new :class:`Tensor` recording its parents and a
backward rule; calling :meth:`Tensor.backward` on a scalar result walks
the recorded graph in reverse topological order and accumulates gradients
into the leaves.  Data lives in numpy arrays (float64 by default,
float32 selectable through :class:`ParamStore` for speed); every op
checks its result for NaN/Inf.

A recording graph belongs to one thread for the duration of a training
step; forward passes on frozen parameters are safe to run in parallel.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np


class AutodiffError(ValueError):
    """Shape mismatch, misuse, or other recording-graph error."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


#: Toggle for the per-op finiteness check (left on in tests and training).
CHECK_FINITE = True


def _checked(data: np.ndarray, op: str) -> np.ndarray:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite result in op {op!r}")
    return data


class Tensor:
    """A node in the recording graph."""

    __slots__ = ("data", "grad", "parents", "backward_fn", "op")

    def __init__(
        self,
        data: np.ndarray,
        parents: tuple["Tensor", ...] = (),
        backward_fn: Optional[Callable[[np.ndarray], tuple]] = None,
        op: str = "leaf",
    ):
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"<Tensor {self.op} shape={self.shape}>"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar result."""
        if self.data.shape != ():
            raise AutodiffError(f"backward() requires a scalar, got shape {self.shape}")
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
            for parent in node.parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node.backward_fn is None or node.grad is None:
                continue
            for parent, grad in zip(node.parents, node.backward_fn(node.grad)):
                if grad is None:
                    continue
                if parent.grad is None:
                    parent.grad = grad.copy() if grad.base is not None else grad
                else:
                    parent.grad = parent.grad + grad


def constant(data, dtype=None) -> Tensor:
    """Leaf tensor that does not require gradient bookkeeping by callers."""
    return Tensor(np.asarray(data, dtype=dtype), op="const")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise AutodiffError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = _checked(a.data @ b.data, "matmul")

    def backward(grad):
        return grad @ b.data.T, a.data.T @ grad

    return Tensor(out, (a, b), backward, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also supports adding a (d,) bias to (n, d) rows."""
    bias = a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]
    if not bias and a.shape != b.shape:
        raise AutodiffError(f"add shape mismatch: {a.shape} + {b.shape}")
    out = _checked(a.data + b.data, "add")

    def backward(grad):
        return grad, grad.sum(axis=0) if bias else grad

    return Tensor(out, (a, b), backward, "add")


def scale(a: Tensor, factor: float) -> Tensor:
    out = _checked(a.data * factor, "scale")

    def backward(grad):
        return (grad * factor,)

    return Tensor(out, (a,), backward, "scale")


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    if not parts:
        raise AutodiffError("concat of no tensors")
    ndim = parts[0].data.ndim
    if any(p.data.ndim != ndim for p in parts):
        raise AutodiffError("concat rank mismatch")
    try:
        out = _checked(np.concatenate([p.data for p in parts], axis=-1), "concat")
    except ValueError:
        raise AutodiffError(
            f"concat shape mismatch: {[p.shape for p in parts]}"
        ) from None
    sizes = [p.shape[-1] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(grad):
        return tuple(
            grad[..., offsets[i] : offsets[i + 1]] for i in range(len(parts))
        )

    return Tensor(out, tuple(parts), backward, "concat")


def relu(a: Tensor) -> Tensor:
    out = _checked(np.maximum(a.data, 0.0), "relu")

    def backward(grad):
        return (grad * (a.data > 0.0),)

    return Tensor(out, (a,), backward, "relu")


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax of a (n, d) tensor."""
    if a.data.ndim != 2:
        raise AutodiffError(f"softmax_rows expects 2-D input, got {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    out = _checked(exp / exp.sum(axis=1, keepdims=True), "softmax")

    def backward(grad):
        dot = np.sum(grad * out, axis=1, keepdims=True)
        return (out * (grad - dot),)

    return Tensor(out, (a,), backward, "softmax")


def dropout(a: Tensor, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: identity at evaluation time."""
    if not (0.0 <= p < 1.0):
        raise AutodiffError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise AutodiffError("dropout in training mode needs an rng")
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    out = _checked(a.data * mask, "dropout")

    def backward(grad):
        return (grad * mask,)

    return Tensor(out, (a,), backward, "dropout")


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Select rows of a (n, d) tensor: result[i] = a[index[i]]."""
    index = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2 or index.ndim != 1:
        raise AutodiffError("gather_rows expects a 2-D tensor and 1-D index")
    out = a.data[index]

    def backward(grad):
        acc = np.zeros_like(a.data)
        np.add.at(acc, index, grad)
        return (acc,)

    return Tensor(out, (a,), backward, "gather")


def sum_all(a: Tensor) -> Tensor:
    out = _checked(a.data.sum(), "sum")

    def backward(grad):
        return (np.full_like(a.data, grad),)

    return Tensor(out, (a,), backward, "sum")


def mean_all(a: Tensor) -> Tensor:
    out = _checked(a.data.mean(), "mean")

    def backward(grad):
        return (np.full_like(a.data, grad / a.data.size),)

    return Tensor(out, (a,), backward, "mean")


def cross_entropy(
    logits: Tensor, targets: np.ndarray, class_weights: Optional[np.ndarray] = None
) -> Tensor:
    """Weighted mean cross-entropy over rows of ``logits``.

    ``L = sum_i w_{t_i} * (-log softmax(logits)_i[t_i]) / sum_i w_{t_i}``
    with unit weights by default, matching the usual weighted-mean
    convention.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or targets.ndim != 1 or targets.shape[0] != logits.shape[0]:
        raise AutodiffError(f"cross_entropy shapes: logits {logits.shape}, targets {targets.shape}")
    n, n_classes = logits.shape
    if n == 0:
        raise AutodiffError("cross_entropy over an empty batch")
    if targets.min() < 0 or targets.max() >= n_classes:
        raise AutodiffError(f"target index out of range [0, {n_classes})")
    if class_weights is not None:
        class_weights = np.asarray(class_weights, dtype=logits.data.dtype)
        if class_weights.shape != (n_classes,):
            raise AutodiffError(f"class_weights must have shape ({n_classes},)")
        sample_w = class_weights[targets]
    else:
        sample_w = np.ones(n, dtype=logits.data.dtype)
    total_w = sample_w.sum()
    if total_w <= 0:
        raise AutodiffError("cross_entropy weights sum to zero")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsumexp
    losses = -logp[np.arange(n), targets]
    out = _checked((sample_w * losses).sum() / total_w, "cross_entropy")

    def backward(grad):
        probs = np.exp(logp)
        probs[np.arange(n), targets] -= 1.0
        return (probs * (grad * sample_w / total_w)[:, None],)

    return Tensor(out, (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------------------
# Parameters and optimization

class ParamStore:
    """Named parameters with gradients, deterministic initialization and
    AdamW state."""

    def __init__(self, seed: int = 0, dtype=np.float64):
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def _register(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise AutodiffError(f"parameter {name!r} already registered")
        tensor = Tensor(data.astype(self.dtype), op=f"param:{name}")
        self.params[name] = tensor
        self.adam_m[name] = np.zeros_like(tensor.data)
        self.adam_v[name] = np.zeros_like(tensor.data)
        return tensor

    def kaiming_uniform(self, name: str, shape: tuple[int, int]) -> Tensor:
        """Kaiming-uniform init for weights used as ``x @ W`` before a ReLU:
        U(-b, b) with b = sqrt(6 / fan_in), fan_in = shape[0]."""
        bound = math.sqrt(6.0 / shape[0])
        return self._register(name, self.rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self._register(name, np.zeros(shape))

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    @property
    def names(self) -> list[str]:
        return sorted(self.params)

    @property
    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise AutodiffError(
                f"checkpoint parameters {sorted(state)} do not match model {self.names}"
            )
        for name, data in state.items():
            tensor = self.params[name]
            data = np.asarray(data, dtype=self.dtype)
            if data.shape != tensor.data.shape:
                raise AutodiffError(
                    f"parameter {name!r}: checkpoint shape {data.shape} != {tensor.data.shape}"
                )
            tensor.data = data.copy()


def adamw_step(
    store: ParamStore,
    lr: float,
    weight_decay: float = 0.0,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One AdamW step with decoupled weight decay:
    ``p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)``.

    Parameters with no accumulated gradient are treated as zero-gradient
    (they still decay).  Raises if no parameter has a gradient at all.
    """
    if all(t.grad is None for t in store.params.values()):
        raise AutodiffError("adamw_step called before backward()")
    beta1, beta2 = betas
    store.step_count += 1
    t = store.step_count
    for name in store.names:
        tensor = store.params[name]
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        m = store.adam_m[name]
        v = store.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        tensor.data = tensor.data - lr * (
            m_hat / (np.sqrt(v_hat) + eps) + weight_decay * tensor.data
        )


# ---------------------------------------------------------------------------
# Checkpoints
#
# Byte layout (all integers little-endian):
#   bytes 0..7   magic b"DGRCKPT1"
#   bytes 8..11  uint32 length H of the JSON header
#   bytes 12..12+H  UTF-8 JSON: {"version": 1, "config": {...},
#       "params": [{"name", "shape", "dtype", "offset", "nbytes"}, ...]}
#   then the data section: for each param, raw row-major little-endian
#   values at the given offset (relative to the data section start).

CHECKPOINT_MAGIC = b"DGRCKPT1"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray], config: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    blobs = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = le.tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": arr.dtype.name,
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"version": CHECKPOINT_VERSION, "config": config, "params": entries},
        sort_keys=True,
    ).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise AutodiffError(f"{path} is not a checkpoint (bad magic)")
    (header_len,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise AutodiffError(f"unsupported checkpoint version {header.get('version')}")
    data = raw[12 + header_len :]
    params: dict[str, np.ndarray] = {}
    for entry in header["params"]:
        blob = data[entry["offset"] : entry["offset"] + entry["nbytes"]]
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        arr = np.frombuffer(blob, dtype=dtype).astype(np.dtype(entry["dtype"]))
        params[entry["name"]] = arr.reshape(entry["shape"])
    return params, header["config"]
