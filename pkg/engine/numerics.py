"""
Husté tenzory nad numpy s páskou pre spätnú deriváciu (reverse-mode autodiff).

Každá diferencovateľná operácia vráti nový Tensor; ak niektorý vstup vyžaduje
gradient, zapíše sa uzol na aktívnu ComputeTape. Bez nej patrí uzol páske grafu, z ktorého
pochádzajú vstupy (nový koreň dostane novú pásku), takže graf žije len kým žijú jeho tenzory.
backward() potom prejde pásku odzadu a každý uzol navštívi práve raz.
"""
from __future__ import annotations

import contextlib
import contextvars
import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from exceptions import ConfigError, ContractError, DimensionError, NumericError, TokenIndexError

logger = logging.getLogger(__name__)

IGNORE_INDEX = -100

DTYPES = {"float32": np.float32, "float64": np.float64}

_precision: contextvars.ContextVar = contextvars.ContextVar("precision", default=np.float32)
_active_tape: contextvars.ContextVar = contextvars.ContextVar("active_tape", default=None)
_grad_enabled: contextvars.ContextVar = contextvars.ContextVar("grad_enabled", default=True)


def default_dtype():
    return _precision.get()


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    """Dočasne prepne presnosť nových tenzorov ("float32" alebo "float64")."""
    if name not in DTYPES:
        raise ConfigError(f"unknown precision '{name}', expected one of {sorted(DTYPES)}")
    token = _precision.set(DTYPES[name])
    try:
        yield
    finally:
        _precision.reset(token)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def _check_values(arr: np.ndarray, what: str, allow_neg_inf: bool) -> None:
    if np.issubdtype(arr.dtype, np.floating):
        ok = np.isfinite(arr)
        if allow_neg_inf:
            ok |= np.isneginf(arr)
        if not ok.all():
            raise NumericError(f"non-finite values in {what}")


class Tensor:
    """Tvar + dáta v row-major poradí + voliteľný gradient."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.array(data, dtype=dtype or default_dtype())
        _check_values(arr, name or "tensor", allow_neg_inf=False)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._tape: Optional[ComputeTape] = None

    @classmethod
    def _from_op(cls, arr: np.ndarray, op: str) -> "Tensor":
        # vysledky operacii mozu niest -inf (maska pozornosti), NaN nikdy
        _check_values(arr, f"output of {op}", allow_neg_inf=True)
        out = cls.__new__(cls)
        out.data = arr
        out.requires_grad = False
        out.grad = None
        out.name = None
        out._tape = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name, dtype=self.data.dtype)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __radd__(self, other):
        return add(_as_tensor(other, self), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self)))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=like.data.dtype)


@dataclass
class TapeNode:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], tuple]


class ComputeTape:
    """Záznam vykonaných operácií v topologickom poradí (iba pridávanie)."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self._tokens: list = []

    def __enter__(self) -> "ComputeTape":
        self._tokens.append(_active_tape.set(self))
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: TapeNode) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()

    def absorb(self, other: "ComputeTape") -> None:
        """Prevezme uzly inej pásky; oba grafy boli doteraz nezávislé, poradie ostáva topologické."""
        for node in other.nodes:
            node.output._tape = self
        self.nodes.extend(other.nodes)
        other.clear()

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise ContractError("loss was not recorded on this tape")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            out_grad = node.output.grad
            if out_grad is None:
                continue
            input_grads = node.backward(out_grad)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                grad = np.asarray(grad, dtype=tensor.data.dtype).reshape(tensor.shape)
                if tensor.grad is None:
                    tensor.grad = grad.copy()
                else:
                    tensor.grad = tensor.grad + grad
        # po prechode je paska spotrebovana
        self.clear()


def current_tape() -> Optional[ComputeTape]:
    """Páska otvorená cez `with ComputeTape()`, inak None."""
    return _active_tape.get()


def _tape_for(inputs: Sequence[Tensor]) -> ComputeTape:
    # bez otvorenej pasky: paska grafu, z ktoreho vstupy pochadzaju, alebo nova pre novy koren
    tape = current_tape()
    if tape is not None:
        return tape
    tapes: list[ComputeTape] = []
    for t in inputs:
        if t._tape is not None and not any(t._tape is seen for seen in tapes):
            tapes.append(t._tape)
    if not tapes:
        return ComputeTape()
    for other in tapes[1:]:
        tapes[0].absorb(other)
    return tapes[0]


def backward(loss: Tensor) -> None:
    """Naplní .grad všetkých tenzorov s requires_grad, z ktorých je loss dosiahnuteľný."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise ContractError("loss is not on a compute tape (no input requires grad)")
    loss._tape.backward(loss)


def _record(out_data: np.ndarray, op: str, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor._from_op(out_data, op)
    if _grad_enabled.get() and any(t.requires_grad for t in inputs):
        tape = _tape_for(inputs)
        out.requires_grad = True
        out._tape = tape
        tape.record(TapeNode(op, tuple(inputs), out, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementarne operacie
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(a.data + b.data, "add", (a, b), _backward)


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, "neg", (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    a_data, b_data = a.data, b.data

    def _backward(g):
        return _unbroadcast(g * b_data, a.shape), _unbroadcast(g * a_data, b.shape)

    return _record(a_data * b_data, "mul", (a, b), _backward)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _record(a.data * a.data.dtype.type(factor), "scale", (a,), lambda g: (g * factor,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Maticový súčin [m×n]·[n×p]; pri 3-D vstupoch po dávkach (hlavy pozornosti)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    a_data, b_data = a.data, b.data

    def _backward(g):
        grad_a = g @ np.swapaxes(b_data, -1, -2)
        grad_b = np.swapaxes(a_data, -1, -2) @ g
        return grad_a, grad_b

    return _record(a_data @ b_data, "matmul", (a, b), _backward)


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record(np.transpose(a.data, axes), "transpose", (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old_shape = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old_shape} as {tuple(shape)}") from None
    return _record(out, "reshape", (a,), lambda g: (g.reshape(old_shape),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, "concat", tensors, _backward)


def tensor_sum(a: Tensor) -> Tensor:
    shape = a.shape
    return _record(np.asarray(a.data.sum()), "sum", (a,), lambda g: (np.broadcast_to(g, shape),))


def mean(a: Tensor) -> Tensor:
    return scale(tensor_sum(a), 1.0 / max(a.size, 1))


def masked_fill(x: Tensor, allowed: np.ndarray) -> Tensor:
    """Pozície mimo masky nastaví na -inf (pred softmaxom)."""
    allowed = np.broadcast_to(np.asarray(allowed, dtype=bool), x.shape)
    out = np.where(allowed, x.data, -np.inf).astype(x.data.dtype)
    return _record(out, "masked_fill", (x,), lambda g: (np.where(allowed, g, 0.0),))


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if rng is None:
        raise ContractError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / x.data.dtype.type(1.0 - p)
    return mul(x, Tensor(keep, dtype=x.data.dtype))


# ---------------------------------------------------------------------------
# neuronove primitivy
# ---------------------------------------------------------------------------

def softmax_rows(x: Tensor) -> Tensor:
    """Softmax po riadkoch (posledná os) s odčítaním maxima riadku."""
    if np.isnan(x.data).any():
        raise NumericError("softmax_rows: NaN in input")
    row_max = x.data.max(axis=-1, keepdims=True)
    if np.isneginf(row_max).any():
        raise NumericError("softmax_rows: a row is fully masked")
    exps = np.exp(x.data - row_max)
    probs = exps / exps.sum(axis=-1, keepdims=True)

    def _backward(g):
        return (probs * (g - (g * probs).sum(axis=-1, keepdims=True)),)

    return _record(probs, "softmax_rows", (x,), _backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match axis of length {n}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std
    g_data = gain.data

    def _backward(g):
        grad_gain = (g * normed).reshape(-1, n).sum(axis=0)
        grad_bias = g.reshape(-1, n).sum(axis=0)
        gn = g * g_data
        grad_x = inv_std * (gn - gn.mean(axis=-1, keepdims=True)
                            - normed * (gn * normed).mean(axis=-1, keepdims=True))
        return grad_x, grad_gain, grad_bias

    return _record(normed * g_data + bias.data, "layer_norm", (x, gain, bias), _backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU v tanh aproximácii."""
    v = x.data
    t = np.tanh(_GELU_C * (v + 0.044715 * v ** 3))

    def _backward(g):
        sech2 = 1.0 - t * t
        return (g * (0.5 * (1.0 + t) + 0.5 * v * sech2 * _GELU_C * (1.0 + 3 * 0.044715 * v * v)),)

    return _record(0.5 * v * (1.0 + t), "gelu", (x,), _backward)


def silu(x: Tensor) -> Tensor:
    v = x.data
    sig = 1.0 / (1.0 + np.exp(-v))

    def _backward(g):
        return (g * (sig * (1.0 + v * (1.0 - sig))),)

    return _record(v * sig, "silu", (x,), _backward)


def embedding(weight: Tensor, ids: Sequence[int]) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    vocab = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise TokenIndexError(f"token id out of range for vocabulary of {vocab}")
    shape = weight.shape

    def _backward(g):
        grad = np.zeros(shape, dtype=g.dtype)
        np.add.at(grad, ids, g)
        return (grad,)

    return _record(weight.data[ids], "embedding", (weight,), _backward)


def rotary(x: Tensor, positions: Sequence[int], base: float = 10000.0) -> Tensor:
    """Rotačné kódovanie pozícií pre x tvaru [..., t, head_dim] (párna head_dim)."""
    head_dim = x.shape[-1]
    if head_dim % 2:
        raise DimensionError(f"rotary needs an even head dimension, got {head_dim}")
    pos = np.asarray(positions, dtype=np.float64)
    if pos.shape != (x.shape[-2],):
        raise DimensionError(f"rotary: {pos.shape[0] if pos.ndim else 0} positions for {x.shape[-2]} rows")
    half = head_dim // 2
    inv_freq = base ** (-np.arange(half, dtype=np.float64) / half)
    angles = np.outer(pos, inv_freq)
    cos = np.concatenate([np.cos(angles)] * 2, axis=-1).astype(x.data.dtype)
    sin = np.concatenate([np.sin(angles)] * 2, axis=-1).astype(x.data.dtype)

    def rotate_half(v):
        return np.concatenate([-v[..., half:], v[..., :half]], axis=-1)

    def rotate_half_t(v):
        return np.concatenate([v[..., half:], -v[..., :half]], axis=-1)

    def _backward(g):
        return (g * cos + rotate_half_t(g * sin),)

    return _record(x.data * cos + rotate_half(x.data) * sin, "rotary", (x,), _backward)


def cross_entropy(logits: Tensor, targets: Sequence[int], ignore_index: int = IGNORE_INDEX,
                  reduction: str = "mean") -> Tensor:
    """Priemerná (alebo súčtová) záporná log-vierohodnosť cez pozície; ignore_index sa preskakuje."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects [t×V] logits, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    t, vocab = logits.shape
    if targets.shape != (t,):
        raise DimensionError(f"cross_entropy: {targets.shape} targets for {t} positions")
    counted = targets != ignore_index
    if ((targets[counted] < 0) | (targets[counted] >= vocab)).any():
        raise TokenIndexError(f"target id out of range for vocabulary of {vocab}")
    if reduction not in ("mean", "sum"):
        raise ConfigError(f"unknown reduction '{reduction}'")

    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    rows = np.nonzero(counted)[0]
    n = len(rows)
    total = -log_probs[rows, targets[rows]].sum() if n else 0.0
    denom = float(n) if (reduction == "mean" and n) else 1.0

    def _backward(g):
        grad = np.zeros_like(log_probs)
        if n:
            grad[rows] = np.exp(log_probs[rows])
            grad[rows, targets[rows]] -= 1.0
        return (grad * (g / denom),)

    return _record(np.asarray(total / denom, dtype=logits.data.dtype), "cross_entropy", (logits,), _backward)


# ---------------------------------------------------------------------------
# kontrola gradientu
# ---------------------------------------------------------------------------

def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-5) -> float:
    """
    Porovná analytický gradient s centrálnymi diferenciami.
    Vráti najväčšiu chybu |analytic - numeric| / max(1, |analytic|).
    fn musí vracať skalár; vstupy by mali byť float64.
    """
    for tensor in inputs:
        tensor.requires_grad = True
        tensor.zero_grad()
    with ComputeTape() as tape:
        out = fn(*inputs)
        tape.backward(out)
    worst = 0.0
    with no_grad():
        for tensor in inputs:
            analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            flat = tensor.data.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + step
                plus = fn(*inputs).item()
                flat[i] = original - step
                minus = fn(*inputs).item()
                flat[i] = original
                numeric = (plus - minus) / (2 * step)
                a = analytic.reshape(-1)[i]
                worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
