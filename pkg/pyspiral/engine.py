"""Dense numpy layers with hand-written backward passes: fully-connected
layers, the LSTM cell, activations, dropout, softmax cross-entropy, Adam and
finite-difference gradient checking.

All tensors are float64 `numpy.ndarray`s. Backward functions take the upstream
gradient plus whatever the forward pass cached and return input and parameter
gradients.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from .util import NumericError, ValidationError, debug

Tensor = np.ndarray

LOG_FLOOR = 1e-12
GATES = ("f", "i", "o", "c")


class ParamStore(Dict[str, np.ndarray]):
    """Named trainable tensors, in insertion order."""

    def count(self) -> int:
        return int(sum(p.size for p in self.values()))

    def copy(self) -> "ParamStore":  # type: ignore[override]
        return ParamStore((name, value.copy()) for name, value in self.items())

    def zeros_like(self) -> "ParamStore":
        return ParamStore((name, np.zeros_like(value)) for name, value in self.items())


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def _check_shape(what: str, actual: Tuple[int, ...], expected: Tuple[Optional[int], ...]):
    if len(actual) != len(expected) or any(
        e is not None and a != e for a, e in zip(actual, expected)
    ):
        raise ValidationError(f"{what}: expected shape {expected}, got {actual}")


def fc_forward(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """`x @ W + b` for `x` of shape B×Din."""
    _check_shape("fc weight", W.shape, (x.shape[-1], None))
    _check_shape("fc bias", b.shape, (W.shape[1],))
    return x @ W + b


def fc_backward(dout: Tensor, x: Tensor, W: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    """Returns `(dx, dW, db)`."""
    return dout @ W.T, x.T @ dout, dout.sum(axis=0)


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0.0)


def relu_backward(dout: Tensor, x: Tensor) -> Tensor:
    return np.where(x > 0, dout, 0.0)


def softmax(logits: Tensor) -> Tensor:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def cross_entropy(probs: Tensor, labels: np.ndarray) -> float:
    """Mean of `-log p[label]` over the batch, with `p` floored at 1e-12."""
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(picked, LOG_FLOOR)).mean())


def softmax_cross_entropy_backward(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Gradient of `cross_entropy(softmax(logits), labels)` w.r.t. the logits."""
    grad = probs.copy()
    grad[np.arange(len(labels)), labels] -= 1.0
    return grad / len(labels)


def dropout(
    x: Tensor, p: float, train: bool, rng: Optional[np.random.Generator]
) -> Tuple[Tensor, Optional[Tensor]]:
    """Inverted dropout. Returns `(output, scale)` where `scale` is the
    per-unit multiplier (0 or 1/(1-p)) used in train mode, None in eval mode."""
    if not train or p == 0.0:
        return x, None
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"dropout probability must lie in [0, 1), got {p}")
    if rng is None:
        raise ValidationError("dropout in train mode needs a seeded generator")
    scale = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * scale, scale


def dropout_backward(dout: Tensor, scale: Optional[Tensor]) -> Tensor:
    return dout if scale is None else dout * scale


@dataclass
class LstmParams:
    """Gate weights act on the concatenation `[x_t, h_{t-1}]`."""

    W_f: Tensor
    W_i: Tensor
    W_o: Tensor
    W_c: Tensor
    b_f: Tensor
    b_i: Tensor
    b_o: Tensor
    b_c: Tensor

    @property
    def hidden_dim(self) -> int:
        return self.W_f.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W_f.shape[0] - self.hidden_dim

    @classmethod
    def shapes(cls, input_dim: int, hidden_dim: int) -> Dict[str, Tuple[int, ...]]:
        shapes: Dict[str, Tuple[int, ...]] = {}
        for gate in GATES:
            shapes[f"W_{gate}"] = (input_dim + hidden_dim, hidden_dim)
        for gate in GATES:
            shapes[f"b_{gate}"] = (hidden_dim,)
        return shapes

    @classmethod
    def from_store(cls, store: Dict[str, Tensor], prefix: str) -> "LstmParams":
        return cls(**{name: store[f"{prefix}.{name}"] for name in cls.shapes(1, 1)})

    @classmethod
    def init(
        cls, rng: np.random.Generator, input_dim: int, hidden_dim: int, forget_bias: float = 0.0
    ) -> "LstmParams":
        values = {}
        for name, shape in cls.shapes(input_dim, hidden_dim).items():
            if name.startswith("W_"):
                values[name] = glorot_uniform(rng, shape[0], shape[1])
            else:
                values[name] = np.full(shape, forget_bias if name == "b_f" else 0.0)
        return cls(**values)

    def items(self):
        return [(name, getattr(self, name)) for name in self.shapes(1, 1)]


@dataclass
class LstmState:
    c: Tensor
    h: Tensor

    @classmethod
    def zeros(cls, batch: int, hidden_dim: int) -> "LstmState":
        return cls(np.zeros((batch, hidden_dim)), np.zeros((batch, hidden_dim)))


@dataclass
class _StepCache:
    z: Tensor
    c_prev: Tensor
    f: Tensor
    i: Tensor
    o: Tensor
    g: Tensor
    tanh_c: Tensor


def _lstm_step(x_t: Tensor, state: LstmState, params: LstmParams) -> Tuple[LstmState, _StepCache]:
    _check_shape("lstm input", x_t.shape, (None, params.input_dim))
    _check_shape("lstm state", state.h.shape, (x_t.shape[0], params.hidden_dim))
    z = np.concatenate([x_t, state.h], axis=1)
    f = expit(z @ params.W_f + params.b_f)
    i = expit(z @ params.W_i + params.b_i)
    o = expit(z @ params.W_o + params.b_o)
    g = np.tanh(z @ params.W_c + params.b_c)
    c = f * state.c + i * g
    tanh_c = np.tanh(c)
    return LstmState(c, o * tanh_c), _StepCache(z, state.c, f, i, o, g, tanh_c)


def lstm_step(x_t: Tensor, state: LstmState, params: LstmParams) -> LstmState:
    """One LSTM step:

        f = σ(W_f·[x, h] + b_f)   i = σ(W_i·[x, h] + b_i)   o = σ(W_o·[x, h] + b_o)
        c' = f ⊙ c + i ⊙ tanh(W_c·[x, h] + b_c)
        h' = o ⊙ tanh(c')
    """
    return _lstm_step(x_t, state, params)[0]


def lstm_step_backward(
    dh: Tensor, dc: Tensor, cache: _StepCache, params: LstmParams
) -> Tuple[Tensor, Tensor, Tensor, Dict[str, Tensor]]:
    """Returns `(dx, dh_prev, dc_prev, grads)` for one step."""
    do = dh * cache.tanh_c
    dc = dc + dh * cache.o * (1.0 - cache.tanh_c ** 2)
    pre = {
        "f": dc * cache.c_prev * cache.f * (1.0 - cache.f),
        "i": dc * cache.g * cache.i * (1.0 - cache.i),
        "o": do * cache.o * (1.0 - cache.o),
        "c": dc * cache.i * (1.0 - cache.g ** 2),
    }
    grads = {}
    dz = np.zeros_like(cache.z)
    for gate in GATES:
        grads[f"W_{gate}"] = cache.z.T @ pre[gate]
        grads[f"b_{gate}"] = pre[gate].sum(axis=0)
        dz += pre[gate] @ getattr(params, f"W_{gate}").T
    split = params.input_dim
    return dz[:, :split], dz[:, split:], dc * cache.f, grads


def _check_mask(mask: np.ndarray, shape: Tuple[int, int]) -> None:
    _check_shape("sequence mask", mask.shape, shape)
    if not mask[:, 0].all():
        row = int(np.flatnonzero(~mask[:, 0])[0])
        raise ValidationError(f"sequence {row} has an empty mask")
    if (mask[:, 1:] & ~mask[:, :-1]).any():
        raise ValidationError("sequence masks must mark padding as a contiguous suffix")


@dataclass
class SequenceCache:
    mask: np.ndarray
    steps: List[_StepCache] = field(default_factory=list)
    states: List[LstmState] = field(default_factory=list)


def lstm_sequence_forward(
    xs: Tensor, mask: np.ndarray, params: LstmParams
) -> Tuple[Tensor, SequenceCache]:
    """Runs the cell over `xs` (B×N×Din) from a zero state. Masked steps keep
    the previous state. Returns the per-step hidden states (B×N×H)."""
    batch, steps, _ = xs.shape
    _check_mask(mask, (batch, steps))
    state = LstmState.zeros(batch, params.hidden_dim)
    cache = SequenceCache(mask)
    hs = np.empty((batch, steps, params.hidden_dim))
    for t in range(steps):
        new, step = _lstm_step(xs[:, t], state, params)
        keep = mask[:, t : t + 1]
        cache.states.append(state)
        cache.steps.append(step)
        state = LstmState(np.where(keep, new.c, state.c), np.where(keep, new.h, state.h))
        hs[:, t] = state.h
    return hs, cache


def lstm_sequence(xs: Tensor, mask: np.ndarray, params: LstmParams) -> Tensor:
    """The hidden state at the last unmasked step of every sequence (B×H)."""
    return lstm_sequence_forward(xs, mask, params)[0][:, -1]


def lstm_sequence_backward(
    dhs: Tensor, cache: SequenceCache, params: LstmParams
) -> Tuple[Tensor, Dict[str, Tensor]]:
    """Backpropagation through time. `dhs` is the gradient w.r.t. every
    per-step hidden output. Returns `(dxs, grads)`."""
    batch, steps, hidden = dhs.shape
    grads = {name: np.zeros_like(value) for name, value in params.items()}
    dxs = np.zeros((batch, steps, params.input_dim))
    dh_next = np.zeros((batch, hidden))
    dc_next = np.zeros((batch, hidden))
    for t in reversed(range(steps)):
        keep = cache.mask[:, t : t + 1]
        dh = dh_next + dhs[:, t]
        dx, dh_prev, dc_prev, step_grads = lstm_step_backward(
            np.where(keep, dh, 0.0), np.where(keep, dc_next, 0.0), cache.steps[t], params
        )
        dxs[:, t] = dx
        for name, grad in step_grads.items():
            grads[name] += grad
        dh_next = dh_prev + np.where(keep, 0.0, dh)
        dc_next = dc_prev + np.where(keep, 0.0, dc_next)
    return dxs, grads


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: Dict[str, Tensor] = field(default_factory=dict)
    v: Dict[str, Tensor] = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(
            self.lr, self.beta1, self.beta2, self.epsilon, self.t,
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
        )


def adam_step(
    params: Dict[str, Tensor], grads: Dict[str, Tensor], state: AdamState
) -> Tuple[Dict[str, Tensor], AdamState]:
    """Bias-corrected Adam update, applied in place to `params`."""
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            bad = int(np.count_nonzero(~np.isfinite(grad)))
            raise NumericError(
                f"non-finite gradient for {name!r} at step {state.t + 1} "
                f"({bad} of {grad.size} entries)"
            )
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, param in params.items():
        grad = grads[name]
        _check_shape(f"gradient {name}", grad.shape, param.shape)
        if name not in state.m:
            state.m[name] = np.zeros_like(param)
            state.v[name] = np.zeros_like(param)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (grad * grad)
        param -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state


@dataclass
class GradCheckReport:
    errors: Dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def lines(self) -> List[str]:
        return [f"{name}\t{error:.3e}" for name, error in self.errors.items()] + [
            f"max\t{self.max_error:.3e}\t{'ok' if self.passed else 'FAILED'}"
        ]


def grad_check(
    closure: Callable[[Dict[str, Tensor]], Tuple[float, Dict[str, Tensor]]],
    params: Dict[str, Tensor],
    tolerance: float = 1e-4,
    *,
    step: float = 1e-6,
    floor: float = 1e-4,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradCheckReport:
    """Compares the analytic gradients returned by `closure(params)` against
    central finite differences, block by block.

    The relative error of an entry is `|a - n| / max(|a|, |n|, floor)`. With
    `max_entries`, only that many randomly chosen entries of each block are
    perturbed. `closure` must be deterministic (dropout in eval mode)."""
    _, analytic = closure(params)
    rng = rng or np.random.default_rng(0)
    errors = {}
    for name, param in params.items():
        flat = param.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        expected = analytic[name].reshape(-1)
        for index in entries:
            original = flat[index]
            flat[index] = original + step
            plus, _ = closure(params)
            flat[index] = original - step
            minus, _ = closure(params)
            flat[index] = original
            numeric = (plus - minus) / (2 * step)
            a = expected[index]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
        errors[name] = worst
        debug(f"grad-check {name}: {worst:.3e}")
    return GradCheckReport(errors, tolerance)
