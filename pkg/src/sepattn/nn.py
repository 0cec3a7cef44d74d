"""Minimal neural-net substrate: dense layers, embedding pooling, softmax, Adagrad.

Gradients are explicit per-layer forward/backward pairs (no computation graph);
every backward pass is verifiable against central finite differences via
``finite_diff_check``. All arithmetic is float64 for determinism.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, InternalError, TrainingError

Array = np.ndarray

ACTIVATIONS = ("tanh", "relu", "identity")


class Parameter:
    """A named trainable tensor together with its accumulated gradient."""

    __slots__ = ("name", "value", "grad", "trainable")

    def __init__(self, name: str, value, trainable: bool = True):
        self.name = name
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape}, trainable={self.trainable})"


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> Array:
    """Uniform init on [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]."""
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform(-limit, limit, size=shape)


class DenseLayer:
    """Fully connected layer ``y = act(W x + b)`` with an explicit backward pass.

    ``forward`` accepts a single vector ``(in_dim,)`` or a row batch
    ``(rows, in_dim)`` and returns the matching shape.
    """

    def __init__(self, name: str, in_dim: int, out_dim: int, activation: str,
                 rng: np.random.Generator):
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")
        if in_dim <= 0 or out_dim <= 0:
            raise ConfigError(f"layer {name!r}: dimensions must be positive, got {in_dim}x{out_dim}")
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.weight = Parameter(f"{name}/weight",
                                glorot_uniform(rng, in_dim, out_dim, (out_dim, in_dim)))
        self.bias = Parameter(f"{name}/bias", np.zeros(out_dim))

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def forward(self, x) -> tuple[Array, tuple]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ConfigError(
                f"layer {self.name!r}: input width {x.shape[-1]} != expected {self.in_dim}")
        z = x @ self.weight.value.T + self.bias.value
        if self.activation == "tanh":
            y = np.tanh(z)
        elif self.activation == "relu":
            y = np.maximum(z, 0.0)
        else:
            y = z
        return y, (x, z, y)

    def backward(self, grad_y, cache, accumulate: bool = True) -> tuple[Array, tuple[Array, Array]]:
        x, z, y = cache
        grad_y = np.asarray(grad_y, dtype=np.float64)
        if grad_y.shape != y.shape:
            raise InternalError(
                f"layer {self.name!r}: upstream gradient shape {grad_y.shape} != cached {y.shape}")
        if self.activation == "tanh":
            grad_z = grad_y * (1.0 - y * y)
        elif self.activation == "relu":
            grad_z = grad_y * (z > 0.0)
        else:
            grad_z = grad_y
        g2 = np.atleast_2d(grad_z)
        x2 = np.atleast_2d(x)
        grad_w = g2.T @ x2
        grad_b = g2.sum(axis=0)
        if accumulate:
            self.weight.grad += grad_w
            self.bias.grad += grad_b
        grad_x = grad_z @ self.weight.value
        return grad_x, (grad_w, grad_b)


class EmbeddingTable:
    """Embedding rows with average pooling. Row 0 is padding and stays all-zero."""

    def __init__(self, name: str, vocab_size: int, dim: int,
                 rng: np.random.Generator | None = None,
                 rows: Array | None = None, trainable: bool = True):
        if vocab_size < 1 or dim < 1:
            raise ConfigError(f"embedding {name!r}: vocab_size and dim must be positive")
        if rows is None:
            if rng is None:
                raise ConfigError(f"embedding {name!r}: need either rng or explicit rows")
            rows = glorot_uniform(rng, vocab_size, dim, (vocab_size, dim))
        rows = np.array(rows, dtype=np.float64)
        if rows.shape != (vocab_size, dim):
            raise ConfigError(
                f"embedding {name!r}: rows shape {rows.shape} != ({vocab_size}, {dim})")
        rows[0, :] = 0.0
        self.name = name
        self.vocab_size = vocab_size
        self.dim = dim
        self.rows = Parameter(f"{name}/rows", rows, trainable=trainable)

    def parameters(self) -> list[Parameter]:
        return [self.rows]

    def _check_ids(self, token_ids: Sequence[int]) -> None:
        for t in token_ids:
            if t < 0 or t >= self.vocab_size:
                raise DataError(
                    f"embedding {self.name!r}: token id {t} out of range [0, {self.vocab_size})")

    def pool(self, token_ids: Sequence[int]) -> Array:
        """Arithmetic mean of the rows for ``token_ids``; empty input gives zeros."""
        self._check_ids(token_ids)
        if len(token_ids) == 0:
            return np.zeros(self.dim)
        return self.rows.value[list(token_ids)].sum(axis=0) / len(token_ids)

    def pool_backward(self, grad_out, token_ids: Sequence[int],
                      accumulate: bool = True) -> dict[int, Array]:
        """Scatter ``grad_out / len(token_ids)`` onto each referenced row.

        The padding row 0 never receives gradient. Returns the per-row
        contributions (duplicated ids accumulate).
        """
        self._check_ids(token_ids)
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.shape != (self.dim,):
            raise InternalError(
                f"embedding {self.name!r}: gradient shape {grad_out.shape} != ({self.dim},)")
        contributions: dict[int, Array] = {}
        if len(token_ids) == 0:
            return contributions
        share = grad_out / len(token_ids)
        for t in token_ids:
            if t == 0:
                continue
            if t in contributions:
                contributions[t] = contributions[t] + share
            else:
                contributions[t] = share.copy()
        if accumulate and self.rows.trainable:
            for t, g in contributions.items():
                self.rows.grad[t] += g
        return contributions


def softmax(v, mask=None) -> Array:
    """Max-subtracted softmax over unmasked entries; masked entries are exactly 0."""
    v = np.asarray(v, dtype=np.float64)
    if mask is None:
        mask = np.ones(v.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != v.shape:
            raise ConfigError(f"softmax: mask shape {mask.shape} != input shape {v.shape}")
    if not mask.any():
        raise DataError("softmax: all entries are masked")
    shifted = np.where(mask, v - v[mask].max(), -np.inf)
    e = np.exp(shifted)
    return e / e.sum()


def masked_log_softmax(scores: Array, mask: Array) -> tuple[Array, Array]:
    """Row-wise log-softmax over valid entries of a ``(rows, n)`` score matrix.

    Returns ``(logp, p)``; masked entries get ``logp = -inf`` and ``p = 0``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=1).all():
        raise DataError("masked_log_softmax: a row has all entries masked")
    neg = np.where(mask, scores, -np.inf)
    m = neg.max(axis=1, keepdims=True)
    shifted = neg - m
    e = np.exp(shifted)
    z = e.sum(axis=1, keepdims=True)
    return shifted - np.log(z), e / z


class Adagrad:
    """Per-element Adagrad: ``G += g^2; theta -= lr * g / sqrt(G + eps)``."""

    def __init__(self, params: Iterable[Parameter], learning_rate: float, epsilon: float = 1e-8):
        if learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {learning_rate}")
        if epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {epsilon}")
        self.learning_rate = float(learning_rate)
        self.epsilon = float(epsilon)
        self.params = [p for p in params if p.trainable]
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate parameter names passed to Adagrad: {sorted(names)}")
        self.accumulators = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self, step_index: int | None = None) -> None:
        where = "" if step_index is None else f" at step {step_index}"
        for p in self.params:
            if not np.isfinite(p.grad).all():
                raise TrainingError(f"non-finite gradient in {p.name!r}{where}")
            acc = self.accumulators[p.name]
            acc += p.grad * p.grad
            p.value -= self.learning_rate * p.grad / np.sqrt(acc + self.epsilon)

    def state_dict(self) -> dict[str, Array]:
        return {name: acc.copy() for name, acc in self.accumulators.items()}

    def load_state_dict(self, state: dict[str, Array]) -> None:
        for name, acc in self.accumulators.items():
            if name not in state:
                raise ConfigError(f"optimizer state missing accumulator for {name!r}")
            loaded = np.asarray(state[name], dtype=np.float64)
            if loaded.shape != acc.shape:
                raise ConfigError(f"optimizer accumulator {name!r} has shape {loaded.shape}, "
                                  f"expected {acc.shape}")
            acc[...] = loaded


def finite_diff_report(loss_fn: Callable[[], float], params: Iterable[Parameter],
                       eps: float = 1e-5) -> dict[str, float]:
    """Max relative error per parameter between ``param.grad`` and central differences.

    ``loss_fn`` must deterministically recompute the scalar loss from the current
    parameter values; callers populate each ``param.grad`` with the analytic
    gradient of that same scalar before calling. Relative error uses the
    denominator ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if not (0.0 < eps <= 1e-2):
        raise ConfigError(f"eps must be in (0, 1e-2], got {eps}")
    report: dict[str, float] = {}
    for p in params:
        worst = 0.0
        flat_value = p.value.reshape(-1)
        flat_grad = p.grad.reshape(-1)
        for i in range(flat_value.size):
            orig = flat_value[i]
            flat_value[i] = orig + eps
            up = loss_fn()
            flat_value[i] = orig - eps
            down = loss_fn()
            flat_value[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise TrainingError(f"non-finite loss while probing {p.name!r}[{i}]")
            numeric = (up - down) / (2.0 * eps)
            analytic = flat_grad[i]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)
        report[p.name] = worst
    return report


def finite_diff_check(loss_fn: Callable[[], float], params: Iterable[Parameter],
                      eps: float = 1e-5) -> float:
    """Worst relative error across all parameters; see ``finite_diff_report``."""
    report = finite_diff_report(loss_fn, list(params), eps)
    return max(report.values()) if report else 0.0
