"""Linear and ReLU-MLP softmax classifiers over a flat parameter vector.

Layer ``i`` stores a weight matrix of shape ``(fan_in, fan_out)`` followed by
its bias; ``Parameters.theta`` concatenates them in that order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import STREAM_DROPOUT, STREAM_INIT, make_rng


class NonFiniteLossError(ArithmeticError):
    """Loss or gradient overflowed; usually a learning rate that is too large."""


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    class_count: int
    hidden_sizes: tuple[int, ...] = ()
    dropout_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1 or self.class_count < 1:
            raise ValueError("input_dim and class_count must be positive")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @classmethod
    def linear(cls, input_dim: int, class_count: int) -> "ModelSpec":
        return cls(input_dim, class_count)

    @classmethod
    def mlp(cls, input_dim: int, class_count: int, hidden_sizes=(128, 64, 32),
            dropout_rate: float = 0.2) -> "ModelSpec":
        if not hidden_sizes:
            raise ValueError("an MLP needs at least one hidden layer")
        return cls(input_dim, class_count, tuple(hidden_sizes), dropout_rate)

    @property
    def architecture(self) -> str:
        return "mlp" if self.hidden_sizes else "linear"

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        sizes = [self.input_dim, *self.hidden_sizes, self.class_count]
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def size(self) -> int:
        return sum(a * b + b for a, b in self.layer_shapes)

    def to_dict(self) -> dict:
        return {"architecture": self.architecture, "input_dim": self.input_dim,
                "class_count": self.class_count, "hidden_sizes": list(self.hidden_sizes),
                "dropout_rate": self.dropout_rate}


@dataclass(eq=False)
class Parameters:
    spec: ModelSpec
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.spec.size,):
            raise ValueError(f"expected {self.spec.size} parameters, got {self.theta.shape}")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("parameters must be finite")

    def layers(self, theta: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``(W, b)`` into ``theta`` (defaults to this object's vector)."""
        theta = self.theta if theta is None else theta
        out, pos = [], 0
        for a, b in self.spec.layer_shapes:
            W = theta[pos:pos + a * b].reshape(a, b)
            pos += a * b
            out.append((W, theta[pos:pos + b]))
            pos += b
        return out

    def copy(self) -> "Parameters":
        return Parameters(self.spec, self.theta.copy())

    def to_json(self) -> str:
        return json.dumps({"model": self.spec.to_dict(),
                           "shapes": [list(s) for s in self.spec.layer_shapes],
                           "theta": [float(v) for v in self.theta]})

    @classmethod
    def from_json(cls, text: str) -> "Parameters":
        doc = json.loads(text)
        m = doc["model"]
        spec = ModelSpec(m["input_dim"], m["class_count"], tuple(m["hidden_sizes"]), m["dropout_rate"])
        return cls(spec, np.array(doc["theta"], dtype=np.float64))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Parameters":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def init_params(spec: ModelSpec, seed: int) -> Parameters:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    rng = make_rng(seed, STREAM_INIT)
    parts = []
    for a, b in spec.layer_shapes:
        bound = 1.0 / np.sqrt(a)
        parts.append(rng.uniform(-bound, bound, size=a * b))
        parts.append(np.zeros(b))
    return Parameters(spec, np.concatenate(parts))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


@dataclass
class Forward:
    """Activations kept for the backward pass."""
    logits: np.ndarray
    inputs: list = field(default_factory=list)   # input to each layer
    masks: list = field(default_factory=list)    # scaled dropout*relu mask per hidden layer

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.logits)

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.logits, axis=1)


def forward(params: Parameters, X: np.ndarray, rng: np.random.Generator | None = None) -> Forward:
    """Run the network; ``rng`` enables inverted dropout on hidden layers."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.spec.input_dim:
        raise ValueError(f"expected inputs with {params.spec.input_dim} columns")
    layers = params.layers()
    rate = params.spec.dropout_rate if rng is not None else 0.0
    fw = Forward(logits=None)
    h = X
    for W, b in layers[:-1]:
        fw.inputs.append(h)
        z = h @ W + b
        mask = (z > 0).astype(np.float64)
        if rate > 0:
            mask *= (rng.random(z.shape) >= rate) / (1.0 - rate)
        fw.masks.append(mask)
        h = z * mask
    W, b = layers[-1]
    fw.inputs.append(h)
    fw.logits = h @ W + b
    return fw


def backward(params: Parameters, fw: Forward, dlogits: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(params.theta)
    glayers = params.layers(grad)
    Ws = [W for W, _ in params.layers()]
    delta = dlogits
    for i in range(len(Ws) - 1, -1, -1):
        gW, gb = glayers[i]
        gW[:] = fw.inputs[i].T @ delta
        gb[:] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ Ws[i].T) * fw.masks[i - 1]
    return grad


def predict(params: Parameters, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Class probabilities and argmax labels (ties go to the lower index)."""
    fw = forward(params, X)
    return fw.probs, fw.labels


def example_coefficients(groups: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-example loss multiplier ``w_g / n_g`` so groups enter as weighted means."""
    counts = np.bincount(groups, minlength=len(weights))
    return weights[groups] / counts[groups]


def weighted_loss_from_forward(params: Parameters, fw: Forward, y: np.ndarray,
                               coef: np.ndarray) -> tuple[float, np.ndarray]:
    logp = log_softmax(fw.logits)
    rows = np.arange(len(y))
    loss = float(-(coef * logp[rows, y]).sum())
    dlogits = np.exp(logp)
    dlogits[rows, y] -= 1.0
    dlogits *= coef[:, None]
    grad = backward(params, fw, dlogits)
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise NonFiniteLossError("non-finite loss or gradient; reduce the learning rate")
    return loss, grad


def weighted_loss_grad(params: Parameters, X, y, groups, weights,
                       dropout_seed: int | None = None) -> tuple[float, np.ndarray]:
    """Sum over groups of ``weights[k]`` times the mean cross-entropy of group k.

    Groups absent from the batch contribute nothing. Weights may be negative.
    With ``dropout_seed`` set and a nonzero dropout rate, one fixed dropout
    mask drawn from that seed is used.
    """
    y = np.asarray(y, dtype=np.int64)
    groups = np.asarray(groups, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    rng = make_rng(dropout_seed, STREAM_DROPOUT) if dropout_seed is not None else None
    fw = forward(params, X, rng)
    return weighted_loss_from_forward(params, fw, y, example_coefficients(groups, weights))


def clip_gradient(grad: np.ndarray, max_norm: float = 0.05) -> np.ndarray:
    """Rescale ``grad`` to L2 norm ``max_norm`` when it is longer than that."""
    norm = np.linalg.norm(grad)
    if not np.isfinite(norm):
        raise NonFiniteLossError("gradient norm overflowed; reduce the learning rate")
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad
