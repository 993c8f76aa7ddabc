"""FairGrad training: Lagrange multipliers drive per-group loss weights.

Each batch: predict, refresh the running group error rates, compute the
fairness levels ``F = C @ rates``, ascend the multipliers on ``F``, turn them
into group weights ``w = priors + C.T @ multipliers`` and take one clipped
gradient step on the weighted group-mean cross-entropy.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from . import _backend
from .data import STREAM_DROPOUT, STREAM_SHUFFLE, Dataset, make_rng
from .fairness import (FairnessNotion, GroupErrorEstimates, GroupPartition, build_constants,
                       direct_fairness, fairness_levels, group_error_rates, merge_running, partition)
from .model import (ModelSpec, NonFiniteLossError, Parameters, clip_gradient, example_coefficients,
                    forward, init_params, weighted_loss_from_forward)

log = logging.getLogger(__name__)

MODES = ("unconstrained", "fairgrad")


@dataclass(frozen=True, eq=False)
class MultiplierState:
    """``epsilon is None`` means exact fairness (signed ``lam``, no ``delta``)."""
    lam: np.ndarray
    delta: np.ndarray
    epsilon: float | None = None

    @classmethod
    def zeros(cls, K: int, epsilon: float | None = None) -> "MultiplierState":
        if epsilon is not None and epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        return cls(np.zeros(K), np.zeros(K), epsilon)

    @property
    def effective(self) -> np.ndarray:
        return self.lam - self.delta


def update_multipliers_exact(state: MultiplierState, F, eta_lambda: float) -> MultiplierState:
    if state.epsilon is not None:
        raise ValueError("exact update on an epsilon-mode state")
    return replace(state, lam=state.lam + eta_lambda * np.asarray(F))


def update_multipliers_eps(state: MultiplierState, F, eta_lambda: float) -> MultiplierState:
    """Projected ascent on the two one-sided constraints ``F <= eps`` and ``F >= -eps``."""
    if state.epsilon is None:
        raise ValueError("epsilon update on an exact-mode state")
    F = np.asarray(F)
    eps = state.epsilon
    lam = np.maximum(0.0, state.lam + eta_lambda * (F - eps))
    delta = np.maximum(0.0, state.delta - eta_lambda * (F + eps))
    return replace(state, lam=lam, delta=delta)


def update_multipliers(state: MultiplierState, F, eta_lambda: float) -> MultiplierState:
    if state.epsilon is None:
        return update_multipliers_exact(state, F, eta_lambda)
    return update_multipliers_eps(state, F, eta_lambda)


def group_weights(priors, C: np.ndarray, state: MultiplierState) -> np.ndarray:
    """``w_k = P(T_k) + sum_j C[j, k] * (lam_j - delta_j)``; may be negative."""
    return np.asarray(priors) + C.T @ state.effective


@dataclass(frozen=True)
class TrainConfig:
    eta_theta: float = 0.1
    eta_lambda: float = 0.01
    batch_size: int = 64
    epochs: int = 50
    clip_norm: float = 0.05
    seed: int = 0
    mode: str = "fairgrad"
    epsilon: float | None = None
    hidden_sizes: tuple[int, ...] = ()
    dropout_rate: float = 0.2
    beta: float = 0.03
    clip_weights_nonnegative: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not (self.eta_theta > 0 and self.eta_lambda > 0):
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")

    def model_spec(self, input_dim: int, class_count: int) -> ModelSpec:
        if self.hidden_sizes:
            return ModelSpec.mlp(input_dim, class_count, self.hidden_sizes, self.dropout_rate)
        return ModelSpec.linear(input_dim, class_count)

    def to_dict(self) -> dict:
        return {"eta_theta": self.eta_theta, "eta_lambda": self.eta_lambda,
                "batch_size": self.batch_size, "epochs": self.epochs, "clip_norm": self.clip_norm,
                "seed": self.seed, "mode": self.mode, "epsilon": self.epsilon,
                "hidden_sizes": list(self.hidden_sizes), "dropout_rate": self.dropout_rate,
                "beta": self.beta, "clip_weights_nonnegative": self.clip_weights_nonnegative}


@dataclass(frozen=True, eq=False)
class EpochRecord:
    epoch: int
    params: Parameters
    val_accuracy: float
    val_fairness: np.ndarray
    weights: np.ndarray
    lam: np.ndarray
    delta: np.ndarray

    @property
    def mean_abs(self) -> float:
        return float(np.mean(np.abs(self.val_fairness)))


@dataclass
class Trace:
    """Per-iteration weights, multipliers and batch fairness levels (steps x K)."""
    weights: np.ndarray
    lam: np.ndarray
    delta: np.ndarray
    fairness: np.ndarray


@dataclass
class TrainResult:
    history: list[EpochRecord]
    selected_epoch: int
    params: Parameters
    final_params: Parameters
    partition: GroupPartition
    constants: np.ndarray
    backend: str
    trace: Trace | None = None

    @property
    def selected(self) -> EpochRecord:
        return self.history[self.selected_epoch]


def select_model(history, beta: float = 0.03) -> int:
    """Index of the fairest record among those within ``beta`` of the best accuracy.

    Fairness is the validation mean absolute level; ties go to the earliest epoch.
    """
    if not history:
        raise ValueError("empty history")
    best = max(r.val_accuracy for r in history)
    # inclusive lower edge, robust to the rounding in best - beta
    floor = best - beta - 1e-12
    window = [i for i, r in enumerate(history) if r.val_accuracy >= floor]
    return min(window, key=lambda i: (history[i].mean_abs, i))


def constant_baseline(train: Dataset) -> Parameters:
    """Zero-weight linear model whose bias always selects the majority training label."""
    spec = ModelSpec.linear(train.dim, train.label_count)
    theta = np.zeros(spec.size)
    majority = int(np.argmax(np.bincount(train.labels, minlength=train.label_count)))
    theta[spec.input_dim * spec.class_count + majority] = 1.0
    return Parameters(spec, theta)


def epoch_stream(base: int, epoch: int) -> int:
    return base + 16 * (epoch + 1)


class _Loop:
    """Mutable training state shared by the python and compiled epoch runners."""

    def __init__(self, config: TrainConfig, train: Dataset, part: GroupPartition, C: np.ndarray,
                 params: Parameters, record_trace: bool):
        self.config = config
        self.train = train
        self.part = part
        self.C = np.ascontiguousarray(C)
        self.priors = np.ascontiguousarray(part.priors)
        self.params = params
        self.fair = config.mode == "fairgrad"
        self.state = MultiplierState.zeros(part.K, config.epsilon if self.fair else None)
        self.est = GroupErrorEstimates.initial(part.K)
        self.weights = self.priors.copy()
        self.record_trace = record_trace
        self.trace_parts = []

    def n_batches(self) -> int:
        return math.ceil(self.train.n / self.config.batch_size)

    def run_python(self, epoch: int, order: np.ndarray) -> None:
        cfg, ds, K = self.config, self.train, self.part.K
        rng = make_rng(cfg.seed, epoch_stream(STREAM_DROPOUT, epoch)) if self.params.spec.hidden_sizes else None
        trace = np.zeros((4, self.n_batches(), K)) if self.record_trace else None
        for bi, start in enumerate(range(0, ds.n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            Xb, yb, gb = ds.features[idx], ds.labels[idx], self.part.group_of[idx]
            fw = forward(self.params, Xb, rng)
            F = np.zeros(K)
            if self.fair:
                rates, counts = group_error_rates(fw.labels, yb, gb, K)
                self.est = merge_running(self.est, rates, counts)
                F = fairness_levels(self.C, self.est)
                self.state = update_multipliers(self.state, F, cfg.eta_lambda)
                w = group_weights(self.priors, self.C, self.state)
            else:
                w = self.priors
            if cfg.clip_weights_nonnegative:
                w = np.maximum(w, 0.0)
            self.weights = w
            try:
                _, grad = weighted_loss_from_forward(self.params, fw, yb, example_coefficients(gb, w))
                step = clip_gradient(grad, cfg.clip_norm)
            except NonFiniteLossError as exc:
                raise NonFiniteLossError(f"epoch {epoch}, batch {bi}: {exc}") from None
            self.params.theta -= cfg.eta_theta * step
            if trace is not None:
                trace[:, bi] = (w, self.state.lam, self.state.delta, F)
        if trace is not None:
            self.trace_parts.append(trace)

    def run_compiled(self, epoch: int, order: np.ndarray) -> None:
        cfg, ds, K = self.config, self.train, self.part.K
        kern = _backend.kernels()
        (W, b), = self.params.layers()
        lam = self.state.lam.copy()
        delta = self.state.delta.copy()
        rates = self.est.rates.copy()
        seen = self.est.seen.astype(np.uint8)
        weights = self.weights.copy()
        nb = self.n_batches()
        trace = np.zeros((4, nb if self.record_trace else 0, K))
        if not self.fair:
            mode = 0
        elif self.state.epsilon is None:
            mode = 1
        else:
            mode = 2
        status = kern.linear_epoch(
            ds.features, ds.labels, self.part.group_of, order.astype(np.int64), cfg.batch_size,
            W, b, self.C, self.priors, lam, delta, rates, seen, weights,
            mode, float(self.state.epsilon or 0.0), cfg.eta_theta, cfg.eta_lambda, cfg.clip_norm,
            int(cfg.clip_weights_nonnegative), trace[0], trace[1], trace[2], trace[3])
        if status >= 0:
            raise NonFiniteLossError(
                f"epoch {epoch}, batch {status}: non-finite loss or gradient; reduce the learning rate")
        self.state = replace(self.state, lam=lam, delta=delta)
        self.est = GroupErrorEstimates(rates, seen.astype(bool))
        self.weights = weights
        if self.record_trace:
            self.trace_parts.append(trace)

    def trace(self) -> Trace | None:
        if not self.record_trace:
            return None
        t = np.concatenate(self.trace_parts, axis=1) if self.trace_parts else np.zeros((4, 0, self.part.K))
        return Trace(*t)


def evaluate_split(params: Parameters, ds: Dataset, notion: FairnessNotion) -> tuple[float, np.ndarray]:
    fw = forward(params, ds.features)
    pred = fw.labels
    acc = float(np.mean(pred == ds.labels))
    F = direct_fairness(pred, ds.labels, ds.sensitive, notion,
                        label_count=ds.label_count, sensitive_count=ds.sensitive_count)
    return acc, F


def train(config: TrainConfig, train_ds: Dataset, val_ds: Dataset, notion: FairnessNotion, *,
          init: Parameters | None = None, backend: str | None = None,
          record_trace: bool = False, callback=None) -> TrainResult:
    """Run FairGrad (or the unconstrained baseline) and pick a checkpoint.

    The multipliers start at zero, so the first step is plain prior-weighted
    ERM. Validation fairness is recomputed exactly after every epoch and the
    returned parameters are the checkpoint chosen by :func:`select_model`.
    """
    if train_ds.label_count < 2 or np.unique(train_ds.labels).size < 2:
        raise ValueError("training data needs at least two distinct labels")
    if config.mode == "unconstrained" and config.epsilon is not None:
        log.warning("epsilon is ignored in unconstrained mode")
        config = replace(config, epsilon=None)
    part = partition(train_ds, notion)
    C = build_constants(part, notion, train_ds)
    spec = config.model_spec(train_ds.dim, train_ds.label_count)
    params = init.copy() if init is not None else init_params(spec, config.seed)
    backend = _backend.resolve(backend)
    if spec.hidden_sizes:
        backend = "python"

    loop = _Loop(config, train_ds, part, C, params, record_trace)
    run = loop.run_compiled if backend == "compiled" else loop.run_python
    history: list[EpochRecord] = []
    for epoch in range(config.epochs):
        order = make_rng(config.seed, epoch_stream(STREAM_SHUFFLE, epoch)).permutation(train_ds.n)
        run(epoch, order)
        acc, F = evaluate_split(loop.params, val_ds, notion)
        rec = EpochRecord(epoch, loop.params.copy(), acc, F, loop.weights.copy(),
                          loop.state.lam.copy(), loop.state.delta.copy())
        history.append(rec)
        if callback is not None:
            callback(rec)
    chosen = select_model(history, config.beta)
    return TrainResult(history, chosen, history[chosen].params, loop.params, part, C, backend,
                       loop.trace())
