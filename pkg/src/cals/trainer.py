"""Mini-batch training with class-wise multipliers estimated on the validation set.

One epoch of SGD is treated as the approximate inner minimisation. After each
epoch the multipliers are refreshed from validation logits:

* ``cals_alm``: ``lam_k <- mean_val P'(d_k/m - 1, rho_k, lam_k)``, then every
  ``rho_update_period`` epochs ``rho_k`` grows by ``gamma`` for classes whose
  mean constraint did not improve;
* ``cals_hr``: ``lam_k`` is multiplied or divided by ``hr_mu`` when the class's
  mean validation penalty moved by more than a factor ``hr_tau``;
* baselines (ce, ls, fl, flsd, ecp, mbls) keep no multipliers.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .alm import MultiplierState, NumericalFailure
from .data import Dataset, SplitDataset
from .losses import LossKind, LossSelection, normalized_constraints, total_loss
from .metrics import PredictionSet, accuracy, ece
from .nn import Network, backward, forward, init_network, predict_logits, sgd_step
from .penalties import PenaltyKind, penalty_derivative, penalty_value

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    loss: LossSelection = field(default_factory=LossSelection)
    epochs: int = 60
    batch_size: int = 32
    step_size: float = 0.05
    momentum: float = 0.9
    penalty_kind: PenaltyKind = PenaltyKind.PHR
    initial_lambda: float = 1e-6
    initial_rho: float = 1.0
    gamma: float = 1.2
    improvement_tau: float = 0.9
    rho_update_period: int = 10
    safeguard_lo: float = 1e-6
    safeguard_hi: float = 1e6
    hr_mu: float = 1.1
    hr_tau: float = 1.1
    seed: int = 0

    def __post_init__(self):
        self.penalty_kind = PenaltyKind.parse(self.penalty_kind)
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.step_size < 0:
            raise ValueError("step_size must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not (self.initial_lambda > 0 and self.initial_rho > 0):
            raise ValueError("initial_lambda and initial_rho must be positive")
        if not self.gamma > 1:
            raise ValueError("gamma must be > 1")
        if not 0 < self.improvement_tau < 1:
            raise ValueError("improvement_tau must lie in (0, 1)")
        if self.rho_update_period < 1:
            raise ValueError("rho_update_period must be >= 1")
        if not 0 < self.safeguard_lo <= self.safeguard_hi:
            raise ValueError("safeguards must satisfy 0 < lo <= hi")
        if not (self.hr_mu > 1 and self.hr_tau > 1):
            raise ValueError("hr_mu and hr_tau must be > 1")

    @property
    def margin_m(self) -> float:
        return self.loss.margin_m


@dataclass
class EpochRecord:
    epoch: int  # 1-based count of completed epochs
    train_loss: float
    val_accuracy: float
    val_ece: float
    mean_lambda: float
    mean_rho: float
    per_class_lambda: np.ndarray
    per_class_mean_constraint: np.ndarray


@dataclass
class TrainResult:
    network: Network
    history: list[EpochRecord]
    state: Optional[MultiplierState]
    val: PredictionSet
    test: PredictionSet
    val_logits: np.ndarray
    test_logits: np.ndarray


class TrainingFailure(NumericalFailure):
    """Non-finite loss during training; ``history`` holds the completed epochs."""

    def __init__(self, message, epoch, batch, history):
        super().__init__(message, iteration=batch)
        self.epoch = epoch
        self.batch = batch
        self.history = history


def initial_state(config: TrainConfig, num_classes: int) -> MultiplierState:
    return MultiplierState.initial(num_classes, config.initial_lambda, config.initial_rho,
                                   config.safeguard_lo, config.safeguard_hi)


def train_epoch(net: Network, train_data: Dataset, config: TrainConfig,
                state: Optional[MultiplierState] = None, epoch: int = 0,
                velocity=None) -> tuple[Network, float]:
    """One shuffled pass of mini-batch SGD; returns the net and the sample-weighted mean loss."""
    kind = config.loss.kind
    if kind.is_cals and state is None:
        raise ValueError(f"{kind.value} training needs a multiplier state")
    if not kind.is_cals and state is not None:
        raise ValueError(f"{kind.value} training does not use multipliers")
    n = len(train_data)
    if n == 0:
        raise ValueError("training set is empty")
    if velocity is None:
        velocity = net.zeros_like()
    order = np.random.default_rng([config.seed, epoch]).permutation(n)
    total = 0.0
    for b, start in enumerate(range(0, n, config.batch_size)):
        idx = order[start:start + config.batch_size]
        logits, cache = forward(net, train_data.features[idx])
        if not np.all(np.isfinite(logits)):
            raise NumericalFailure(f"non-finite logits in epoch {epoch}, batch {b}", iteration=b)
        value, grad = total_loss(config.loss, logits, train_data.labels[idx], state, config.penalty_kind)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise NumericalFailure(f"non-finite loss in epoch {epoch}, batch {b}", iteration=b)
        total += value * idx.size
        sgd_step(net, backward(net, cache, grad), config.step_size, config.momentum, velocity)
    return net, total / n


def _val_constraints(net: Network, val_data: Dataset, margin_m: float) -> np.ndarray:
    if len(val_data) == 0:
        raise ValueError("validation set is empty")
    return normalized_constraints(predict_logits(net, val_data.features), margin_m)


def _multipliers_from_constraints(z: np.ndarray, state: MultiplierState,
                                  kind: PenaltyKind) -> MultiplierState:
    new = state.copy()
    new.lambdas = state.clip(penalty_derivative(kind, z, state.rhos, state.lambdas).mean(axis=0))
    return new


def validation_multiplier_update(net: Network, val_data: Dataset, state: MultiplierState,
                                 config: TrainConfig) -> MultiplierState:
    """``lam_k <- clip(mean over validation of P'(d_k/m - 1, rho_k, lam_k))``."""
    z = _val_constraints(net, val_data, config.margin_m)
    return _multipliers_from_constraints(z, state, config.penalty_kind)


def validation_rho_update(state: MultiplierState, val_mean_constraints, epoch: int,
                          config: TrainConfig) -> MultiplierState:
    """Grow ``rho_k`` by ``gamma`` when the class's mean constraint has not improved.

    Only epochs that are multiples of ``rho_update_period`` are eligible; the
    reference point advances on those epochs only, so each comparison spans one
    full period. The first eligible epoch merely records the reference.
    """
    dbar = np.asarray(val_mean_constraints, dtype=np.float64)
    if dbar.shape != state.rhos.shape:
        raise ValueError("val_mean_constraints length does not match the multiplier state")
    if epoch < 1 or epoch % config.rho_update_period:
        return state
    new = state.copy()
    if state.prev_constraints is not None:
        stalled = dbar > config.improvement_tau * np.maximum(0.0, state.prev_constraints)
        new.rhos = np.where(stalled, config.gamma * state.rhos, state.rhos)
    new.prev_constraints = dbar.copy()
    return new


def hr_multiplier_update(state: MultiplierState, penalty_curr, penalty_prev,
                         config: TrainConfig) -> MultiplierState:
    curr = np.asarray(penalty_curr, dtype=np.float64)
    prev = np.asarray(penalty_prev, dtype=np.float64)
    if curr.shape != state.lambdas.shape or prev.shape != state.lambdas.shape:
        raise ValueError("penalty vectors must have one entry per class")
    lam = state.lambdas
    lam = np.where(curr > config.hr_tau * prev, config.hr_mu * lam,
                   np.where(prev > config.hr_tau * curr, lam / config.hr_mu, lam))
    new = state.copy()
    new.lambdas = state.clip(lam)
    return new


def _record(epoch, train_loss, net, data, state, z, k):
    if len(data.validation):
        val = PredictionSet.from_logits(predict_logits(net, data.validation.features), data.validation.labels)
        val_acc, val_ece = accuracy(val), ece(val)
    else:
        val_acc = val_ece = float("nan")
    lam = state.lambdas.copy() if state is not None else np.zeros(k)
    return EpochRecord(
        epoch=epoch,
        train_loss=float(train_loss),
        val_accuracy=val_acc,
        val_ece=val_ece,
        mean_lambda=float(lam.mean()),
        mean_rho=float(state.rhos.mean()) if state is not None else 0.0,
        per_class_lambda=lam,
        per_class_mean_constraint=z.mean(axis=0),
    )


def train(config: TrainConfig, data: SplitDataset, hidden_sizes: Sequence[int] = (64,),
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """Train a fresh network for ``config.epochs`` epochs and evaluate it.

    Returns the final-epoch model (no early stopping). ``on_epoch`` is called
    with each record as soon as it is available.
    """
    kind = config.loss.kind
    k = data.train.num_classes
    if kind.is_cals and len(data.validation) == 0:
        raise ValueError(f"{kind.value} training requires a non-empty validation set")
    net = init_network(data.train.dim, hidden_sizes, k, seed=config.seed)
    velocity = net.zeros_like()
    state = initial_state(config, k) if kind.is_cals else None
    prev_penalty = None
    history: list[EpochRecord] = []

    for epoch in range(1, config.epochs + 1):
        try:
            net, train_loss = train_epoch(net, data.train, config, state, epoch, velocity)
        except NumericalFailure as exc:
            raise TrainingFailure(str(exc), epoch, exc.iteration, history) from exc

        z = (_val_constraints(net, data.validation, config.margin_m)
             if len(data.validation) else np.zeros((1, k)))
        if kind is LossKind.CALS_ALM:
            dbar = z.mean(axis=0)
            updated = _multipliers_from_constraints(z, state, config.penalty_kind)
            state = validation_rho_update(updated, dbar, epoch, config)
        elif kind is LossKind.CALS_HR:
            curr = np.asarray(penalty_value(config.penalty_kind, z, state.rhos, state.lambdas)).mean(axis=0)
            if prev_penalty is not None:
                state = hr_multiplier_update(state, curr, prev_penalty, config)
            prev_penalty = curr

        rec = _record(epoch, train_loss, net, data, state, z, k)
        history.append(rec)
        logger.debug("epoch %d loss %.4f val_acc %.4f val_ece %.4f mean_lambda %.3g",
                     epoch, rec.train_loss, rec.val_accuracy, rec.val_ece, rec.mean_lambda)
        if on_epoch is not None:
            on_epoch(rec)

    val_logits = predict_logits(net, data.validation.features) if len(data.validation) else np.zeros((0, k))
    test_logits = predict_logits(net, data.test.features)
    val = PredictionSet.from_logits(val_logits, data.validation.labels) if len(data.validation) else None
    test = PredictionSet.from_logits(test_logits, data.test.labels)
    return TrainResult(net, history, state, val, test, val_logits, test_logits)
