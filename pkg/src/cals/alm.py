"""Generic augmented Lagrangian solver for ``min f(x) s.t. h_i(x) <= 0``.

The outer loop alternates three steps:

1. approximately minimise ``f(x) + sum_i P(h_i(x), rho_i, lam_i)`` with a fixed
   number of gradient-descent steps, warm-started at the previous iterate;
2. set ``lam_i <- P'(h_i(x), rho_i, lam_i)`` and project onto the safeguard
   interval;
3. grow ``rho_i <- gamma * rho_i`` for every constraint that did not improve,
   i.e. ``h_i > tau * max(0, h_i_prev)``.

The solver here is deliberately simple (plain gradient descent); it serves the
analytic test problems and documents the update rules reused by the trainer.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .penalties import PenaltyKind, penalty_derivative, penalty_value

ValueAndGrad = Callable[[np.ndarray], "tuple[float, np.ndarray]"]

DEFAULT_SAFEGUARD_LO = 1e-6
DEFAULT_SAFEGUARD_HI = 1e6


class NumericalFailure(RuntimeError):
    """A non-finite value appeared during optimisation."""

    def __init__(self, message: str, iteration: Optional[int] = None):
        super().__init__(message)
        self.iteration = iteration


@dataclass
class ConstrainedProblem:
    """Objective and inequality constraints, each returning ``(value, gradient)``.

    Constraints follow the ``h_i(x) <= 0`` convention.
    """

    objective: ValueAndGrad
    constraints: Sequence[ValueAndGrad]
    dimension: int

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        self.constraints = list(self.constraints)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    def check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dimension,):
            raise ValueError(f"expected a vector of length {self.dimension}, got shape {x.shape}")
        return x

    def constraint_values(self, x) -> np.ndarray:
        x = self.check_point(x)
        return np.array([h(x)[0] for h in self.constraints], dtype=np.float64)


@dataclass
class MultiplierState:
    """Per-constraint multipliers, penalty parameters and the last constraint values.

    ``prev_constraints`` is ``None`` until the first penalty update has recorded
    a reference point.
    """

    lambdas: np.ndarray
    rhos: np.ndarray
    prev_constraints: Optional[np.ndarray] = None
    safeguard_lo: float = DEFAULT_SAFEGUARD_LO
    safeguard_hi: float = DEFAULT_SAFEGUARD_HI

    def __post_init__(self):
        self.lambdas = np.array(self.lambdas, dtype=np.float64)
        self.rhos = np.array(self.rhos, dtype=np.float64)
        if self.lambdas.shape != self.rhos.shape or self.lambdas.ndim != 1:
            raise ValueError("lambdas and rhos must be 1-d vectors of equal length")
        if not 0 < self.safeguard_lo <= self.safeguard_hi:
            raise ValueError("safeguards must satisfy 0 < lo <= hi")
        if np.any(self.rhos <= 0):
            raise ValueError("rhos must be positive")
        if self.prev_constraints is not None:
            self.prev_constraints = np.array(self.prev_constraints, dtype=np.float64)

    @classmethod
    def initial(cls, n: int, initial_lambda: float, initial_rho: float,
                safeguard_lo: float = DEFAULT_SAFEGUARD_LO,
                safeguard_hi: float = DEFAULT_SAFEGUARD_HI) -> "MultiplierState":
        lam = float(np.clip(initial_lambda, safeguard_lo, safeguard_hi))
        return cls(np.full(n, lam), np.full(n, float(initial_rho)), None, safeguard_lo, safeguard_hi)

    def __len__(self):
        return len(self.lambdas)

    def clip(self, lambdas) -> np.ndarray:
        return np.clip(np.asarray(lambdas, dtype=np.float64), self.safeguard_lo, self.safeguard_hi)

    def copy(self) -> "MultiplierState":
        return dataclasses.replace(
            self,
            lambdas=self.lambdas.copy(),
            rhos=self.rhos.copy(),
            prev_constraints=None if self.prev_constraints is None else self.prev_constraints.copy(),
        )


@dataclass
class AlmSettings:
    kind: PenaltyKind = PenaltyKind.PHR
    gamma: float = 1.2
    improvement_tau: float = 0.9
    inner_iterations: int = 200
    outer_iterations: int = 50
    inner_step_size: float = 0.05
    initial_lambda: float = 1.0
    initial_rho: float = 1.0
    safeguard_lo: float = DEFAULT_SAFEGUARD_LO
    safeguard_hi: float = DEFAULT_SAFEGUARD_HI

    def __post_init__(self):
        self.kind = PenaltyKind.parse(self.kind)
        if not self.gamma > 1:
            raise ValueError("gamma must be > 1")
        if not 0 < self.improvement_tau < 1:
            raise ValueError("improvement_tau must lie in (0, 1)")
        if self.inner_iterations < 0 or self.outer_iterations < 0:
            raise ValueError("iteration counts must be non-negative")
        if not self.inner_step_size > 0:
            raise ValueError("inner_step_size must be positive")
        if not (self.initial_lambda > 0 and self.initial_rho > 0):
            raise ValueError("initial_lambda and initial_rho must be positive")


@dataclass
class OuterRecord:
    iteration: int
    objective: float
    max_violation: float
    mean_lambda: float
    mean_rho: float
    lambdas: np.ndarray = field(repr=False)
    rhos: np.ndarray = field(repr=False)


def augmented_lagrangian(problem: ConstrainedProblem, x, state: MultiplierState,
                         kind: PenaltyKind | str) -> tuple[float, np.ndarray]:
    """Value and gradient of ``f(x) + sum_i P(h_i(x), rho_i, lam_i)``."""
    x = problem.check_point(x)
    if len(state) != problem.num_constraints:
        raise ValueError("multiplier state does not match the number of constraints")
    value, grad = problem.objective(x)
    value = float(value)
    grad = np.array(grad, dtype=np.float64)
    for i, h in enumerate(problem.constraints):
        hv, hg = h(x)
        value += penalty_value(kind, hv, state.rhos[i], state.lambdas[i])
        grad += penalty_derivative(kind, hv, state.rhos[i], state.lambdas[i]) * np.asarray(hg, dtype=np.float64)
    return value, grad


def minimize_inner(problem: ConstrainedProblem, x0, state: MultiplierState,
                   settings: AlmSettings) -> np.ndarray:
    """Fixed-length gradient descent on the augmented Lagrangian."""
    x = problem.check_point(x0).copy()
    if not np.all(np.isfinite(x)):
        raise NumericalFailure("non-finite starting point", iteration=0)
    for it in range(settings.inner_iterations):
        value, grad = augmented_lagrangian(problem, x, state, settings.kind)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise NumericalFailure(f"non-finite augmented Lagrangian at inner iteration {it}", iteration=it)
        x = x - settings.inner_step_size * grad
    return x


def update_multipliers(state: MultiplierState, constraint_values,
                       kind: PenaltyKind | str) -> MultiplierState:
    h = np.asarray(constraint_values, dtype=np.float64)
    if h.shape != state.lambdas.shape:
        raise ValueError("constraint_values length does not match the multiplier state")
    new = state.copy()
    new.lambdas = state.clip(penalty_derivative(kind, h, state.rhos, state.lambdas))
    return new


def update_penalty_parameters(state: MultiplierState, constraint_values,
                              settings: AlmSettings) -> MultiplierState:
    h = np.asarray(constraint_values, dtype=np.float64)
    if h.shape != state.rhos.shape:
        raise ValueError("constraint_values length does not match the multiplier state")
    new = state.copy()
    if state.prev_constraints is not None:
        stalled = h > settings.improvement_tau * np.maximum(0.0, state.prev_constraints)
        new.rhos = np.where(stalled, settings.gamma * state.rhos, state.rhos)
    new.prev_constraints = h.copy()
    return new


def solve(problem: ConstrainedProblem, x0, settings: AlmSettings
          ) -> tuple[np.ndarray, MultiplierState, list[OuterRecord]]:
    """Run ``settings.outer_iterations`` rounds of the augmented Lagrangian method."""
    state = MultiplierState.initial(problem.num_constraints, settings.initial_lambda,
                                    settings.initial_rho, settings.safeguard_lo, settings.safeguard_hi)
    x = problem.check_point(x0).copy()
    history: list[OuterRecord] = []
    for j in range(settings.outer_iterations):
        x = minimize_inner(problem, x, state, settings)
        h = problem.constraint_values(x)
        # both updates use rho^(j); the penalty update only needs h and the old rho
        multipliers = update_multipliers(state, h, settings.kind)
        penalties = update_penalty_parameters(state, h, settings)
        state = dataclasses.replace(multipliers, rhos=penalties.rhos,
                                    prev_constraints=penalties.prev_constraints)
        history.append(OuterRecord(
            iteration=j,
            objective=float(problem.objective(x)[0]),
            max_violation=float(np.max(h, initial=0.0)),
            mean_lambda=float(np.mean(state.lambdas)) if len(state) else 0.0,
            mean_rho=float(np.mean(state.rhos)) if len(state) else 0.0,
            lambdas=state.lambdas.copy(),
            rhos=state.rhos.copy(),
        ))
    return x, state, history


HISTORY_COLUMNS = ("iter", "objective", "max_violation", "mean_lambda", "mean_rho")


def write_history_csv(history: Sequence[OuterRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for rec in history:
            writer.writerow([rec.iteration, repr(rec.objective), repr(rec.max_violation),
                             repr(rec.mean_lambda), repr(rec.mean_rho)])
