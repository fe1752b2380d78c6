"""Penalty-Lagrangian functions P(z, rho, lambda) and their z-derivatives.

Three closed-form families are provided: PHR (Powell-Hestenes-Rockafellar),
P2 and P3. Each is continuously differentiable in ``z`` with

    P'(z, rho, lam) >= 0            for all z
    P'(0, rho, lam)  = lam

and the derivative blows up (``z > 0``) or vanishes (``z < 0``) as ``rho``
grows. All functions broadcast over numpy arrays and compute in float64.
"""

from __future__ import annotations

from enum import Enum

import numpy as np


class PenaltyKind(str, Enum):
    PHR = "phr"
    P2 = "p2"
    P3 = "p3"

    @classmethod
    def parse(cls, value: "str | PenaltyKind") -> "PenaltyKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown penalty kind {value!r}; expected one of {choices}") from None


class PenaltyDomainError(ValueError):
    """Raised for non-finite inputs or non-positive rho / lambda."""


def _check_args(z, rho, lam):
    z = np.asarray(z, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(rho)) and np.all(np.isfinite(lam))):
        raise PenaltyDomainError("penalty arguments must be finite")
    if np.any(rho <= 0):
        raise PenaltyDomainError("rho must be > 0")
    if np.any(lam <= 0):
        raise PenaltyDomainError("lambda must be > 0")
    return z, rho, lam


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def _rational_branch(z, rho, lam):
    # shared z <= 0 branch of P2 and P3; 1 - rho*z >= 1 there
    denom = 1.0 - rho * np.minimum(z, 0.0)
    return lam * z / denom, lam / denom**2


def penalty_value(kind: PenaltyKind | str, z, rho, lam):
    """Evaluate P(z, rho, lam) for the selected penalty family.

    At branch boundaries the branch whose closed condition contains the
    point is used (``lam + rho*z >= 0`` for PHR, ``z >= 0`` for P2/P3); the
    branches agree there, so this only matters for bit-level reproducibility.
    """
    kind = PenaltyKind.parse(kind)
    z, rho, lam = _check_args(z, rho, lam)
    if kind is PenaltyKind.PHR:
        active = lam + rho * z >= 0
        out = np.where(active, lam * z + 0.5 * rho * z**2, -(lam**2) / (2.0 * rho))
    else:
        neg, _ = _rational_branch(z, rho, lam)
        pos = lam * z + lam * rho * z**2
        if kind is PenaltyKind.P2:
            pos = pos + rho**2 * z**3 / 6.0
        out = np.where(z >= 0, pos, neg)
    return _scalar_or_array(out)


def penalty_derivative(kind: PenaltyKind | str, z, rho, lam):
    """Partial derivative of P with respect to ``z``."""
    kind = PenaltyKind.parse(kind)
    z, rho, lam = _check_args(z, rho, lam)
    if kind is PenaltyKind.PHR:
        lin = lam + rho * z
        out = np.where(lin >= 0, lin, 0.0)
    else:
        _, neg = _rational_branch(z, rho, lam)
        pos = lam + 2.0 * lam * rho * z
        if kind is PenaltyKind.P2:
            pos = pos + 0.5 * rho**2 * z**2
        out = np.where(z >= 0, pos, neg)
    return _scalar_or_array(out)
