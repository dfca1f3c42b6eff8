"""Dual player: projected online gradient steps on the multiplier parameters.

``lambda(s) = <xi(s), theta>`` with ``theta`` kept in the nonnegative part of
the L2 ball of radius ``B``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .env import EnvState
from .errors import ContractViolation
from .features import DualFeatures


def project_U(theta_raw, B: float) -> np.ndarray:
    """Euclidean projection onto ``{theta >= 0} ∩ {||theta||_2 <= B}``.

    Clamping then radial shrinking is exact for this set: the ball is centred
    at the origin, which lies in the orthant.
    """
    if B <= 0:
        raise ContractViolation("B must be positive")
    x = np.maximum(np.asarray(theta_raw, dtype=float), 0.0)
    n = np.linalg.norm(x)
    if n > B:
        x = x * (B / n)
    return x


@dataclass(frozen=True)
class DualState:
    theta: np.ndarray
    radius: float
    episode_index: int = 1

    @classmethod
    def initial(cls, dim: int, radius: float) -> "DualState":
        if radius <= 0:
            raise ContractViolation("B must be positive")
        return cls(np.zeros(dim), float(radius), 1)


def lambda_value(dual: DualState, features: DualFeatures, state: EnvState) -> float:
    return float(features.evaluate(state) @ dual.theta)


def ogd_step(dual: DualState, s1: EnvState, v_c_estimate: float, features: DualFeatures) -> DualState:
    """One projected step ``theta + (B / sqrt(k)) xi(s1) V_c``.

    ``v_c_estimate`` is the learner's optimistic cost value at ``s1``.  The
    loss of the dual player is ``-lambda(s1) V_c``, so this is a descent step
    on that loss.
    """
    if not (0.0 <= v_c_estimate <= 1.0):
        raise ContractViolation(f"cost estimate {v_c_estimate} outside [0, 1]")
    k = dual.episode_index
    if k < 1:
        raise ContractViolation("episode index must be >= 1")
    eta = dual.radius / np.sqrt(k)
    raw = dual.theta + eta * features.evaluate(s1) * v_c_estimate
    return replace(dual, theta=project_U(raw, dual.radius), episode_index=k + 1)
