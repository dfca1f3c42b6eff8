"""Primal features phi(s, a) and dual features xi(s).

A feature map only needs ``dim`` and ``evaluate``.  Custom maps can subclass
:class:`PrimalFeatures` / :class:`DualFeatures` or pass a plain callable.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .env import EnvSpec, EnvState


@dataclass(frozen=True)
class PrimalFeatures:
    dim: int
    fn: Callable  # (EnvState, action) -> (dim,) array
    table: Optional[np.ndarray] = None  # (S+1, A, dim) when step-independent

    def evaluate(self, state: EnvState, action: int) -> np.ndarray:
        return self.fn(state, action)

    def all_actions(self, state: EnvState, num_actions: int) -> np.ndarray:
        return np.stack([self.fn(state, a) for a in range(num_actions)])


@dataclass(frozen=True)
class DualFeatures:
    dim: int
    fn: Callable  # EnvState -> (dim,) nonnegative array
    table: Optional[np.ndarray] = None  # (S+1, dim) when step-independent

    def evaluate(self, state: EnvState) -> np.ndarray:
        return self.fn(state)


def one_hot_primal(spec: EnvSpec) -> PrimalFeatures:
    """Indicator of the (s, a) pair; index ``s * A + a``.

    The last coordinate is reserved for the absorbing state, whose features
    are the zero vector.
    """
    S, A = spec.num_states, spec.num_actions
    d = S * A + 1
    table = np.zeros((S + 1, A, d))
    for s in range(S):
        for a in range(A):
            table[s, a, s * A + a] = 1.0
    table.setflags(write=False)

    def fn(state, action):
        return table[state[0], action]

    return PrimalFeatures(d, fn, table)


def one_hot_dual(spec: EnvSpec) -> DualFeatures:
    S = spec.num_states
    table = np.zeros((S + 1, S))
    table[np.arange(S), np.arange(S)] = 1.0
    table.setflags(write=False)
    return DualFeatures(S, lambda state: table[state[0]], table)


def primal_table(spec: EnvSpec, features: PrimalFeatures, step: int) -> np.ndarray:
    """``(S+1, A, d)`` array of features at ``step`` for every extended state."""
    if features.table is not None:
        return features.table
    return np.stack(
        [features.all_actions(EnvState(s, step), spec.num_actions) for s in range(spec.num_states + 1)]
    )


def check_norms(spec: EnvSpec, primal: PrimalFeatures, dual: DualFeatures, tol: float = 1e-12) -> dict:
    """Exhaustive norm and sign checks; returns worst-case values."""
    worst_phi, worst_xi, min_xi = 0.0, 0.0, np.inf
    absorbing_zero = True
    for h in range(1, spec.horizon + 1):
        Phi = primal_table(spec, primal, h)
        worst_phi = max(worst_phi, float(np.linalg.norm(Phi, axis=-1).max()))
        absorbing_zero &= bool(np.all(Phi[spec.absorbing] == 0))
        for s in range(spec.num_states + 1):
            x = dual.evaluate(EnvState(s, h))
            worst_xi = max(worst_xi, float(np.linalg.norm(x)))
            min_xi = min(min_xi, float(x.min()))
    return {
        "max_phi_norm": worst_phi,
        "max_xi_norm": worst_xi,
        "min_xi_entry": min_xi,
        "phi_absorbing_zero": absorbing_zero,
        "ok": worst_phi <= 1 + tol and worst_xi <= 1 + tol and min_xi >= 0 and absorbing_zero,
    }


def linear_mdp_parameters(spec: EnvSpec, primal: PrimalFeatures):
    """Least-squares ``(omega_r, omega_c, mu)`` per step for a tabular spec.

    For one-hot features the fit is exact.  Returns the parameters and the
    maximal reconstruction residual of reward, cost and transitions.  Emits a
    warning when a norm exceeds ``sqrt(d)``.
    """
    H, S1, A = spec.horizon, spec.num_states + 1, spec.num_actions
    # absorbing rows have zero features, so they carry no constraint
    rows = [(s, a) for s in range(spec.num_states) for a in range(A)]
    omega_r, omega_c, mu = [], [], []
    resid = 0.0
    for h in range(H):
        Phi = primal_table(spec, primal, h + 1)
        X = np.stack([Phi[s, a] for s, a in rows])
        targets = np.column_stack(
            [
                [spec.ext_reward[h, s, a] for s, a in rows],
                [spec.ext_cost[h, s, a] for s, a in rows],
                np.stack([spec.ext_transition[h, s, a] for s, a in rows]),
            ]
        )
        W, *_ = np.linalg.lstsq(X, targets, rcond=None)
        resid = max(resid, float(np.abs(X @ W - targets).max()))
        omega_r.append(W[:, 0])
        omega_c.append(W[:, 1])
        mu.append(W[:, 2:].T)  # (S+1, d)
    omega_r, omega_c, mu = np.array(omega_r), np.array(omega_c), np.array(mu)
    bound = np.sqrt(primal.dim)
    big = max(
        np.linalg.norm(omega_r, axis=-1).max(),
        np.linalg.norm(omega_c, axis=-1).max(),
        np.linalg.norm(mu, axis=-1).max(),
    )
    if big > bound + 1e-12:
        warnings.warn(f"linear-MDP parameter norm {big:.3g} exceeds sqrt(d)={bound:.3g}; regret constants degrade")
    return omega_r, omega_c, mu, resid
