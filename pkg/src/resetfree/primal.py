"""Optimistic least-squares value iteration with a softmax policy.

The learner keeps, for every step h, the ridge Gram matrix of visited
features and two regression weights (reward-to-go and cost-to-go).  Q values
are evaluated lazily from ``(Gram^{-1}, w, beta)``:

    Q_r = clip(<w_r, phi> + beta * ||phi||_{Gram^{-1}}, 0, H - h + 1)
    Q_c = clip(<w_c, phi> - beta * ||phi||_{Gram^{-1}}, 0, 1)

The bonus is added for reward and subtracted for cost, so both estimates are
optimistic.  State values average the *new* Q under the policy that was just
played, which is why the learner keeps the previous Q model and multiplier.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np

from .env import EnvState
from .errors import ContractViolation, NumericError
from .features import PrimalFeatures


def theory_alpha(num_actions: int, K: int, B: float, H: int) -> float:
    """Softmax temperature ``log|A| K / (2 (1 + B + H))``."""
    return math.log(num_actions) * K / (2.0 * (1.0 + B + H))


def theory_beta(C: float, d: int, H: int, K: int, num_actions: int, p: float) -> float:
    """Bonus multiplier ``C d H sqrt(log(4 log|A| d K H / p))``.

    The inner ``log|A|`` multiplies the rest of the argument.
    """
    if num_actions < 2:
        raise ContractViolation("need at least two actions")
    if not 0 < p < 1:
        raise ContractViolation("failure probability must be in (0, 1)")
    arg = 4.0 * math.log(num_actions) * d * K * H / p
    return C * d * H * math.sqrt(max(math.log(arg), 0.0))


def softmax_scores(scores: np.ndarray, alpha: float) -> np.ndarray:
    """Softmax of ``alpha * scores`` over the last axis, with max-subtraction."""
    z = alpha * np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite policy scores")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class LearnerHyper:
    alpha: float
    beta: float
    ridge: float = 1.0
    bonus_scale: float = 1.0
    failure_prob: float = 0.05
    sherman_morrison: bool = False


class Step(NamedTuple):
    state: EnvState
    action: int
    reward: float
    cost: float
    next_state: Optional[EnvState]


class _QModel(NamedTuple):
    gram_inv: np.ndarray  # (H, d, d)
    w_r: np.ndarray  # (H, d)
    w_c: np.ndarray  # (H, d)


class UCBLearner:
    """Primal player: per-step ridge regression with UCB bonuses."""

    def __init__(self, features: PrimalFeatures, num_actions: int, horizon: int, hyper: LearnerHyper, capacity: int = 256):
        if hyper.ridge <= 0:
            raise ContractViolation("ridge must be positive")
        self.features = features
        self.num_actions = num_actions
        self.horizon = horizon
        self.hyper = hyper
        d = features.dim
        H = horizon
        self.gram = np.tile(np.eye(d) * hyper.ridge, (H, 1, 1))
        init = _QModel(np.tile(np.eye(d) / hyper.ridge, (H, 1, 1)), np.zeros((H, d)), np.zeros((H, d)))
        self._model = init
        # the value average uses the previously played policy; before any
        # data that is the initial policy with a zero multiplier
        self._avg_model = init
        self._avg_lambda = 0.0
        self.episodes = 0
        self._phi = np.zeros((H, capacity, d))
        self._r = np.zeros((H, capacity))
        self._c = np.zeros((H, capacity))
        self._next = np.zeros((H, capacity), dtype=int)
        self._next_states = [dict() for _ in range(H)]  # state -> slot, per step
        self._feat_cache = {}

    @property
    def beta_eff(self) -> float:
        return self.hyper.beta * self.hyper.bonus_scale

    @property
    def gram_inv(self) -> np.ndarray:
        return self._model.gram_inv

    @property
    def w_r(self) -> np.ndarray:
        return self._model.w_r

    @property
    def w_c(self) -> np.ndarray:
        return self._model.w_c

    def phi_all(self, state: EnvState) -> np.ndarray:
        """``(A, d)`` features of every action at ``state`` (cached)."""
        f = self._feat_cache.get(state)
        if f is None:
            f = self.features.all_actions(state, self.num_actions)
            self._feat_cache[state] = f
        return f

    # evaluation --------------------------------------------------------

    def _q(self, model: _QModel, h: int, Phi: np.ndarray):
        """Clipped optimistic Q at 1-based step ``h`` for features ``(..., A, d)``."""
        G = model.gram_inv[h - 1]
        quad = ((Phi @ G) * Phi).sum(-1)
        bonus = self.beta_eff * np.sqrt(np.maximum(quad, 0.0))
        qr = np.clip(Phi @ model.w_r[h - 1] + bonus, 0.0, self.horizon - h + 1)
        qc = np.clip(Phi @ model.w_c[h - 1] - bonus, 0.0, 1.0)
        return qr, qc

    def _softmax(self, qr, qc, lam: float):
        return softmax_scores(qr - lam * qc, self.hyper.alpha)

    def q_values(self, state: EnvState):
        return self._q(self._model, state.step, self.phi_all(state))

    def policy_distribution(self, state: EnvState, lambda_at_s1: float) -> np.ndarray:
        """Softmax over ``alpha (Q_r - lambda Q_c)`` at ``state``."""
        if not (np.isfinite(lambda_at_s1) and lambda_at_s1 >= 0):
            raise ContractViolation("lambda must be finite and nonnegative")
        qr, qc = self.q_values(state)
        return self._softmax(qr, qc, lambda_at_s1)

    def policy_table(self, Phi_by_step, lambda_at_s1: float) -> np.ndarray:
        """``(H, n, A)`` policy for stacked features ``Phi_by_step[h-1]`` of shape ``(n, A, d)``."""
        out = []
        for h in range(1, self.horizon + 1):
            qr, qc = self._q(self._model, h, Phi_by_step[h - 1])
            out.append(self._softmax(qr, qc, lambda_at_s1))
        return np.array(out)

    def q_table(self, Phi_by_step):
        qs = [self._q(self._model, h, Phi_by_step[h - 1]) for h in range(1, self.horizon + 1)]
        return np.array([q[0] for q in qs]), np.array([q[1] for q in qs])

    def _values(self, h: int, Phi: np.ndarray, model: _QModel, avg_model: _QModel, lam: float):
        qr, qc = self._q(model, h, Phi)
        pr, pc = self._q(avg_model, h, Phi)
        pi = self._softmax(pr, pc, lam)
        vr = np.clip((pi * qr).sum(-1), 0.0, self.horizon - h + 1)
        vc = np.clip((pi * qc).sum(-1), 0.0, 1.0)
        return vr, vc

    def value_estimates(self, state: EnvState):
        """``(V_r, V_c)`` at ``state``: current Q averaged under the last played policy."""
        vr, vc = self._values(state.step, self.phi_all(state)[None], self._model, self._avg_model, self._avg_lambda)
        return float(vr[0]), float(vc[0])

    # update ------------------------------------------------------------

    def _grow(self):
        H, cap, d = self._phi.shape
        def pad(a):
            return np.concatenate([a, np.zeros((H, cap) + a.shape[2:], dtype=a.dtype)], axis=1)
        self._phi, self._r, self._c, self._next = map(pad, (self._phi, self._r, self._c, self._next))

    def _record(self, trajectory):
        if len(trajectory) != self.horizon:
            raise ContractViolation(f"trajectory has {len(trajectory)} steps, expected {self.horizon}")
        n = self.episodes
        if n >= self._phi.shape[1]:
            self._grow()
        for h, st in enumerate(trajectory, start=1):
            if st.state.step != h:
                raise ContractViolation("trajectory step indices must be 1..H")
            phi = self.features.evaluate(st.state, st.action)
            self._phi[h - 1, n] = phi
            self._r[h - 1, n] = st.reward
            self._c[h - 1, n] = st.cost
            if h < self.horizon:
                slots = self._next_states[h - 1]
                self._next[h - 1, n] = slots.setdefault(st.next_state, len(slots))
            self._update_gram(h - 1, phi)
        self.episodes += 1

    def _update_gram(self, i: int, phi: np.ndarray):
        self.gram[i] += np.outer(phi, phi)

    def end_of_episode_update(self, trajectory, lambda_at_s1: float) -> None:
        """Add one episode and recompute every step backwards from ``H``.

        ``lambda_at_s1`` is the multiplier the episode was played with; the
        new state values average the new Q under that episode's policy.
        """
        old = self._model
        self._record(trajectory)
        n = self.episodes
        H, d = self.horizon, self.features.dim
        if self.hyper.sherman_morrison:
            phi = self._phi[:, n - 1]
            u = np.einsum("hij,hj->hi", old.gram_inv, phi)
            denom = 1.0 + np.einsum("hi,hi->h", phi, u)
            Ginv = old.gram_inv - u[:, :, None] * u[:, None, :] / denom[:, None, None]
        else:
            # the Gram matrices do not depend on the targets, so all steps
            # are inverted in one batched solve
            try:
                Ginv = np.linalg.inv(self.gram)
            except np.linalg.LinAlgError as exc:
                raise NumericError("singular Gram matrix") from exc
        gram_inv = 0.5 * (Ginv + np.swapaxes(Ginv, 1, 2))
        w_r = np.empty_like(old.w_r)
        w_c = np.empty_like(old.w_c)
        new = _QModel(gram_inv, w_r, w_c)
        for h in range(H, 0, -1):
            i = h - 1
            yr = self._r[i, :n].copy()
            yc = self._c[i, :n].copy()
            if h < H:
                slots = self._next_states[i]
                states = sorted(slots, key=slots.get)
                Phi_next = np.stack([self.phi_all(s) for s in states])
                vr, vc = self._values(h + 1, Phi_next, new, old, lambda_at_s1)
                idx = self._next[i, :n]
                yr += vr[idx]
                yc += vc[idx]
            X = self._phi[i, :n]
            w_r[i] = gram_inv[i] @ (X.T @ yr)
            w_c[i] = gram_inv[i] @ (X.T @ yc)
        self._model = new
        self._avg_model = old
        self._avg_lambda = float(lambda_at_s1)

    def min_gram_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.gram)[:, 0].min())

    def gram_floor_holds(self, tol: float = 1e-9) -> bool:
        """``min eig(Gram_h) >= ridge - tol`` for every step, via a Cholesky test."""
        shifted = self.gram - (self.hyper.ridge - tol) * np.eye(self.features.dim)
        try:
            np.linalg.cholesky(shifted)
        except np.linalg.LinAlgError:
            return False
        return True

    # persistence -------------------------------------------------------

    def snapshot(self, path) -> None:
        """Write Gram matrices, weights and hyperparameters to an ``.npz`` file."""
        np.savez(
            path,
            gram=self.gram,
            w_r=self.w_r,
            w_c=self.w_c,
            gram_inv=self.gram_inv,
            episodes=self.episodes,
            **{f"hyper_{k}": v for k, v in asdict(self.hyper).items()},
        )

    @staticmethod
    def load_snapshot(path) -> dict:
        with np.load(path) as z:
            return {k: z[k] for k in z.files}
