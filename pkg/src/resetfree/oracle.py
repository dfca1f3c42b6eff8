"""Exact dynamic programming on tabular specs.

Builds the shared saddle point of the reset-free CMDP sequence: the
reward-optimal policy of the restricted-action MDP (actions whose optimal
cost-to-go equals the optimal cost value), the smallest multiplier
``lambda_hat`` minimizing the dual function at each feasible start, and
``lambda_star = lambda_hat + 1``.  Also evaluates arbitrary policies and
certifies the saddle-point and restricted-policy claims numerically.

All tables are over the extended state set ``0..S`` (``S`` is absorbing) and
use 0-based step indices.  This module sees the full model and is never
called from the learner.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator, Optional

import numpy as np

from .env import EnvSpec
from .errors import ContractViolation, InfeasibleSpecError, InternalInconsistency, SearchBoundError

TIE_TOL = 1e-9
FEAS_TOL = 1e-9
ENUM_CUTOFF = 10**6


@dataclass
class ValueTables:
    q: np.ndarray  # (H, S+1, A)
    v: np.ndarray  # (H, S+1)
    objective: str


# dynamic programming ----------------------------------------------------


def _as_policy_table(spec: EnvSpec, policy) -> np.ndarray:
    pi = np.asarray(policy, dtype=float)
    S, A, H = spec.num_states, spec.num_actions, spec.horizon
    if pi.shape == (H, S + 1):
        pi = pi.astype(int)
        out = np.zeros((H, S + 1, A))
        np.put_along_axis(out, pi[..., None], 1.0, axis=-1)
        return out
    if pi.shape == (H, S, A):
        pi = np.concatenate([pi, np.full((H, 1, A), 1.0 / A)], axis=1)
    if pi.shape != (H, S + 1, A):
        raise ContractViolation(f"policy table has shape {pi.shape}")
    if np.any(pi < -1e-12) or np.max(np.abs(pi.sum(-1) - 1.0)) > 1e-9:
        raise ContractViolation("policy rows must be distributions")
    return pi


def policy_tables(spec: EnvSpec, policy, reward: Optional[np.ndarray] = None) -> ValueTables:
    """Exact evaluation of a (stochastic or deterministic) policy.

    ``reward`` defaults to the environment reward; pass ``spec.ext_cost`` or
    any scalarization over the extended state set.
    """
    pi = _as_policy_table(spec, policy)
    R = spec.ext_reward if reward is None else reward
    P = spec.ext_transition
    H = spec.horizon
    q = np.empty_like(R)
    v = np.empty(R.shape[:2])
    nxt = np.zeros(spec.num_states + 1)
    for h in range(H - 1, -1, -1):
        q[h] = R[h] + P[h] @ nxt
        v[h] = (pi[h] * q[h]).sum(-1)
        nxt = v[h]
    return ValueTables(q, v, "custom" if reward is not None else "reward")


def policy_values(spec: EnvSpec, policy) -> tuple:
    """``(V_r, V_c)`` at step 1 for every extended state."""
    pi = _as_policy_table(spec, policy)
    return policy_tables(spec, pi).v[0], policy_tables(spec, pi, spec.ext_cost).v[0]


def evaluate_policy(spec: EnvSpec, policy, objective: str, s1: int) -> float:
    """Exact ``V^pi_1(s1)`` for ``objective`` in ``{"reward", "cost"}``.

    The cost value is the probability of a reset during the episode.
    """
    if objective == "reward":
        R = None
    elif objective == "cost":
        R = spec.ext_cost
    else:
        raise ContractViolation(f"unknown objective {objective!r}")
    return float(policy_tables(spec, policy, R).v[0, s1])


def optimal_tables(spec: EnvSpec, reward: np.ndarray, mode: str = "max", allowed=None) -> tuple:
    """Optimal DP for a reward table; returns ``(ValueTables, greedy policy)``.

    ``allowed`` is an optional ``(H, S+1, A)`` mask of admissible actions.
    Ties go to the lowest action id.
    """
    P = spec.ext_transition
    H = spec.horizon
    q = np.empty_like(reward, dtype=float)
    v = np.empty(reward.shape[:2])
    pi = np.empty(reward.shape[:2], dtype=int)
    nxt = np.zeros(spec.num_states + 1)
    fill = -np.inf if mode == "max" else np.inf
    for h in range(H - 1, -1, -1):
        q[h] = reward[h] + P[h] @ nxt
        qh = q[h] if allowed is None else np.where(allowed[h], q[h], fill)
        pi[h] = qh.argmax(-1) if mode == "max" else qh.argmin(-1)
        v[h] = np.take_along_axis(qh, pi[h][:, None], -1)[:, 0]
        nxt = v[h]
    return ValueTables(q, v, mode), pi


def min_cost_dp(spec: EnvSpec) -> ValueTables:
    """Optimal (minimal) reset probability ``Q_c*``, ``V_c*``."""
    tables, _ = optimal_tables(spec, spec.ext_cost, mode="min")
    tables.objective = "cost"
    return tables


def restricted_actions(spec: EnvSpec, cost_tables: ValueTables, tol: float = TIE_TOL) -> np.ndarray:
    """Mask of actions with ``Q_c*(s, a) <= V_c*(s)`` (up to ``tol``)."""
    mask = cost_tables.q <= cost_tables.v[..., None] + tol
    if not mask.any(-1).all():
        raise InternalInconsistency("empty restricted action set")
    return mask


def optimal_reset_free_policy(spec: EnvSpec, restricted: np.ndarray) -> np.ndarray:
    """Reward-optimal deterministic policy of the restricted-action MDP, ``(H, S+1)``."""
    if not restricted.any(-1).all():
        raise ContractViolation("restricted action sets must be nonempty")
    _, pi = optimal_tables(spec, spec.ext_reward, "max", allowed=restricted)
    return pi


def feasible_states(spec: EnvSpec, cost_tables: Optional[ValueTables] = None, tol: float = FEAS_TOL) -> np.ndarray:
    """Boolean mask over ``0..S-1`` of states with ``V_c*(s) = 0`` at step 1."""
    ct = cost_tables if cost_tables is not None else min_cost_dp(spec)
    return ct.v[0, : spec.num_states] <= tol


def initial_state_closure(spec: EnvSpec) -> np.ndarray:
    """States that can start an episode under some action sequence.

    Starts with the support of the start and post-reset distributions and
    adds every non-reset state reachable at step H without a reset, until
    nothing changes.
    """
    S, H = spec.num_states, spec.horizon
    reach = (spec.transition > 0).any(axis=2)  # (H, S, S')
    ok = ~spec.reset_mask
    closure = (spec.start_dist > 0) | (spec.post_reset_dist > 0)
    while True:
        cur = closure & ok
        for h in range(H - 1):
            cur = reach[h][cur].any(axis=0) & ok
        new = closure | cur
        if (new == closure).all():
            return closure
        closure = new


def assert_feasible(spec: EnvSpec, cost_tables: Optional[ValueTables] = None) -> None:
    """Raise :class:`InfeasibleSpecError` unless every reachable start is reset-free."""
    feas = feasible_states(spec, cost_tables)
    bad = np.flatnonzero(initial_state_closure(spec) & ~feas)
    if bad.size:
        raise InfeasibleSpecError(
            f"{spec.name}: states {bad.tolist()} can start an episode but admit no "
            "reset-free policy (the reset-free feasibility assumption fails)"
        )


# multipliers -------------------------------------------------------------


def dual_function(spec: EnvSpec, ys) -> np.ndarray:
    """``g(y)(s) = max_pi V_r - y V_c`` at step 1, for each ``y``; shape ``(n, S+1)``."""
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    P = spec.ext_transition
    R, C = spec.ext_reward, spec.ext_cost
    v = np.zeros((ys.size, spec.num_states + 1))
    for h in range(spec.horizon - 1, -1, -1):
        q = R[h][None] - ys[:, None, None] * C[h][None] + np.einsum("sat,nt->nsa", P[h], v)
        v = q.max(-1)
    return v


def default_y_max(spec: EnvSpec) -> float:
    return spec.horizon * (1.0 + float(spec.reward.max())) * 10.0


def lambda_hat_all(
    spec: EnvSpec,
    plateau: np.ndarray,
    feasible: np.ndarray,
    y_max: Optional[float] = None,
    tol: float = 1e-11,
    iters: int = 80,
) -> np.ndarray:
    """Smallest minimizer of the dual function at every feasible state.

    ``plateau[s]`` is the reset-free optimum ``V_r^{pi*}(s)``, which the dual
    function reaches and keeps from its smallest minimizer onwards.  The
    result is ``nan`` at infeasible states, where the multiplier is not
    defined.
    """
    y_max = default_y_max(spec) if y_max is None else float(y_max)
    S = spec.num_states
    states = np.flatnonzero(feasible[:S])
    out = np.full(S, np.nan)
    if states.size == 0:
        return out
    target = plateau[states] + tol
    idx = np.arange(states.size)

    def below(ys):
        return dual_function(spec, ys)[idx, states] <= target

    top = dual_function(spec, [y_max])[0, states]
    if np.any(top > target):
        bad = states[top > target]
        raise SearchBoundError(
            f"dual function not flat by y_max={y_max:g} at states {bad.tolist()} "
            f"(gap {float(np.max(top - target)):.3g}); raise y_max"
        )
    lo = np.zeros(states.size)
    hi = np.full(states.size, y_max)
    at_zero = below(lo)
    hi[at_zero] = 0.0
    for _ in range(iters):
        if np.all(hi - lo <= 1e-13 * np.maximum(1.0, hi)):
            break
        mid = 0.5 * (lo + hi)
        ok = below(mid)
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    out[states] = hi
    return out


def lambda_hat(spec: EnvSpec, s: int, y_max: Optional[float] = None, tol: float = 1e-11) -> float:
    ct = min_cost_dp(spec)
    feas = feasible_states(spec, ct)
    if not feas[s]:
        return float("nan")
    pi = optimal_reset_free_policy(spec, restricted_actions(spec, ct))
    plateau = policy_tables(spec, pi).v[0]
    one = np.zeros(spec.num_states + 1, dtype=bool)
    one[s] = True
    return float(lambda_hat_all(spec, plateau, one, y_max, tol)[s])


# saddle point --------------------------------------------------------------


@dataclass
class SaddlePoint:
    pi_star: np.ndarray  # (H, S+1) deterministic
    lambda_hat: np.ndarray  # (S,), nan where undefined
    lambda_star: np.ndarray  # (S,)
    restricted: np.ndarray  # (H, S+1, A) bool
    cost: ValueTables
    v_r_star: np.ndarray  # (S+1,) V_r^{pi*} at step 1
    v_c_star: np.ndarray
    feasible: np.ndarray  # (S,) bool

    def theta_star(self) -> np.ndarray:
        """One-hot dual parameters realizing ``lambda_star`` (0 where undefined)."""
        return np.nan_to_num(self.lambda_star, nan=0.0)

    def multiplier(self, which: str) -> np.ndarray:
        """``lambda_hat`` or ``lambda_star`` over the extended states, 0 where undefined."""
        lam = {"hat": self.lambda_hat, "star": self.lambda_star}[which]
        return np.append(np.nan_to_num(lam, nan=0.0), 0.0)


def saddle_point(spec: EnvSpec, y_max: Optional[float] = None) -> SaddlePoint:
    """Shared saddle point.

    Without an explicit ``y_max`` the search bound starts at
    :func:`default_y_max` and grows tenfold (up to ``1e9``) until the dual
    function is flat; an explicit bound is used as given.
    """
    ct = min_cost_dp(spec)
    restricted = restricted_actions(spec, ct)
    pi = optimal_reset_free_policy(spec, restricted)
    vr, vc = policy_values(spec, pi)
    feas = feasible_states(spec, ct)
    if y_max is not None:
        lam = lambda_hat_all(spec, vr, feas, y_max)
    else:
        bound = default_y_max(spec)
        while True:
            try:
                lam = lambda_hat_all(spec, vr, feas, bound)
                break
            except SearchBoundError:
                if bound >= 1e9:
                    raise
                bound *= 10.0
    return SaddlePoint(pi, lam, lam + 1.0, restricted, ct, vr, vc, feas)


# certification ---------------------------------------------------------------


def random_policy(spec: EnvSpec, rng: np.random.Generator, kind: str = "dirichlet") -> np.ndarray:
    H, S1, A = spec.horizon, spec.num_states + 1, spec.num_actions
    if kind == "deterministic":
        return _as_policy_table(spec, rng.integers(A, size=(H, S1)))
    conc = {"dirichlet": 1.0, "sparse": 0.1}[kind]
    return rng.dirichlet(np.full(A, conc), size=(H, S1))


@dataclass
class CertificationReport:
    kind: str
    num_samples: int
    max_violation: float
    worst: dict
    tolerance: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["max_violation"] = float(self.max_violation)
        return d


def certify_saddle_point(
    spec: EnvSpec,
    sp: SaddlePoint,
    num_samples: int,
    rng: np.random.Generator,
    tol: float = 1e-9,
) -> CertificationReport:
    """Sampled check of both saddle-point inequalities at every feasible start.

    For each sample a random stochastic policy and a random nonnegative
    multiplier function are drawn; both inequality chains are checked for
    ``lambda_hat`` and ``lambda_star``.  The exact best response to each
    multiplier (``g(lambda)``) is checked as well.
    """
    S = spec.num_states
    feas = np.flatnonzero(sp.feasible)
    vr_s, vc_s = sp.v_r_star[feas], sp.v_c_star[feas]
    duals = {"lambda_hat": sp.lambda_hat[feas], "lambda_star": sp.lambda_star[feas]}
    worst = {f"{side}_{name}": 0.0 for name in duals for side in ("left", "right")}
    scale = 1.0 + float(np.nanmax(sp.lambda_star)) if feas.size else 1.0
    kinds = ("dirichlet", "sparse", "deterministic")
    for i in range(num_samples):
        pi = random_policy(spec, rng, kinds[i % 3])
        lam = rng.exponential(scale, size=S)[feas]
        vr, vc = policy_values(spec, pi)
        vr, vc = vr[feas], vc[feas]
        for name, lp in duals.items():
            mid = vr_s - lp * vc_s
            left = np.max(mid - (vr_s - lam * vc_s), initial=0.0)
            right = np.max((vr - lp * vc) - mid, initial=0.0)
            worst[f"left_{name}"] = max(worst[f"left_{name}"], float(left))
            worst[f"right_{name}"] = max(worst[f"right_{name}"], float(right))
    for name, lp in duals.items():
        if feas.size:
            g = np.array([dual_function(spec, [y])[0, s] for y, s in zip(lp, feas)])
            worst[f"best_response_{name}"] = float(np.max(g - (vr_s - lp * vc_s), initial=0.0))
    worst["pi_star_cost"] = float(np.max(vc_s, initial=0.0))
    mv = max(worst.values())
    return CertificationReport(
        "saddle_point", num_samples, mv, worst, tol, bool(mv <= tol),
        {"num_feasible_starts": int(feas.size)},
    )


def num_deterministic_policies(spec: EnvSpec) -> int:
    return spec.num_actions ** (spec.num_states * spec.horizon)


def deterministic_batches(spec: EnvSpec, chunk: int = 1 << 15) -> Iterator[np.ndarray]:
    """All deterministic policies as ``(n, H, S)`` action arrays, in chunks."""
    H, S, A = spec.horizon, spec.num_states, spec.num_actions
    total = num_deterministic_policies(spec)
    weights = A ** np.arange(H * S, dtype=np.int64)
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = (codes[:, None] // weights[None, :]) % A
        yield digits.reshape(-1, H, S)


def batch_values(spec: EnvSpec, actions: np.ndarray, tables: list) -> list:
    """Step-1 values of many deterministic policies for several reward tables.

    ``actions`` is ``(n, H, S)`` (action at the absorbing state is irrelevant);
    each table in ``tables`` is ``(H, S+1, A)``.  Returns one ``(n, S+1)``
    array per table.
    """
    n = actions.shape[0]
    S1 = spec.num_states + 1
    act = np.concatenate([actions, np.zeros((n, spec.horizon, 1), dtype=actions.dtype)], axis=2)
    P = spec.ext_transition
    rows = np.arange(S1)[None, :]
    vs = [np.zeros((n, S1)) for _ in tables]
    for h in range(spec.horizon - 1, -1, -1):
        a = act[:, h, :]
        Psel = P[h][rows, a]  # (n, S1, S1)
        for i, R in enumerate(tables):
            vs[i] = R[h][rows, a] + np.einsum("nst,nt->ns", Psel, vs[i])
    return vs


def certify_restricted_equivalence(
    spec: EnvSpec,
    num_policies: int,
    rng: np.random.Generator,
    sp: Optional[SaddlePoint] = None,
    tol: float = 1e-9,
    cutoff: int = ENUM_CUTOFF,
) -> CertificationReport:
    """Check that a policy stays in the restricted action sets iff it never resets.

    Exhaustive over deterministic policies when there are at most ``cutoff``
    of them; otherwise ``num_policies`` sampled stochastic and deterministic
    policies.  Only feasible starts are checked.
    """
    sp = sp if sp is not None else saddle_point(spec)
    feas = np.flatnonzero(sp.feasible)
    off = (~sp.restricted).astype(float)
    cost = np.asarray(spec.ext_cost)
    counter = 0
    checked = 0
    examples = []
    exhaustive = num_deterministic_policies(spec) <= cutoff

    def tally(vc, m):
        nonlocal counter
        bad = (vc[:, feas] <= tol) != (m[:, feas] <= tol)
        counter += int(bad.sum())
        if bad.any() and len(examples) < 5:
            i, j = np.argwhere(bad)[0]
            examples.append({"state": int(feas[j]), "v_c": float(vc[i, feas[j]]), "off_restricted": float(m[i, feas[j]])})

    if exhaustive:
        for acts in deterministic_batches(spec):
            vc, m = batch_values(spec, acts, [cost, off])
            tally(vc, m)
            checked += acts.shape[0]
    else:
        for i in range(num_policies):
            pi = random_policy(spec, rng, ("dirichlet", "sparse", "deterministic")[i % 3])
            vc = policy_tables(spec, pi, cost).v[0][None]
            m = policy_tables(spec, pi, off).v[0][None]
            tally(vc, m)
            checked += 1
    return CertificationReport(
        "restricted_equivalence", checked, float(counter), {"counterexamples": counter},
        0.0, counter == 0, {"exhaustive": exhaustive, "examples": examples},
    )


def best_reset_free_total(spec: EnvSpec, start_counts: np.ndarray, tol: float = FEAS_TOL) -> Optional[float]:
    """``max`` over reset-free deterministic policies of ``sum_k V_r(s_1^k)``.

    ``start_counts[s]`` is how often ``s`` was an initial state.  A policy
    qualifies when it has zero reset probability from every observed start.
    Returns ``None`` when the spec is too large to enumerate.
    """
    if num_deterministic_policies(spec) > ENUM_CUTOFF:
        return None
    used = np.flatnonzero(start_counts > 0)
    best = -np.inf
    for acts in deterministic_batches(spec):
        vr, vc = batch_values(spec, acts, [np.asarray(spec.ext_reward), np.asarray(spec.ext_cost)])
        ok = (vc[:, used] <= tol).all(axis=1)
        if ok.any():
            best = max(best, float((vr[ok][:, used] * start_counts[used]).sum(axis=1).max()))
    return best
