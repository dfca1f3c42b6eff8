"""The K-episode primal-dual game and the checks run over its logs.

Each episode:

1. observe ``s_1^k`` (carry-over or post-reset draw),
2. roll out the softmax policy built from the current optimistic Q and
   ``lambda^k(s_1^k)``,
3. take a projected gradient step on the dual parameters using the
   learner's cost estimate ``V^k_{c,1}(s_1^k)``,
4. refit the learner on all data so far,

and the played policy is tabulated and evaluated exactly with the oracle so
that regrets are computed from true values.

Randomness: episode ``k`` of a run with seed ``seed`` draws from the stream
``SeedSequence(seed, spawn_key=(k,))``, first for the initial state, then an
action and a successor per step, in step order.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import oracle
from .dual import DualState, lambda_value, ogd_step
from .env import EnvSpec, EnvState, EpisodeOutcome, begin_episode, step
from .errors import ContractViolation
from .features import DualFeatures, PrimalFeatures, primal_table
from .primal import LearnerHyper, Step, UCBLearner, theory_alpha, theory_beta


@dataclass
class GameHyper:
    """Run hyperparameters.  ``None`` means derive the value from the theory."""

    B: Optional[float] = None
    C: float = 1.0
    ridge: float = 1.0
    p: float = 0.05
    bonus_scale: float = 1.0
    alpha: Optional[float] = None
    beta: Optional[float] = None
    sherman_morrison: bool = False
    realized_cost_dual: bool = False

    def __post_init__(self):
        if self.B is not None and self.B <= 0:
            raise ContractViolation("B must be positive")
        if not 0 < self.p < 1:
            raise ContractViolation("p must be in (0, 1)")
        if self.ridge <= 0:
            raise ContractViolation("ridge must be positive")


@dataclass
class EpisodeRecord:
    k: int
    s1: int
    reset_occurred: bool
    lambda_at_s1: float
    v_r_est: float
    v_c_est: float
    v_r_exact: float
    v_c_exact: float
    v_r_star: float
    v_c_star: float
    theta_norm: float
    trajectory: Optional[list] = None


@dataclass
class GameMetrics:
    regret: float
    resets_expected: float
    resets_realized: int
    r_p: float
    r_d_zero: float
    r_d_star: float


@dataclass
class GameResult:
    records: list
    metrics: GameMetrics
    resolved: dict
    invariants: dict = field(default_factory=dict)
    prefix: dict = field(default_factory=dict)


def theta_for_multiplier(spec: EnvSpec, dual_features: DualFeatures, sp: oracle.SaddlePoint) -> tuple:
    """Least-squares parameters with ``<xi(s), theta> = lambda_star(s)`` on feasible states.

    Returns ``(theta, residual)``; the residual is 0 for one-hot features.
    """
    feas = np.flatnonzero(sp.feasible)
    X = np.stack([dual_features.evaluate(EnvState(int(s), 1)) for s in feas])
    y = sp.lambda_star[feas]
    theta, *_ = np.linalg.lstsq(X, y, rcond=None)
    return theta, float(np.abs(X @ theta - y).max(initial=0.0))


def resolve_hyper(spec: EnvSpec, primal: PrimalFeatures, dual: DualFeatures, hyper: GameHyper, K: int, sp) -> dict:
    theta_star, resid = theta_for_multiplier(spec, dual, sp)
    theta_norm = float(np.linalg.norm(theta_star))
    B = hyper.B if hyper.B is not None else max(theta_norm, 1e-12)
    alpha_theory = theory_alpha(spec.num_actions, K, B, spec.horizon)
    beta_theory = theory_beta(hyper.C, primal.dim, spec.horizon, K, spec.num_actions, hyper.p)
    overrides = []
    if hyper.alpha is not None:
        overrides.append("alpha")
    if hyper.beta is not None:
        overrides.append("beta")
    if hyper.ridge != 1.0:
        overrides.append("ridge")
    if hyper.bonus_scale != 1.0:
        overrides.append("bonus_scale")
    return {
        "K": K,
        "B": B,
        "B_auto": hyper.B is None,
        "theta_star_norm": theta_norm,
        "theta_star_residual": resid,
        "comparator_in_U": bool(theta_norm <= B * (1 + 1e-12) and np.all(theta_star >= -1e-12)),
        "alpha": hyper.alpha if hyper.alpha is not None else alpha_theory,
        "beta": hyper.beta if hyper.beta is not None else beta_theory,
        "alpha_theory": alpha_theory,
        "beta_theory": beta_theory,
        "bonus_scale": hyper.bonus_scale,
        "C": hyper.C,
        "ridge": hyper.ridge,
        "p": hyper.p,
        "d": primal.dim,
        "d_xi": dual.dim,
        "overrides": overrides,
        "realized_cost_dual": hyper.realized_cost_dual,
        "theta_star": theta_star.tolist(),
    }


def episode_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))


def _sample(probs: np.ndarray, rng: np.random.Generator) -> int:
    i = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
    return min(i, probs.size - 1)


def run_game(
    spec: EnvSpec,
    primal: PrimalFeatures,
    dual_features: DualFeatures,
    hyper: GameHyper,
    K: int,
    seed: int,
    sp: Optional[oracle.SaddlePoint] = None,
    check_invariants: bool = False,
    keep_trajectories: bool = False,
) -> GameResult:
    """Play ``K`` episodes and log everything needed by the checks."""
    if K < 0:
        raise ContractViolation("K must be nonnegative")
    sp = sp if sp is not None else oracle.saddle_point(spec)
    resolved = resolve_hyper(spec, primal, dual_features, hyper, max(K, 1), sp)
    lh = LearnerHyper(
        alpha=resolved["alpha"], beta=resolved["beta"], ridge=hyper.ridge,
        bonus_scale=hyper.bonus_scale, failure_prob=hyper.p, sherman_morrison=hyper.sherman_morrison,
    )
    H, A = spec.horizon, spec.num_actions
    learner = UCBLearner(primal, A, H, lh, capacity=max(K, 1))
    dual = DualState.initial(dual_features.dim, resolved["B"])
    Phi_steps = [primal_table(spec, primal, h) for h in range(1, H + 1)]
    Xi = np.stack([dual_features.evaluate(EnvState(s, 1)) for s in range(spec.num_states + 1)])
    inv = _Invariants(learner.hyper.ridge, resolved["B"]) if check_invariants else None

    records = []
    prev = None
    for k in range(1, K + 1):
        rng = episode_rng(seed, k)
        s1 = begin_episode(spec, prev, rng)
        lam = lambda_value(dual, dual_features, s1)
        v_r_est, v_c_est = learner.value_estimates(s1)
        pi_k = learner.policy_table(Phi_steps, lam)

        traj = []
        state = s1
        for h in range(1, H + 1):
            a = _sample(pi_k[h - 1, state.invariant_id], rng)
            tr = step(spec, state, a, rng)
            traj.append(Step(state, a, tr.reward, tr.cost, tr.next_state))
            state = tr.next_state
        n_resets = int(sum(st.cost for st in traj))
        reset = n_resets > 0
        prev = EpisodeOutcome(traj[-1].state, reset)

        vr, vc = oracle.policy_values(spec, pi_k)
        if inv is not None:
            inv.check_episode(learner, pi_k, Phi_steps, traj, n_resets, spec)

        grad_v = float(reset) if hyper.realized_cost_dual else v_c_est
        dual = ogd_step(dual, s1, grad_v, dual_features)
        learner.end_of_episode_update(traj, lam)
        if inv is not None:
            inv.check_dual(dual, Xi)

        records.append(
            EpisodeRecord(
                k=k,
                s1=s1.invariant_id,
                reset_occurred=reset,
                lambda_at_s1=lam,
                v_r_est=v_r_est,
                v_c_est=v_c_est,
                v_r_exact=float(vr[s1.invariant_id]),
                v_c_exact=float(vc[s1.invariant_id]),
                v_r_star=float(sp.v_r_star[s1.invariant_id]),
                v_c_star=float(sp.v_c_star[s1.invariant_id]),
                theta_norm=float(np.linalg.norm(dual.theta)),
                trajectory=traj if keep_trajectories else None,
            )
        )
    prefix = prefix_metrics(records, sp)
    metrics = GameMetrics(
        regret=float(prefix["regret"][-1]) if K else 0.0,
        resets_expected=float(prefix["resets_expected"][-1]) if K else 0.0,
        resets_realized=int(prefix["resets_realized"][-1]) if K else 0,
        r_p=float(prefix["r_p"][-1]) if K else 0.0,
        r_d_zero=float(prefix["r_d_zero"][-1]) if K else 0.0,
        r_d_star=float(prefix["r_d_star"][-1]) if K else 0.0,
    )
    return GameResult(records, metrics, resolved, inv.report() if inv is not None else {}, prefix)


class _Invariants:
    """Counts violations of the mechanical invariants during a run."""

    def __init__(self, ridge: float, B: float):
        self.ridge = ridge
        self.B = B
        self.counts = {
            "reset_count": 0, "absorbing_after_reset": 0, "q_r_range": 0, "q_c_range": 0,
            "softmax_sum": 0, "theta_norm": 0, "theta_sign": 0, "lambda_sign": 0, "gram_eig": 0,
        }
        self.min_eig = np.inf
        self.max_softmax_err = 0.0
        self.episodes = 0

    def check_episode(self, learner, pi_k, Phi_steps, traj, n_resets, spec):
        c = self.counts
        self.episodes += 1
        c["reset_count"] += int(n_resets not in (0, 1))
        seen = False
        for st in traj:
            if seen and st.state.invariant_id != spec.absorbing:
                c["absorbing_after_reset"] += 1
            seen |= st.cost > 0
        qr, qc = learner.q_table(Phi_steps)
        H = learner.horizon
        caps = (H - np.arange(H))[:, None, None]
        c["q_r_range"] += int(np.sum((qr < 0) | (qr > caps)))
        c["q_c_range"] += int(np.sum((qc < 0) | (qc > 1)))
        err = float(np.abs(pi_k.sum(-1) - 1.0).max())
        self.max_softmax_err = max(self.max_softmax_err, err)
        c["softmax_sum"] += int(err > 1e-12)
        c["gram_eig"] += int(not learner.gram_floor_holds(1e-9))
        if self.episodes == 1:
            # Gram matrices only grow, so this is the smallest eigenvalue of the run
            self.min_eig = learner.min_gram_eigenvalue()

    def check_dual(self, dual, Xi):
        c = self.counts
        c["theta_norm"] += int(np.linalg.norm(dual.theta) > self.B * (1 + 1e-12))
        c["theta_sign"] += int(np.any(dual.theta < 0))
        c["lambda_sign"] += int(np.any(Xi @ dual.theta < 0))

    def report(self) -> dict:
        return {
            "episodes": self.episodes,
            "violations": dict(self.counts),
            "total": int(sum(self.counts.values())),
            "min_gram_eigenvalue": float(self.min_eig),
            "max_softmax_error": self.max_softmax_err,
        }


# metrics -------------------------------------------------------------------


def _arrays(records):
    get = lambda name: np.array([getattr(r, name) for r in records], dtype=float)
    return {n: get(n) for n in ("lambda_at_s1", "v_r_est", "v_c_est", "v_r_exact", "v_c_exact", "v_r_star", "v_c_star", "theta_norm")}


def _lagrangian(v_r, v_c, lam):
    return v_r - lam * v_c


def prefix_metrics(records, sp: oracle.SaddlePoint) -> dict:
    """Cumulative metrics after each episode, computed from exact values."""
    if not records:
        return {}
    a = _arrays(records)
    s1 = np.array([r.s1 for r in records])
    lam = a["lambda_at_s1"]
    lam_star = sp.multiplier("star")[s1]
    lam_hat = sp.multiplier("hat")[s1]
    L_star_k = _lagrangian(a["v_r_star"], a["v_c_star"], lam)
    L_k_k = _lagrangian(a["v_r_exact"], a["v_c_exact"], lam)
    cum = np.cumsum
    return {
        "regret": cum(a["v_r_star"] - a["v_r_exact"]),
        "resets_expected": cum(a["v_c_exact"]),
        "resets_realized": cum([int(r.reset_occurred) for r in records]),
        "r_p": cum(L_star_k - L_k_k),
        "r_d_zero": cum(L_k_k - _lagrangian(a["v_r_exact"], a["v_c_exact"], 0.0)),
        "r_d_star": cum(L_k_k - _lagrangian(a["v_r_exact"], a["v_c_exact"], lam_star)),
        "pd_gap_hat": cum(_lagrangian(a["v_r_star"], a["v_c_star"], lam_hat) - L_k_k),
        "pd_gap_star": cum(_lagrangian(a["v_r_star"], a["v_c_star"], lam_star) - L_k_k),
        "olo_zero": cum((lam - 0.0) * (-a["v_c_est"])),
        "olo_star": cum((lam - lam_star) * (-a["v_c_est"])),
        "t1": cum(L_star_k - _lagrangian(a["v_r_est"], a["v_c_est"], lam)),
    }


def compute_primal_dual_regrets(records, sp: oracle.SaddlePoint) -> tuple:
    """``(R_p vs pi*, R_d vs 0, R_d vs lambda*)`` from exact values."""
    for r in records:
        if r.v_r_exact is None or r.v_c_exact is None:
            raise ContractViolation(f"episode {r.k} lacks exact values")
    if not records:
        return 0.0, 0.0, 0.0
    m = prefix_metrics(records, sp)
    return float(m["r_p"][-1]), float(m["r_d_zero"][-1]), float(m["r_d_star"][-1])


def _worst(excess) -> float:
    return float(np.max(excess, initial=0.0))


def verify_reduction(records, sp: oracle.SaddlePoint, spec: Optional[EnvSpec] = None, tol: float = 1e-6) -> dict:
    """Check the reduction inequalities at every prefix.

    * ``Regret <= R_p + R_d(., 0)`` and ``Resets <= R_p + R_d(., lambda*)``;
    * the primal-dual gap against ``lambda_hat`` and ``lambda_star`` is at
      most ``R_p``;
    * on enumerable specs, the best reset-free deterministic total reward
      over the observed starts equals the total of ``pi*``.
    """
    if not records:
        return {"passed": True, "episodes": 0}
    m = prefix_metrics(records, sp)
    checks = {
        "regret_bound": _worst(m["regret"] - (m["r_p"] + m["r_d_zero"])),
        "resets_bound": _worst(m["resets_expected"] - (m["r_p"] + m["r_d_star"])),
        "gap_lambda_hat": _worst(m["pd_gap_hat"] - m["r_p"]),
        "gap_lambda_star": _worst(m["pd_gap_star"] - m["r_p"]),
    }
    report = {"episodes": len(records), "tolerance": tol, "max_excess": checks}
    if spec is not None:
        counts = np.bincount([r.s1 for r in records], minlength=spec.num_states + 1).astype(float)
        best = oracle.best_reset_free_total(spec, counts)
        if best is not None:
            star_total = float((counts * sp.v_r_star).sum())
            report["comparator_check"] = {"best_reset_free": best, "pi_star_total": star_total}
            checks["comparator_identity"] = abs(best - star_total)
    report["passed"] = all(v <= tol for v in checks.values())
    return report


def dual_regret_check(records, sp: oracle.SaddlePoint, B: float, comparator_in_U: bool = True, tol: float = 1e-9) -> dict:
    """Online-linear regret of the dual player against ``0`` and ``lambda*``.

    Bound ``1.5 B sqrt(K')`` at every prefix ``K'``.  The ``lambda*``
    comparator is only checked when its parameters lie in the feasible set.
    """
    if not records:
        return {"passed": True}
    m = prefix_metrics(records, sp)
    bound = 1.5 * B * np.sqrt(np.arange(1, len(records) + 1))
    out = {"bound_final": float(bound[-1]), "zero": _worst(m["olo_zero"] - bound)}
    out["zero_final"] = float(m["olo_zero"][-1])
    if comparator_in_U:
        out["star"] = _worst(m["olo_star"] - bound)
        out["star_final"] = float(m["olo_star"][-1])
    out["passed"] = out["zero"] <= tol and out.get("star", 0.0) <= tol
    return out


def t1_check(records, sp: oracle.SaddlePoint, B: float, H: int) -> dict:
    """Optimism term ``sum_k L^k(pi*, lambda^k) - Lhat^k`` versus ``2H(1 + B + H)``."""
    if not records:
        return {"passed": True, "t1": 0.0}
    m = prefix_metrics(records, sp)
    bound = 2.0 * H * (1.0 + B + H)
    t1 = float(m["t1"][-1])
    return {"t1": t1, "max_t1": float(m["t1"].max()), "bound": bound, "passed": bool(t1 <= bound)}


# output ----------------------------------------------------------------------

CSV_COLUMNS = (
    "k", "s1", "reset", "lambda_s1", "v_r_est", "v_c_est", "v_r_exact", "v_c_exact", "v_r_star",
    "regret", "resets_expected", "resets_realized", "r_p", "r_d_zero", "r_d_star", "theta_norm",
)


def episodes_csv(result: GameResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    m = result.prefix
    for i, r in enumerate(result.records):
        w.writerow([
            r.k, r.s1, int(r.reset_occurred), repr(r.lambda_at_s1), repr(r.v_r_est), repr(r.v_c_est),
            repr(r.v_r_exact), repr(r.v_c_exact), repr(r.v_r_star),
            repr(float(m["regret"][i])), repr(float(m["resets_expected"][i])), int(m["resets_realized"][i]),
            repr(float(m["r_p"][i])), repr(float(m["r_d_zero"][i])), repr(float(m["r_d_star"][i])),
            repr(r.theta_norm),
        ])
    return buf.getvalue()


def write_run(result: GameResult, out_dir, stem: str, extra: Optional[dict] = None) -> tuple:
    """Write ``<stem>.csv`` and ``<stem>.json``; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}.csv"
    csv_path.write_text(episodes_csv(result))
    summary = {
        "hyper": result.resolved,
        "metrics": asdict(result.metrics),
        "invariants": result.invariants,
        **(extra or {}),
    }
    json_path = out / f"{stem}.json"
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default))
    return csv_path, json_path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))
