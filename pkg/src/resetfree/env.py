"""Episodic reset-free MDP simulator.

Time-invariant states are integers ``0..S-1``; the fictitious absorbing
state that follows a reset gets the id ``S`` (``spec.absorbing``).  Steps are
1-based, ``1..H``.  A unit cost is charged at the step in which the occupied
state is a reset state; every action taken there leads to the absorbing
state, which pays zero reward and zero cost until the episode ends.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    ContractViolation,
    GenerationFailure,
    InfeasibleSpecError,
    OutOfEpisodeError,
    SearchBoundError,
)

ROW_TOL = 1e-12


class EnvState(NamedTuple):
    invariant_id: int
    step: int


class Transition(NamedTuple):
    next_state: Optional[EnvState]  # None after the last step of an episode
    reward: float
    cost: float


class EpisodeOutcome(NamedTuple):
    final_state: EnvState
    reset: bool


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EnvSpec:
    """Full generative model of a finite-horizon reset-free MDP.

    ``transition[h, s, a, s']`` and ``reward[h, s, a]`` are indexed with a
    0-based step.  ``post_reset_dist`` is the distribution of the next initial
    state after a reset episode; the learner never sees it.
    """

    num_states: int
    num_actions: int
    horizon: int
    transition: np.ndarray
    reward: np.ndarray
    reset_states: tuple = ()
    post_reset_dist: np.ndarray = None
    start_dist: np.ndarray = None
    name: str = "env"
    state_names: Optional[tuple] = None
    action_names: Optional[tuple] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        S, A, H = self.num_states, self.num_actions, self.horizon
        if S < 1 or A < 1 or H < 1:
            raise ContractViolation("num_states, num_actions and horizon must be positive")
        P = _frozen(self.transition)
        r = _frozen(self.reward)
        if P.shape != (H, S, A, S):
            raise ContractViolation(f"transition has shape {P.shape}, expected {(H, S, A, S)}")
        if r.shape != (H, S, A):
            raise ContractViolation(f"reward has shape {r.shape}, expected {(H, S, A)}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=-1) - 1.0)) > ROW_TOL:
            raise ContractViolation("transition rows must be distributions (sum to 1 within 1e-12)")
        if np.any(r < 0) or np.any(r > 1):
            raise ContractViolation("rewards must lie in [0, 1]")
        resets = tuple(sorted({int(s) for s in self.reset_states}))
        if any(s < 0 or s >= S for s in resets):
            raise ContractViolation("reset state id out of range")
        if len(resets) == S:
            raise ContractViolation("at least one state must not be a reset state")
        start = self._check_dist(self.start_dist, "start_dist", resets)
        post = self._check_dist(
            self.post_reset_dist if self.post_reset_dist is not None else start, "post_reset_dist", resets
        )
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "reset_states", resets)
        object.__setattr__(self, "start_dist", start)
        object.__setattr__(self, "post_reset_dist", post)
        if self.state_names is not None:
            object.__setattr__(self, "state_names", tuple(self.state_names))
        if self.action_names is not None:
            object.__setattr__(self, "action_names", tuple(self.action_names))

    def _check_dist(self, dist, label, resets):
        if dist is None:
            raise ContractViolation(f"{label} is required")
        d = _frozen(dist)
        if d.shape != (self.num_states,):
            raise ContractViolation(f"{label} must have length {self.num_states}")
        if np.any(d < 0) or abs(d.sum() - 1.0) > ROW_TOL:
            raise ContractViolation(f"{label} must be a distribution")
        if resets and np.any(d[list(resets)] > 0):
            raise ContractViolation(f"{label} places mass on reset states")
        return d

    @property
    def absorbing(self) -> int:
        return self.num_states

    @cached_property
    def reset_mask(self) -> np.ndarray:
        m = np.zeros(self.num_states, dtype=bool)
        m[list(self.reset_states)] = True
        m.setflags(write=False)
        return m

    @cached_property
    def ext_transition(self) -> np.ndarray:
        """Transition table over ``S + 1`` states including the absorbing one."""
        S, A, H = self.num_states, self.num_actions, self.horizon
        P = np.zeros((H, S + 1, A, S + 1))
        P[:, :S, :, :S] = self.transition
        resets = list(self.reset_states)
        P[:, resets, :, :] = 0.0
        P[:, resets, :, S] = 1.0
        P[:, S, :, S] = 1.0
        P.setflags(write=False)
        return P

    @cached_property
    def ext_reward(self) -> np.ndarray:
        r = np.zeros((self.horizon, self.num_states + 1, self.num_actions))
        r[:, : self.num_states] = self.reward
        r.setflags(write=False)
        return r

    @cached_property
    def ext_cost(self) -> np.ndarray:
        c = np.zeros((self.horizon, self.num_states + 1, self.num_actions))
        c[:, list(self.reset_states), :] = 1.0
        c.setflags(write=False)
        return c

    @cached_property
    def _cum_transition(self) -> np.ndarray:
        return np.cumsum(self.transition, axis=-1)

    def is_reset(self, s: int) -> bool:
        return s < self.num_states and bool(self.reset_mask[s])

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "horizon": self.horizon,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "reset_states": list(self.reset_states),
            "post_reset_dist": self.post_reset_dist.tolist(),
            "start_dist": self.start_dist.tolist(),
        }
        if self.state_names is not None:
            d["state_names"] = list(self.state_names)
        if self.action_names is not None:
            d["action_names"] = list(self.action_names)
        if self.meta:
            d["meta"] = self.meta
        return d

    @classmethod
    def from_dict(cls, d: dict, validate_feasible: bool = True) -> "EnvSpec":
        try:
            spec = cls(
                num_states=int(d["num_states"]),
                num_actions=int(d["num_actions"]),
                horizon=int(d["horizon"]),
                transition=d["transition"],
                reward=d["reward"],
                reset_states=tuple(d.get("reset_states", ())),
                post_reset_dist=d.get("post_reset_dist"),
                start_dist=d["start_dist"],
                name=d.get("name", "env"),
                state_names=d.get("state_names"),
                action_names=d.get("action_names"),
                meta=dict(d.get("meta", {})),
            )
        except KeyError as exc:
            raise ContractViolation(f"missing EnvSpec field {exc.args[0]!r}") from None
        if validate_feasible:
            from .oracle import assert_feasible

            assert_feasible(spec)
        return spec

    def to_json(self, path=None, **kw) -> str:
        text = json.dumps(self.to_dict(), **kw)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, text_or_path, validate_feasible: bool = True) -> "EnvSpec":
        p = Path(text_or_path) if not str(text_or_path).lstrip().startswith("{") else None
        text = p.read_text() if p is not None else text_or_path
        return cls.from_dict(json.loads(text), validate_feasible=validate_feasible)


# simulation --------------------------------------------------------------


def _sample(probs_cum: np.ndarray, rng: np.random.Generator) -> int:
    i = int(np.searchsorted(probs_cum, rng.random(), side="right"))
    return min(i, len(probs_cum) - 1)


def step(spec: EnvSpec, state: EnvState, action: int, rng: np.random.Generator) -> Transition:
    s, h = state
    if not 0 <= action < spec.num_actions:
        raise ContractViolation(f"invalid action id {action}")
    if not 1 <= h <= spec.horizon:
        raise OutOfEpisodeError(f"step {h} outside 1..{spec.horizon}")
    last = h == spec.horizon
    if s == spec.absorbing:
        return Transition(None if last else EnvState(s, h + 1), 0.0, 0.0)
    if not 0 <= s < spec.num_states:
        raise ContractViolation(f"invalid state id {s}")
    r = float(spec.reward[h - 1, s, action])
    if spec.reset_mask[s]:
        return Transition(None if last else EnvState(spec.absorbing, h + 1), r, 1.0)
    if last:
        return Transition(None, r, 0.0)
    nxt = _sample(spec._cum_transition[h - 1, s, action], rng)
    return Transition(EnvState(nxt, h + 1), r, 0.0)


def begin_episode(spec: EnvSpec, prev: Optional[EpisodeOutcome], rng: np.random.Generator) -> EnvState:
    """Initial state of the next episode.

    Episode 1 draws from ``start_dist``; after a reset the start is drawn from
    ``post_reset_dist``; otherwise the final state carries over with its step
    set back to 1.
    """
    if prev is None:
        return EnvState(_sample(np.cumsum(spec.start_dist), rng), 1)
    if prev.reset:
        return EnvState(_sample(np.cumsum(spec.post_reset_dist), rng), 1)
    s = prev.final_state.invariant_id
    if s == spec.absorbing or spec.is_reset(s):
        raise ContractViolation("episode without reset cannot end in a reset or absorbing state")
    return EnvState(s, 1)


# generators --------------------------------------------------------------

GRID_ACTIONS = ("north", "east", "south", "west")
_MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))


def make_gridworld(
    width: int,
    height: int,
    trap_cells: Sequence = (),
    goal_cell=None,
    slip_prob: float = 0.0,
    horizon: int = 5,
    start_cell=(0, 0),
    name: Optional[str] = None,
) -> EnvSpec:
    """4-action gridworld where trap cells are reset states.

    Cells are ``(x, y)`` with id ``y * width + x``.  Moving into a wall leaves
    the agent in place.  With probability ``slip_prob`` the move goes to one of
    the two perpendicular directions instead (half each).  The goal pays 1 per
    step it is occupied.  After a reset the agent restarts at ``start_cell``.
    """
    if goal_cell is None:
        goal_cell = (width - 1, height - 1)
    if not 0 <= slip_prob <= 1:
        raise ContractViolation("slip_prob must be in [0, 1]")
    S = width * height
    cid = lambda c: int(c[1]) * width + int(c[0])
    for c in [*trap_cells, goal_cell, start_cell]:
        if not (0 <= c[0] < width and 0 <= c[1] < height):
            raise ContractViolation(f"cell {tuple(c)} outside the grid")
    traps = sorted({cid(c) for c in trap_cells})
    goal, start = cid(goal_cell), cid(start_cell)
    if goal in traps or start in traps:
        raise ContractViolation("goal and start cells must not be traps")

    def target(x, y, a):
        dx, dy = _MOVES[a]
        nx, ny = x + dx, y + dy
        if 0 <= nx < width and 0 <= ny < height:
            return cid((nx, ny))
        return cid((x, y))

    P1 = np.zeros((S, 4, S))
    for y in range(height):
        for x in range(width):
            s = cid((x, y))
            for a in range(4):
                P1[s, a, target(x, y, a)] += 1.0 - slip_prob
                for perp in ((a + 1) % 4, (a + 3) % 4):
                    P1[s, a, target(x, y, perp)] += slip_prob / 2
    P = np.broadcast_to(P1, (horizon, S, 4, S)).copy()
    r = np.zeros((horizon, S, 4))
    r[:, goal, :] = 1.0
    start_dist = np.zeros(S)
    start_dist[start] = 1.0
    spec = EnvSpec(
        num_states=S,
        num_actions=4,
        horizon=horizon,
        transition=P,
        reward=r,
        reset_states=tuple(traps),
        post_reset_dist=start_dist,
        start_dist=start_dist,
        name=name or f"grid{width}x{height}",
        state_names=tuple(f"({x},{y})" for y in range(height) for x in range(width)),
        action_names=GRID_ACTIONS,
        meta={"width": width, "height": height, "goal": goal, "start": start, "slip_prob": slip_prob},
    )
    from .oracle import assert_feasible

    assert_feasible(spec)
    return spec


def trap_gridworld_3x3(horizon: int = 5, slip_prob: float = 0.1) -> EnvSpec:
    """3x3 grid, trap in the centre, start and goal in opposite corners."""
    return make_gridworld(3, 3, [(1, 1)], (2, 2), slip_prob, horizon, (0, 0), name="grid3x3_trap")


def make_random_tabular(
    num_states: int,
    num_actions: int,
    horizon: int,
    reset_fraction: float,
    rng: np.random.Generator,
    branching: int = 2,
    max_attempts: int = 1000,
    y_max: Optional[float] = None,
) -> EnvSpec:
    """Random tabular reset-free MDP, rejection-sampled until feasible.

    Each (s, a) row puts Dirichlet(1) mass on ``branching`` random successors.
    The first ``ceil(reset_fraction * S)`` states (capped at ``S - 1``) are
    reset states; all other states form the start and post-reset support.
    A draw is rejected when some reachable initial state has no reset-free
    policy, or when its multipliers do not plateau below ``y_max``.
    """
    from .oracle import assert_feasible, saddle_point

    if not 0 <= reset_fraction < 1:
        raise ContractViolation("reset_fraction must be in [0, 1)")
    S, A, H = num_states, num_actions, horizon
    n_reset = min(int(np.ceil(reset_fraction * S - 1e-12)), S - 1)
    b = min(branching, S)
    rejections = 0
    for _ in range(max_attempts):
        P1 = np.zeros((S, A, S))
        for s in range(S):
            for a in range(A):
                succ = rng.choice(S, size=b, replace=False)
                P1[s, a, succ] = rng.dirichlet(np.ones(b))
        r = rng.random((H, S, A))
        resets = tuple(range(n_reset))
        dist = np.zeros(S)
        dist[n_reset:] = 1.0 / (S - n_reset)
        spec = EnvSpec(
            num_states=S,
            num_actions=A,
            horizon=H,
            transition=np.broadcast_to(P1, (H, S, A, S)).copy(),
            reward=r,
            reset_states=resets,
            post_reset_dist=dist,
            start_dist=dist,
            name=f"random_S{S}_A{A}_H{H}",
        )
        try:
            assert_feasible(spec)
            saddle_point(spec, y_max=y_max)
        except (InfeasibleSpecError, SearchBoundError):
            rejections += 1
            continue
        return replace(spec, meta={"rejections": rejections})
    raise GenerationFailure(f"no feasible spec after {max_attempts} attempts")
