"""
A reset-free episode stream on a small gridworld
================================================

Episodes do not restart on their own.  The final state of one episode is the
first state of the next, unless the agent entered a trap.  A trap costs 1 and
sends the agent to an absorbing state for the rest of the episode.  After that
a reset puts it back at the start cell.
"""
import numpy as np

from resetfree import EpisodeOutcome, begin_episode, step, trap_gridworld_3x3

spec = trap_gridworld_3x3(horizon=5, slip_prob=0.1)
print(spec.name, "states:", spec.num_states, "actions:", spec.num_actions, "horizon:", spec.horizon)
print("reset states:", np.flatnonzero(spec.reset_mask))

# a uniformly random walker; it falls into the centre trap fairly often
rng = np.random.default_rng(0)
prev = None
for k in range(1, 9):
    s = begin_episode(spec, prev, rng)
    path, reset, ret = [s.invariant_id], False, 0.0
    while True:
        tr = step(spec, s, int(rng.integers(spec.num_actions)), rng)
        ret += tr.reward
        reset |= tr.cost > 0
        if tr.next_state is None:
            break
        s = tr.next_state
        path.append(s.invariant_id)
    prev = EpisodeOutcome(s, reset)
    print(f"episode {k}: path {path}  return {ret:.0f}  reset {reset}")

# state ``spec.absorbing`` is the absorbing state; note how the next episode
# starts at 0 after a reset and carries over the final cell otherwise
