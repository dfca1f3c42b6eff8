"""
The two players on their own
============================

The primal player is an optimistic least-squares value iteration learner
that acts with a softmax over ``Q_r - lambda Q_c``.  The dual player runs
projected gradient ascent on the multiplier parameters.  Here both are
driven by hand for a few episodes.
"""
import numpy as np

from resetfree import (
    DualState, EpisodeOutcome, LearnerHyper, Step, UCBLearner, begin_episode, lambda_value,
    ogd_step, one_hot_dual, one_hot_primal, theory_alpha, theory_beta, project_U, step, trap_gridworld_3x3,
)

spec = trap_gridworld_3x3()
phi, xi = one_hot_primal(spec), one_hot_dual(spec)
K, B = 50, 5.0
hyper = LearnerHyper(
    alpha=theory_alpha(spec.num_actions, K, B, spec.horizon),
    beta=theory_beta(1.0, phi.dim, spec.horizon, K, spec.num_actions, 0.05),
)
learner = UCBLearner(phi, spec.num_actions, spec.horizon, hyper)
dual = DualState.initial(xi.dim, B)
print(f"alpha={hyper.alpha:.2f} beta={hyper.beta:.1f} feature dim={phi.dim}")

rng = np.random.default_rng(3)
prev = None
for k in range(1, K + 1):
    s1 = begin_episode(spec, prev, rng)
    lam = lambda_value(dual, xi, s1)
    _, v_c = learner.value_estimates(s1)
    s, traj, reset = s1, [], False
    while True:
        a = int(rng.choice(spec.num_actions, p=learner.policy_distribution(s, lam)))
        tr = step(spec, s, a, rng)
        traj.append(Step(s, a, tr.reward, tr.cost, tr.next_state))
        reset |= tr.cost > 0
        if tr.next_state is None:
            break
        s = tr.next_state
    dual = ogd_step(dual, s1, v_c, xi)
    learner.end_of_episode_update(traj, lam)
    prev = EpisodeOutcome(s, reset)
    if k % 10 == 0:
        print(f"k={k:3d} lambda(s1)={lam:6.3f} |theta|={np.linalg.norm(dual.theta):.3f} min eig(Gram)={learner.min_gram_eigenvalue():.1f}")

# with the full bonus the optimistic cost estimate is clipped to 0 everywhere,
# so the dual player sees no cost and lambda stays 0 over this short run

# the projection clamps negatives and then shrinks onto the radius-B ball
print(project_U([3.0, -1.0, 4.0], 2.5))
