"""
The exact saddle point of the reset-free Lagrangian
===================================================

On a tabular spec the oracle can compute everything by dynamic programming.
It finds the actions that keep the reset probability at zero, the best policy
using only those actions, and the smallest multiplier that makes the
unconstrained Lagrangian optimum avoid resets.  The certification routines
then check the saddle-point inequalities on random policies and multipliers.
"""
import numpy as np

from resetfree import certify_restricted_equivalence, certify_saddle_point, saddle_point, trap_gridworld_3x3

spec = trap_gridworld_3x3()
sp = saddle_point(spec)

print("feasible starts:", np.flatnonzero(sp.feasible))
print("V_r of pi* at step 1:", np.round(sp.v_r_star[:-1], 3))
print("V_c of pi* at step 1:", sp.v_c_star[:-1])
print("lambda_hat :", np.round(sp.lambda_hat, 4))
print("lambda_star:", np.round(sp.lambda_star, 4), "(lambda_hat + 1)")

# restricted actions at step 1 from the cell just left of the trap
print("allowed at (0,1), step 1:", np.flatnonzero(sp.restricted[0, 3]))

rep = certify_saddle_point(spec, sp, 200, np.random.default_rng(0))
print(f"saddle inequalities over {rep.num_samples} samples: passed={rep.passed}, max violation {rep.max_violation:.1e}")

# 4^(9*5) deterministic policies is too many to enumerate here, so this samples
eq = certify_restricted_equivalence(spec, 500, np.random.default_rng(1), sp=sp)
print("stays-in-restricted-set iff never resets:", eq.passed, "| exhaustive:", eq.details["exhaustive"])
