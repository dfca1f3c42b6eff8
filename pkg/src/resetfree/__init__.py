"""Primal-dual reset-free reinforcement learning on tabular and linear MDPs."""
from .dual import DualState, lambda_value, ogd_step, project_U
from .env import (
    EnvSpec,
    EnvState,
    EpisodeOutcome,
    Transition,
    begin_episode,
    make_gridworld,
    make_random_tabular,
    step,
    trap_gridworld_3x3,
)
from .errors import (
    ConfigError,
    ContractViolation,
    GenerationFailure,
    InfeasibleSpecError,
    InternalInconsistency,
    NumericError,
    OutOfEpisodeError,
    SearchBoundError,
)
from .features import DualFeatures, PrimalFeatures, check_norms, linear_mdp_parameters, one_hot_dual, one_hot_primal
from .harness import (
    EpisodeRecord,
    GameHyper,
    GameMetrics,
    GameResult,
    compute_primal_dual_regrets,
    dual_regret_check,
    run_game,
    t1_check,
    verify_reduction,
)
from .oracle import SaddlePoint, certify_restricted_equivalence, certify_saddle_point, saddle_point
from .primal import LearnerHyper, Step, UCBLearner, theory_alpha, theory_beta

__version__ = "0.1.0"
