"""Risk-bounded policies for stochastic shortest path problems with dead ends."""

from .exceptions import (
    BracketFailure,
    ConfigInvalid,
    Divergent,
    GridExplosion,
    Infeasible,
    InvalidModel,
    MaxItersExceeded,
    MonotonicityViolation,
    NoStayAction,
    NoSuccessPath,
    NotMinprob,
    PolicyModelMismatch,
    SspdeError,
)
from .model import (
    TERMINAL,
    Mdp,
    StationaryPolicy,
    discounted_failure_measure,
    evaluate_policy,
    exact_float_gcd,
    failure_probability,
    induced_chain,
    validate_mdp,
)
from .reachability import ReachAnalysis, analyze, stay_action_vector
from .augment import (
    AugmentedM,
    AugmentedS,
    CostAugmentedPolicy,
    CostLevelGrid,
    FallbackValues,
    LabeledPolicy,
    build_m,
    build_s,
    gamma_leak,
)
from .game import (
    Component,
    GameConfig,
    SolveReport,
    belief_update,
    find_c_star,
    inner_value,
    maximize_alpha,
    mix_two,
    solve,
    weighted_vi,
)
from .baselines import restrict_maxprob, solve_mcmp_max, solve_s3p_max
from .simulate import (
    EpisodeStats,
    MdpSim,
    MixedPolicy,
    Trajectory,
    monte_carlo,
    run_episode,
)
from .robot import (
    RobotConfig,
    RobotModelSim,
    RobotSim,
    StepResult,
    build_robot_mdp,
    continuous_step,
    robot_config_from_dict,
)
from .io import (
    load_model,
    load_policy,
    load_stats,
    save_model,
    save_policy,
    save_trajectory_csv,
)

__version__ = "0.1.0"
