from walkbo.sim.walker import (
    FAMILIES,
    Bounds,
    ControllerFamily,
    GroundProfile,
    PerturbationFactors,
    SimConfig,
    TrajectorySummary,
    WalkerState,
    check_params,
    perturb,
    plan_touchdown,
    rollout,
    rollout_many,
    rough_ground,
    stance_forces,
    step_dynamics,
)

__all__ = [
    "FAMILIES",
    "Bounds",
    "ControllerFamily",
    "GroundProfile",
    "PerturbationFactors",
    "SimConfig",
    "TrajectorySummary",
    "WalkerState",
    "check_params",
    "perturb",
    "plan_touchdown",
    "rollout",
    "rollout_many",
    "rough_ground",
    "stance_forces",
    "step_dynamics",
]
