"""Resilient multiple-model estimation for switched linear stochastic systems
under switching and data-injection attacks."""

from .analysis import (
    AttackerMoments,
    DetectabilityVerdict,
    UnidentifiablePlan,
    max_correctable,
    resilience_guarantee,
    strong_detectability,
    synth_unidentifiable,
)
from .controller import (
    ControllerGains,
    closed_loop_matrices,
    control_step,
    design_controller,
    design_feedback,
    design_rejection,
    gains_to_json,
)
from .filtering import (
    FilterState,
    FilterStepError,
    TransformedMode,
    filter_step,
    init_filter,
    steady_state_gains,
    transform,
)
from .mm_estimator import (
    DetectionReport,
    EstimatorBank,
    EstimatorConfig,
    detection_report,
    fuse_output,
    gen_innovation,
    likelihood,
    log_likelihood,
    update_probabilities,
)
from .model import (
    AttackSupport,
    ModeModel,
    ModeSet,
    OperationMode,
    PlantTopology,
    build_mode,
    enumerate_modes,
    enumerate_supports,
    expected_mode_count,
    topology_from_json,
    topology_to_json,
)
from .sim import (
    ClosedLoopController,
    PlanAttack,
    PowerAttackMode,
    PowerNetwork,
    Scenario,
    Trace,
    build_benchmark,
    build_power_network,
    design_controller_bank,
    design_unidentifiable_attack,
    estimate_attack_moments,
    simulate,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
