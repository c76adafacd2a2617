"""Fault-tolerant individual pitch control on a surrogate three-blade rotor.

Online per-blade identification of predictor Markov parameters feeds a
per-rotation repetitive control law whose excitation is restricted to the
1P/2P rotor harmonics; baseline collective and Coleman-transform IPC
controllers, fault injection, metrics, and a deterministic campaign runner
round out the package.
"""

from .baselines import MbcIpcState, cpc_baseline, coleman_forward, coleman_inverse, mbc_ipc_step
from .control import (
    BasisProjection,
    ControllerState,
    ControllerTuning,
    ExcitationGenerator,
    LiftedModel,
    RepetitiveController,
    UnrestrictedExcitation,
    assemble_lifted,
    build_basis,
    generate_excitation,
    pitch_command,
    project_output,
    project_state_space,
    synthesize_gain,
    update_theta,
)
from .harness import (
    CampaignReport,
    ComparisonTable,
    ConfigError,
    LoadCaseConfig,
    RunResult,
    compare,
    default_campaign,
    load_config_file,
    run_campaign,
    run_load_case,
)
from .metrics import WindowSpec, adc, band_energy_ratio, rsd, windowed_sd
from .numerics import (
    DareNonConvergence,
    DareSolution,
    PsdEstimate,
    RlsState,
    pinv,
    rls_update,
    solve_dare,
    welch_psd,
)
from .plant import (
    DisturbanceModel,
    FaultScenario,
    SurrogatePlant,
    apply_actuator_fault,
    apply_blade_fault,
    build_plant,
    default_plant,
    markov_oracle,
    step,
)
from .sysid import (
    IdentificationEngine,
    MarkovEstimate,
    PeriodicBuffer,
    build_regressor,
    identify_step,
    periodic_difference,
)

__version__ = "0.1.0"
