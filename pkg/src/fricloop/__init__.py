"""Closed-loop electroadhesion friction rendering at desk scale.

A numpy/scipy library (plus a small CLI) that simulates a finger on an
electroadhesive surface measured by a virtual tribometer, identifies the
measurement chain, synthesizes a loop-shaping discrete controller with a
DC-friction mitigator, and evaluates how faithfully reference friction
profiles are rendered.
"""

from .analysis import (
    SensitivityRow,
    SensitivityTable,
    SwipeSegment,
    TrackingReport,
    align_by_xcorr,
    bandpass_zero_phase,
    empirical_sensitivity,
    evaluate_tracking,
    lowpass_zero_phase,
    r_squared,
    segment_swipes,
    sensitivity_condition,
)
from .controller import (
    Action,
    ControllerState,
    DesignReport,
    DesignResult,
    DesignTarget,
    MitigatorMode,
    MitigatorState,
    closed_loop_poles,
    closed_loop_tf,
    control_step,
    design_discrete,
    mitigator_step,
    predicted_closed_loop,
    synthesize_ideal,
)
from .experiment import (
    ExperimentConfig,
    ReferenceSpec,
    RunRecord,
    RunResult,
    config_from_dict,
    config_to_json,
    load_config,
    run_control_loop,
    run_experiment,
    run_sweep,
)
from .io import TRACE_COLUMNS, Trace
from .lti import (
    DiscreteFilter,
    DiscretizeResult,
    FrequencyResponse,
    RationalTF,
    Signal,
    discretize_fit,
    freq_response,
    is_stable,
    make_second_order,
    simulate_discrete,
)
from .plant import (
    ContactState,
    LoadProfile,
    PlantConfig,
    PlantState,
    init_plant,
    plant_step,
)
from .signals import (
    TEXTURE_PROFILES,
    TextureSpec,
    gen_sine,
    gen_square,
    sensitivity_grid,
    stitch_feather,
    texture_reference,
    texture_segment,
)
from .sysid import (
    GainEstimate,
    ImpulseAverage,
    LockInResult,
    SecondOrderFit,
    average_impulse_spectra,
    estimate_gain,
    fit_second_order,
    load_signal_csv,
    lock_in,
)

__version__ = "0.1.0"
