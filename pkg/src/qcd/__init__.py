"""Quickest change detection with transient post-change phases.

The post-change behavior walks through phases f1 -> ... -> fL with unknown
durations before settling in fL. Two constant-memory detectors handle that
without knowing the durations: the dynamic CuSum (pure generalized likelihood
ratio) and its duration-weighted variant (geometric weights restore a
recursion for the mixture rule). Supporting modules supply brute-force
oracles, threshold/weight design from run-length bounds, and a seeded Monte
Carlo harness for operating characteristics.
"""

from .design import (
    DesignInput,
    EmptyRange,
    RegimeVector,
    asymptotic_wadd,
    dcusum_threshold,
    design_card,
    regime_vector,
    rho_range,
    wdcusum_threshold,
)
from .detectors import (
    CUSUM,
    DCUSUM,
    WDCUSUM,
    ConfigError,
    DetectorConfig,
    DetectorState,
    RunResult,
    StepOutcome,
    StreamEnded,
    classical_cusum_step,
    dcusum_step,
    initial_state,
    run_until_stop,
    step,
    wdcusum_step,
)
from .models import (
    LLR_SENTINEL,
    AlphaEstimate,
    Density,
    DivergentKl,
    Gaussian,
    ModelError,
    OutOfSupport,
    PhaseModel,
    PiecewiseConstant,
    estimate_alpha,
    kl_between,
    kl_divergence,
    load_model,
    log_likelihood_ratio,
    model_from_dict,
    model_to_dict,
    phi,
)
from .oracle import (
    GeometricDuration,
    PointMassDuration,
    TupleStat,
    UnsupportedL,
    WindowTooLarge,
    glr_bruteforce,
    mixture_glr,
    mixture_sr_statistic,
    weighted_glr_bruteforce,
)
from .simulate import (
    ArlEstimate,
    InvalidScenario,
    OcReport,
    OcRow,
    RegenerationSurvey,
    ScenarioSpec,
    StreamSampler,
    WaddEstimate,
    estimate_arl,
    estimate_wadd,
    oc_sweep,
    regeneration_survey,
    sample_stream,
)

__version__ = "0.1.0"
