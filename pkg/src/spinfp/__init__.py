"""Fingerprinting of spin-1/2 relaxation parameters with optimized pulse trains.

The package simulates delta-pulse driven spin ensembles, builds fingerprint
dictionaries, optimizes the driving field by gradient ascent on an
inter-entry distance figure of merit, and estimates relaxation and offset
parameters from noisy signals by dictionary matching followed by curve-fit
refinement.
"""

__version__ = "0.1.0"

from .bloch import (
    EQUILIBRIUM,
    BlochPropagator,
    Isochromat,
    LorentzianSpec,
    PulseSequence,
    RelaxationParams,
    SpinEnsemble,
    make_lorentzian_ensemble,
    propagate_sequence,
    relax_free,
    rotate_pulse,
    simulate_fingerprint,
)
from .dictionary import (
    Dictionary,
    MatchResult,
    ParameterPoint,
    RecognitionMap,
    distance,
    distance_matrix,
    figure_of_merit,
    inner_product,
    recognition_map,
    recognize,
)
from .estimation import (
    EstimationReport,
    FingerprintRegressor,
    FitConfig,
    IrEstimate,
    correlation_scan,
    estimate,
    fit_parameters,
    ir_estimate,
    ir_signal,
    t2_star,
)
from .grape import (
    OptimizationTrace,
    OptimizerConfig,
    SequenceOptimizer,
    objective_gradient,
    objective_value,
    optimize_field,
    random_field,
)
from .model import DictionarySpec, SignalModel, build_dictionary, field_fingerprint
from .noise import (
    ComparisonTable,
    NoiseSpec,
    Scenario,
    WidthReport,
    add_noise,
    compare_methods,
    ir_scenario,
    ofp_scenario,
    width_study,
)
from .validation import DegenerateSignalError, ScenarioError
