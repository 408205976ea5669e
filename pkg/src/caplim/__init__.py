"""caplim: worst-case expectations over measure families, capacities, tail
bounds with explicit constants, and limit-theorem experiments."""

__version__ = "0.1.0"

from .measures import (
    DEFAULT_SAMPLE_BUDGET,
    Marginal,
    MeasureFamily,
    MomentValue,
    ProductMeasure,
    SampleBlock,
    enumerate_family,
    moment,
    philox_stream,
    sample,
    uniform_block,
)
from .sublinear import (
    CapacityPair,
    EvaluationReport,
    SublinearEngine,
    TestFunction,
    run_axiom_suite,
    smooth_indicator,
    truncate,
)
from .bounds import (
    BoundInputs,
    DerivedConstants,
    chebyshev_bound,
    chernoff_explicit_bound,
    chernoff_optimal_bound,
    choquet_moment_bound,
    conjugate_chebyshev_bound,
    conjugate_exponential_bound,
    conjugate_split_bound,
    kolmogorov_exponential_bound,
    log_lower_inequality_margin,
    moricz_maximal_bound,
    moricz_maximal_bound_text_form,
    power_tail_bound,
    split_moment_bound,
)
from .dependence import (
    DependenceSpec,
    EndReport,
    SequenceSampler,
    verify_end,
    verify_extended_independence,
)
from .limits import (
    ExperimentConfig,
    ExperimentResult,
    borel_cantelli_diag,
    run_bound_check,
    run_cluster,
    run_experiment,
    run_lil,
    run_necessity,
    run_slln,
    run_wlln,
)
from .config import (
    ConfigBundle,
    ConfigError,
    parse_config,
    parse_config_text,
    serialize_config,
)

__all__ = [
    "DEFAULT_SAMPLE_BUDGET",
    "Marginal",
    "MeasureFamily",
    "MomentValue",
    "ProductMeasure",
    "SampleBlock",
    "enumerate_family",
    "moment",
    "philox_stream",
    "sample",
    "uniform_block",
    "CapacityPair",
    "EvaluationReport",
    "SublinearEngine",
    "TestFunction",
    "run_axiom_suite",
    "smooth_indicator",
    "truncate",
    "BoundInputs",
    "DerivedConstants",
    "chebyshev_bound",
    "chernoff_explicit_bound",
    "chernoff_optimal_bound",
    "choquet_moment_bound",
    "conjugate_chebyshev_bound",
    "conjugate_exponential_bound",
    "conjugate_split_bound",
    "kolmogorov_exponential_bound",
    "log_lower_inequality_margin",
    "moricz_maximal_bound",
    "moricz_maximal_bound_text_form",
    "power_tail_bound",
    "split_moment_bound",
    "DependenceSpec",
    "EndReport",
    "SequenceSampler",
    "verify_end",
    "verify_extended_independence",
    "ExperimentConfig",
    "ExperimentResult",
    "borel_cantelli_diag",
    "run_bound_check",
    "run_cluster",
    "run_experiment",
    "run_lil",
    "run_necessity",
    "run_slln",
    "run_wlln",
    "ConfigBundle",
    "ConfigError",
    "parse_config",
    "parse_config_text",
    "serialize_config",
    "__version__",
]
