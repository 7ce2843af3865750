"""Zero-inflated learner models: simulation, fitting, and equity evaluation."""

__version__ = "0.1.0"

from .domain import (
    Attempt,
    ConfigError,
    ContentType,
    DataError,
    Dataset,
    Delivery,
    Item,
    NdcProfile,
    NumericError,
    Outcome,
    ResponseType,
    Split,
    StudentProfile,
    Subject,
    ZilmError,
    load_dataset,
    ndc_count,
    save_dataset,
    validate_dataset,
)
from .rng import RandomSource
from .simulate import (
    LqfWeights,
    SimConfig,
    generate_attempts,
    generate_dataset,
    irt3pl_prob,
    sample_items,
    sample_students,
    true_lqf_pi,
)
from .models import (
    Ktm1Params,
    ZilmParams,
    build_design,
    irt_prob,
    ktm1_nll,
    ktm1_prob,
    pi_of,
    zilm_grad,
    zilm_nll,
    zilm_success_prob,
)
from .fit import (
    FitConfig,
    FittedModel,
    ModelKind,
    Optimizer,
    check_gradients,
    fit,
    load_model,
    predict,
    save_model,
)
from .evaluate import (
    ContrastReport,
    DeliveryReport,
    HypothesisTestResult,
    MetricsReport,
    PolicyReport,
    RecoveryReport,
    classification_metrics,
    contrast_analysis,
    correlation,
    forced_delivery_experiment,
    ndc_hypothesis_test,
    policy_experiment,
    recovery_report,
)
