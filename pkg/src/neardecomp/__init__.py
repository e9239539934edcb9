"""Contraction certificates and singular-perturbation reduction for nearly decomposable systems."""

__version__ = "0.1.0"

from .bounds import (
    BoundCurve,
    BoundedDisturbance,
    LGainDisturbance,
    SmallGainViolated,
    lemma1_bound,
    lemma2_bound,
    verify_bound,
)
from .contraction import (
    ContractionCertificate,
    NotContracting,
    certify,
    certify_partial,
    check_hierarchy,
)
from .dynsys import (
    BuildingModel,
    Metric,
    ModularSystem,
    VectorField,
    building_barycentric,
    building_raw,
    compile_system,
    from_barycentric,
    to_barycentric,
)
from .expr import DomainError, ExprError, differentiate, evaluate, lambdify, to_string
from .parser import ParseError, SystemSpec, load_system, parse_expr, parse_system, to_source
from .sim import IntegratorConfig, integrate, run_ensemble
from .spreduce import (
    GainConstants,
    SlowManifold,
    building_reference_constants,
    cascade_epsilon,
    epsilon_critical,
    estimate_gain_constants,
    lemma3_bounds,
    reduce_system,
    to_standard_form,
    transient_time,
)
