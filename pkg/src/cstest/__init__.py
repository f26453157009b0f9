"""Test individual discrimination claims with ceteris paribus (ST) and
mutatis mutandis (CST) comparators."""

__version__ = "0.1.0"

from .audit import (
    AuditConfig,
    AuditReport,
    CaseResult,
    DecisionRule,
    apply_decision_rule,
    compute_delta_p,
    evaluate,
    run_cst,
    run_st,
    wald_interval,
)
from .data import (
    AttributeSchema,
    DatasetTable,
    IndividualProfile,
    SchemaConfig,
    encode_protected,
    from_columns,
    load_csv,
    load_table,
    summarize,
    write_csv,
    write_json,
)
from .errors import CstestError, DataError, EmptyPoolError, ModelError, SchemaError
from .scm import (
    AbductedNoise,
    CausalGraph,
    ScmModel,
    StructuralEquation,
    abduct,
    counterfactual,
    counterfactual_dataset,
    fit_scm,
    predict,
    sample_from_scm,
)
from .similarity import CandidatePool, DistanceSpec, Neighborhood, gower, knn

__all__ = [
    "__version__",
    "AuditConfig",
    "AuditReport",
    "CaseResult",
    "DecisionRule",
    "apply_decision_rule",
    "compute_delta_p",
    "evaluate",
    "run_cst",
    "run_st",
    "wald_interval",
    "AttributeSchema",
    "DatasetTable",
    "IndividualProfile",
    "SchemaConfig",
    "encode_protected",
    "from_columns",
    "load_csv",
    "load_table",
    "summarize",
    "write_csv",
    "write_json",
    "CstestError",
    "DataError",
    "EmptyPoolError",
    "ModelError",
    "SchemaError",
    "AbductedNoise",
    "CausalGraph",
    "ScmModel",
    "StructuralEquation",
    "abduct",
    "counterfactual",
    "counterfactual_dataset",
    "fit_scm",
    "predict",
    "sample_from_scm",
    "CandidatePool",
    "DistanceSpec",
    "Neighborhood",
    "gower",
    "knn",
]
