"""Group-fairness audits with delta-method confidence intervals."""

from .delta import (
    CovarianceMatrix,
    GradientVector,
    MomentVector,
    RatioCI,
    TestResult,
    clt_interval,
    one_sided_test,
    ratio_gradient,
    ratio_phi,
    sandwich_variance,
)
from .errors import FairnessAuditError
from .gaussian import normal_cdf, normal_quantile, normal_sf
from .ingest import (
    AuditTable,
    SchemaConfig,
    apply_schema,
    fetch_dataset,
    load_registry,
    load_table,
    parse_table,
    write_canonical_csv,
)
from .metrics import (
    AuditRecord,
    CellCounts,
    Metric,
    MetricEstimate,
    count_cells,
    estimate_ca,
    estimate_cu,
    estimate_di,
    estimate_di_true,
    estimate_metric,
    pairwise_audits,
    statistical_parity_gap,
    test_disparate_impact,
)
from .validation import (
    CellDistribution,
    CoverageReport,
    MatrixAdjudication,
    adjudicate_matrix,
    bootstrap_sigma,
    coverage_simulation,
    exact_moments,
)

__version__ = "0.1.0"

__all__ = [
    "AuditRecord",
    "AuditTable",
    "CellCounts",
    "CellDistribution",
    "CovarianceMatrix",
    "CoverageReport",
    "FairnessAuditError",
    "GradientVector",
    "MatrixAdjudication",
    "Metric",
    "MetricEstimate",
    "MomentVector",
    "RatioCI",
    "SchemaConfig",
    "TestResult",
    "__version__",
    "adjudicate_matrix",
    "apply_schema",
    "bootstrap_sigma",
    "clt_interval",
    "count_cells",
    "coverage_simulation",
    "estimate_ca",
    "estimate_cu",
    "estimate_di",
    "estimate_di_true",
    "estimate_metric",
    "exact_moments",
    "fetch_dataset",
    "load_registry",
    "load_table",
    "normal_cdf",
    "normal_quantile",
    "normal_sf",
    "one_sided_test",
    "pairwise_audits",
    "parse_table",
    "ratio_gradient",
    "ratio_phi",
    "sandwich_variance",
    "statistical_parity_gap",
    "test_disparate_impact",
    "write_canonical_csv",
]
