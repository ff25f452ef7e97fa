"""Audit metrics over (prediction, label, group) tables.

Each metric is a ratio of two group-conditional rates and is estimated by
plugging empirical cell proportions into the delta-method engine:

    di       P(g=1 | S=0) / P(g=1 | S=1)      disparate impact of the decision
    di-true  P(Y=1 | S=0) / P(Y=1 | S=1)      disparate impact of the label
    ca1      P(g=1 | Y=1, S=0) / P(g=1 | Y=1, S=1)   true-positive-rate ratio
    ca0      P(g=0 | Y=0, S=0) / P(g=0 | Y=0, S=1)   true-negative-rate ratio
    cu1      P(Y=1 | g=1, S=0) / P(Y=1 | g=1, S=1)   positive-predictive-value ratio
    cu0      P(Y=0 | g=0, S=0) / P(Y=0 | g=0, S=1)   negative-predictive-value ratio

Group coding: S=0 is the protected (unfavored) group, S=1 the favored one.
All estimators share the functional phi(x) = x1*x4 / (x2*x3) applied to a
4-vector of joint probabilities; they differ only in which four indicator
coordinates are averaged and in the closed form of the indicator covariance.
sigma is always the plug-in estimate (empirical moments substituted into the
gradient and the covariance), so intervals and tests need no resampling.
"""

from __future__ import annotations

from collections.abc import Hashable, Iterable, Sequence
from dataclasses import dataclass
from enum import Enum
from math import sqrt

from .delta import (
    CovarianceMatrix,
    MomentVector,
    RatioCI,
    TestResult,
    clt_interval,
    one_sided_test,
    ratio_gradient,
    ratio_phi,
    sandwich_variance,
)
from .errors import (
    DegenerateDenominator,
    EmptyInput,
    LabelsMissing,
    MixedLabelPresence,
    UnknownReferenceGroup,
)

#: Any used cell below this count triggers a SMALL_CELL warning: the
#: intervals are asymptotic and thin cells put them outside their regime.
SMALL_CELL_THRESHOLD = 30

#: Fixed atom orders shared with the validation module and the simulators.
LABELED_ATOMS = tuple((g, y, s) for g in (0, 1) for y in (0, 1) for s in (0, 1))
UNLABELED_ATOMS = tuple((g, s) for g in (0, 1) for s in (0, 1))


class Metric(str, Enum):
    """Identities of the supported ratio metrics."""

    DI = "di"
    DI_TRUE = "di-true"
    CA1 = "ca1"
    CA0 = "ca0"
    CU1 = "cu1"
    CU0 = "cu0"

    def __str__(self) -> str:  # keep CLI/report output free of enum noise
        return self.value


def metric_requires_labels(metric: Metric) -> bool:
    return metric is not Metric.DI


def indicator_coordinates(metric: Metric):
    """The four indicator predicates over an atom (g, y, s) defining Z.

    For Metric.DI the label slot of the atom may be None. The same
    definitions drive both the closed-form estimators here and the
    enumeration oracle in the validation module.
    """
    if metric is Metric.DI:
        return (
            lambda g, y, s: g == 1 and s == 0,
            lambda g, y, s: g == 1 and s == 1,
            lambda g, y, s: s == 0,
            lambda g, y, s: s == 1,
        )
    if metric is Metric.DI_TRUE:
        return (
            lambda g, y, s: y == 1 and s == 0,
            lambda g, y, s: y == 1 and s == 1,
            lambda g, y, s: s == 0,
            lambda g, y, s: s == 1,
        )
    if metric in (Metric.CA1, Metric.CU1):
        event = (
            lambda g, y, s: g == 1 and y == 1 and s == 0,
            lambda g, y, s: g == 1 and y == 1 and s == 1,
        )
        if metric is Metric.CA1:
            condition = (lambda g, y, s: y == 1 and s == 0,
                         lambda g, y, s: y == 1 and s == 1)
        else:
            condition = (lambda g, y, s: g == 1 and s == 0,
                         lambda g, y, s: g == 1 and s == 1)
        return event + condition
    if metric in (Metric.CA0, Metric.CU0):
        event = (
            lambda g, y, s: g == 0 and y == 0 and s == 0,
            lambda g, y, s: g == 0 and y == 0 and s == 1,
        )
        if metric is Metric.CA0:
            condition = (lambda g, y, s: y == 0 and s == 0,
                         lambda g, y, s: y == 0 and s == 1)
        else:
            condition = (lambda g, y, s: g == 0 and s == 0,
                         lambda g, y, s: g == 0 and s == 1)
        return event + condition
    raise ValueError(f"unknown metric {metric!r}")


@dataclass(frozen=True)
class AuditRecord:
    """One audited decision: prediction and group are mandatory, the label
    is absent when only the decision itself is audited."""

    prediction: int
    group: int
    label: int | None = None

    def __post_init__(self) -> None:
        if self.prediction not in (0, 1):
            raise ValueError(f"prediction must be 0 or 1, got {self.prediction!r}")
        if self.group not in (0, 1):
            raise ValueError(f"group must be 0 or 1, got {self.group!r}")
        if self.label is not None and self.label not in (0, 1):
            raise ValueError(f"label must be 0, 1 or None, got {self.label!r}")


@dataclass(frozen=True)
class CellCounts:
    """Joint counts over (g, y, s) cells; the sufficient statistics of every
    metric. Without labels the table collapses to (g, s) cells."""

    cells: tuple
    n: int
    has_labels: bool

    def __post_init__(self) -> None:
        total = sum(count for _, count in self.atoms())
        if total != self.n:
            raise ValueError(f"cells sum to {total}, n is {self.n}")
        if any(count < 0 for _, count in self.atoms()):
            raise ValueError("negative cell count")

    @classmethod
    def from_labeled(cls, cells) -> "CellCounts":
        """cells[g][y][s] nested sequences of nonnegative ints."""
        frozen = tuple(tuple(tuple(int(c) for c in ys) for ys in g) for g in cells)
        n = sum(c for g in frozen for ys in g for c in ys)
        return cls(frozen, n, True)

    @classmethod
    def from_unlabeled(cls, cells) -> "CellCounts":
        """cells[g][s] nested sequences of nonnegative ints."""
        frozen = tuple(tuple(int(c) for c in g) for g in cells)
        n = sum(c for g in frozen for c in g)
        return cls(frozen, n, False)

    @classmethod
    def from_flat(cls, counts: Sequence[int], has_labels: bool) -> "CellCounts":
        """Counts in LABELED_ATOMS / UNLABELED_ATOMS order."""
        if has_labels:
            if len(counts) != 8:
                raise ValueError("labeled tables have 8 cells")
            it = iter(counts)
            return cls.from_labeled(
                [[[next(it) for _ in (0, 1)] for _ in (0, 1)] for _ in (0, 1)]
            )
        if len(counts) != 4:
            raise ValueError("unlabeled tables have 4 cells")
        it = iter(counts)
        return cls.from_unlabeled([[next(it) for _ in (0, 1)] for _ in (0, 1)])

    def atoms(self):
        """Yield (atom, count); atom is (g, y, s) or (g, None, s)."""
        if self.has_labels:
            for g, y, s in LABELED_ATOMS:
                yield (g, y, s), self.cells[g][y][s]
        else:
            for g, s in UNLABELED_ATOMS:
                yield (g, None, s), self.cells[g][s]

    def flat(self) -> tuple[int, ...]:
        return tuple(count for _, count in self.atoms())

    def n_gys(self, g: int, y: int, s: int) -> int:
        if not self.has_labels:
            raise LabelsMissing("table has no labels")
        return self.cells[g][y][s]

    def n_gs(self, g: int, s: int) -> int:
        if self.has_labels:
            return self.cells[g][0][s] + self.cells[g][1][s]
        return self.cells[g][s]

    def n_ys(self, y: int, s: int) -> int:
        if not self.has_labels:
            raise LabelsMissing("table has no labels")
        return self.cells[0][y][s] + self.cells[1][y][s]

    def n_s(self, s: int) -> int:
        return self.n_gs(0, s) + self.n_gs(1, s)

    def coordinate_counts(self, metric: Metric) -> tuple[int, int, int, int]:
        """Counts of the metric's four indicator coordinates."""
        if metric_requires_labels(metric) and not self.has_labels:
            raise LabelsMissing(f"{metric} needs labels")
        coords = indicator_coordinates(metric)
        sums = [0, 0, 0, 0]
        for (g, y, s), count in self.atoms():
            for j, predicate in enumerate(coords):
                if predicate(g, y, s):
                    sums[j] += count
        return tuple(sums)


@dataclass(frozen=True)
class MetricEstimate:
    """Point estimate, plug-in sigma, and CLT interval for one metric."""

    metric: Metric
    point: float
    sigma: float
    n: int
    ci: RatioCI
    warnings: tuple[str, ...] = ()
    moments: MomentVector | None = None

    def __post_init__(self) -> None:
        if self.sigma < 0.0:
            raise ValueError("sigma must be >= 0")
        if self.moments is not None and self.point != ratio_phi(self.moments):
            raise ValueError("point estimate is not phi of the moment vector")


def count_cells(records: Iterable[AuditRecord]) -> CellCounts:
    """Exact tabulation of records into cells.

    Label presence must be uniform; the first record decides the table shape.
    """
    records = list(records)
    if not records:
        raise EmptyInput("no records to tabulate")
    has_labels = records[0].label is not None
    if has_labels:
        cells = [[[0, 0], [0, 0]], [[0, 0], [0, 0]]]
        for r in records:
            if r.label is None:
                raise MixedLabelPresence("record without label in a labeled table")
            cells[r.prediction][r.label][r.group] += 1
        return CellCounts.from_labeled(cells)
    cells = [[0, 0], [0, 0]]
    for r in records:
        if r.label is not None:
            raise MixedLabelPresence("record with label in an unlabeled table")
        cells[r.prediction][r.group] += 1
    return CellCounts.from_unlabeled(cells)


def parity_ratio_covariance(m: MomentVector) -> CovarianceMatrix:
    """Indicator covariance for coordinates (event&S=0, event&S=1, S=0, S=1).

    Valid only when the last two coordinates are the complementary group
    margins (m3 + m4 = 1), which plug-in moments satisfy by construction.
    """
    p0, p1, pi0, pi1 = m.as_tuple()
    if abs(pi0 + pi1 - 1.0) > 1e-9:
        raise ValueError(f"group margins must sum to 1, got {pi0 + pi1!r}")
    return CovarianceMatrix.from_rows([
        [p0 * (1 - p0), -p0 * p1, pi1 * p0, -pi1 * p0],
        [-p0 * p1, p1 * (1 - p1), -pi0 * p1, pi0 * p1],
        [pi1 * p0, -pi0 * p1, pi0 * pi1, -pi0 * pi1],
        [-pi1 * p0, pi0 * p1, -pi0 * pi1, pi0 * pi1],
    ])


def conditional_rate_covariance(m: MomentVector) -> CovarianceMatrix:
    """Indicator covariance for nested coordinates (A&B&S=s, B&S=s).

    Coordinates 1 and 3 carry group-0 mass, 2 and 4 group-1 mass, and the
    event is nested in its condition (m1 <= m3, m2 <= m4). Cross-group
    products vanish, which fixes the off-diagonal signs: entries (2,1) and
    (4,1) are -p0*p1 and -p0*r1 (minus a product of disjoint-event masses),
    entries (3,1) and (4,2) follow from the nesting.
    """
    p0, p1, r0, r1 = m.as_tuple()
    if p0 > r0 + 1e-12 or p1 > r1 + 1e-12:
        raise ValueError("event mass exceeds its conditioning mass")
    return CovarianceMatrix.from_rows([
        [p0 * (1 - p0), -p0 * p1, p0 * (1 - r0), -p0 * r1],
        [-p0 * p1, p1 * (1 - p1), -p1 * r0, p1 * (1 - r1)],
        [p0 * (1 - r0), -p1 * r0, r0 * (1 - r0), -r0 * r1],
        [-p0 * r1, p1 * (1 - r1), -r0 * r1, r1 * (1 - r1)],
    ])


_COVARIANCE_FAMILY = {
    Metric.DI: parity_ratio_covariance,
    Metric.DI_TRUE: parity_ratio_covariance,
    Metric.CA1: conditional_rate_covariance,
    Metric.CA0: conditional_rate_covariance,
    Metric.CU1: conditional_rate_covariance,
    Metric.CU0: conditional_rate_covariance,
}


def closed_form_covariance(metric: Metric, m: MomentVector) -> CovarianceMatrix:
    """The closed-form indicator covariance for a metric at moments m."""
    return _COVARIANCE_FAMILY[metric](m)


def _estimate(metric: Metric, cells: CellCounts, alpha: float) -> MetricEstimate:
    counts = cells.coordinate_counts(metric)
    n = cells.n
    if counts[1] == 0 or counts[2] == 0:
        raise DegenerateDenominator(
            f"{metric}: denominator cells empty (counts {counts})"
        )
    m = MomentVector(*(c / n for c in counts))
    point = ratio_phi(m)
    sigma = sqrt(sandwich_variance(ratio_gradient(m), closed_form_covariance(metric, m)))
    warnings = ("SMALL_CELL",) if min(counts) < SMALL_CELL_THRESHOLD else ()
    return MetricEstimate(
        metric=metric,
        point=point,
        sigma=sigma,
        n=n,
        ci=clt_interval(point, sigma, n, alpha),
        warnings=warnings,
        moments=m,
    )


def estimate_di(cells: CellCounts, alpha: float = 0.05) -> MetricEstimate:
    """Disparate impact of the prediction; never reads label cells."""
    return _estimate(Metric.DI, cells, alpha)


def estimate_di_true(cells: CellCounts, alpha: float = 0.05) -> MetricEstimate:
    """Disparate impact of the true label; never reads prediction cells."""
    return _estimate(Metric.DI_TRUE, cells, alpha)


def estimate_ca(cells: CellCounts, outcome: int, alpha: float = 0.05) -> MetricEstimate:
    """Accuracy-equality ratio: TPR ratio for outcome=1, TNR ratio for 0."""
    if outcome not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {outcome!r}")
    return _estimate(Metric.CA1 if outcome == 1 else Metric.CA0, cells, alpha)


def estimate_cu(cells: CellCounts, outcome: int, alpha: float = 0.05) -> MetricEstimate:
    """Use-equality ratio: PPV ratio for outcome=1, NPV ratio for 0."""
    if outcome not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {outcome!r}")
    return _estimate(Metric.CU1 if outcome == 1 else Metric.CU0, cells, alpha)


def estimate_metric(metric: Metric, cells: CellCounts, alpha: float = 0.05) -> MetricEstimate:
    """Dispatch by metric identity."""
    return _estimate(Metric(metric), cells, alpha)


def test_disparate_impact(
    est: MetricEstimate, beta: float = 0.8, alpha: float = 0.05
) -> TestResult:
    """One-sided test of H0: metric <= beta, on a computed estimate.

    beta defaults to 0.8, the four-fifths screening threshold.
    """
    return one_sided_test(est.point, est.sigma, est.n, beta, alpha)


test_disparate_impact.__test__ = False  # not a pytest case despite the name


def statistical_parity_gap(cells: CellCounts) -> float:
    """P(g=1 | S=0) - P(g=1 | S=1); zero under empirical statistical parity."""
    n0, n1 = cells.n_s(0), cells.n_s(1)
    if n0 == 0 or n1 == 0:
        raise DegenerateDenominator(f"empty group: n_s=({n0}, {n1})")
    return cells.n_gs(1, 0) / n0 - cells.n_gs(1, 1) / n1


def pairwise_audits(
    records: Iterable[tuple[int, int | None, Hashable]],
    reference_group: Hashable,
    alpha: float = 0.05,
) -> list[tuple[Hashable, MetricEstimate]]:
    """Disparate-impact audit of each group against a reference group.

    records are (prediction, label-or-None, group-id) triples with arbitrary
    hashable group ids. For every non-reference group G (in first-appearance
    order) the pair (G as S=0, reference as S=1) is binarized and estimated
    with estimate_di.
    """
    records = list(records)
    order: list[Hashable] = []
    seen: set[Hashable] = set()
    for _, _, group in records:
        if group not in seen:
            seen.add(group)
            order.append(group)
    if reference_group not in seen:
        raise UnknownReferenceGroup(f"reference group {reference_group!r} not in data")
    if len(seen) < 2:
        raise EmptyInput("pairwise audit needs at least two distinct groups")

    results = []
    for group in order:
        if group == reference_group:
            continue
        pair = [
            AuditRecord(prediction=p, group=0 if g == group else 1, label=None)
            for p, _, g in records
            if g == group or g == reference_group
        ]
        results.append((group, estimate_di(count_cells(pair), alpha)))
    return results
