"""Independent oracles for the closed-form asymptotics.

Three checks, none of which share algebra with the estimators they verify:

* exact_moments enumerates E[Z] and Cov(Z) as finite sums over the at most
  eight atoms of a cell distribution, instead of using the closed forms.
* coverage_simulation draws i.i.d. samples and measures how often the CLT
  interval captures the true ratio.
* bootstrap_sigma is the resampling comparator: the route the closed forms
  make unnecessary, kept to demonstrate agreement.

adjudicate_matrix settles the covariance closed form for the conditional
rate ratios: it compares the corrected form and a sign-slipped variant of it
(entry (2,1) as -p0*r1 instead of -p0*p1, entry (4,1) as +p0*r1 instead of
-p0*r1) against the enumeration oracle on random distributions.

Randomness: every stochastic operation is a pure function of (inputs, seed).
Replicate r draws from the Philox counter-based generator keyed with the
pair (seed, r), so replicates form independent substreams that can run in
any order, or in parallel, with bitwise identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .delta import CovarianceMatrix, MomentVector, ratio_phi
from .errors import (
    DegenerateDenominator,
    DegenerateDistribution,
    InvalidDistribution,
    TooManyDegenerateResamples,
)
from .metrics import (
    LABELED_ATOMS,
    UNLABELED_ATOMS,
    AuditRecord,
    CellCounts,
    Metric,
    closed_form_covariance,
    count_cells,
    estimate_metric,
    indicator_coordinates,
    metric_requires_labels,
)

_NORMALIZATION_TOLERANCE = 1e-12

#: Fraction of discarded bootstrap resamples above which the sample is
#: declared too degenerate to resample.
MAX_DISCARD_FRACTION = 0.10


def substream(seed: int, index: int) -> np.random.Generator:
    """The documented stream-splitting rule: Philox keyed by (seed, index)."""
    key = np.array(
        [seed & 0xFFFFFFFFFFFFFFFF, index & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64
    )
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class CellDistribution:
    """Population probabilities over the (g, y, s) cells (or (g, s) cells
    when labels are absent). Nonnegative and normalized to one."""

    probs: tuple
    has_labels: bool

    def __post_init__(self) -> None:
        flat = self.flat()
        if any(p < 0.0 for p in flat):
            raise InvalidDistribution(f"negative cell probability in {flat}")
        if abs(sum(flat) - 1.0) > _NORMALIZATION_TOLERANCE:
            raise InvalidDistribution(f"cell probabilities sum to {sum(flat)!r}")

    @classmethod
    def from_labeled(cls, probs) -> "CellDistribution":
        """probs[g][y][s] nested sequences."""
        frozen = tuple(tuple(tuple(float(p) for p in ys) for ys in g) for g in probs)
        return cls(frozen, True)

    @classmethod
    def from_unlabeled(cls, probs) -> "CellDistribution":
        """probs[g][s] nested sequences."""
        frozen = tuple(tuple(float(p) for p in g) for g in probs)
        return cls(frozen, False)

    @classmethod
    def from_flat(cls, flat, has_labels: bool) -> "CellDistribution":
        flat = list(flat)
        if has_labels:
            if len(flat) != 8:
                raise InvalidDistribution("labeled distributions have 8 cells")
            it = iter(flat)
            return cls.from_labeled(
                [[[next(it) for _ in (0, 1)] for _ in (0, 1)] for _ in (0, 1)]
            )
        if len(flat) != 4:
            raise InvalidDistribution("unlabeled distributions have 4 cells")
        it = iter(flat)
        return cls.from_unlabeled([[next(it) for _ in (0, 1)] for _ in (0, 1)])

    def atoms(self):
        if self.has_labels:
            for g, y, s in LABELED_ATOMS:
                yield (g, y, s), self.probs[g][y][s]
        else:
            for g, s in UNLABELED_ATOMS:
                yield (g, None, s), self.probs[g][s]

    def flat(self) -> tuple[float, ...]:
        return tuple(p for _, p in self.atoms())


@dataclass(frozen=True)
class CoverageReport:
    """Empirical capture rate of the CLT interval over seeded replicates.

    empirical is computed over retained replicates only; replicates whose
    sample had an empty denominator cell are discarded and counted.
    """

    nominal: float
    empirical: float
    replicates: int
    n_per_replicate: int
    seed: int
    metric: Metric
    discarded: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.empirical <= 1.0:
            raise ValueError(f"empirical coverage {self.empirical!r} outside [0, 1]")
        if self.replicates <= 0:
            raise ValueError("replicates must be positive")


def exact_moments(
    dist: CellDistribution, metric: Metric
) -> tuple[MomentVector, CovarianceMatrix]:
    """E[Z] and Cov(Z) by enumeration over atoms.

    E[Z_j]     = sum over atoms of 1_j(atom) * P(atom)
    Cov(Z_j,k) = sum of 1_j * 1_k * P  -  E[Z_j] * E[Z_k]

    No closed-form algebra is involved, which is what makes this the oracle.
    """
    metric = Metric(metric)
    if metric_requires_labels(metric) and not dist.has_labels:
        raise InvalidDistribution(f"{metric} needs a labeled distribution")
    coords = indicator_coordinates(metric)
    atoms = list(dist.atoms())
    mean = [0.0, 0.0, 0.0, 0.0]
    cross = [[0.0] * 4 for _ in range(4)]
    for (g, y, s), p in atoms:
        hits = [predicate(g, y, s) for predicate in coords]
        for j in range(4):
            if hits[j]:
                mean[j] += p
                for k in range(j + 1):
                    if hits[k]:
                        cross[j][k] += p
    cov = np.empty((4, 4))
    for j in range(4):
        for k in range(j + 1):
            cov[j, k] = cov[k, j] = cross[j][k] - mean[j] * mean[k]
    return MomentVector(*mean), CovarianceMatrix(cov)


def true_metric_value(dist: CellDistribution, metric: Metric) -> float:
    """The population ratio under dist; DegenerateDistribution if undefined."""
    moments, _ = exact_moments(dist, metric)
    try:
        return ratio_phi(moments)
    except DegenerateDenominator as err:
        raise DegenerateDistribution(
            f"{metric} undefined for this distribution"
        ) from err


def coverage_simulation(
    dist: CellDistribution,
    metric: Metric,
    n: int,
    replicates: int,
    alpha: float,
    seed: int,
) -> CoverageReport:
    """Fraction of CLT intervals that capture the true ratio.

    Each replicate r draws a multinomial sample of size n from dist using
    substream(seed, r), re-estimates the metric with plug-in sigma, and
    checks whether the interval contains the true value. Deterministic in
    (inputs, seed); aggregation uses exact integer counters, so the result
    is independent of replicate execution order.
    """
    metric = Metric(metric)
    if replicates < 100:
        raise ValueError(f"need at least 100 replicates, got {replicates}")
    truth = true_metric_value(dist, metric)
    probs = np.array(dist.flat())
    covered = 0
    discarded = 0
    for r in range(replicates):
        counts = substream(seed, r).multinomial(n, probs)
        cells = CellCounts.from_flat(counts.tolist(), dist.has_labels)
        try:
            est = estimate_metric(metric, cells, alpha)
        except DegenerateDenominator:
            discarded += 1
            continue
        if est.ci.lower <= truth <= est.ci.upper:
            covered += 1
    retained = replicates - discarded
    if retained == 0:
        raise DegenerateDistribution("every replicate was degenerate")
    return CoverageReport(
        nominal=1.0 - alpha,
        empirical=covered / retained,
        replicates=replicates,
        n_per_replicate=n,
        seed=seed,
        metric=metric,
        discarded=discarded,
    )


def standardized_statistics(
    dist: CellDistribution,
    metric: Metric,
    n: int,
    replicates: int,
    seed: int,
) -> np.ndarray:
    """sqrt(n) * (estimate - truth) / sigma-hat per retained replicate.

    Shares the sampling scheme of coverage_simulation; used to check the
    limiting standard normality directly.
    """
    metric = Metric(metric)
    truth = true_metric_value(dist, metric)
    probs = np.array(dist.flat())
    values = []
    for r in range(replicates):
        counts = substream(seed, r).multinomial(n, probs)
        cells = CellCounts.from_flat(counts.tolist(), dist.has_labels)
        try:
            est = estimate_metric(metric, cells, 0.05)
        except DegenerateDenominator:
            continue
        if est.sigma > 0.0:
            values.append(np.sqrt(n) * (est.point - truth) / est.sigma)
    return np.array(values)


def bootstrap_sigma(
    records: list[AuditRecord], metric: Metric, resamples: int, seed: int
) -> float:
    """Nonparametric bootstrap standard deviation, scaled by sqrt(n).

    Resampling n records i.i.d. with replacement is a multinomial draw on
    the cell counts, so the resampling runs on the sufficient statistics
    directly. Resamples with an empty denominator cell are discarded; more
    than MAX_DISCARD_FRACTION of them is an error.
    """
    metric = Metric(metric)
    if resamples < 200:
        raise ValueError(f"need at least 200 resamples, got {resamples}")
    cells = count_cells(records)
    estimate_metric(metric, cells, 0.05)  # metric must be computable on the full sample
    n = cells.n
    probs = np.array(cells.flat()) / n
    points = []
    discarded = 0
    for b in range(resamples):
        counts = substream(seed, b).multinomial(n, probs)
        resampled = CellCounts.from_flat(counts.tolist(), cells.has_labels)
        try:
            points.append(estimate_metric(metric, resampled, 0.05).point)
        except DegenerateDenominator:
            discarded += 1
    if discarded > MAX_DISCARD_FRACTION * resamples:
        raise TooManyDegenerateResamples(
            f"{discarded} of {resamples} resamples degenerate"
        )
    return float(np.std(points, ddof=1) * np.sqrt(n))


def _conditional_rate_covariance_sign_slipped(m: MomentVector) -> np.ndarray:
    """The corrected conditional-rate covariance with its two entries
    slipped: (2,1) uses -p0*r1 in place of -p0*p1 and (4,1) uses +p0*r1 in
    place of -p0*r1. Returned raw because it is generally not PSD."""
    p0, p1, r0, r1 = m.as_tuple()
    return np.array([
        [p0 * (1 - p0), -p0 * r1, p0 * (1 - r0), p0 * r1],
        [-p0 * r1, p1 * (1 - p1), -p1 * r0, p1 * (1 - r1)],
        [p0 * (1 - r0), -p1 * r0, r0 * (1 - r0), -r0 * r1],
        [p0 * r1, p1 * (1 - r1), -r0 * r1, r1 * (1 - r1)],
    ])


@dataclass(frozen=True)
class MatrixAdjudication:
    """Entrywise comparison of the two closed-form candidates against the
    enumeration oracle over random distributions."""

    metric: Metric
    trials: int
    seed: int
    corrected_max_dev: float
    sign_slipped_max_dev: float
    entry_max_dev: tuple  # 4x4 max |slipped - oracle| per entry

    @property
    def deviating_entries(self) -> tuple[tuple[int, int], ...]:
        """1-based lower-triangle entries where the slipped form deviates."""
        out = []
        for i in range(4):
            for j in range(i + 1):
                if self.entry_max_dev[i][j] > 1e-9:
                    out.append((i + 1, j + 1))
        return tuple(out)


def adjudicate_matrix(metric: Metric, trials: int, seed: int) -> MatrixAdjudication:
    """Compare covariance closed forms against the oracle.

    For `trials` Dirichlet-random labeled distributions, the corrected
    conditional-rate form must match exact_moments entrywise (<= 1e-12),
    while the sign-slipped variant deviates at entries (2,1) and (4,1)
    whenever the event masses of the two groups differ.
    """
    metric = Metric(metric)
    if metric not in (Metric.CA1, Metric.CA0, Metric.CU1, Metric.CU0):
        raise ValueError(f"adjudication applies to conditional rates, not {metric}")
    corrected_max = 0.0
    slipped_max = 0.0
    entry_max = np.zeros((4, 4))
    for t in range(trials):
        flat = substream(seed, t).dirichlet(np.ones(8))
        dist = CellDistribution.from_flat(flat.tolist(), has_labels=True)
        moments, oracle = exact_moments(dist, metric)
        corrected = closed_form_covariance(metric, moments).matrix
        slipped = _conditional_rate_covariance_sign_slipped(moments)
        corrected_max = max(corrected_max, float(np.abs(corrected - oracle.matrix).max()))
        dev = np.abs(slipped - oracle.matrix)
        slipped_max = max(slipped_max, float(dev.max()))
        entry_max = np.maximum(entry_max, dev)
    return MatrixAdjudication(
        metric=metric,
        trials=trials,
        seed=seed,
        corrected_max_dev=corrected_max,
        sign_slipped_max_dev=slipped_max,
        entry_max_dev=tuple(tuple(float(v) for v in row) for row in entry_max),
    )


def default_scenario(metric: Metric) -> CellDistribution:
    """Benchmark distributions for the validate subcommands.

    The DI scenario has group share 0.4 and positive rates (0.3, 0.5), a
    population ratio of 0.6. The labeled scenario combines the same group
    share with base rates (0.4, 0.5) and within-label positive prediction
    rates chosen away from parity so that no ratio degenerates to 1.
    """
    metric = Metric(metric)
    if metric is Metric.DI:
        return CellDistribution.from_unlabeled(
            [[0.28, 0.30], [0.12, 0.30]]  # [g][s]
        )
    pi = (0.4, 0.6)
    base = (0.4, 0.5)  # P(Y=1 | S=s)
    tpr = (0.55, 0.75)  # P(g=1 | Y=1, S=s)
    fpr = (0.25, 0.30)  # P(g=1 | Y=0, S=s)
    probs = [[[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]
    for s in (0, 1):
        for y in (0, 1):
            p_y = base[s] if y == 1 else 1.0 - base[s]
            p_g1 = tpr[s] if y == 1 else fpr[s]
            probs[1][y][s] = pi[s] * p_y * p_g1
            probs[0][y][s] = pi[s] * p_y * (1.0 - p_g1)
    return CellDistribution.from_labeled(probs)
