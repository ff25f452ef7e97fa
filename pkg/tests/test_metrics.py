"""Metric estimators: tabulation, closed forms, dualities, consistency."""

import numpy as np
import pytest

from fairaudit.delta import MomentVector, ratio_gradient, sandwich_variance
from fairaudit.errors import (
    DegenerateDenominator,
    EmptyInput,
    LabelsMissing,
    MixedLabelPresence,
    UnknownReferenceGroup,
)
from fairaudit.metrics import (
    AuditRecord,
    CellCounts,
    Metric,
    closed_form_covariance,
    conditional_rate_covariance,
    count_cells,
    estimate_ca,
    estimate_cu,
    estimate_di,
    estimate_di_true,
    estimate_metric,
    indicator_coordinates,
    pairwise_audits,
    parity_ratio_covariance,
    statistical_parity_gap,
    test_disparate_impact,
)
from fairaudit.validation import substream


def empirical_indicator_covariance(cells: CellCounts, metric: Metric) -> np.ndarray:
    """Sample covariance (1/n normalization) of the materialized n x 4
    indicator vectors; the oracle the closed forms are checked against."""
    coords = indicator_coordinates(metric)
    rows = []
    for (g, y, s), count in cells.atoms():
        indicator = [1.0 if predicate(g, y, s) else 0.0 for predicate in coords]
        rows.extend([indicator] * count)
    z = np.array(rows)
    centered = z - z.mean(axis=0)
    return centered.T @ centered / len(z)


def random_labeled_cells(rng, low=1, high=60) -> CellCounts:
    return CellCounts.from_flat(rng.integers(low, high, size=8).tolist(), True)


class TestCountCells:
    def test_direct_tabulation(self):
        records = [AuditRecord(1, 0), AuditRecord(0, 0), AuditRecord(1, 1)]
        cells = count_cells(records)
        assert not cells.has_labels
        assert cells.n == 3
        assert cells.n_gs(1, 0) == 1
        assert cells.n_gs(0, 0) == 1
        assert cells.n_gs(1, 1) == 1
        assert cells.n_gs(0, 1) == 0

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            count_cells([])

    def test_exhaustive_labeled_cells(self):
        records = [
            AuditRecord(prediction=g, group=s, label=y)
            for g in (0, 1) for y in (0, 1) for s in (0, 1)
        ]
        cells = count_cells(records)
        assert cells.n == 8
        for g in (0, 1):
            for y in (0, 1):
                for s in (0, 1):
                    assert cells.n_gys(g, y, s) == 1

    def test_mixed_label_presence(self):
        with pytest.raises(MixedLabelPresence):
            count_cells([AuditRecord(1, 0, label=1), AuditRecord(0, 1)])
        with pytest.raises(MixedLabelPresence):
            count_cells([AuditRecord(1, 0), AuditRecord(0, 1, label=0)])

    def test_label_access_guarded(self):
        cells = count_cells([AuditRecord(1, 0), AuditRecord(0, 1)])
        with pytest.raises(LabelsMissing):
            cells.n_gys(1, 0, 0)
        with pytest.raises(LabelsMissing):
            cells.coordinate_counts(Metric.CA1)


class TestEstimateDi:
    def test_point_estimate(self):
        # positive rates 2/10 vs 5/10
        cells = CellCounts.from_unlabeled([[8, 5], [2, 5]])
        est = estimate_di(cells, alpha=0.05)
        assert est.point == pytest.approx(0.4, rel=1e-14)
        assert est.ci.lower <= est.point <= est.ci.upper

    def test_statistical_parity_means_one(self):
        cells = CellCounts.from_unlabeled([[7, 7], [3, 3]])
        assert estimate_di(cells).point == pytest.approx(1.0, rel=1e-14)

    def test_degenerate_cells(self):
        with pytest.raises(DegenerateDenominator):
            estimate_di(CellCounts.from_unlabeled([[10, 10], [0, 0]]))  # no positives in S=1
        with pytest.raises(DegenerateDenominator):
            estimate_di(CellCounts.from_unlabeled([[0, 10], [0, 5]]))  # empty group 0

    def test_small_cell_warning(self):
        cells = CellCounts.from_unlabeled([[8, 5], [2, 5]])
        assert "SMALL_CELL" in estimate_di(cells).warnings
        big = CellCounts.from_unlabeled([[80, 50], [40, 50]])
        assert estimate_di(big).warnings == ()

    def test_never_reads_labels(self):
        """Two tables with the same (g, s) margins but different label
        splits produce identical di estimates."""
        rng = np.random.default_rng(5)
        n_gs = rng.integers(5, 40, size=(2, 2))
        k = np.array([[rng.integers(0, n_gs[g][s] + 1) for s in (0, 1)] for g in (0, 1)])
        a = CellCounts.from_labeled(
            [[[int(k[g][s]) for s in (0, 1)],
              [int(n_gs[g][s] - k[g][s]) for s in (0, 1)]] for g in (0, 1)]
        )
        b = CellCounts.from_labeled(
            [[[int(n_gs[g][s]) for s in (0, 1)], [0, 0]] for g in (0, 1)]
        )
        ea, eb = estimate_di(a), estimate_di(b)
        assert (ea.point, ea.sigma) == (eb.point, eb.sigma)

    def test_labels_equal_predictions_match_di(self):
        """di-true on a table whose labels replicate the predictions equals di."""
        rng = np.random.default_rng(11)
        counts_gs = rng.integers(10, 50, size=4)
        flat = []
        for g in (0, 1):
            for y in (0, 1):
                for s in (0, 1):
                    flat.append(int(counts_gs[2 * g + s]) if y == g else 0)
        cells = CellCounts.from_flat(flat, True)
        di = estimate_di(cells)
        di_true = estimate_di_true(cells)
        assert di.point == di_true.point
        assert di.sigma == di_true.sigma

    def test_di_true_never_reads_predictions(self):
        a = CellCounts.from_flat([5, 6, 7, 8, 9, 10, 11, 12], True)
        # move all prediction mass to g=0 while keeping (y, s) margins
        b = CellCounts.from_flat([14, 16, 18, 20, 0, 0, 0, 0], True)
        ea, eb = estimate_di_true(a), estimate_di_true(b)
        assert (ea.point, ea.sigma) == (eb.point, eb.sigma)


class TestEstimateCaCu:
    def test_equal_conditional_rates_mean_one(self):
        # identical classifier behavior and base rates in both groups
        flat = []
        for g in (0, 1):
            for y in (0, 1):
                for s in (0, 1):
                    # P(g=1|y=1)=0.8, P(g=1|y=0)=0.2, 50 per (y,s)
                    n_ys = 50
                    p = 0.8 if y == 1 else 0.2
                    flat.append(int(n_ys * (p if g == 1 else 1 - p)))
        cells = CellCounts.from_flat(flat, True)
        assert estimate_ca(cells, outcome=1).point == pytest.approx(1.0, rel=1e-14)
        assert estimate_ca(cells, outcome=0).point == pytest.approx(1.0, rel=1e-14)

    def test_cu_direct_values(self):
        # n[1][1][0]=3, n[1][.][0]=6, n[1][1][1]=4, n[1][.][1]=8 -> 1.0
        cells = CellCounts.from_labeled(
            [[[5, 5], [5, 5]], [[3, 4], [3, 4]]]  # [g][y][s]
        )
        assert estimate_cu(cells, outcome=1).point == pytest.approx(1.0, rel=1e-14)
        # n[1][1][0]=2, n[1][.][0]=8, n[1][1][1]=6, n[1][.][1]=8 -> 1/3
        cells = CellCounts.from_labeled(
            [[[5, 5], [5, 5]], [[6, 2], [2, 6]]]
        )
        assert estimate_cu(cells, outcome=1).point == pytest.approx(1 / 3, rel=1e-14)

    def test_perfect_classifier_cu_is_one(self):
        cells = CellCounts.from_labeled(
            [[[40, 35], [0, 0]], [[0, 0], [10, 15]]]  # predictions == labels
        )
        assert estimate_cu(cells, outcome=1).point == pytest.approx(1.0)
        assert estimate_cu(cells, outcome=0).point == pytest.approx(1.0)

    def test_labels_required(self):
        cells = CellCounts.from_unlabeled([[8, 5], [2, 5]])
        for fn in (lambda: estimate_ca(cells, 1), lambda: estimate_cu(cells, 0),
                   lambda: estimate_di_true(cells)):
            with pytest.raises(LabelsMissing):
                fn()

    def test_outcome_validated(self):
        cells = CellCounts.from_flat([5, 6, 7, 8, 9, 10, 11, 12], True)
        with pytest.raises(ValueError):
            estimate_ca(cells, outcome=2)

    def test_label_swap_duality(self):
        """ca at outcome 0 equals ca at outcome 1 on the bit-flipped table."""
        rng = np.random.default_rng(23)
        for _ in range(25):
            cells = random_labeled_cells(rng)
            flipped = CellCounts.from_labeled(
                [[[cells.n_gys(1 - g, 1 - y, s) for s in (0, 1)] for y in (0, 1)]
                 for g in (0, 1)]
            )
            a = estimate_ca(cells, outcome=0)
            b = estimate_ca(flipped, outcome=1)
            assert a.point == pytest.approx(b.point, rel=1e-14)
            assert a.sigma == pytest.approx(b.sigma, rel=1e-12)

    def test_group_swap_reciprocal(self):
        """Swapping the group coding inverts every ratio point estimate."""
        rng = np.random.default_rng(29)
        for _ in range(25):
            cells = random_labeled_cells(rng)
            swapped = CellCounts.from_labeled(
                [[[cells.n_gys(g, y, 1 - s) for s in (0, 1)] for y in (0, 1)]
                 for g in (0, 1)]
            )
            for metric in Metric:
                a = estimate_metric(metric, cells)
                b = estimate_metric(metric, swapped)
                assert a.point == pytest.approx(1.0 / b.point, rel=1e-12)


class TestClosedFormAgainstEmpirical:
    def test_parity_family_equivalence(self):
        """Plug-in closed-form sigma^2 == empirical indicator covariance
        sigma^2 on random tables (spot check; full scale in acceptance)."""
        rng = np.random.default_rng(101)
        for _ in range(60):
            cells = random_labeled_cells(rng)
            for metric in (Metric.DI, Metric.DI_TRUE):
                counts = cells.coordinate_counts(metric)
                m = MomentVector(*(c / cells.n for c in counts))
                g = ratio_gradient(m)
                closed = sandwich_variance(g, closed_form_covariance(metric, m))
                empirical = float(g.as_array() @ empirical_indicator_covariance(cells, metric)
                                  @ g.as_array())
                assert closed == pytest.approx(empirical, rel=1e-10)

    def test_conditional_family_equivalence(self):
        rng = np.random.default_rng(103)
        for _ in range(60):
            cells = random_labeled_cells(rng)
            for metric in (Metric.CA1, Metric.CA0, Metric.CU1, Metric.CU0):
                counts = cells.coordinate_counts(metric)
                m = MomentVector(*(c / cells.n for c in counts))
                g = ratio_gradient(m)
                closed = sandwich_variance(g, closed_form_covariance(metric, m))
                empirical = float(g.as_array() @ empirical_indicator_covariance(cells, metric)
                                  @ g.as_array())
                assert closed == pytest.approx(empirical, rel=1e-10)

    def test_family_guards(self):
        with pytest.raises(ValueError):
            parity_ratio_covariance(MomentVector(0.2, 0.3, 0.4, 0.4))  # margins != 1
        with pytest.raises(ValueError):
            conditional_rate_covariance(MomentVector(0.5, 0.2, 0.3, 0.4))  # event > condition


class TestConsistency:
    def test_estimator_concentrates_at_large_n(self):
        """|T_n - DI| below 5 sigma/sqrt(n) in at least 99% of replicates."""
        probs = np.array([0.28, 0.30, 0.12, 0.30])  # g0s0, g0s1, g1s0, g1s1
        true_di = (0.12 / 0.40) / (0.30 / 0.60)
        n = 100_000
        hits = 0
        for r in range(200):
            counts = substream(4242, r).multinomial(n, probs)
            cells = CellCounts.from_flat(counts.tolist(), False)
            est = estimate_di(cells)
            if abs(est.point - true_di) < 5 * est.sigma / np.sqrt(n):
                hits += 1
        assert hits >= 198


class TestConcurrency:
    def test_estimators_thread_safe(self):
        """Same inputs from many threads give exactly the sequential result."""
        from concurrent.futures import ThreadPoolExecutor

        rng = np.random.default_rng(61)
        tables = [random_labeled_cells(rng) for _ in range(40)]
        jobs = [(metric, cells) for cells in tables for metric in Metric]
        sequential = [estimate_metric(m, c) for m, c in jobs]
        with ThreadPoolExecutor(max_workers=8) as pool:
            threaded = list(pool.map(lambda job: estimate_metric(*job), jobs))
        for a, b in zip(sequential, threaded):
            assert (a.point, a.sigma, a.ci.lower, a.ci.upper) \
                == (b.point, b.sigma, b.ci.lower, b.ci.upper)


class TestParityGapAndTest:
    def test_equal_rates(self):
        cells = CellCounts.from_unlabeled([[7, 7], [3, 3]])
        assert statistical_parity_gap(cells) == 0.0

    def test_direct_subtraction(self):
        cells = CellCounts.from_unlabeled([[8, 5], [2, 5]])
        assert statistical_parity_gap(cells) == pytest.approx(-0.3, rel=1e-14)

    def test_empty_group(self):
        with pytest.raises(DegenerateDenominator):
            statistical_parity_gap(CellCounts.from_unlabeled([[8, 0], [2, 0]]))

    def test_threshold_test_delegates(self):
        cells = CellCounts.from_unlabeled([[800, 500], [200, 500]])
        est = estimate_di(cells)
        res = test_disparate_impact(est, beta=0.8, alpha=0.05)
        assert res.beta == 0.8
        assert res.statistic == pytest.approx(
            np.sqrt(est.n) / est.sigma * (est.point - 0.8), rel=1e-12)

    def test_boundary_p_half(self):
        cells = CellCounts.from_unlabeled([[600, 500], [400, 500]])
        est = estimate_di(cells)
        res = test_disparate_impact(est, beta=est.point, alpha=0.05)
        assert res.p_value == pytest.approx(0.5, abs=1e-12)
        assert not res.reject_h0


class TestPairwiseAudits:
    def test_two_groups_reduce_to_estimate_di(self):
        records = [(1, None, "A")] * 2 + [(0, None, "A")] * 8 \
            + [(1, None, "R")] * 5 + [(0, None, "R")] * 5
        [(group, est)] = pairwise_audits(records, reference_group="R")
        direct = estimate_di(CellCounts.from_unlabeled([[8, 5], [2, 5]]))
        assert group == "A"
        assert est.point == direct.point
        assert est.sigma == direct.sigma

    def test_three_identical_groups(self):
        records = []
        for name in ("A", "B", "C"):
            records += [(1, None, name)] * 3 + [(0, None, name)] * 7
        results = pairwise_audits(records, reference_group="C")
        assert [g for g, _ in results] == ["A", "B"]
        assert all(est.point == pytest.approx(1.0) for _, est in results)

    def test_reported_ratios(self):
        records = [(1, None, "A")] * 2 + [(0, None, "A")] * 8 \
            + [(1, None, "B")] * 5 + [(0, None, "B")] * 5 \
            + [(1, None, "C")] * 5 + [(0, None, "C")] * 5
        results = pairwise_audits(records, reference_group="C")
        assert results[0][0] == "A" and results[0][1].point == pytest.approx(0.4)
        assert results[1][0] == "B" and results[1][1].point == pytest.approx(1.0)

    def test_unknown_reference(self):
        with pytest.raises(UnknownReferenceGroup):
            pairwise_audits([(1, None, "A"), (0, None, "B")], reference_group="Z")

    def test_single_group_rejected(self):
        with pytest.raises(EmptyInput):
            pairwise_audits([(1, None, "A"), (0, None, "A")], reference_group="A")
