"""Delta-method engine for the four-argument rate ratio.

Everything in this package reduces to one functional of a mean of
4-dimensional indicator vectors:

    phi(x1, x2, x3, x4) = (x1 * x4) / (x2 * x3)

With Z_i an indicator vector whose mean is m and whose covariance is C, the
CLT plus a first-order expansion of phi gives

    sqrt(n) * (phi(Z_bar) - phi(m))  ->  N(0, grad_phi(m)' C grad_phi(m))

so the asymptotic standard deviation is the square root of the sandwich
quadratic form, and a two-sided level-(1 - alpha) interval is

    phi(Z_bar) +/- (sigma / sqrt(n)) * z(1 - alpha/2).

This module owns the functional, its gradient, the quadratic form, the CLT
interval, and the one-sided threshold test; which indicators to average is
the metrics module's business. All operations are pure functions of their
arguments and are safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateDenominator,
    InvalidAlpha,
    NegativeQuadraticForm,
    ZeroSigma,
)
from .gaussian import normal_quantile, normal_sf

#: Quadratic forms above this negative floor are treated as rounding noise
#: and clamped to zero; anything below it is a logic error in the input.
QUADRATIC_FORM_TOLERANCE = 1e-10

#: Tolerance on construction-time invariants of the value types.
_TYPE_TOLERANCE = 1e-10


@dataclass(frozen=True)
class MomentVector:
    """Mean of a 4-dimensional indicator vector.

    Components are joint-event probabilities in [0, 1]; they are not required
    to sum to one (the four events generally overlap or non-exhaust).
    """

    m1: float
    m2: float
    m3: float
    m4: float

    def __post_init__(self) -> None:
        for name, value in self.__dict__.items():
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"moment {name}={value!r} outside [0, 1]")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.m1, self.m2, self.m3, self.m4)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple())


@dataclass(frozen=True)
class CovarianceMatrix:
    """Symmetric 4x4 covariance of an indicator vector.

    Construction enforces symmetry, diagonal entries within [0, 1/4] (the
    variance of an indicator cannot exceed 1/4), and positive semidefiniteness
    up to an eigenvalue floor of -1e-10.
    """

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"covariance must be 4x4, got shape {m.shape}")
        if not np.allclose(m, m.T, rtol=0.0, atol=_TYPE_TOLERANCE):
            raise ValueError("covariance matrix is not symmetric")
        m = (m + m.T) / 2.0
        diag = np.diag(m)
        if np.any(diag < -_TYPE_TOLERANCE) or np.any(diag > 0.25 + _TYPE_TOLERANCE):
            raise ValueError(f"diagonal {diag} outside [0, 0.25]")
        eigenvalues = np.linalg.eigvalsh(m)
        if eigenvalues.min() < -QUADRATIC_FORM_TOLERANCE:
            raise ValueError(
                f"covariance not PSD: smallest eigenvalue {eigenvalues.min():.3e}"
            )
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_rows(cls, rows) -> "CovarianceMatrix":
        return cls(np.array(rows, dtype=float))

    def entry(self, i: int, j: int) -> float:
        """Entry by 1-based indices, matching the usual matrix notation."""
        return float(self.matrix[i - 1, j - 1])


@dataclass(frozen=True)
class GradientVector:
    """Gradient of the rate-ratio functional at a moment vector."""

    g1: float
    g2: float
    g3: float
    g4: float

    def __post_init__(self) -> None:
        for name, value in self.__dict__.items():
            if not math.isfinite(value):
                raise ValueError(f"gradient component {name}={value!r} not finite")

    def as_array(self) -> np.ndarray:
        return np.array((self.g1, self.g2, self.g3, self.g4))


@dataclass(frozen=True)
class RatioCI:
    """A point estimate with its two-sided CLT confidence interval."""

    point: float
    sigma: float
    n: int
    alpha: float
    lower: float
    upper: float

    def __post_init__(self) -> None:
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma!r}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n!r}")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidAlpha(f"alpha must be in (0, 1), got {self.alpha!r}")
        if not self.lower <= self.point <= self.upper:
            raise ValueError(
                f"interval [{self.lower}, {self.upper}] does not bracket {self.point}"
            )
        width = 2.0 * (self.sigma / math.sqrt(self.n)) * normal_quantile(1.0 - self.alpha / 2.0)
        if abs((self.upper - self.lower) - width) > 1e-12 * max(1.0, width):
            raise ValueError("interval width inconsistent with sigma, n, and alpha")

    @property
    def half_width(self) -> float:
        return (self.upper - self.lower) / 2.0


@dataclass(frozen=True)
class TestResult:
    """Outcome of the one-sided threshold test.

    The null hypothesis is that the population ratio is at most beta; it is
    rejected when the standardized statistic reaches the upper alpha critical
    value of the standard normal.
    """

    statistic: float
    p_value: float
    reject_h0: bool
    beta: float
    alpha: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value!r} outside [0, 1]")
        if self.reject_h0 != (self.statistic >= normal_quantile(1.0 - self.alpha)):
            raise ValueError("decision inconsistent with statistic and alpha")


def ratio_phi(m: MomentVector) -> float:
    """Evaluate (m1 * m4) / (m2 * m3).

    Raises DegenerateDenominator when m2 * m3 == 0, which signals an empty
    group or an empty conditioning event.
    """
    denominator = m.m2 * m.m3
    if denominator == 0.0:
        raise DegenerateDenominator(
            f"ratio undefined: m2={m.m2!r}, m3={m.m3!r}"
        )
    return (m.m1 * m.m4) / denominator


def ratio_gradient(m: MomentVector) -> GradientVector:
    """Gradient of ratio_phi at m.

    The components are
        ( m4/(m2 m3), -m1 m4/(m2^2 m3), -m1 m4/(m2 m3^2), m1/(m2 m3) )
    and agree with central finite differences of ratio_phi.
    """
    if m.m2 * m.m3 == 0.0:
        raise DegenerateDenominator(
            f"gradient undefined: m2={m.m2!r}, m3={m.m3!r}"
        )
    m1, m2, m3, m4 = m.as_tuple()
    return GradientVector(
        m4 / (m2 * m3),
        -m1 * m4 / (m2 * m2 * m3),
        -m1 * m4 / (m2 * m3 * m3),
        m1 / (m2 * m3),
    )


def sandwich_variance(g: GradientVector, cov: CovarianceMatrix) -> float:
    """Quadratic form g' cov g, the asymptotic variance of the ratio.

    Values within QUADRATIC_FORM_TOLERANCE below zero are rounding noise and
    are clamped to exactly zero; anything lower raises NegativeQuadraticForm.
    """
    vector = g.as_array()
    value = float(vector @ cov.matrix @ vector)
    if value < -QUADRATIC_FORM_TOLERANCE:
        raise NegativeQuadraticForm(
            f"quadratic form {value:.3e} below -{QUADRATIC_FORM_TOLERANCE:g}"
        )
    return max(value, 0.0)


def clt_interval(point: float, sigma: float, n: int, alpha: float) -> RatioCI:
    """Two-sided interval point +/- (sigma/sqrt(n)) * z(1 - alpha/2)."""
    if not 0.0 < alpha < 1.0:
        raise InvalidAlpha(f"alpha must be in (0, 1), got {alpha!r}")
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma!r}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n!r}")
    half_width = (sigma / math.sqrt(n)) * normal_quantile(1.0 - alpha / 2.0)
    return RatioCI(point, sigma, int(n), alpha, point - half_width, point + half_width)


def one_sided_test(point: float, sigma: float, n: int, beta: float, alpha: float) -> TestResult:
    """Test H0: ratio <= beta against H1: ratio > beta.

    The statistic is sqrt(n) * (point - beta) / sigma; H0 is rejected when it
    reaches z(1 - alpha), and the p-value is the upper normal tail at the
    statistic. sigma must be the (plug-in) asymptotic standard deviation.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidAlpha(f"alpha must be in (0, 1), got {alpha!r}")
    if sigma == 0.0:
        raise ZeroSigma("test undefined for sigma = 0 (degenerate sample)")
    if sigma < 0.0:
        raise ValueError(f"sigma must be > 0, got {sigma!r}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n!r}")
    if beta <= 0.0:
        raise ValueError(f"beta must be > 0, got {beta!r}")
    statistic = math.sqrt(n) / sigma * (point - beta)
    return TestResult(
        statistic=statistic,
        p_value=normal_sf(statistic),
        reject_h0=statistic >= normal_quantile(1.0 - alpha),
        beta=beta,
        alpha=alpha,
    )
