"""Objective quality/diversity metrics for embedding distributions.

Implements the Fréchet distance between Gaussians fitted to embedding sets
(audio quality), mean squared pairwise distance within a class (diversity),
and Welch's unequal-variance t-test for comparing per-seed metric runs.
Everything here is pure and operates on float64 internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

#: Ridge added to both covariances when either one is rank-deficient.
COVARIANCE_EPSILON = 1e-6

#: Tolerance for treating a tiny negative distance as an exact zero.
NEGATIVE_CLAMP = 1e-8

SYMMETRY_TOLERANCE = 1e-9


class MetricsError(ValueError):
    """Invalid metric input (too few samples, shape mismatch, ...)."""


@dataclass(frozen=True)
class GaussianStats:
    """Sample mean/covariance of an embedding set, with the sample count."""

    mean: np.ndarray
    covariance: np.ndarray
    n: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise MetricsError(
                f"shape mismatch: mean {mean.shape}, covariance {cov.shape}"
            )
        if self.n < 2:
            raise MetricsError("need n >= 2 samples")
        if np.max(np.abs(cov - cov.T)) > SYMMETRY_TOLERANCE:
            raise MetricsError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def fit_gaussian(samples) -> GaussianStats:
    """Fit mean and unbiased (n-1) covariance to an EmbeddingSet or (n,d) array.

    The covariance is symmetrized as (C + C^T)/2 to absorb float round-off.
    """
    vectors = getattr(samples, "vectors", samples)
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise MetricsError(f"expected a 2-D sample matrix, got shape {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise MetricsError(f"need at least 2 samples to fit a Gaussian, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    cov = (cov + cov.T) / 2.0
    return GaussianStats(mean=mean, covariance=cov, n=n)


def matrix_sqrt_psd(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Negative eigenvalues (numerical noise on PSD inputs) are clamped to 0.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise MetricsError(f"expected a square matrix, got shape {m.shape}")
    if np.max(np.abs(m - m.T)) > SYMMETRY_TOLERANCE:
        raise MetricsError("matrix is not symmetric")
    eigenvalues, eigenvectors = np.linalg.eigh((m + m.T) / 2.0)
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    return (eigenvectors * np.sqrt(eigenvalues)) @ eigenvectors.T


def _is_rank_deficient(cov: np.ndarray) -> bool:
    return bool(np.linalg.matrix_rank(cov, hermitian=True) < cov.shape[0])


def frechet_distance_details(g1: GaussianStats, g2: GaussianStats) -> tuple[float, bool]:
    """Fréchet distance plus whether ridge regularization was applied."""
    if g1.dim != g2.dim:
        raise MetricsError(f"dimension mismatch: {g1.dim} vs {g2.dim}")
    cov1, cov2 = g1.covariance, g2.covariance
    regularized = _is_rank_deficient(cov1) or _is_rank_deficient(cov2)
    if regularized:
        ridge = COVARIANCE_EPSILON * np.eye(g1.dim)
        cov1 = cov1 + ridge
        cov2 = cov2 + ridge

    # sqrt(S1^(1/2) S2 S1^(1/2)) keeps every factor symmetric PSD, unlike
    # the sqrt(S1 S2) form.
    root1 = matrix_sqrt_psd(cov1)
    inner = root1 @ cov2 @ root1
    cross = matrix_sqrt_psd((inner + inner.T) / 2.0)

    delta = g1.mean - g2.mean
    value = float(
        delta @ delta + np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(cross)
    )
    if value < 0.0:
        if value < -NEGATIVE_CLAMP:
            raise MetricsError(
                f"Fréchet distance came out significantly negative ({value:.3e}); "
                "inputs are numerically unusable"
            )
        value = 0.0
    return value, regularized


def frechet_distance(g1: GaussianStats, g2: GaussianStats) -> float:
    """Fréchet distance between two Gaussians: |mu1-mu2|^2 + Tr(S1+S2-2(S1 S2)^(1/2))."""
    return frechet_distance_details(g1, g2)[0]


def pairwise_msd(vectors) -> float:
    """Mean squared Euclidean distance over all unordered sample pairs.

    Uses the centered sum-of-squares identity
    sum_{i<j} |xi-xj|^2 = n * sum_i |ci|^2 - |sum_i ci|^2 (ci centered),
    which is O(n d) and translation-stable.
    """
    x = np.asarray(getattr(vectors, "vectors", vectors), dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 2:
        raise MetricsError(f"need at least 2 vectors, got {n}")
    centered = x - x.mean(axis=0)
    total_sq = float(np.einsum("ij,ij->", centered, centered))
    residual = centered.sum(axis=0)
    pair_sum = n * total_sq - float(residual @ residual)
    return pair_sum / (n * (n - 1) / 2.0)


@dataclass(frozen=True)
class MsdReport:
    per_class: dict[str, float]
    mean_over_classes: float
    pair_counts: dict[str, int]


def msd_report(per_class_vectors: Mapping[str, Sequence]) -> MsdReport:
    """Per-class pairwise MSD and the unweighted mean across classes."""
    if not per_class_vectors:
        raise MetricsError("no classes given")
    per_class = {}
    pair_counts = {}
    for name, vectors in per_class_vectors.items():
        x = np.asarray(getattr(vectors, "vectors", vectors), dtype=np.float64)
        if len(x) < 2:
            raise MetricsError(f"class {name!r} has {len(x)} vectors; need >= 2")
        per_class[name] = pairwise_msd(x)
        pair_counts[name] = len(x) * (len(x) - 1) // 2
    mean = sum(per_class.values()) / len(per_class)
    return MsdReport(per_class=per_class, mean_over_classes=mean, pair_counts=pair_counts)


# ---------------------------------------------------------------------------
# Welch's t-test with a self-contained Student-t CDF.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: float
    p_two_sided: float


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    # Modified Lentz evaluation of the continued fraction for I_x(a, b).
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise MetricsError(f"incomplete beta failed to converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if not 0.0 <= x <= 1.0:
        raise MetricsError(f"x must be in [0, 1], got {x}")
    if a <= 0.0 or b <= 0.0:
        raise MetricsError("a and b must be positive")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    """CDF of Student's t distribution with df > 0 degrees of freedom."""
    if df <= 0.0:
        raise MetricsError(f"df must be positive, got {df}")
    if t == 0.0:
        return 0.5
    x = df / (df + t * t)
    tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x)
    return 1.0 - tail if t > 0.0 else tail


def welch_ttest(a, b) -> TTestResult:
    """Welch's unequal-variance t-test with a two-sided p-value.

    Degrees of freedom follow Welch-Satterthwaite. Raises MetricsError when
    both samples have zero variance (the statistic is undefined).
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise MetricsError(f"need >= 2 samples per side, got {a.size} and {b.size}")
    var_a = float(a.var(ddof=1))
    var_b = float(b.var(ddof=1))
    if var_a == 0.0 and var_b == 0.0:
        raise MetricsError("both samples have zero variance; t statistic undefined")
    sa, sb = var_a / a.size, var_b / b.size
    t = float((a.mean() - b.mean()) / math.sqrt(sa + sb))
    df = (sa + sb) ** 2 / (sa**2 / (a.size - 1) + sb**2 / (b.size - 1))
    # Two-sided p collapses to a single incomplete-beta evaluation.
    p = regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t)) if t != 0.0 else 1.0
    p = min(max(p, math.nextafter(0.0, 1.0)), 1.0)
    return TTestResult(t=t, df=float(df), p_two_sided=p)
