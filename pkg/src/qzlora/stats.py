"""Condition statistics: aggregates, pairwise net-advantage matrix, k-sweep
curves, and Pearson correlation with exact t-distribution p-values.

Everything here is pure Python with index-order summation so results are
bitwise reproducible across platforms, parallelism settings, and language
ports. The t-distribution tail is computed from the regularized incomplete
beta function via Lentz's continued fraction (documented inline), and t
quantiles by bisection on that CDF.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import DegenerateInput, EmptyGroup, MissingKColumn, NoComparableTopics
from .rng import SplitMix64, sample_without_replacement


# --- descriptive helpers (index-order sums) -----------------------------------

def mean(values: Sequence[float]) -> float:
    if not values:
        raise EmptyGroup("mean of empty sequence")
    total = 0.0
    for v in values:
        total += v
    return total / len(values)


def median(values: Sequence[float]) -> float:
    if not values:
        raise EmptyGroup("median of empty sequence")
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    if n % 2:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2.0


def sample_std(values: Sequence[float]) -> float | None:
    """Sample (n-1) standard deviation; None for fewer than two values."""
    n = len(values)
    if n < 2:
        return None
    m = mean(values)
    total = 0.0
    for v in values:
        total += (v - m) ** 2
    return math.sqrt(total / (n - 1))


def quantile(values: Sequence[float], q: float) -> float:
    """Linear-interpolation quantile (the common 'linear' definition):
    position (n-1)*q between order statistics."""
    if not values:
        raise EmptyGroup("quantile of empty sequence")
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must be in [0, 1]")
    ordered = sorted(values)
    pos = (len(ordered) - 1) * q
    lower = math.floor(pos)
    frac = pos - lower
    if lower + 1 >= len(ordered):
        return ordered[-1]
    return ordered[lower] + frac * (ordered[lower + 1] - ordered[lower])


# --- condition aggregates ------------------------------------------------------

@dataclass(frozen=True)
class ConditionAggregate:
    mean: float
    median: float
    std: float | None  # sample (n-1); None when a single topic contributes
    min: float
    max: float
    n: int


def aggregate_condition(groups: Mapping[str, Sequence[float]]) -> dict[str, ConditionAggregate]:
    """Six summary statistics per condition over per-topic mean accuracies.

    Values are fractions in [0, 1]; any percent formatting belongs to the
    report boundary.
    """
    out: dict[str, ConditionAggregate] = {}
    for label in groups:
        values = list(groups[label])
        if not values:
            raise EmptyGroup(label)
        out[label] = ConditionAggregate(
            mean=mean(values),
            median=median(values),
            std=sample_std(values),
            min=min(values),
            max=max(values),
            n=len(values),
        )
    return out


# --- net-advantage matrix ------------------------------------------------------

@dataclass(frozen=True)
class NetAdvantageMatrix:
    conditions: tuple[str, ...]
    cells: tuple[tuple[int, ...], ...]  # cells[i][j] = wins(i over j) - wins(j over i)
    excluded: tuple[tuple[int, ...], ...]  # topics dropped pairwise for missing cells


def net_advantage(
    table: Mapping[str, Mapping[str, float]],
    conditions: Sequence[str],
) -> NetAdvantageMatrix:
    """Signed per-pair topic win counts; ties contribute zero. Topics missing
    either cell of a pair are excluded for that pair and counted."""
    topics = sorted(table)
    if not topics:
        raise NoComparableTopics("no topics in table")
    size = len(conditions)
    cells = [[0] * size for _ in range(size)]
    excluded = [[0] * size for _ in range(size)]
    for i in range(size):
        for j in range(i + 1, size):
            wins_i = 0
            wins_j = 0
            dropped = 0
            for topic in topics:
                row = table[topic]
                a = row.get(conditions[i])
                b = row.get(conditions[j])
                if a is None or b is None:
                    dropped += 1
                    continue
                if a > b:
                    wins_i += 1
                elif b > a:
                    wins_j += 1
            if dropped == len(topics):
                raise NoComparableTopics(f"{conditions[i]} vs {conditions[j]}")
            cells[i][j] = wins_i - wins_j
            cells[j][i] = wins_j - wins_i
            excluded[i][j] = excluded[j][i] = dropped
    return NetAdvantageMatrix(
        conditions=tuple(conditions),
        cells=tuple(tuple(row) for row in cells),
        excluded=tuple(tuple(row) for row in excluded),
    )


# --- t distribution via the regularized incomplete beta -----------------------

_CF_MAX_ITER = 300
_CF_EPS = 3e-16
_CF_TINY = 1e-300


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Lentz's modified continued fraction for I_x(a, b):

        I_x(a,b) = front * cf / a,  front = x^a (1-x)^b / (a B(a,b))

    with the standard even/odd coefficients
        d_{2m}   =  m (b - m) x / ((a + 2m - 1)(a + 2m))
        d_{2m+1} = -(a + m)(a + b + m) x / ((a + 2m)(a + 2m + 1))
    """
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        coeff = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + coeff * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + coeff / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        coeff = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + coeff * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + coeff / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), switching to the symmetric form for fast convergence."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def t_survival(t: float, dof: int) -> float:
    """P(T >= t) for Student's t with dof degrees of freedom, t >= 0:
    0.5 * I_{dof/(dof+t^2)}(dof/2, 1/2)."""
    if t < 0:
        raise ValueError("t_survival expects t >= 0")
    if dof < 1:
        raise ValueError("dof must be >= 1")
    x = dof / (dof + t * t)
    return 0.5 * regularized_incomplete_beta(dof / 2.0, 0.5, x)


def t_two_sided_p(t: float, dof: int) -> float:
    return min(1.0, 2.0 * t_survival(abs(t), dof))


def t_quantile(p: float, dof: int) -> float:
    """Inverse CDF for p in [0.5, 1), by bisection on the survival function."""
    if not 0.5 <= p < 1.0:
        raise ValueError("p must be in [0.5, 1)")
    target = 1.0 - p  # survival mass to the right of the quantile
    lo, hi = 0.0, 1.0
    while t_survival(hi, dof) > target:
        hi *= 2.0
        if hi > 1e12:
            break
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_survival(mid, dof) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


# --- k-sweep -------------------------------------------------------------------

DEFAULT_KS = (2, 5, 10, 12, 15)


@dataclass(frozen=True)
class KSweepPoint:
    k: int
    mean: float
    ci_low: float
    ci_high: float
    n: int


def choose_sweep_subset(topic_ids: Sequence[str], size: int, seed: int) -> list[str]:
    """Seeded subset of topics for the sweep; the membership list is part of
    the report so the draw is reproducible."""
    ordered = sorted(topic_ids)
    if size >= len(ordered):
        return ordered
    rng = SplitMix64(seed)
    picked = sample_without_replacement(len(ordered), size, rng)
    return sorted(ordered[i] for i in picked)


def k_sweep(
    table: Mapping[str, Mapping[int, float]],
    ks: Sequence[int] = DEFAULT_KS,
    subset: Sequence[str] | None = None,
) -> list[KSweepPoint]:
    """Per-k mean accuracy over the topic subset with a 95% t-interval."""
    topics = sorted(subset) if subset is not None else sorted(table)
    points = []
    for k in ks:
        values = [table[t][k] for t in topics if t in table and k in table[t]]
        if not values:
            raise MissingKColumn(str(k))
        m = mean(values)
        std = sample_std(values)
        if std is None or std == 0.0:
            half = 0.0
        else:
            half = t_quantile(0.975, len(values) - 1) * std / math.sqrt(len(values))
        points.append(KSweepPoint(k=k, mean=m, ci_low=m - half, ci_high=m + half, n=len(values)))
    return points


# --- correlation ---------------------------------------------------------------

@dataclass(frozen=True)
class CorrelationResult:
    r: float
    r_squared: float
    slope: float
    intercept: float
    n: int
    p_value: float


def correlate(xs: Sequence[float], ys: Sequence[float]) -> CorrelationResult:
    """Pearson r, least-squares slope/intercept, and the two-sided p-value
    from t = r sqrt((n-2)/(1-r^2)) with n-2 degrees of freedom."""
    n = len(xs)
    if n != len(ys):
        raise ValueError("series lengths differ")
    if n < 3:
        raise DegenerateInput(f"need at least 3 points, got {n}")
    if min(xs) == max(xs) or min(ys) == max(ys):
        raise DegenerateInput("constant series")
    mx = mean(xs)
    my = mean(ys)
    sxx = 0.0
    syy = 0.0
    sxy = 0.0
    for x, y in zip(xs, ys):
        dx = x - mx
        dy = y - my
        sxx += dx * dx
        syy += dy * dy
        sxy += dx * dy
    r = sxy / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    slope = sxy / sxx
    intercept = my - slope * mx
    r_squared = r * r
    if 1.0 - r_squared <= 1e-15:
        p_value = 0.0
    else:
        t = abs(r) * math.sqrt((n - 2) / (1.0 - r_squared))
        p_value = t_two_sided_p(t, n - 2)
    return CorrelationResult(r=r, r_squared=r_squared, slope=slope, intercept=intercept,
                             n=n, p_value=p_value)


def popularity_correlation(
    baseline_accuracies: Sequence[float],
    image_counts: Sequence[int],
) -> CorrelationResult:
    """Correlation between per-topic corpus size and baseline accuracy;
    counts are cast to reals and the computation delegates to correlate."""
    return correlate([float(c) for c in image_counts], list(baseline_accuracies))
