"""Welch t-test, one-way ANOVA and proportion intervals, in pure Python.

p-values go through the regularized incomplete beta function, evaluated
with the modified Lentz continued fraction.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from statistics import NormalDist

from .errors import NumericError, StatsError

_FPMIN = 1e-300
BETA_TOL = 1e-12
BETA_MAX_ITER = 300


def _beta_cf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, BETA_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _FPMIN if abs(d) < _FPMIN else d
        c = 1.0 + aa / c
        c = _FPMIN if abs(c) < _FPMIN else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _FPMIN if abs(d) < _FPMIN else d
        c = 1.0 + aa / c
        c = _FPMIN if abs(c) < _FPMIN else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < BETA_TOL:
            return h
    raise NumericError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if not (a > 0 and b > 0):
        raise StatsError(f"incomplete beta needs a, b > 0, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise StatsError(f"incomplete beta needs 0 <= x <= 1, got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        value = front * _beta_cf(a, b, x) / a
    else:
        value = 1.0 - front * _beta_cf(b, a, 1.0 - x) / b
    return min(1.0, max(0.0, value))


def t_cdf(t: float, dof: float) -> float:
    tail = 0.5 * regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))
    return 1.0 - tail if t > 0 else tail


def t_two_sided_p(t: float, dof: float) -> float:
    if t == 0:
        return 1.0
    return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))


def f_survival(f: float, df1: float, df2: float) -> float:
    """P(F > f) for the F(df1, df2) distribution."""
    if f <= 0:
        return 1.0
    return regularized_incomplete_beta(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f))


def _mean_var(sample):
    xs = [float(v) for v in sample]
    n = len(xs)
    mean = math.fsum(xs) / n
    var = math.fsum((v - mean) ** 2 for v in xs) / (n - 1)
    return n, mean, var


@dataclass
class TTestResult:
    statistic: float
    degrees_of_freedom: float
    p_value: float

    def to_dict(self):
        return asdict(self)


@dataclass
class AnovaResult:
    f_statistic: float
    df_between: int
    df_within: int
    p_value: float

    def to_dict(self):
        return asdict(self)


@dataclass
class ConfidenceInterval:
    point_estimate: float
    lower: float
    upper: float
    confidence_level: float = 0.95

    @property
    def half_width(self) -> float:
        return (self.upper - self.lower) / 2.0

    def to_dict(self):
        return asdict(self)


def welch_t_test(sample_a, sample_b) -> TTestResult:
    if len(sample_a) < 2 or len(sample_b) < 2:
        raise StatsError("each sample needs at least 2 values")
    na, ma, va = _mean_var(sample_a)
    nb, mb, vb = _mean_var(sample_b)
    sa, sb = va / na, vb / nb
    if sa + sb == 0:
        raise StatsError("both samples have zero variance")
    t = (ma - mb) / math.sqrt(sa + sb)
    dof = (sa + sb) ** 2 / (sa ** 2 / (na - 1) + sb ** 2 / (nb - 1))
    return TTestResult(t, dof, t_two_sided_p(t, dof))


def pooled_t_test(sample_a, sample_b) -> TTestResult:
    """Equal-variance two-sample t-test."""
    if len(sample_a) < 2 or len(sample_b) < 2:
        raise StatsError("each sample needs at least 2 values")
    na, ma, va = _mean_var(sample_a)
    nb, mb, vb = _mean_var(sample_b)
    dof = na + nb - 2
    pooled = ((na - 1) * va + (nb - 1) * vb) / dof
    if pooled == 0:
        raise StatsError("both samples have zero variance")
    t = (ma - mb) / math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    return TTestResult(t, float(dof), t_two_sided_p(t, dof))


def one_way_anova(groups) -> AnovaResult:
    if len(groups) < 2:
        raise StatsError("ANOVA needs at least 2 groups")
    if any(len(g) < 2 for g in groups):
        raise StatsError("each ANOVA group needs at least 2 values")
    stats = [_mean_var(g) for g in groups]
    n_total = sum(n for n, _, _ in stats)
    grand = math.fsum(n * m for n, m, _ in stats) / n_total
    ss_between = math.fsum(n * (m - grand) ** 2 for n, m, _ in stats)
    ss_within = math.fsum((n - 1) * v for n, _, v in stats)
    df_between = len(groups) - 1
    df_within = n_total - len(groups)
    if ss_within == 0:
        raise StatsError("within-group variance is zero")
    f = (ss_between / df_between) / (ss_within / df_within)
    return AnovaResult(f, df_between, df_within, f_survival(f, df_between, df_within))


def proportion_ci(successes: int, n: int, level: float = 0.95) -> ConfidenceInterval:
    """Wald interval p ± z * sqrt(p(1-p)/n), clamped to [0, 1]."""
    if n < 1 or not 0 <= successes <= n:
        raise StatsError(f"need 0 <= successes <= n and n >= 1, got {successes}/{n}")
    if not 0 < level < 1:
        raise StatsError(f"confidence level must be in (0, 1), got {level}")
    p = successes / n
    z = NormalDist().inv_cdf(0.5 + level / 2.0)
    half = z * math.sqrt(p * (1.0 - p) / n)
    return ConfidenceInterval(p, max(0.0, p - half), min(1.0, p + half), level)


@dataclass
class Comparison:
    significant: bool
    alpha: float
    test: TTestResult

    def to_dict(self):
        return {"significant": self.significant, "alpha": self.alpha, "welch_t_test": self.test.to_dict()}


def compare_models(metric_samples_a, metric_samples_b, alpha: float = 0.05) -> Comparison:
    """Welch test on per-seed metric values; significant when p < alpha."""
    if not 0 < alpha <= 1:
        raise StatsError(f"alpha must be in (0, 1], got {alpha}")
    if list(metric_samples_a) == list(metric_samples_b) and len(metric_samples_a) >= 2:
        # identical runs; defined even when both are constant
        result = TTestResult(0.0, float(2 * len(metric_samples_a) - 2), 1.0)
    else:
        result = welch_t_test(metric_samples_a, metric_samples_b)
    return Comparison(result.p_value < alpha, alpha, result)
