import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .exceptions import (DegenerateVarianceError, DomainError,
                         EmptyCohortError, StatsInputError)
from .metrics import METRIC_FIELDS


logger = logging.getLogger(__name__)

SIGNIFICANCE_LEVEL = 0.05
VARIANTS = ('paired', 'welch')


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float
    min: float
    max: float


@dataclass(frozen=True)
class StudySummary:
    n: int
    metrics: dict = field(default_factory=dict)
    single_case: bool = False

    def __getitem__(self, metric):
        return self.metrics[metric]


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    degrees_of_freedom: float
    p_value: float
    variant: str
    mean_difference: float = 0.0
    n: int = 0

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE_LEVEL

    def to_dict(self):
        return {'t': self.t_statistic,
                'df': self.degrees_of_freedom,
                'p': self.p_value,
                'variant': self.variant,
                'significant_at_0_05': self.significant,
                'mean_difference': self.mean_difference,
                'n': self.n,}


def _describe(values):
    n = len(values)
    lo, hi = min(values), max(values)
    # fsum is exactly rounded, so the result does not depend on record order
    mean = min(max(math.fsum(values) / n, lo), hi)
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1)) if n > 1 else 0.0
    return MetricSummary(mean=mean, std=std, min=lo, max=hi)


def summarize(records) -> StudySummary:
    records = list(records)
    if not records:
        raise EmptyCohortError('Cannot summarize an empty cohort')

    fields = list(METRIC_FIELDS)
    if all(r.correction_time_s is not None for r in records):
        fields.append('correction_time_s')

    n = len(records)
    if n == 1:
        logger.warning('Single-case cohort: std reported as 0 by convention')

    metrics = {f: _describe([float(getattr(r, f)) for r in records]) for f in fields}
    return StudySummary(n=n, metrics=metrics, single_case=n == 1)


def t_cdf(t: float, df: float) -> float:
    if not df > 0:
        raise DomainError(f'Degrees of freedom must be > 0, got {df}')
    if math.isnan(t):
        raise DomainError('t is NaN')
    if t == 0:
        return 0.5

    x = df / (df + t * t) if math.isfinite(t) else 0.0
    tail = 0.5 * float(betainc(0.5 * df, 0.5, x))
    return 1.0 - tail if t > 0 else tail


def t_test(x, y, variant: str = 'paired') -> TTestResult:
    if variant not in VARIANTS:
        raise StatsInputError(f'Unknown t-test variant {variant!r}, expected one of {VARIANTS}')

    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()

    if variant == 'paired':
        if len(x) != len(y):
            raise StatsInputError(f'Paired samples differ in length: {len(x)} vs {len(y)}')
        if len(x) < 2:
            raise StatsInputError('Paired t-test needs at least two pairs')

        d = x - y
        n = len(d)
        sd = d.std(ddof=1)
        if sd == 0:
            raise DegenerateVarianceError('All paired differences are equal')

        mean_difference = float(d.mean())
        t = mean_difference / (sd / math.sqrt(n))
        df = float(n - 1)
    else:
        if len(x) < 2 or len(y) < 2:
            raise StatsInputError('Welch t-test needs at least two samples per group')

        n = len(x) + len(y)
        se_x = x.var(ddof=1) / len(x)
        se_y = y.var(ddof=1) / len(y)
        se2 = se_x + se_y
        if se2 == 0:
            raise DegenerateVarianceError('Both samples have zero variance')

        mean_difference = float(x.mean() - y.mean())
        t = mean_difference / math.sqrt(se2)
        df = se2 ** 2 / (se_x ** 2 / (len(x) - 1) + se_y ** 2 / (len(y) - 1))

    p = min(1.0, max(0.0, 2.0 * (1.0 - t_cdf(abs(t), df))))

    return TTestResult(t_statistic=float(t),
                       degrees_of_freedom=float(df),
                       p_value=p,
                       variant=variant,
                       mean_difference=mean_difference,
                       n=n)


def compare_cohorts(records_x, records_y, *, variant: str = 'paired') -> dict:
    """Per-metric t-tests between two cohorts.

    Paired tests match records by ``case_id``. A metric whose test is
    degenerate maps to the reason string instead of a result.
    """
    records_x, records_y = list(records_x), list(records_y)

    if variant == 'paired':
        ids_x = {r.case_id for r in records_x}
        ids_y = {r.case_id for r in records_y}
        if ids_x != ids_y or len(ids_x) != len(records_x) or len(ids_y) != len(records_y):
            raise StatsInputError('Paired comparison needs the same unique case_ids '
                                  f'in both inputs (only in first: {sorted(ids_x - ids_y)}, '
                                  f'only in second: {sorted(ids_y - ids_x)})')
        records_x = sorted(records_x, key=lambda r: r.case_id)
        records_y = sorted(records_y, key=lambda r: r.case_id)

    fields = list(METRIC_FIELDS)
    if all(r.correction_time_s is not None for r in records_x + records_y):
        fields.append('correction_time_s')

    results = dict()
    for metric in fields:
        try:
            results[metric] = t_test([getattr(r, metric) for r in records_x],
                                     [getattr(r, metric) for r in records_y],
                                     variant)
        except DegenerateVarianceError as e:
            logger.warning('t-test on %s skipped: %s', metric, e)
            results[metric] = str(e)

    return results
