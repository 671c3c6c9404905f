import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from joblib import Parallel, delayed

from .exceptions import StatsInputError, VolsegError
from .metrics import CSV_FIELDS, METRIC_FIELDS, MetricsRecord, evaluate_case, restrict_to_slices
from .nifti import read_mask


logger = logging.getLogger(__name__)

ERROR_PREFIX = 'ERROR: '
CASES_FIELDS = ('case_id', 'pred', 'gt', 'body', 'correction_time_s',)


@dataclass(frozen=True)
class CaseInputs:
    case_id: str
    pred: Path
    gt: Path
    body: Path
    correction_time_s: Optional[int] = None


@dataclass(frozen=True)
class ErrorRecord:
    case_id: str
    reason: str
    correction_time_s: Optional[int] = None

    def to_row(self):
        time_s = '' if self.correction_time_s is None else str(int(self.correction_time_s))
        reason = ' '.join(self.reason.split())
        return [self.case_id, ERROR_PREFIX + reason] + [''] * (len(METRIC_FIELDS) - 1) + [time_s]


def _parse_time(value, source):
    value = (value or '').strip()
    if not value:
        return None
    try:
        return int(float(value))
    except ValueError:
        raise StatsInputError(f'{source}: correction_time_s must be a number, '
                              f'got {value!r}') from None


def read_cases_csv(path) -> list:
    """Read a cohort listing; relative paths resolve against the CSV's folder."""
    path = Path(path)
    root = path.parent

    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        missing = set(CASES_FIELDS[:4]) - set(reader.fieldnames or ())
        if missing:
            raise StatsInputError(f'{path}: missing columns {sorted(missing)}')

        cases = [CaseInputs(case_id=row['case_id'],
                            pred=root / row['pred'],
                            gt=root / row['gt'],
                            body=root / row['body'],
                            correction_time_s=_parse_time(row.get('correction_time_s'),
                                                          f'{path}:{n}'))
                 for n, row in enumerate(reader, start=2)]

    if not cases:
        raise StatsInputError(f'{path}: no cases listed')
    return cases


def write_cases_csv(cases, path):
    path = Path(path)
    root = path.parent
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(CASES_FIELDS)
        for case in cases:
            writer.writerow([case.case_id]
                            + [Path(p).relative_to(root).as_posix()
                               for p in (case.pred, case.gt, case.body)]
                            + ['' if case.correction_time_s is None
                               else str(case.correction_time_s)])


def evaluate_inputs(case: CaseInputs, *, slices=None):
    try:
        pred, gt, body = (read_mask(p) for p in (case.pred, case.gt, case.body))
        if slices is not None:
            pred, gt, body = (restrict_to_slices(m, *slices) for m in (pred, gt, body))
        return evaluate_case(pred, gt, body, case.case_id,
                             correction_time_s=case.correction_time_s)
    except (VolsegError, OSError) as e:
        logger.warning('Case %s failed: %s', case.case_id, e)
        return ErrorRecord(case_id=case.case_id,
                           reason=str(e),
                           correction_time_s=case.correction_time_s)


def evaluate_cohort(cases, *, slices=None, n_jobs: int = None) -> list:
    """Evaluate every case; the result keeps the input order."""
    return Parallel(n_jobs=-1 if n_jobs is None else n_jobs,
                    prefer='threads',)(delayed(evaluate_inputs)(case, slices=slices)
                                       for case in cases)


def write_metrics_csv(records, path):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(CSV_FIELDS)
        for record in records:
            writer.writerow(record.to_row())


def read_metrics_csv(path) -> list:
    """Metrics records from ``path``; ERROR rows are skipped with a warning."""
    path = Path(path)
    records = list()

    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        missing = set(CSV_FIELDS[:6]) - set(reader.fieldnames or ())
        if missing:
            raise StatsInputError(f'{path}: missing columns {sorted(missing)}')

        for n, row in enumerate(reader, start=2):
            if row['dice'].startswith(ERROR_PREFIX.strip()):
                logger.warning('%s:%d: skipping failed case %s', path, n, row['case_id'])
                continue
            try:
                records.append(MetricsRecord.from_row(row))
            except (TypeError, ValueError) as e:
                raise StatsInputError(f'{path}:{n}: malformed metrics row: {e}') from e

    return records
