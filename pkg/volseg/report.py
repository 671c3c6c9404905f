"""Summary tables and run manifests."""
import csv
import hashlib
import io
import json
import logging
from datetime import datetime, timezone
from pathlib import Path

from . import __version__


logger = logging.getLogger(__name__)

MANIFEST_FILE = 'manifest.json'

# run-to-run varying fields, excluded from the run digest
_volatile = ('timestamps', 'durations_s',)

_stat_columns = ('mean', 'std', 'min', 'max',)


def file_digest(path, *, chunk_size=1 << 20) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(chunk_size), b''):
            digest.update(chunk)
    return digest.hexdigest()


def utc_now():
    return datetime.now(timezone.utc).isoformat(timespec='seconds')


def build_manifest(command: str,
                   params: dict,
                   inputs: dict,
                   *,
                   started: str,
                   durations_s: dict = None,
                   results: dict = None) -> dict:
    manifest = {'tool': 'volseg',
                'version': __version__,
                'command': command,
                'params': params,
                'inputs': {name: {'path': str(path), 'sha256': file_digest(path)}
                           for name, path in inputs.items()},
                'results': results or dict(),
                'timestamps': {'started': started, 'finished': utc_now()},
                'durations_s': durations_s or dict(),}
    manifest['run_digest'] = run_digest(manifest)
    return manifest


def run_digest(manifest: dict) -> str:
    stable = {k: v for k, v in manifest.items() if k not in _volatile and k != 'run_digest'}
    payload = json.dumps(stable, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


def write_manifest(directory, manifest: dict) -> Path:
    path = Path(directory) / MANIFEST_FILE
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    logger.debug('Wrote manifest %s (run digest %s)', path, manifest['run_digest'])
    return path


def _metrics_in(summaries):
    metrics = list()
    for summary in summaries.values():
        metrics.extend(m for m in summary.metrics if m not in metrics)
    return metrics


def format_summary(summaries: dict, fmt: str = 'text') -> str:
    """Render ``{label: StudySummary}`` with one row per metric.

    Every label gets a mean/std/min/max column group, side by side.
    """
    labels = list(summaries)
    metrics = _metrics_in(summaries)

    rows = list()
    for metric in metrics:
        row = [metric]
        for label in labels:
            stats = summaries[label].metrics.get(metric)
            row.extend([''] * 4 if stats is None
                       else [f'{getattr(stats, c):.4f}' for c in _stat_columns])
        rows.append(row)

    if fmt == 'csv':
        out = io.StringIO()
        writer = csv.writer(out, lineterminator='\n')
        writer.writerow(['metric'] + [f'{label}_{c}' for label in labels for c in _stat_columns])
        writer.writerow(['n'] + [str(summaries[label].n) for label in labels for _ in _stat_columns])
        writer.writerows(rows)
        return out.getvalue()

    if fmt != 'text':
        raise ValueError(f"Unknown summary format {fmt!r}, expected 'text' or 'csv'")

    header = ['metric'] + [c for _ in labels for c in _stat_columns]
    groups = [''] + [f'{label} (n={summaries[label].n})' if i == 0 else ''
                     for label in labels for i in range(len(_stat_columns))]
    table = [groups, header] + rows
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]

    return ''.join('  '.join(cell.ljust(w) if i == 0 else cell.rjust(w)
                             for i, (cell, w) in enumerate(zip(r, widths))).rstrip() + '\n'
                   for r in table)


def format_comparison(results: dict, labels=('A', 'B')) -> str:
    lines = [f'{labels[0]} vs {labels[1]}']
    for metric, result in results.items():
        if isinstance(result, str):
            lines.append(f'  {metric}: not tested ({result})')
            continue
        flag = ' *' if result.significant else ''
        lines.append(f'  {metric}: {result.variant} t={result.t_statistic:.4f} '
                     f'df={result.degrees_of_freedom:.2f} p={result.p_value:.4g} '
                     f'diff={result.mean_difference:+.4f}{flag}')
    return '\n'.join(lines) + '\n'


def comparison_to_json(results: dict) -> dict:
    return {metric: {'error': result} if isinstance(result, str) else result.to_dict()
            for metric, result in results.items()}
