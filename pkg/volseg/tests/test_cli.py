import csv
import json
import logging

import pytest

from volseg.cli import main
from volseg.config import ENV_VAR
from volseg.evaluation import read_metrics_csv, write_metrics_csv
from volseg.metrics import MetricsRecord, dice, evaluate_case, volume_ml
from volseg.nifti import read_mask
from volseg.phantom import CASE_FILES, SPEC_FILE, PhantomSpec
from volseg.report import MANIFEST_FILE, file_digest
from volseg.stats import t_test

from .conftest import SMALL_PHANTOM


SMALL_ARGS = ['--body-semi-axes-mm', '20', '18', '24',
              '--fat-thickness-mm', '4',
              '--dixon-shape', '40', '40', '32',
              '--translation-mm', '3', '0', '0']


def _manifest(directory):
    return json.loads((directory / MANIFEST_FILE).read_text())


def _segment(case, out, *flags):
    return main(['segment',
                 '--fat', str(case / 'dixon_fat.nii.gz'),
                 '--body-mask', str(case / 'gt_body_trufi.nii.gz'),
                 '--out', str(out),
                 *flags])


def _metrics_csv(path, rows):
    records = [MetricsRecord(case_id=case_id,
                             dice=value,
                             hausdorff_mm=10.0 * value,
                             assd_mm=value / 2,
                             vd_ml=3.0 - value,
                             rvd_percent=value * value)
               for case_id, value in rows]
    write_metrics_csv(records, path)
    return path


@pytest.fixture(autouse=True)
def detach_cli_logging():
    yield
    package = logging.getLogger('volseg')
    for handler in list(package.handlers):
        package.removeHandler(handler)
    package.setLevel(logging.NOTSET)


@pytest.fixture(scope='module')
def case_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp('phantom') / 'case'
    assert main(['phantom', '--out', str(out), *SMALL_ARGS]) == 0
    return out


def test_phantom_command(tmp_path, capsys):
    out = tmp_path / 'case'

    assert main(['phantom', '--out', str(out), *SMALL_ARGS, '--seed', '7']) == 0

    names = {p.name for p in out.iterdir()}
    assert names == {f'{n}.nii.gz' for n in CASE_FILES} | {SPEC_FILE, MANIFEST_FILE}
    assert capsys.readouterr().out.startswith('body_ml=')

    manifest = _manifest(out)
    assert manifest['command'] == 'phantom'
    assert manifest['params'] == PhantomSpec(seed=7, **SMALL_PHANTOM).to_dict()


def test_phantom_refuses_non_empty_out(tmp_path, capsys):
    out = tmp_path / 'case'
    assert main(['phantom', '--out', str(out), *SMALL_ARGS]) == 0

    assert main(['phantom', '--out', str(out), *SMALL_ARGS]) == 2
    assert 'volseg: error' in capsys.readouterr().err
    assert main(['phantom', '--out', str(out), *SMALL_ARGS, '--force']) == 0


@pytest.mark.parametrize('flags', [['--fat-thickness-mm', '0'],
                                   ['--dixon-spacing', '1.25', '0', '2'],
                                   ['--speckle-voxels', '50'],
                                   ['--cohort', '0']])
def test_phantom_invalid_spec(tmp_path, flags):
    assert main(['phantom', '--out', str(tmp_path / 'case'), *SMALL_ARGS, *flags]) == 2


def test_phantom_from_spec_file(tmp_path):
    spec_path = tmp_path / 'spec.json'
    spec_path.write_text(PhantomSpec(seed=4, **SMALL_PHANTOM).to_json())

    assert main(['phantom', '--out', str(tmp_path / 'case'),
                 '--spec', str(spec_path), '--seed', '9']) == 0

    written = PhantomSpec.from_json((tmp_path / 'case' / SPEC_FILE).read_text())
    assert written.seed == 9
    assert written.fat_thickness_mm == 4.0
    assert _manifest(tmp_path / 'case')['inputs']['spec']['sha256'] == file_digest(spec_path)


def test_segment_recovers_shell(case_dir, tmp_path):
    assert _segment(case_dir, tmp_path / 'seg', '--threshold', '60') == 0

    mask = read_mask(tmp_path / 'seg' / 'fat_mask.nii.gz')
    gt = read_mask(case_dir / 'gt_fat_dixon.nii.gz')
    assert dice(mask, gt) >= 0.99

    manifest = _manifest(tmp_path / 'seg')
    assert manifest['command'] == 'segment'
    assert manifest['params']['threshold'] == 60.0
    assert manifest['results']['threshold'] == 60.0
    assert manifest['results']['fat_volume_ml'] == pytest.approx(volume_ml(mask))
    assert 0 < manifest['results']['fat_body_ratio_percent'] < 100
    assert manifest['inputs']['fat']['sha256'] == file_digest(case_dir / 'dixon_fat.nii.gz')
    assert {'read', 'map_voi', 'threshold', 'morphology', 'components'} \
        <= set(manifest['durations_s'])


def test_segment_runs_are_reproducible(case_dir, tmp_path):
    assert _segment(case_dir, tmp_path / 'a', '--threshold', 'otsu') == 0
    assert _segment(case_dir, tmp_path / 'b', '--threshold', 'otsu') == 0

    first, second = _manifest(tmp_path / 'a'), _manifest(tmp_path / 'b')
    assert first['run_digest'] == second['run_digest']
    assert isinstance(first['results']['threshold'], float)
    assert read_mask(tmp_path / 'a' / 'fat_mask.nii.gz') \
        .equals(read_mask(tmp_path / 'b' / 'fat_mask.nii.gz'))


def test_segment_requires_threshold(case_dir, tmp_path, capsys):
    assert _segment(case_dir, tmp_path / 'seg') == 2

    assert 'threshold' in capsys.readouterr().err
    assert not (tmp_path / 'seg').exists()


def test_segment_missing_input(tmp_path):
    assert main(['segment', '--fat', str(tmp_path / 'absent.nii.gz'),
                 '--body-mask', str(tmp_path / 'absent.nii.gz'),
                 '--out', str(tmp_path / 'seg'), '--threshold', '60']) == 2
    assert not (tmp_path / 'seg').exists()


def test_segment_flags_override_config(case_dir, tmp_path, monkeypatch):
    site = tmp_path / 'site.cfg'
    site.write_text('threshold = 60\nmin-component = 1\n')
    monkeypatch.setenv(ENV_VAR, str(site))

    assert _segment(case_dir, tmp_path / 'env') == 0
    params = _manifest(tmp_path / 'env')['params']
    assert (params['threshold'], params['min_component_voxels']) == (60.0, 1)

    run = tmp_path / 'run.cfg'
    run.write_text('threshold = 30\n')
    assert _segment(case_dir, tmp_path / 'file', '--config', str(run)) == 0
    params = _manifest(tmp_path / 'file')['params']
    assert (params['threshold'], params['min_component_voxels']) == (30.0, 1)

    assert _segment(case_dir, tmp_path / 'flag', '--config', str(run),
                    '--threshold', '150', '--no-body-silhouette') == 0
    params = _manifest(tmp_path / 'flag')['params']
    assert params['threshold'] == 150.0
    assert params['use_body_silhouette'] is False
    assert read_mask(tmp_path / 'flag' / 'fat_mask.nii.gz').is_empty()


def test_unknown_config_key(case_dir, tmp_path, capsys):
    cfg = tmp_path / 'bad.cfg'
    cfg.write_text('threshold = 60\ncolour = red\n')

    assert _segment(case_dir, tmp_path / 'seg', '--config', str(cfg)) == 2
    assert 'colour' in capsys.readouterr().err


def test_map_voi_then_segment(case_dir, tmp_path):
    for margin in ('0', '5'):
        assert main(['map-voi',
                     '--body-mask', str(case_dir / 'gt_body_trufi.nii.gz'),
                     '--target', str(case_dir / 'dixon_fat.nii.gz'),
                     '--out', str(tmp_path / f'voi_{margin}'),
                     '--margin-mm', margin]) == 0

    body = read_mask(tmp_path / 'voi_5' / 'body_mask.nii.gz')
    gt = read_mask(case_dir / 'gt_fat_dixon.nii.gz')
    assert body.geometry.same_as(gt.geometry)

    tight = json.loads((tmp_path / 'voi_0' / 'voi.json').read_text())
    loose = json.loads((tmp_path / 'voi_5' / 'voi.json').read_text())
    assert all(a <= b for a, b in zip(loose['lo'], tight['lo']))
    assert all(a >= b for a, b in zip(loose['hi'], tight['hi']))
    assert loose['lo'] != tight['lo']

    assert _segment(case_dir, tmp_path / 'given', '--threshold', '60',
                    '--voi', str(tmp_path / 'voi_5' / 'voi.json')) == 0
    assert _segment(case_dir, tmp_path / 'derived', '--threshold', '60') == 0
    assert read_mask(tmp_path / 'given' / 'fat_mask.nii.gz') \
        .equals(read_mask(tmp_path / 'derived' / 'fat_mask.nii.gz'))


def test_evaluate_single_case(case_dir, tmp_path):
    out = tmp_path / 'metrics.csv'

    assert main(['evaluate',
                 '--pred', str(case_dir / 'gt_fat_dixon.nii.gz'),
                 '--gt', str(case_dir / 'gt_fat_dixon.nii.gz'),
                 '--body', str(case_dir / 'gt_body_dixon.nii.gz'),
                 '--correction-time-s', '45',
                 '--out', str(out)]) == 0

    (record,) = read_metrics_csv(out)
    assert record.case_id == 'gt_fat_dixon'
    assert record.dice == 1.0
    assert record.hausdorff_mm == 0.0
    assert record.correction_time_s == 45


def test_evaluate_slices(case_dir, tmp_path):
    triplet = ['--pred', str(case_dir / 'gt_fat_dixon.nii.gz'),
               '--gt', str(case_dir / 'gt_fat_dixon.nii.gz'),
               '--body', str(case_dir / 'gt_body_dixon.nii.gz')]

    assert main(['evaluate', *triplet, '--slices', '10:20',
                 '--out', str(tmp_path / 'm.csv')]) == 0
    assert read_metrics_csv(tmp_path / 'm.csv')[0].dice == 1.0

    assert main(['evaluate', *triplet, '--slices', '10',
                 '--out', str(tmp_path / 'bad.csv')]) == 2


def test_evaluate_needs_one_input_form(case_dir, tmp_path):
    out = str(tmp_path / 'm.csv')

    assert main(['evaluate', '--pred', str(case_dir / 'gt_fat_dixon.nii.gz'), '--out', out]) == 2
    assert main(['evaluate', '--cases', str(tmp_path / 'cases.csv'),
                 '--pred', str(case_dir / 'gt_fat_dixon.nii.gz'), '--out', out]) == 2


def test_cohort_end_to_end(tmp_path, capsys):
    root = tmp_path / 'cohort'
    assert main(['phantom', '--out', str(root), *SMALL_ARGS,
                 '--noise-sigma', '5', '--cohort', '10', '--threads', '4']) == 0
    printed = capsys.readouterr().out.splitlines()
    assert [line.split()[0] for line in printed] == [f'case_{i:03d}' for i in range(10)]

    for i in range(10):
        case = root / f'case_{i:03d}'
        assert _segment(case, case / 'seg', '--threshold', '60') == 0

    single, many = tmp_path / 'one.csv', tmp_path / 'eight.csv'
    assert main(['evaluate', '--cases', str(root / 'cases.csv'),
                 '--threads', '1', '--out', str(single)]) == 0
    assert main(['evaluate', '--cases', str(root / 'cases.csv'),
                 '--threads', '8', '--out', str(many)]) == 0

    assert single.read_bytes() == many.read_bytes()

    records = read_metrics_csv(single)
    assert [r.case_id for r in records] == [f'case_{i:03d}' for i in range(10)]
    for record in records:
        case = root / record.case_id
        expected = evaluate_case(read_mask(case / 'seg' / 'fat_mask.nii.gz'),
                                 read_mask(case / 'gt_fat_dixon.nii.gz'),
                                 read_mask(case / 'gt_body_dixon.nii.gz'),
                                 record.case_id)
        assert record.to_row() == expected.to_row()
        assert record.dice >= 0.99


def test_cohort_failed_case_is_reported(tmp_path):
    root = tmp_path / 'cohort'
    assert main(['phantom', '--out', str(root), *SMALL_ARGS, '--cohort', '2']) == 0
    assert _segment(root / 'case_000', root / 'case_000' / 'seg', '--threshold', '60') == 0

    out = tmp_path / 'metrics.csv'
    assert main(['evaluate', '--cases', str(root / 'cases.csv'), '--out', str(out)]) == 1

    with open(out, newline='') as f:
        rows = list(csv.reader(f))
    assert len(rows) == 3
    assert rows[2][0] == 'case_001'
    assert rows[2][1].startswith('ERROR: ')
    assert len(rows[2]) == 7
    assert [r.case_id for r in read_metrics_csv(out)] == ['case_000']


def test_cohort_corrupt_mask_is_reported(tmp_path):
    root = tmp_path / 'cohort'
    assert main(['phantom', '--out', str(root), *SMALL_ARGS, '--cohort', '2']) == 0
    for name in ('case_000', 'case_001'):
        assert _segment(root / name, root / name / 'seg', '--threshold', '60') == 0

    broken = root / 'case_000' / 'seg' / 'fat_mask.nii.gz'
    raw = bytearray(broken.read_bytes())
    raw[40:80] = bytes(b ^ 0xFF for b in raw[40:80])
    broken.write_bytes(bytes(raw))

    out = tmp_path / 'metrics.csv'
    assert main(['evaluate', '--cases', str(root / 'cases.csv'), '--out', str(out)]) == 1

    with open(out, newline='') as f:
        rows = list(csv.reader(f))
    assert [row[0] for row in rows[1:]] == ['case_000', 'case_001']
    assert rows[1][1].startswith('ERROR: ')
    assert [r.case_id for r in read_metrics_csv(out)] == ['case_001']


def test_phantom_without_room_for_speckles(tmp_path, capsys):
    assert main(['phantom', '--out', str(tmp_path / 'case'),
                 '--body-semi-axes-mm', '3', '3', '3',
                 '--fat-thickness-mm', '2',
                 '--dixon-shape', '16', '16', '16',
                 '--n-speckles', '1']) == 2
    assert 'speckles' in capsys.readouterr().err


def test_stats_single_case(tmp_path, capsys):
    path = _metrics_csv(tmp_path / 'manual.csv', [('a', 0.9)])

    assert main(['stats', str(path)]) == 0

    out = capsys.readouterr()
    assert 'manual (n=1)' in out.out
    assert 'dice' in out.out
    assert 'Single-case' in out.err


def test_stats_csv_format(tmp_path):
    a = _metrics_csv(tmp_path / 'a.csv', [('x', 0.8), ('y', 0.9)])
    b = _metrics_csv(tmp_path / 'b.csv', [('x', 0.7)])

    assert main(['stats', str(a), str(b), '--labels', 'semi', 'manual',
                 '--format', 'csv', '--out', str(tmp_path / 'summary.csv')]) == 0

    lines = (tmp_path / 'summary.csv').read_text().splitlines()
    assert lines[0].startswith('metric,semi_mean,semi_std,semi_min,semi_max,manual_mean')
    assert lines[1] == 'n,2,2,2,2,1,1,1,1'
    assert lines[2].startswith('dice,0.8500,')


def test_stats_csv_format_warns_about_dropped_t_tests(tmp_path, capsys):
    a = _metrics_csv(tmp_path / 'a.csv', [('x', 0.8), ('y', 0.9), ('z', 0.7)])
    b = _metrics_csv(tmp_path / 'b.csv', [('x', 0.85), ('y', 0.91), ('z', 0.78)])

    assert main(['stats', str(a), str(b), '--paired', '--format', 'csv']) == 0

    out = capsys.readouterr()
    assert out.out.startswith('metric,a_mean')
    assert '--ttest-json' in out.err


def test_stats_paired_identical_inputs(tmp_path, capsys):
    a = _metrics_csv(tmp_path / 'a.csv', [('x', 0.8), ('y', 0.9)])
    b = _metrics_csv(tmp_path / 'b.csv', [('x', 0.8), ('y', 0.9)])

    assert main(['stats', str(a), str(b), '--paired',
                 '--ttest-json', str(tmp_path / 't.json')]) == 0

    assert 'not tested' in capsys.readouterr().out
    results = json.loads((tmp_path / 't.json').read_text())
    assert all('error' in r for r in results.values())


def test_stats_paired_t_test(tmp_path, capsys):
    x = [0.80, 0.82, 0.85, 0.90, 0.88]
    y = [0.86, 0.85, 0.91, 0.93, 0.95]
    ids = ['c1', 'c2', 'c3', 'c4', 'c5']
    a = _metrics_csv(tmp_path / 'a.csv', list(zip(ids, x)))
    b = _metrics_csv(tmp_path / 'b.csv', list(zip(ids[::-1], y[::-1])))

    assert main(['stats', str(a), str(b), '--paired',
                 '--ttest-json', str(tmp_path / 't.json')]) == 0

    expected = t_test(x, y, 'paired')
    result = json.loads((tmp_path / 't.json').read_text())['dice']
    assert result['t'] == pytest.approx(expected.t_statistic, rel=1e-9)
    assert result['p'] == pytest.approx(expected.p_value, rel=1e-9)
    assert result['df'] == 4
    assert 'a vs b' in capsys.readouterr().out


def test_stats_welch(tmp_path):
    a = _metrics_csv(tmp_path / 'a.csv', [('x', 0.8), ('y', 0.9), ('z', 0.85)])
    b = _metrics_csv(tmp_path / 'b.csv', [('p', 0.6), ('q', 0.7)])

    assert main(['stats', str(a), str(b), '--welch',
                 '--ttest-json', str(tmp_path / 't.json')]) == 0
    assert json.loads((tmp_path / 't.json').read_text())['dice']['variant'] == 'welch'


def test_stats_usage_errors(tmp_path):
    a = _metrics_csv(tmp_path / 'a.csv', [('x', 0.8), ('y', 0.9)])
    b = _metrics_csv(tmp_path / 'b.csv', [('x', 0.7), ('z', 0.6)])
    c = _metrics_csv(tmp_path / 'c.csv', [('x', 0.7)])

    assert main(['stats', str(a), str(b), '--paired']) == 2
    assert main(['stats', str(a), str(b), str(c), '--welch']) == 2
    assert main(['stats', str(a), str(b), '--labels', 'only']) == 2
    assert main(['stats', str(a), str(b), '--labels', 'same', 'same']) == 2
    assert main(['stats', str(a), '--paired', '--welch']) == 2


def test_parser_exit_codes(capsys):
    assert main([]) == 2
    assert main(['--version']) == 0
    assert 'volseg' in capsys.readouterr().out
