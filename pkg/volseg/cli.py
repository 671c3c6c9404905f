"""Command-line entry point: ``python -m volseg <command>``.

Exit status is 0 on success, 1 when a computation fails and 2 for usage
or input errors.
"""
import argparse
import json
import logging
import numbers
import sys
import time
from pathlib import Path

from joblib import Parallel, delayed
from sklearn.base import clone

from . import __version__
from .config import format_config, load_config
from .evaluation import (CaseInputs, ErrorRecord,
                         evaluate_cohort,
                         read_cases_csv,
                         read_metrics_csv,
                         write_cases_csv,
                         write_metrics_csv, )
from .exceptions import (NiftiFormatError, SpecError,
                         StatsInputError, VolsegError)
from .geometry import VoxelBox
from .metrics import volume_ml
from .nifti import read_mask, read_nifti, write_nifti
from .phantom import PhantomSpec, generate, write_case
from .report import (build_manifest, comparison_to_json,
                     format_comparison, format_summary,
                     utc_now, write_manifest)
from .segmentation import CONFIG_KEYS, PipelineParams, map_body_to_voi, run_semi_auto
from .stats import compare_cohorts, summarize
from .utils import check_param


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

_usage_errors = (NiftiFormatError, SpecError, StatsInputError,
                 FileNotFoundError, FileExistsError, IsADirectoryError,)

_settings = ('threads', 'log_level',)
_log_levels = ('DEBUG', 'INFO', 'WARNING', 'ERROR',)

FAT_MASK_FILE = 'fat_mask.nii.gz'
BODY_MASK_FILE = 'body_mask.nii.gz'
VOI_FILE = 'voi.json'
CASES_FILE = 'cases.csv'

# flag -> (type, nargs) for every phantom parameter
_phantom_flags = {'body_semi_axes_mm': (float, 3),
                  'fat_thickness_mm': (float, None),
                  'trufi_spacing': (float, 3),
                  'dixon_spacing': (float, 3),
                  'dixon_shape': (int, 3),
                  'translation_mm': (float, 3),
                  'background_intensity': (float, None),
                  'tissue_intensity': (float, None),
                  'fat_intensity': (float, None),
                  'noise_sigma': (float, None),
                  'n_speckles': (int, None),
                  'speckle_voxels': (int, None),
                  'slab_offset_mm': (float, None),
                  'slab_thickness_mm': (float, None),
                  'seed': (int, None),}


def _common_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', metavar='PATH',
                        help='key=value config file (overrides $VOLSEG_CONFIG)')
    common.add_argument('--log-level', choices=_log_levels, type=str.upper)
    common.add_argument('-v', '--verbose', action='count', default=0,
                        help='-v for INFO, -vv for DEBUG')
    return common


def _add_pipeline_flags(parser):
    parser.add_argument('--threshold', help="fat intensity threshold or 'otsu'")
    parser.add_argument('--min-component', type=int, dest='min_component',
                        help='smallest connected component kept, in voxels')
    parser.add_argument('--connectivity', type=int, choices=(6, 18, 26))
    parser.add_argument('--voi-margin-mm', type=float, dest='voi_margin_mm')
    parser.add_argument('--morph', action='append', metavar='OP:RADIUS_MM',
                        help='open:R or close:R, repeatable, applied in order')
    parser.add_argument('--voi-box', action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument('--body-silhouette', action=argparse.BooleanOptionalAction,
                        default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='volseg',
                                     description='Semi-automatic fat segmentation '
                                                 'on Dixon MRI and its evaluation.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    common = _common_parser()
    commands = parser.add_subparsers(dest='command', required=True, metavar='COMMAND')

    segment = commands.add_parser('segment', parents=[common],
                                  help='segment fat inside the body VOI')
    segment.add_argument('--fat', required=True, help='fat-only Dixon volume')
    segment.add_argument('--body-mask', required=True, dest='body_mask',
                         help='body mask in its own (e.g. TRUFI) space')
    segment.add_argument('--out', required=True, help='output directory')
    segment.add_argument('--voi', help='VOI box JSON written by map-voi')
    _add_pipeline_flags(segment)
    segment.set_defaults(handler=cmd_segment)

    map_voi = commands.add_parser('map-voi', parents=[common],
                                  help='map a body mask onto a target grid')
    map_voi.add_argument('--body-mask', required=True, dest='body_mask')
    map_voi.add_argument('--target', required=True, help='volume defining the target grid')
    map_voi.add_argument('--out', required=True, help='output directory')
    map_voi.add_argument('--margin-mm', '--voi-margin-mm', type=float, dest='voi_margin_mm')
    map_voi.set_defaults(handler=cmd_map_voi)

    evaluate = commands.add_parser('evaluate', parents=[common],
                                   help='compute metrics for one case or a cohort')
    evaluate.add_argument('--cases', help='CSV with case_id,pred,gt,body[,correction_time_s]')
    evaluate.add_argument('--pred')
    evaluate.add_argument('--gt')
    evaluate.add_argument('--body')
    evaluate.add_argument('--case-id', dest='case_id')
    evaluate.add_argument('--correction-time-s', type=int, dest='correction_time_s')
    evaluate.add_argument('--slices', metavar='LO:HI',
                          help='evaluate only slices LO..HI (inclusive) along z')
    evaluate.add_argument('--threads', type=int)
    evaluate.add_argument('--out', required=True, help='metrics CSV')
    evaluate.set_defaults(handler=cmd_evaluate)

    stats = commands.add_parser('stats', parents=[common],
                                help='summarize metrics CSVs and compare them')
    stats.add_argument('inputs', nargs='+', help='metrics CSV files')
    stats.add_argument('--labels', nargs='+')
    variant = stats.add_mutually_exclusive_group()
    variant.add_argument('--paired', action='store_const', const='paired', dest='variant')
    variant.add_argument('--welch', action='store_const', const='welch', dest='variant')
    stats.add_argument('--format', choices=('text', 'csv'), default='text')
    stats.add_argument('--out', help='summary file (default: stdout)')
    stats.add_argument('--ttest-json', dest='ttest_json')
    stats.set_defaults(handler=cmd_stats)

    phantom = commands.add_parser('phantom', parents=[common],
                                  help='write a synthetic phantom case')
    phantom.add_argument('--out', required=True, help='output directory')
    phantom.add_argument('--spec', help='phantom spec.json to start from')
    phantom.add_argument('--force', action='store_true')
    phantom.add_argument('--cohort', type=int, metavar='N',
                         help='write N cases with seeds seed..seed+N-1')
    phantom.add_argument('--threads', type=int)
    for name, (kind, nargs) in _phantom_flags.items():
        phantom.add_argument('--' + name.replace('_', '-'), dest=name, type=kind, nargs=nargs)
    phantom.add_argument('--maternal-slab', action=argparse.BooleanOptionalAction, default=None)
    phantom.set_defaults(handler=cmd_phantom)

    return parser


def _setup_logging(level):
    package = logging.getLogger('volseg')
    package.setLevel(level)

    # repeated runs in one process replace the handler, sys.stderr may have changed
    for handler in list(package.handlers):
        if getattr(handler, '_volseg', False):
            package.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(name)s: %(message)s'))
    handler._volseg = True
    package.addHandler(handler)


def _log_level(args, config):
    if args.verbose:
        return logging.DEBUG if args.verbose > 1 else logging.INFO
    return (args.log_level or config.get('log_level', 'WARNING')).upper()


def _check_config(config):
    unknown = set(config) - set(CONFIG_KEYS) - set(_settings)
    if unknown:
        raise SpecError(f'Unknown config keys: {sorted(unknown)}')


def _threads(args, config):
    threads = getattr(args, 'threads', None)
    if threads is None and 'threads' in config:
        try:
            threads = int(config['threads'])
        except ValueError:
            raise SpecError(f"threads must be an integer, got {config['threads']!r}") from None
    if threads is None:
        return None
    return check_param(threads, 'threads', numbers.Integral, min_val=1)


def _require_files(*paths):
    for path in paths:
        if path is not None and not Path(path).is_file():
            raise FileNotFoundError(f'No such input file: {path}')


def _pipeline_params(args, config) -> PipelineParams:
    values = {k: v for k, v in config.items() if k in CONFIG_KEYS}
    for key in CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is None:
            continue
        if isinstance(value, bool):
            value = str(value).lower()
        elif isinstance(value, list):
            value = ','.join(value)
        values[key] = value

    return PipelineParams.from_config(format_config(values))


def _jsonable(resolved: dict) -> dict:
    return {k: [list(step) for step in v] if k == 'morphology' else v
            for k, v in resolved.items()}


def cmd_segment(args, config) -> int:
    started = utc_now()
    _require_files(args.fat, args.body_mask, args.voi)
    params = _pipeline_params(args, config)
    resolved = params.validate()

    voi = None
    if args.voi:
        try:
            voi = VoxelBox.from_dict(json.loads(Path(args.voi).read_text(encoding='utf-8')))
        except json.JSONDecodeError as e:
            raise SpecError(f'Invalid VOI JSON {args.voi}: {e}') from e

    start = time.perf_counter()
    fat = read_nifti(args.fat)
    body = read_mask(args.body_mask)
    read_s = time.perf_counter() - start

    report = dict()
    mask = run_semi_auto(fat, body, params, voi=voi, report=report)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_nifti(mask, out / FAT_MASK_FILE)

    fat_ml = volume_ml(mask)
    body_ml = report['body_voxels'] * fat.geometry.voxel_volume_mm3 / 1000.0
    ratio = 100.0 * fat_ml / body_ml
    logger.info('Fat volume %.3f mL, body volume %.3f mL, fat/body %.2f%%',
                fat_ml, body_ml, ratio)

    durations = {'read': read_s, **report['durations_s']}
    inputs = {'fat': args.fat, 'body_mask': args.body_mask}
    if args.voi:
        inputs['voi'] = args.voi

    write_manifest(out, build_manifest('segment',
                                       params={**_jsonable(resolved),
                                               'config': params.to_config()},
                                       inputs=inputs,
                                       started=started,
                                       durations_s=durations,
                                       results={'threshold': report['threshold'],
                                                'voi': report['voi'],
                                                'fat_volume_ml': fat_ml,
                                                'body_volume_ml': body_ml,
                                                'fat_body_ratio_percent': ratio,}))
    return EXIT_OK


def cmd_map_voi(args, config) -> int:
    started = utc_now()
    _require_files(args.body_mask, args.target)

    margin = args.voi_margin_mm
    if margin is None:
        try:
            margin = float(config.get('voi_margin_mm', PipelineParams().voi_margin_mm))
        except ValueError:
            raise SpecError(f"voi_margin_mm must be a number, got {config['voi_margin_mm']!r}") from None
    margin = float(check_param(margin, 'voi_margin_mm', numbers.Real, min_val=0))

    start = time.perf_counter()
    body_src = read_mask(args.body_mask)
    target = read_nifti(args.target)
    body, voi = map_body_to_voi(body_src, target.geometry, margin)
    map_s = time.perf_counter() - start

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_nifti(body, out / BODY_MASK_FILE)
    (out / VOI_FILE).write_text(json.dumps(voi.to_dict()) + '\n', encoding='utf-8')

    logger.info('VOI %s-%s on grid %s', voi.lo, voi.hi, voi.shape)

    write_manifest(out, build_manifest('map-voi',
                                       params={'voi_margin_mm': margin},
                                       inputs={'body_mask': args.body_mask,
                                               'target': args.target},
                                       started=started,
                                       durations_s={'map_voi': map_s},
                                       results={'voi': voi.to_dict(),
                                                'body_voxels': body.count()}))
    return EXIT_OK


def _parse_slices(text):
    if text is None:
        return None
    lo, sep, hi = text.partition(':')
    try:
        if not sep:
            raise ValueError
        return int(lo), int(hi)
    except ValueError:
        raise SpecError(f'--slices must look like LO:HI, got {text!r}') from None


def cmd_evaluate(args, config) -> int:
    triplet = (args.pred, args.gt, args.body)
    if args.cases:
        if any(p is not None for p in triplet):
            raise SpecError('Use either --cases or --pred/--gt/--body, not both')
        cases = read_cases_csv(args.cases)
    else:
        if any(p is None for p in triplet):
            raise SpecError('--pred, --gt and --body are required without --cases')
        _require_files(*triplet)
        cases = [CaseInputs(case_id=args.case_id or Path(args.pred).name.split('.')[0],
                            pred=Path(args.pred),
                            gt=Path(args.gt),
                            body=Path(args.body),
                            correction_time_s=args.correction_time_s)]

    records = evaluate_cohort(cases,
                              slices=_parse_slices(args.slices),
                              n_jobs=_threads(args, config))
    write_metrics_csv(records, args.out)

    failed = [r.case_id for r in records if isinstance(r, ErrorRecord)]
    if failed:
        logger.error('%d of %d cases failed: %s', len(failed), len(records), ', '.join(failed))
        return EXIT_FAILURE
    logger.info('Evaluated %d cases into %s', len(records), args.out)
    return EXIT_OK


def cmd_stats(args, config) -> int:
    labels = args.labels or [Path(p).stem for p in args.inputs]
    if len(labels) != len(args.inputs):
        raise StatsInputError(f'Got {len(labels)} labels for {len(args.inputs)} inputs')
    if len(set(labels)) != len(labels):
        raise StatsInputError(f'Labels must be unique, got {labels}')
    if args.variant and len(args.inputs) != 2:
        raise StatsInputError('t-tests compare exactly two metrics CSVs')

    _require_files(*args.inputs)
    cohorts = {label: read_metrics_csv(path) for label, path in zip(labels, args.inputs)}
    output = format_summary({label: summarize(records) for label, records in cohorts.items()},
                            args.format)

    if args.variant:
        results = compare_cohorts(*cohorts.values(), variant=args.variant)
        if args.format == 'text':
            output += '\n' + format_comparison(results, labels)
        elif not args.ttest_json:
            logger.warning('CSV output holds the summary only; pass --ttest-json '
                           'to keep the %s t-test results', args.variant)
        if args.ttest_json:
            Path(args.ttest_json).write_text(json.dumps(comparison_to_json(results),
                                                        indent=2) + '\n',
                                             encoding='utf-8')

    if args.out:
        Path(args.out).write_text(output, encoding='utf-8')
    else:
        sys.stdout.write(output)
    return EXIT_OK


def _phantom_spec(args) -> PhantomSpec:
    spec = PhantomSpec()
    if args.spec:
        _require_files(args.spec)
        spec = PhantomSpec.from_json(Path(args.spec).read_text(encoding='utf-8'))

    overrides = {name: tuple(value) if isinstance(value, list) else value
                 for name in (*_phantom_flags, 'maternal_slab')
                 if (value := getattr(args, name)) is not None}
    spec.set_params(**overrides)
    spec._validate()
    return spec


def _write_phantom(spec, directory, force):
    case = generate(spec)
    write_case(case, directory, force=force)
    return volume_ml(case.gt_body_dixon), volume_ml(case.gt_fat_dixon)


def cmd_phantom(args, config) -> int:
    started = utc_now()
    spec = _phantom_spec(args)

    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise FileExistsError(f'{out} is not empty; pass --force to overwrite')

    start = time.perf_counter()
    if args.cohort is None:
        body_ml, fat_ml = _write_phantom(spec, out, True)
        print(f'body_ml={body_ml:.3f} fat_ml={fat_ml:.3f}')
        results = {'body_volume_ml': body_ml, 'fat_volume_ml': fat_ml}
    else:
        if args.cohort < 1:
            raise SpecError(f'--cohort must be >= 1, got {args.cohort}')

        names = [f'case_{i:03d}' for i in range(args.cohort)]
        specs = [clone(spec).set_params(seed=spec.seed + i) for i in range(args.cohort)]
        volumes = Parallel(n_jobs=_threads(args, config) or -1,
                           prefer='threads',)(delayed(_write_phantom)(s, out / name, True)
                                              for s, name in zip(specs, names))

        # pred points where `segment --out <case>/seg` writes its mask
        write_cases_csv([CaseInputs(case_id=name,
                                    pred=out / name / 'seg' / FAT_MASK_FILE,
                                    gt=out / name / 'gt_fat_dixon.nii.gz',
                                    body=out / name / 'gt_body_dixon.nii.gz')
                         for name in names], out / CASES_FILE)

        for name, (body_ml, fat_ml) in zip(names, volumes):
            print(f'{name} body_ml={body_ml:.3f} fat_ml={fat_ml:.3f}')
        results = {name: {'body_volume_ml': b, 'fat_volume_ml': f}
                   for name, (b, f) in zip(names, volumes)}

    write_manifest(out, build_manifest('phantom',
                                       params=spec.to_dict(),
                                       inputs={'spec': args.spec} if args.spec else dict(),
                                       started=started,
                                       durations_s={'generate': time.perf_counter() - start},
                                       results=results))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code

    try:
        config = load_config(args.config)
        _check_config(config)
        if 'log_level' in config:
            config['log_level'] = config['log_level'].upper()
            if config['log_level'] not in _log_levels:
                raise SpecError(f"Unknown log_level {config['log_level']!r}")
        _setup_logging(_log_level(args, config))

        return args.handler(args, config)
    except _usage_errors as e:
        print(f'volseg: error: {e}', file=sys.stderr)
        return EXIT_USAGE
    except (VolsegError, OSError) as e:
        logger.debug('Command failed', exc_info=True)
        print(f'volseg: error: {e}', file=sys.stderr)
        return EXIT_FAILURE
