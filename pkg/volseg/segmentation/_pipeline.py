import logging
import numbers
import time

import numpy as np
from sklearn.base import BaseEstimator

from ..base import Mask, Volume
from ..config import format_config, parse_config, to_bool
from ..exceptions import EmptyMaskError, SpecError
from ..geometry import VoxelBox, bounding_box, expand_box, resample_mask_nearest
from ..utils import check_connectivity, check_param
from ._components import filter_small_components
from ._morphology import dilate_mm, morph, parse_morphology
from ._threshold import otsu_threshold, threshold_in_voi


logger = logging.getLogger(__name__)

OTSU = 'otsu'

# config key -> parameter name
_config_keys = {'threshold': 'threshold',
                'min_component': 'min_component_voxels',
                'connectivity': 'connectivity',
                'voi_margin_mm': 'voi_margin_mm',
                'morph': 'morphology',
                'voi_box': 'use_voi_box',
                'body_silhouette': 'use_body_silhouette',}
CONFIG_KEYS = tuple(_config_keys)


def parse_threshold(value):
    if isinstance(value, str):
        if value.strip().lower() == OTSU:
            return OTSU
        try:
            value = float(value)
        except ValueError:
            raise SpecError(f"Threshold must be a number or 'otsu', got {value!r}") from None

    value = check_param(value, 'threshold', numbers.Real)
    if not np.isfinite(value):
        raise SpecError(f'Threshold must be finite, got {value}')
    return float(value)


class PipelineParams(BaseEstimator):
    def __init__(self,
                 *,
                 threshold=None,
                 min_component_voxels: int = 50,
                 connectivity: int = 26,
                 voi_margin_mm: float = 5.0,
                 morphology: tuple = (),
                 use_voi_box: bool = True,
                 use_body_silhouette: bool = True):
        self.threshold = threshold
        self.min_component_voxels = min_component_voxels
        self.connectivity = connectivity
        self.voi_margin_mm = voi_margin_mm
        self.morphology = morphology
        self.use_voi_box = use_voi_box
        self.use_body_silhouette = use_body_silhouette

    def validate(self):
        if self.threshold is None:
            raise SpecError("A threshold is required: pass a number or 'otsu'")

        check_connectivity(self.connectivity)

        return dict(threshold=parse_threshold(self.threshold),
                    min_component_voxels=check_param(self.min_component_voxels,
                                                     'min_component_voxels',
                                                     numbers.Integral,
                                                     min_val=1),
                    connectivity=self.connectivity,
                    voi_margin_mm=float(check_param(self.voi_margin_mm,
                                                    'voi_margin_mm',
                                                    numbers.Real,
                                                    min_val=0)),
                    morphology=parse_morphology(self.morphology),
                    use_voi_box=bool(self.use_voi_box),
                    use_body_silhouette=bool(self.use_body_silhouette),)

    def to_config(self) -> str:
        resolved = self.validate()
        names = {v: k for k, v in _config_keys.items()}

        values = dict()
        for name, value in resolved.items():
            if name == 'morphology':
                value = ','.join(f'{op}:{radius:g}' for op, radius in value)
            elif isinstance(value, bool):
                value = str(value).lower()
            values[names[name]] = value

        return format_config(values)

    @classmethod
    def from_config(cls, text: str):
        params = dict()
        for key, value in parse_config(text).items():
            if key not in _config_keys:
                raise SpecError(f'Unknown pipeline config key {key!r}')
            params[_config_keys[key]] = value

        if 'threshold' in params:
            params['threshold'] = parse_threshold(params['threshold'])
        if 'min_component_voxels' in params:
            params['min_component_voxels'] = _to_int(params['min_component_voxels'],
                                                     'min_component')
        if 'connectivity' in params:
            params['connectivity'] = _to_int(params['connectivity'], 'connectivity')
        if 'voi_margin_mm' in params:
            params['voi_margin_mm'] = _to_float(params['voi_margin_mm'], 'voi_margin_mm')
        if 'morphology' in params:
            params['morphology'] = parse_morphology(params['morphology'])
        for flag in ('use_voi_box', 'use_body_silhouette'):
            if flag in params:
                params[flag] = to_bool(params[flag])

        return cls(**params)


def _to_int(value, name):
    try:
        return int(value)
    except ValueError:
        raise SpecError(f'{name} must be an integer, got {value!r}') from None


def _to_float(value, name):
    try:
        return float(value)
    except ValueError:
        raise SpecError(f'{name} must be a number, got {value!r}') from None


def _full_box(shape):
    return VoxelBox(lo=(0, 0, 0), hi=tuple(n - 1 for n in shape), shape=shape)


def map_body_to_voi(body_mask_src: Mask, target, voi_margin_mm: float):
    body = resample_mask_nearest(body_mask_src, target)
    if body.is_empty():
        raise EmptyMaskError('Body mask is empty after mapping onto the target grid')

    voi = expand_box(bounding_box(body), voi_margin_mm, target.spacing)
    return body, voi


def run_semi_auto(fat: Volume,
                  body_mask_src: Mask,
                  params: PipelineParams,
                  *,
                  voi: VoxelBox = None,
                  report: dict = None) -> Mask:
    """Threshold -> silhouette -> morphology -> component filter, inside the VOI.

    When ``report`` is a dict it receives the threshold used, the VOI and
    the wall-clock duration of every stage.
    """
    resolved = params.validate()
    report = dict() if report is None else report
    durations = report.setdefault('durations_s', dict())

    start = time.perf_counter()
    if body_mask_src.is_empty():
        raise EmptyMaskError('Body mask is empty')
    body, derived_voi = map_body_to_voi(body_mask_src, fat.geometry,
                                        resolved['voi_margin_mm'])
    if voi is None:
        voi = derived_voi if resolved['use_voi_box'] else _full_box(fat.shape)
    durations['map_voi'] = time.perf_counter() - start

    start = time.perf_counter()
    threshold = resolved['threshold']
    if threshold == OTSU:
        threshold = otsu_threshold(fat, voi)
    mask = threshold_in_voi(fat, voi, threshold)
    if resolved['use_body_silhouette']:
        silhouette = dilate_mm(body, resolved['voi_margin_mm'])
        mask = Mask(voxels=mask.voxels & silhouette.voxels, geometry=mask.geometry)
    durations['threshold'] = time.perf_counter() - start

    start = time.perf_counter()
    for operation, radius in resolved['morphology']:
        mask = morph(mask, operation, radius)
    durations['morphology'] = time.perf_counter() - start

    start = time.perf_counter()
    mask = filter_small_components(mask,
                                   resolved['min_component_voxels'],
                                   resolved['connectivity'])
    voxels = mask.voxels & voi.to_mask(fat.geometry).voxels
    durations['components'] = time.perf_counter() - start

    report['threshold'] = float(threshold)
    report['voi'] = voi.to_dict()
    report['body_voxels'] = body.count()

    logger.info('Semi-automatic segmentation: threshold=%.6g VOI=%s-%s, %d fat voxels',
                threshold, voi.lo, voi.hi, int(voxels.sum()))

    return Mask(voxels=voxels, geometry=fat.geometry)
