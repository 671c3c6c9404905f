"""Synthetic TRUFI/Dixon phantoms with analytically known masks.

The body is a solid ellipsoid centred at the world origin and the fat is
the ellipsoidal shell of fixed thickness just inside its surface. The
Dixon grid is offset from the TRUFI grid by ``translation_mm``, so mapping
the TRUFI body mask onto the Dixon grid exercises the cross-space path.
"""
import json
import logging
import math
import numbers
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state

from .base import Geometry, Mask, Volume
from .exceptions import SpecError
from .nifti import read_mask, read_nifti, write_nifti
from .utils import check_param, check_triple


logger = logging.getLogger(__name__)

CASE_FILES = ('trufi', 'dixon_fat', 'dixon_water',
              'gt_body_trufi', 'gt_body_dixon', 'gt_fat_dixon',)
SPEC_FILE = 'spec.json'

MAX_SPECKLE_VOXELS = 49
_speckle_region_scale = 0.7
_speckle_attempts = 1000

_triples = ('body_semi_axes_mm', 'trufi_spacing', 'dixon_spacing',
            'dixon_shape', 'translation_mm',)


def _f32(values):
    # stored affines are float32; keep every grid value representable
    return tuple(float(np.float32(v)) for v in values)


class PhantomSpec(BaseEstimator):
    def __init__(self,
                 *,
                 body_semi_axes_mm: tuple = (64.0, 56.0, 80.0),
                 fat_thickness_mm: float = 6.0,
                 trufi_spacing: tuple = (0.78, 0.78, 2.0),
                 dixon_spacing: tuple = (1.25, 1.25, 2.0),
                 dixon_shape: tuple = (128, 128, 96),
                 translation_mm: tuple = (7.0, 0.0, 0.0),
                 background_intensity: float = 0.0,
                 tissue_intensity: float = 20.0,
                 fat_intensity: float = 100.0,
                 noise_sigma: float = 0.0,
                 n_speckles: int = 0,
                 speckle_voxels: int = 10,
                 maternal_slab: bool = False,
                 slab_offset_mm: float = 66.0,
                 slab_thickness_mm: float = 8.0,
                 seed: int = 0):
        self.body_semi_axes_mm = body_semi_axes_mm
        self.fat_thickness_mm = fat_thickness_mm
        self.trufi_spacing = trufi_spacing
        self.dixon_spacing = dixon_spacing
        self.dixon_shape = dixon_shape
        self.translation_mm = translation_mm
        self.background_intensity = background_intensity
        self.tissue_intensity = tissue_intensity
        self.fat_intensity = fat_intensity
        self.noise_sigma = noise_sigma
        self.n_speckles = n_speckles
        self.speckle_voxels = speckle_voxels
        self.maternal_slab = maternal_slab
        self.slab_offset_mm = slab_offset_mm
        self.slab_thickness_mm = slab_thickness_mm
        self.seed = seed

    def _validate(self):
        axes = check_triple(self.body_semi_axes_mm, 'body_semi_axes_mm')
        thickness = float(check_param(self.fat_thickness_mm, 'fat_thickness_mm', numbers.Real,
                                      min_val=0, include_boundaries='neither'))
        if thickness >= min(axes):
            raise SpecError(f'fat_thickness_mm={thickness} must be smaller than '
                            f'the smallest semi-axis {min(axes)}')

        dixon_shape = check_triple(self.dixon_shape, 'dixon_shape')
        if any(s != int(s) for s in dixon_shape):
            raise SpecError(f'dixon_shape must be integers, got {self.dixon_shape!r}')

        intensities = dict()
        for name in ('background_intensity', 'tissue_intensity', 'fat_intensity'):
            value = float(check_param(getattr(self, name), name, numbers.Real))
            if not math.isfinite(value):
                raise SpecError(f'{name} must be finite, got {value}')
            intensities[name] = value

        return dict(body_semi_axes_mm=axes,
                    fat_thickness_mm=thickness,
                    trufi_spacing=_f32(check_triple(self.trufi_spacing, 'trufi_spacing')),
                    dixon_spacing=_f32(check_triple(self.dixon_spacing, 'dixon_spacing')),
                    dixon_shape=tuple(int(s) for s in dixon_shape),
                    translation_mm=_f32(check_triple(self.translation_mm, 'translation_mm',
                                                     positive=False)),
                    noise_sigma=float(check_param(self.noise_sigma, 'noise_sigma',
                                                  numbers.Real, min_val=0)),
                    n_speckles=check_param(self.n_speckles, 'n_speckles',
                                           numbers.Integral, min_val=0),
                    speckle_voxels=check_param(self.speckle_voxels, 'speckle_voxels',
                                               numbers.Integral,
                                               min_val=1, max_val=MAX_SPECKLE_VOXELS),
                    maternal_slab=bool(self.maternal_slab),
                    slab_offset_mm=float(check_param(self.slab_offset_mm, 'slab_offset_mm',
                                                     numbers.Real)),
                    slab_thickness_mm=float(check_param(self.slab_thickness_mm,
                                                        'slab_thickness_mm', numbers.Real,
                                                        min_val=0,
                                                        include_boundaries='neither')),
                    seed=check_param(self.seed, 'seed', numbers.Integral, min_val=0),
                    **intensities)

    def to_dict(self):
        return {name: list(value) if isinstance(value, tuple) else value
                for name, value in self.get_params().items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, payload):
        if not isinstance(payload, dict):
            raise SpecError(f'Phantom spec must be a JSON object, got {type(payload).__name__}')

        unknown = set(payload) - set(cls._get_param_names())
        if unknown:
            raise SpecError(f'Unknown phantom spec keys: {sorted(unknown)}')

        params = {name: tuple(value) if name in _triples and isinstance(value, list) else value
                  for name, value in payload.items()}
        return cls(**params)

    @classmethod
    def from_json(cls, text: str):
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as e:
            raise SpecError(f'Invalid phantom spec JSON: {e}') from e
        return cls.from_dict(payload)


@dataclass(frozen=True, eq=False)
class PhantomCase:
    trufi: Volume
    dixon_fat: Volume
    dixon_water: Volume
    gt_body_trufi: Mask
    gt_body_dixon: Mask
    gt_fat_dixon: Mask
    speckles_dixon: Mask
    spec: PhantomSpec


def _centered_geometry(shape, spacing, offset=(0.0, 0.0, 0.0)):
    origin = [o - (n - 1) / 2 * s for n, s, o in zip(shape, spacing, offset)]
    return Geometry.from_spacing(shape, spacing, origin=_f32(origin))


def _world_axes(geometry):
    # phantom grids are axis-aligned, so world coordinates separate per axis
    return [geometry.affine[axis, axis] * np.arange(n) + geometry.affine[axis, 3]
            for axis, n in enumerate(geometry.shape)]


def _ellipsoid(geometry, semi_axes):
    x, y, z = _world_axes(geometry)
    a, b, c = semi_axes
    return ((x / a) ** 2)[:, None, None] + ((y / b) ** 2)[None, :, None] \
        + ((z / c) ** 2)[None, None, :] <= 1.0


def _speckle_blob(n_voxels):
    side = math.ceil(round(n_voxels ** (1 / 3), 9))
    offsets = np.array(np.unravel_index(np.arange(n_voxels), (side, side, side))).T
    return offsets, side


def _place_speckles(region, n_speckles, n_voxels, random_state):
    speckles = np.zeros(region.shape, dtype=bool)
    if n_speckles == 0:
        return speckles

    offsets, side = _speckle_blob(n_voxels)
    candidates = np.argwhere(region)
    if len(candidates) == 0:
        raise SpecError(f'No room for {n_speckles} speckles: the body interior is empty '
                        'at this Dixon spacing')
    occupied = np.zeros(region.shape, dtype=bool)

    placed = 0
    for _ in range(_speckle_attempts):
        if placed == n_speckles:
            break

        corner = candidates[random_state.randint(len(candidates))]
        voxels = corner + offsets
        if (voxels >= region.shape).any() or not region[tuple(voxels.T)].all():
            continue
        if occupied[tuple(voxels.T)].any():
            continue

        speckles[tuple(voxels.T)] = True
        # one-voxel guard band keeps speckles apart at 26-connectivity
        lo = np.maximum(corner - 1, 0)
        hi = corner + side + 1
        occupied[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = True
        placed += 1

    if placed < n_speckles:
        raise SpecError(f'Could only place {placed} of {n_speckles} speckles '
                        'inside the body')

    return speckles


def _noisy(voxels, sigma, random_state):
    if sigma > 0:
        voxels = voxels + random_state.normal(0.0, sigma, size=voxels.shape)
    return voxels.astype(np.float32)


def generate(spec: PhantomSpec) -> PhantomCase:
    params = spec._validate()
    random_state = check_random_state(params['seed'])

    axes = params['body_semi_axes_mm']
    inner_axes = tuple(a - params['fat_thickness_mm'] for a in axes)

    dixon = _centered_geometry(params['dixon_shape'], params['dixon_spacing'],
                               offset=params['translation_mm'])
    extent = [n * s for n, s in zip(params['dixon_shape'], params['dixon_spacing'])]
    trufi_shape = tuple(math.ceil(round(e / s, 9))
                        for e, s in zip(extent, params['trufi_spacing']))
    trufi = _centered_geometry(trufi_shape, params['trufi_spacing'])

    body_dixon = _ellipsoid(dixon, axes)
    lean = _ellipsoid(dixon, inner_axes)
    fat = body_dixon & ~lean
    body_trufi = _ellipsoid(trufi, axes)

    if not fat.any():
        raise SpecError('Fat shell does not cover any Dixon voxel')
    half_extent = [e / 2 for e in extent]
    if any(a + abs(t) > h for a, t, h in zip(axes, params['translation_mm'], half_extent)):
        logger.warning('Phantom body extends past the Dixon field of view')

    speckle_region = _ellipsoid(dixon, [_speckle_region_scale * a for a in inner_axes])
    speckles = _place_speckles(speckle_region,
                               params['n_speckles'],
                               params['speckle_voxels'],
                               random_state)

    background = params['background_intensity']
    tissue = params['tissue_intensity']
    fat_value = params['fat_intensity']

    fat_channel = np.full(dixon.shape, background, dtype=np.float64)
    fat_channel[lean] = tissue
    fat_channel[fat] = fat_value
    fat_channel[speckles] = fat_value

    water_channel = np.full(dixon.shape, background, dtype=np.float64)
    water_channel[lean] = fat_value
    water_channel[fat] = tissue

    if params['maternal_slab']:
        y = _world_axes(dixon)[1]
        lo = params['slab_offset_mm']
        in_slab = (y >= lo) & (y < lo + params['slab_thickness_mm'])
        fat_channel[:, in_slab, :] = np.where(body_dixon[:, in_slab, :],
                                              fat_channel[:, in_slab, :], fat_value)
        water_channel[:, in_slab, :] = np.where(body_dixon[:, in_slab, :],
                                                water_channel[:, in_slab, :], tissue)

    trufi_channel = np.where(body_trufi, fat_value, background)

    sigma = params['noise_sigma']
    fat_channel = _noisy(fat_channel, sigma, random_state)
    water_channel = _noisy(water_channel, sigma, random_state)
    trufi_channel = _noisy(trufi_channel, sigma, random_state)

    logger.debug('Phantom seed=%d: body %d voxels, fat %d voxels, %d speckle voxels',
                 params['seed'], int(body_dixon.sum()), int(fat.sum()), int(speckles.sum()))

    return PhantomCase(trufi=Volume(voxels=trufi_channel, geometry=trufi),
                       dixon_fat=Volume(voxels=fat_channel, geometry=dixon),
                       dixon_water=Volume(voxels=water_channel, geometry=dixon),
                       gt_body_trufi=Mask(voxels=body_trufi, geometry=trufi),
                       gt_body_dixon=Mask(voxels=body_dixon, geometry=dixon),
                       gt_fat_dixon=Mask(voxels=fat, geometry=dixon),
                       speckles_dixon=Mask(voxels=speckles, geometry=dixon),
                       spec=spec)


def analytic_shell_volume_ml(spec: PhantomSpec) -> float:
    params = spec._validate()
    a, b, c = params['body_semi_axes_mm']
    t = params['fat_thickness_mm']
    return 4.0 / 3.0 * math.pi * (a * b * c - (a - t) * (b - t) * (c - t)) / 1000.0


def write_case(case: PhantomCase, directory, *, force: bool = False):
    directory = Path(directory)
    if directory.exists() and any(directory.iterdir()) and not force:
        raise FileExistsError(f'{directory} is not empty; use force to overwrite')
    directory.mkdir(parents=True, exist_ok=True)

    for name in CASE_FILES:
        write_nifti(getattr(case, name), directory / f'{name}.nii.gz')
    (directory / SPEC_FILE).write_text(case.spec.to_json() + '\n', encoding='utf-8')

    logger.info('Wrote phantom case to %s', directory)


def read_case(directory) -> PhantomCase:
    """Load a case written by :func:`write_case`.

    The speckle mask is not stored on disk; it is rebuilt from the spec.
    """
    directory = Path(directory)
    spec = PhantomSpec.from_json((directory / SPEC_FILE).read_text(encoding='utf-8'))

    images = {name: (read_mask if name.startswith('gt_') else read_nifti)(
                  directory / f'{name}.nii.gz')
              for name in CASE_FILES}

    speckles = Mask.empty(images['gt_fat_dixon'].geometry)
    if spec.n_speckles:
        speckles = Mask.like(images['gt_fat_dixon'], generate(spec).speckles_dixon.voxels)

    return PhantomCase(speckles_dixon=speckles, spec=spec, **images)
