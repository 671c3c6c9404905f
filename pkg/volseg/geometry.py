import logging
import math
from dataclasses import dataclass

import numpy as np
from nibabel.affines import apply_affine

from .base import Mask
from .exceptions import EmptyMaskError, GeometryError, SpecError


logger = logging.getLogger(__name__)

# continuous indices are snapped to this many decimals before rounding, so
# exact half-voxel positions reached through a matrix inverse round the same
# way on every platform
_index_decimals = 9


def check_affine(affine):
    affine = np.asarray(affine, dtype=np.float64)

    if affine.shape != (4, 4) or not np.isfinite(affine).all():
        raise GeometryError('Affine must be a finite 4x4 matrix')
    if not np.array_equal(affine[3], [0.0, 0.0, 0.0, 1.0]):
        raise GeometryError(f'Affine bottom row must be (0, 0, 0, 1), got {affine[3]}')
    if np.linalg.matrix_rank(affine[:3, :3]) < 3:
        raise GeometryError('Affine is singular')

    return affine


def voxel_to_world(affine, index):
    return apply_affine(np.asarray(affine, dtype=np.float64),
                        np.asarray(index, dtype=np.float64))


def world_to_voxel(affine, point):
    inverse = np.linalg.inv(check_affine(affine))
    return apply_affine(inverse, np.asarray(point, dtype=np.float64))


def round_half_away(values):
    values = np.asarray(values, dtype=np.float64)
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def resample_mask_nearest(src: Mask, target) -> Mask:
    """Map ``src`` onto ``target`` geometry by nearest-neighbour lookup."""
    mapping = np.linalg.inv(check_affine(src.affine)) @ check_affine(target.affine)

    nx, ny, nz = target.shape
    src_shape = np.array(src.shape)
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing='ij')

    out = np.zeros(target.shape, dtype=bool)
    for k in range(nz):
        index = np.stack([ii, jj, np.full_like(ii, k)], axis=-1)
        continuous = np.round(apply_affine(mapping, index), _index_decimals)
        nearest = round_half_away(continuous).astype(np.int64)

        inside = ((nearest >= 0) & (nearest < src_shape)).all(axis=-1)
        hits = nearest[inside]
        plane = np.zeros((nx, ny), dtype=bool)
        plane[inside] = src.voxels[hits[:, 0], hits[:, 1], hits[:, 2]]
        out[:, :, k] = plane

    logger.debug('Resampled mask %s -> %s: %d -> %d voxels',
                 src.shape, target.shape, src.count(), int(out.sum()))

    return Mask(voxels=out, geometry=target)


@dataclass(frozen=True)
class VoxelBox:
    lo: tuple
    hi: tuple
    shape: tuple

    def __post_init__(self):
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        shape = tuple(int(v) for v in self.shape)

        if not (len(lo) == len(hi) == len(shape) == 3):
            raise GeometryError('VoxelBox needs three axes')
        for axis in range(3):
            if not 0 <= lo[axis] <= hi[axis] < shape[axis]:
                raise GeometryError(f'Invalid box lo={lo} hi={hi} for grid {shape}')

        object.__setattr__(self, 'lo', lo)
        object.__setattr__(self, 'hi', hi)
        object.__setattr__(self, 'shape', shape)

    @property
    def slices(self):
        return tuple(slice(lo, hi + 1) for lo, hi in zip(self.lo, self.hi))

    @property
    def size(self):
        return tuple(hi - lo + 1 for lo, hi in zip(self.lo, self.hi))

    def contains(self, other) -> bool:
        return (all(a <= b for a, b in zip(self.lo, other.lo))
                and all(a >= b for a, b in zip(self.hi, other.hi)))

    def to_mask(self, geometry) -> Mask:
        if tuple(geometry.shape) != self.shape:
            raise GeometryError(f'Box grid {self.shape} does not match {geometry.shape}')
        voxels = np.zeros(self.shape, dtype=bool)
        voxels[self.slices] = True
        return Mask(voxels=voxels, geometry=geometry)

    def to_dict(self):
        return {'lo': list(self.lo), 'hi': list(self.hi), 'shape': list(self.shape)}

    @classmethod
    def from_dict(cls, payload):
        try:
            return cls(lo=payload['lo'], hi=payload['hi'], shape=payload['shape'])
        except (KeyError, TypeError) as e:
            raise SpecError(f'Invalid VOI box description: {payload!r}') from e


def bounding_box(mask: Mask) -> VoxelBox:
    if mask.is_empty():
        raise EmptyMaskError('Cannot take the bounding box of an empty mask')

    lo, hi = list(), list()
    for axis in range(3):
        others = tuple(a for a in range(3) if a != axis)
        occupied = np.flatnonzero(mask.voxels.any(axis=others))
        lo.append(occupied[0])
        hi.append(occupied[-1])

    return VoxelBox(lo=lo, hi=hi, shape=mask.shape)


def expand_box(box: VoxelBox, margin_mm: float, spacing) -> VoxelBox:
    if not margin_mm >= 0:
        raise SpecError(f'Margin must be >= 0 mm, got {margin_mm}')

    # tolerance keeps e.g. 1.1 / 0.1 from rounding up to 12
    grow = [math.ceil(margin_mm / s - 1e-9) for s in spacing]

    lo = [max(0, l - g) for l, g in zip(box.lo, grow)]
    hi = [min(n - 1, h + g) for h, g, n in zip(box.hi, grow, box.shape)]

    return VoxelBox(lo=lo, hi=hi, shape=box.shape)
