import logging
import numbers
from dataclasses import dataclass, field
from functools import partial
from typing import Optional

import numpy as np
from scipy import ndimage

from .base import Geometry, Mask
from .exceptions import EmptyBodyError, EmptyMaskError, GeometryError
from .utils import check_param, check_same_geometry


logger = logging.getLogger(__name__)

CSV_FIELDS = ('case_id', 'dice', 'hausdorff_mm', 'assd_mm',
              'vd_ml', 'rvd_percent', 'correction_time_s',)
METRIC_FIELDS = CSV_FIELDS[1:6]

_face_structure = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True, eq=False)
class SurfaceSet:
    indices: np.ndarray
    border: np.ndarray

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class MetricsRecord:
    case_id: str
    dice: float
    hausdorff_mm: float
    assd_mm: float
    vd_ml: float
    rvd_percent: float
    correction_time_s: Optional[int] = field(default=None)

    def to_row(self):
        time_s = '' if self.correction_time_s is None else str(int(self.correction_time_s))
        return [self.case_id] + [f'{getattr(self, f):.6f}' for f in METRIC_FIELDS] + [time_s]

    @classmethod
    def from_row(cls, row):
        time_s = (row.get('correction_time_s') or '').strip()
        return cls(case_id=row['case_id'],
                   **{f: float(row[f]) for f in METRIC_FIELDS},
                   correction_time_s=int(float(time_s)) if time_s else None)

    def metrics(self):
        values = {f: getattr(self, f) for f in METRIC_FIELDS}
        if self.correction_time_s is not None:
            values['correction_time_s'] = float(self.correction_time_s)
        return values


def surface(mask: Mask) -> SurfaceSet:
    """Foreground voxels with a face neighbour that is background or off-grid."""
    eroded = ndimage.binary_erosion(mask.voxels, structure=_face_structure, border_value=0)
    border = mask.voxels & ~eroded
    return SurfaceSet(indices=np.argwhere(border), border=border)


def _distance_field(voxels, spacing, squared=False):
    indices = ndimage.distance_transform_edt(~voxels,
                                             sampling=spacing,
                                             return_distances=False,
                                             return_indices=True)

    dist2 = np.zeros(voxels.shape, dtype=np.float64)
    for axis, s in enumerate(spacing):
        shape = [1, 1, 1]
        shape[axis] = voxels.shape[axis]
        delta = np.arange(voxels.shape[axis]).reshape(shape) - indices[axis]
        dist2 += (delta * s) ** 2

    return dist2 if squared else np.sqrt(dist2)


def distance_transform(mask: Mask, *, squared: bool = False) -> np.ndarray:
    if mask.is_empty():
        raise EmptyMaskError('Distance transform of an empty mask is undefined')

    return _distance_field(mask.voxels, mask.spacing, squared=squared)


def _union_box(a, b):
    occupied = a.voxels | b.voxels
    slices = list()
    for axis in range(3):
        others = tuple(x for x in range(3) if x != axis)
        hits = np.flatnonzero(occupied.any(axis=others))
        slices.append(slice(hits[0], hits[-1] + 1))
    return tuple(slices)


def _surface_distances(a: Mask, b: Mask):
    check_same_geometry(a, b)
    if a.is_empty() or b.is_empty():
        raise EmptyMaskError('Surface distances need two nonempty masks')

    # everything outside the union box is background for both masks, so
    # surfaces and nearest-surface distances are unchanged by the crop
    box = _union_box(a, b)
    crop_a = Mask(voxels=a.voxels[box], geometry=_cropped(a.geometry, box))
    crop_b = Mask(voxels=b.voxels[box], geometry=crop_a.geometry)

    surface_a = surface(crop_a)
    surface_b = surface(crop_b)

    to_b = _distance_field(surface_b.border, a.spacing)[surface_a.border]
    to_a = _distance_field(surface_a.border, a.spacing)[surface_b.border]

    return to_b, to_a


def _cropped(geometry, box):
    affine = np.array(geometry.affine)
    affine[:3, 3] = affine[:3, :3] @ [s.start for s in box] + affine[:3, 3]
    return Geometry(shape=tuple(s.stop - s.start for s in box),
                    spacing=geometry.spacing,
                    affine=affine)


def _hausdorff(to_b, to_a, percentile=100.0):
    if percentile == 100:
        return float(max(to_b.max(), to_a.max()))
    return float(max(np.percentile(to_b, percentile), np.percentile(to_a, percentile)))


def _assd(to_b, to_a):
    return float((to_b.sum() + to_a.sum()) / (len(to_b) + len(to_a)))


def dice(a: Mask, b: Mask) -> float:
    check_same_geometry(a, b)

    size = a.count() + b.count()
    if size == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a.voxels & b.voxels)) / size


def hausdorff(a: Mask, b: Mask, *, percentile: float = 100.0) -> float:
    percentile = check_param(percentile, 'percentile', numbers.Real, min_val=0, max_val=100)
    return _hausdorff(*_surface_distances(a, b), percentile)


hausdorff95 = partial(hausdorff, percentile=95.0)


def assd(a: Mask, b: Mask) -> float:
    return _assd(*_surface_distances(a, b))


def volume_ml(mask: Mask) -> float:
    return mask.count() * mask.geometry.voxel_volume_mm3 / 1000.0


def vd(a: Mask, b: Mask) -> float:
    check_same_geometry(a, b)
    # counts are subtracted before scaling so the result is a single rounding
    return abs(a.count() - b.count()) * a.geometry.voxel_volume_mm3 / 1000.0


def rvd(a: Mask, b: Mask, body: Mask) -> float:
    check_same_geometry(a, b, body)

    body_ml = volume_ml(body)
    if body_ml == 0:
        raise EmptyBodyError('Relative volume difference needs a nonempty body mask')
    return 100.0 * vd(a, b) / body_ml


def restrict_to_slices(mask: Mask, lo: int, hi: int, *, axis: int = 2) -> Mask:
    """Keep only slices ``lo..hi`` (inclusive) along ``axis``."""
    if not 0 <= lo <= hi < mask.shape[axis]:
        raise GeometryError(f'Slice range {lo}:{hi} outside axis {axis} '
                            f'of length {mask.shape[axis]}')

    keep = np.zeros(mask.shape[axis], dtype=bool)
    keep[lo:hi + 1] = True
    shape = [1, 1, 1]
    shape[axis] = mask.shape[axis]

    return Mask(voxels=mask.voxels & keep.reshape(shape), geometry=mask.geometry)


def evaluate_case(pred: Mask,
                  gt: Mask,
                  body: Mask,
                  case_id: str,
                  *,
                  correction_time_s: int = None) -> MetricsRecord:
    check_same_geometry(pred, gt, body)

    to_gt, to_pred = _surface_distances(pred, gt)
    record = MetricsRecord(case_id=str(case_id),
                           dice=dice(pred, gt),
                           hausdorff_mm=_hausdorff(to_gt, to_pred),
                           assd_mm=_assd(to_gt, to_pred),
                           vd_ml=vd(pred, gt),
                           rvd_percent=rvd(pred, gt, body),
                           correction_time_s=correction_time_s)

    logger.debug('Case %s: dice=%.4f hd=%.3f assd=%.3f vd=%.3f rvd=%.3f',
                 record.case_id, record.dice, record.hausdorff_mm,
                 record.assd_mm, record.vd_ml, record.rvd_percent)

    return record
