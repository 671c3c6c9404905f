import logging
import numbers

import numpy as np
from skimage.filters import threshold_otsu

from ..base import Mask, Volume
from ..exceptions import DegenerateHistogramError, GeometryError, SpecError
from ..geometry import VoxelBox
from ..utils import check_param


logger = logging.getLogger(__name__)


def _check_voi(volume, voi):
    if tuple(volume.shape) != voi.shape:
        raise GeometryError(f'VOI grid {voi.shape} does not match volume {volume.shape}')


def threshold_in_voi(fat: Volume, voi: VoxelBox, threshold: float) -> Mask:
    threshold = check_param(threshold, 'threshold', numbers.Real)
    if not np.isfinite(threshold):
        raise SpecError(f'Threshold must be finite, got {threshold}')
    _check_voi(fat, voi)

    voxels = np.zeros(fat.shape, dtype=bool)
    voxels[voi.slices] = fat.voxels[voi.slices].astype(np.float64) >= threshold

    logger.debug('Threshold %.6g inside VOI %s-%s: %d voxels',
                 threshold, voi.lo, voi.hi, int(voxels.sum()))

    return Mask(voxels=voxels, geometry=fat.geometry)


def otsu_threshold(fat: Volume, voi: VoxelBox, *, nbins: int = 256) -> float:
    _check_voi(fat, voi)

    values = fat.voxels[voi.slices].astype(np.float64).ravel()
    values = values[np.isfinite(values)]
    if values.size == 0 or values.min() == values.max():
        raise DegenerateHistogramError('Otsu threshold needs at least two distinct '
                                       'intensities inside the VOI')

    counts, edges = np.histogram(values, bins=nbins, range=(values.min(), values.max()))
    centres = (edges[:-1] + edges[1:]) / 2

    # skimage reports the centre of the last background bin; the threshold is
    # that bin's upper edge so `>=` reproduces the Otsu partition exactly
    last = int(np.argmin(np.abs(centres - threshold_otsu(hist=(counts, centres)))))
    threshold = float(edges[last + 1])
    logger.debug('Otsu threshold over %d voxels: %.6g', values.size, threshold)

    return threshold
