import logging
import math
import numbers

import numpy as np
from scipy import ndimage

from ..base import Mask
from ..exceptions import SpecError
from ..utils import check_param


logger = logging.getLogger(__name__)

_tolerance = 1e-9


def structuring_element(radius_mm: float, spacing) -> np.ndarray:
    """World-space ball of ``radius_mm`` rasterized on a grid of ``spacing``."""
    half = [int(math.floor(radius_mm / s + _tolerance)) for s in spacing]
    offsets = np.ogrid[tuple(slice(-h, h + 1) for h in half)]

    dist2 = sum((o * s) ** 2 for o, s in zip(offsets, spacing))
    return dist2 <= radius_mm ** 2 + _tolerance


def _open(voxels, element):
    return ndimage.binary_opening(voxels, structure=element)


def _close(voxels, element):
    # pad so the erosion half never sees the grid border as background
    pad = [(n // 2, n // 2) for n in element.shape]
    padded = np.pad(voxels, pad)
    closed = ndimage.binary_closing(padded, structure=element)
    return closed[tuple(slice(p, p + n) for (p, _), n in zip(pad, voxels.shape))]


_operations = {'open': _open,
               'close': _close,}


def morph(mask: Mask, operation: str, radius_mm: float) -> Mask:
    if operation not in _operations:
        raise SpecError(f'Unknown morphology operation {operation!r}, '
                        f'expected one of {sorted(_operations)}')
    radius_mm = check_param(radius_mm, 'radius_mm', numbers.Real, min_val=0)

    element = structuring_element(radius_mm, mask.spacing)
    if element.size == 1:
        return mask

    voxels = _operations[operation](mask.voxels, element)
    logger.debug('Binary %s r=%.3g mm (element %s): %d -> %d voxels',
                 operation, radius_mm, element.shape, mask.count(), int(voxels.sum()))

    return Mask(voxels=voxels, geometry=mask.geometry)


def dilate_mm(mask: Mask, radius_mm: float) -> Mask:
    """Voxels whose centre lies within ``radius_mm`` of a foreground centre."""
    radius_mm = check_param(radius_mm, 'radius_mm', numbers.Real, min_val=0)
    if radius_mm == 0 or mask.is_empty():
        return mask

    distance = ndimage.distance_transform_edt(~mask.voxels, sampling=mask.spacing)
    return Mask(voxels=distance <= radius_mm + _tolerance, geometry=mask.geometry)


def parse_morphology(steps):
    """Normalize ``['open:2.5', ('close', 1.25)]`` into ``(operation, radius)`` pairs."""
    if isinstance(steps, str):
        steps = [s for s in steps.split(',') if s.strip()]

    parsed = list()
    for step in steps:
        if isinstance(step, str):
            operation, sep, radius = step.strip().partition(':')
            if not sep:
                raise SpecError(f'Morphology step must look like open:2.5, got {step!r}')
            try:
                radius = float(radius)
            except ValueError:
                raise SpecError(f'Invalid morphology radius in {step!r}') from None
        else:
            operation, radius = step

        if operation not in _operations:
            raise SpecError(f'Unknown morphology operation {operation!r}')
        if not (np.isfinite(radius) and radius >= 0):
            raise SpecError(f'Morphology radius must be >= 0, got {radius}')

        parsed.append((operation, float(radius)))

    return tuple(parsed)
