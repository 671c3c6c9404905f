import logging
import numbers
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..base import Mask
from ..utils import check_connectivity, check_param


logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LabeledComponents:
    labels: np.ndarray
    sizes: np.ndarray

    @property
    def n(self) -> int:
        return len(self.sizes)

    def select(self, keep) -> np.ndarray:
        keep = np.concatenate([[False], np.asarray(keep, dtype=bool)])
        return keep[self.labels]


def label_components(mask: Mask, connectivity: int = 26) -> LabeledComponents:
    structure = check_connectivity(connectivity)
    labels, n = ndimage.label(mask.voxels, structure=structure)

    if n == 0:
        return LabeledComponents(labels=labels.astype(np.int32),
                                 sizes=np.zeros(0, dtype=np.int64))

    # renumber by first occurrence in x-fastest scan order
    flat = labels.ravel(order='F')
    present, first = np.unique(flat, return_index=True)
    present, first = present[present != 0], first[present != 0]

    remap = np.zeros(n + 1, dtype=np.int32)
    remap[present[np.argsort(first, kind='stable')]] = np.arange(1, n + 1)
    labels = remap[labels]

    sizes = np.bincount(labels.ravel(), minlength=n + 1)[1:].astype(np.int64)

    return LabeledComponents(labels=labels, sizes=sizes)


def filter_small_components(mask: Mask,
                            min_voxels: int,
                            connectivity: int = 26) -> Mask:
    min_voxels = check_param(min_voxels, 'min_voxels', numbers.Integral, min_val=1)

    components = label_components(mask, connectivity)
    keep = components.sizes >= min_voxels

    logger.debug('Component filter (>= %d voxels, %d-connectivity): kept %d of %d',
                 min_voxels, connectivity, int(keep.sum()), components.n)

    return Mask(voxels=components.select(keep), geometry=mask.geometry)
